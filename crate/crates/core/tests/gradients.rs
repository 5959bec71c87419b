mod oracles;

use ndarray::Array2;
use slidemil::model::{init_params, ATTN_SCORE_W, AggregatorKind, ClamSpec, LossConfig, LoraSpec, Mode, ModelConfig, Strategy};
use slidemil::rng::SplitMix64;
use slidemil::store::{collate, Batch, PatchFeatureBag};

use oracles::finite_difference_check;

const DIM: usize = 8;

fn tiny(strategy: Strategy, classes: usize) -> ModelConfig {
    let labels = (0..classes).map(|c| format!("c{c}")).collect();
    let mut cfg = ModelConfig::for_strategy(strategy, labels, DIM);
    cfg.aggregator.attn_dim = 4;
    cfg.aggregator.attn_dropout = 0.25;
    cfg.head.hidden_sizes = vec![5];
    cfg.head.dropout = 0.3;
    if let Some(clam) = cfg.clam.as_mut() {
        *clam = ClamSpec { k: 2, instance_weight: 0.3 };
    }
    if let Some(lora) = cfg.lora.as_mut() {
        *lora = LoraSpec { rank: 2, alpha: 4.0, ..LoraSpec::default() };
    }
    cfg
}

fn tiny_batch(classes: usize, seed: u64) -> Batch<f64> {
    let mut rng = SplitMix64::new(seed);
    let bags: Vec<PatchFeatureBag> = (0..4)
        .map(|b| {
            let p = 1 + rng.below(6) as usize;
            let x = Array2::from_shape_fn((p, DIM), |_| rng.gaussian() as f32);
            PatchFeatureBag::new(format!("c{b}"), "s", x).with_label(b % classes)
        })
        .collect();
    collate(&bags).unwrap().cast()
}

/// Runs the oracle on fresh fixtures until three are smooth within the step
/// everywhere (the oracle is only valid at differentiable points).
fn check(cfg: &ModelConfig, classes: usize, mode: Mode) {
    let mut params = init_params::<f64>(cfg, 5);
    // Tensors that start at zero (adapter B factors, attention scores) are
    // perturbed so gradients through their partners are exercised too.
    let b_names: Vec<String> =
        params.names().filter(|n| n.ends_with(".b") || *n == ATTN_SCORE_W).map(str::to_owned).collect();
    let mut rng = SplitMix64::new(99);
    for name in b_names {
        params.get_mut(&name).unwrap().mapv_inplace(|_| 0.3 * rng.gaussian());
    }
    let mut valid = 0;
    for seed in 0..12 {
        let batch = tiny_batch(classes, 100 + seed);
        let res = finite_difference_check(&params, cfg, &batch, &LossConfig { label_smoothing: 0.1 }, mode, seed, 1e-3);
        assert!(res.checked > 0);
        if res.non_smooth > 0 {
            continue;
        }
        assert!(
            res.worst_rel < 1e-4,
            "{:?} {:?} {mode:?} seed {seed}: {}",
            cfg.strategy,
            cfg.aggregator.kind,
            res.worst_tensor
        );
        valid += 1;
        if valid == 3 {
            return;
        }
    }
    panic!("{:?} {:?} {mode:?}: only {valid} smooth fixtures", cfg.strategy, cfg.aggregator.kind);
}

#[test]
fn pooling_aggregators_match_finite_differences() {
    for kind in [AggregatorKind::Mean, AggregatorKind::Max, AggregatorKind::Meanmax] {
        for classes in [2, 3] {
            let mut cfg = tiny(Strategy::Pooling, classes);
            cfg.aggregator.kind = kind;
            check(&cfg, classes, Mode::Eval);
            check(&cfg, classes, Mode::Train);
        }
    }
}

#[test]
fn abmil_matches_finite_differences() {
    for classes in [2, 3] {
        let cfg = tiny(Strategy::Abmil, classes);
        check(&cfg, classes, Mode::Eval);
        check(&cfg, classes, Mode::Train);
    }
}

#[test]
fn clam_matches_finite_differences() {
    for classes in [2, 3] {
        let cfg = tiny(Strategy::Clam, classes);
        check(&cfg, classes, Mode::Eval);
        check(&cfg, classes, Mode::Train);
    }
}

#[test]
fn lora_matches_finite_differences() {
    for target_attention in [false, true] {
        for classes in [2, 3] {
            let mut cfg = tiny(Strategy::Lora, classes);
            cfg.lora.as_mut().unwrap().target_attention = target_attention;
            check(&cfg, classes, Mode::Eval);
            check(&cfg, classes, Mode::Train);
        }
    }
}

#[test]
fn lora_gradients_touch_only_adapters_and_output() {
    let cfg = tiny(Strategy::Lora, 2);
    let params = init_params::<f64>(&cfg, 1);
    let out = slidemil::model::loss_and_grads(&params, &cfg, &tiny_batch(2, 3), &LossConfig::default(), Mode::Eval, 0)
        .unwrap();
    for name in out.grads.names() {
        assert!(name.starts_with("lora.") || name.starts_with("head.out"), "{name}");
    }
}

#[test]
fn clam_with_zero_instance_weight_equals_abmil_loss() {
    let mut clam = tiny(Strategy::Clam, 2);
    clam.clam.as_mut().unwrap().instance_weight = 0.0;
    let abmil = tiny(Strategy::Abmil, 2);
    let clam_params = init_params::<f64>(&clam, 4);
    let mut abmil_params = init_params::<f64>(&abmil, 4);
    // Same shared tensors; abmil simply lacks the instance classifiers.
    for (name, t) in abmil_params.iter_mut() {
        *t = clam_params.get(name).clone();
    }
    let batch = tiny_batch(2, 8);
    let cfg = LossConfig::default();
    let a = slidemil::model::loss_and_grads(&clam_params, &clam, &batch, &cfg, Mode::Train, 3).unwrap();
    let b = slidemil::model::loss_and_grads(&abmil_params, &abmil, &batch, &cfg, Mode::Train, 3).unwrap();
    assert_eq!(a.loss, b.loss);
}
