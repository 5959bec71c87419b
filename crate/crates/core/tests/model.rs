use ndarray::{s, Array2};
use slidemil::model::{
    forward, init_params, AggregatorKind, ClamSpec, LoraSpec, Mode, ModelConfig, ModelParams, Strategy,
};
use slidemil::rng::SplitMix64;
use slidemil::store::{collate, PatchFeatureBag};

const DIM: usize = 12;

fn small(strategy: Strategy, aggregator: AggregatorKind, classes: usize) -> ModelConfig {
    let labels = (0..classes).map(|c| format!("c{c}")).collect();
    let mut cfg = ModelConfig::for_strategy(strategy, labels, DIM);
    cfg.aggregator.kind = aggregator;
    cfg.aggregator.attn_dim = 6;
    cfg.head.hidden_sizes = vec![7];
    if let Some(clam) = cfg.clam.as_mut() {
        *clam = ClamSpec { k: 3, instance_weight: 0.3 };
    }
    if let Some(lora) = cfg.lora.as_mut() {
        *lora = LoraSpec { rank: 3, alpha: 6.0, target_attention: true, ..LoraSpec::default() };
    }
    cfg.validate().unwrap();
    cfg
}

fn variants() -> Vec<ModelConfig> {
    vec![
        small(Strategy::Pooling, AggregatorKind::Mean, 2),
        small(Strategy::Pooling, AggregatorKind::Max, 3),
        small(Strategy::Pooling, AggregatorKind::Meanmax, 2),
        small(Strategy::Abmil, AggregatorKind::Abmil, 3),
        small(Strategy::Clam, AggregatorKind::Abmil, 2),
        small(Strategy::Lora, AggregatorKind::Abmil, 2),
    ]
}

fn random_bag(rng: &mut SplitMix64, p: usize, label: usize) -> PatchFeatureBag {
    let x = Array2::from_shape_fn((p, DIM), |_| rng.gaussian() as f32);
    PatchFeatureBag::new(format!("case{}", rng.next_u64()), "s0", x).with_label(label)
}

/// Params with every tensor nonzero so no aggregator path is trivially inert.
fn busy_params(cfg: &ModelConfig, seed: u64) -> ModelParams<f32> {
    let mut params = init_params::<f32>(cfg, seed);
    let mut rng = SplitMix64::new(seed ^ 0xabcd);
    for (_, t) in params.iter_mut() {
        t.mapv_inplace(|v| v + 0.2 * rng.gaussian() as f32);
    }
    params
}

#[test]
fn padding_never_changes_outputs() {
    let mut rng = SplitMix64::new(11);
    let configs = variants();
    for trial in 0..200 {
        let cfg = &configs[trial % configs.len()];
        let params = busy_params(cfg, trial as u64);
        let b = 1 + rng.below(5) as usize;
        let bags: Vec<_> = (0..b)
            .map(|i| {
                let p = 1 + rng.below(24) as usize;
                random_bag(&mut rng, p, i % cfg.n_classes())
            })
            .collect();
        let batched = forward(&params, cfg, &collate(&bags).unwrap(), Mode::Eval, 0).unwrap();
        for (i, bag) in bags.iter().enumerate() {
            let alone = forward(&params, cfg, &collate(std::slice::from_ref(bag)).unwrap(), Mode::Eval, 0).unwrap();
            for c in 0..cfg.n_classes() {
                let d = (batched.logits[[i, c]] - alone.logits[[0, c]]).abs();
                assert!(d <= 1e-6, "{:?} trial {trial} bag {i}: logit diff {d}", cfg.aggregator.kind);
                assert!((batched.probs[[i, c]] - alone.probs[[0, c]]).abs() <= 1e-6);
            }
            if let (Some(a), Some(solo)) = (&batched.attention, &alone.attention) {
                let p = bag.patch_count();
                for j in 0..p {
                    assert!((a[[i, j]] - solo[[0, j]]).abs() <= 1e-6);
                }
                assert!(a.slice(s![i, p..]).iter().all(|&v| v == 0.0), "attention on padding");
                let total: f32 = a.slice(s![i, ..p]).sum();
                assert!((total - 1.0).abs() <= 1e-5);
            }
        }
    }
}

#[test]
fn patch_order_does_not_matter() {
    let mut rng = SplitMix64::new(5);
    for cfg in variants() {
        let params = busy_params(&cfg, 3).cast::<f64>();
        let bag = random_bag(&mut rng, 17, 0);
        let mut order: Vec<usize> = (0..17).collect();
        rng.shuffle(&mut order);
        let shuffled = PatchFeatureBag::new("x", "s0", bag.features.select(ndarray::Axis(0), &order)).with_label(0);
        let a = forward(&params, &cfg, &collate(&[bag]).unwrap().cast(), Mode::Eval, 0).unwrap();
        let b = forward(&params, &cfg, &collate(&[shuffled]).unwrap().cast(), Mode::Eval, 0).unwrap();
        for (x, y) in a.logits.iter().zip(b.logits.iter()) {
            assert!((x - y).abs() < 1e-10, "{:?}", cfg.aggregator.kind);
        }
    }
}

#[test]
fn eval_is_deterministic_and_train_dropout_is_seeded() {
    let mut rng = SplitMix64::new(8);
    let cfg = small(Strategy::Abmil, AggregatorKind::Abmil, 2);
    let params = busy_params(&cfg, 1);
    let batch = collate(&[random_bag(&mut rng, 30, 0), random_bag(&mut rng, 9, 1)]).unwrap();
    let e1 = forward(&params, &cfg, &batch, Mode::Eval, 1).unwrap();
    let e2 = forward(&params, &cfg, &batch, Mode::Eval, 99).unwrap();
    assert_eq!(e1.logits, e2.logits);
    let t1 = forward(&params, &cfg, &batch, Mode::Train, 4).unwrap();
    let t2 = forward(&params, &cfg, &batch, Mode::Train, 4).unwrap();
    let t3 = forward(&params, &cfg, &batch, Mode::Train, 5).unwrap();
    assert_eq!(t1.logits, t2.logits);
    assert_ne!(t1.logits, t3.logits);
}

#[test]
fn probabilities_are_a_distribution() {
    let mut rng = SplitMix64::new(21);
    for cfg in variants() {
        let params = busy_params(&cfg, 2);
        let bags: Vec<_> = (0..6).map(|i| random_bag(&mut rng, 1 + i * 5, 0)).collect();
        let out = forward(&params, &cfg, &collate(&bags).unwrap(), Mode::Eval, 0).unwrap();
        for row in out.probs.rows() {
            assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            assert!((row.sum() - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn fresh_lora_adapters_leave_the_base_model_unchanged() {
    let mut rng = SplitMix64::new(2);
    let lora = small(Strategy::Lora, AggregatorKind::Abmil, 2);
    let params = init_params::<f64>(&lora, 7);
    let mut base_cfg = lora.clone();
    base_cfg.strategy = Strategy::Abmil;
    base_cfg.lora = None;
    let base_params = ModelParams::from_tensors(
        params.iter().filter(|(n, _)| !n.starts_with("lora.")).map(|(n, t)| (n.clone(), t.clone())).collect(),
    );
    base_params.check_layout(&base_cfg).unwrap();
    let batch = collate(&[random_bag(&mut rng, 13, 0), random_bag(&mut rng, 4, 1)]).unwrap().cast::<f64>();
    let with = forward(&params, &lora, &batch, Mode::Eval, 0).unwrap();
    let without = forward(&base_params, &base_cfg, &batch, Mode::Eval, 0).unwrap();
    assert_eq!(with.logits, without.logits);
}

#[test]
fn wrong_feature_width_is_rejected() {
    let cfg = small(Strategy::Abmil, AggregatorKind::Abmil, 2);
    let params = init_params::<f32>(&cfg, 0);
    let bag = PatchFeatureBag::new("c", "s", Array2::zeros((3, DIM + 1))).with_label(0);
    let err = forward(&params, &cfg, &collate(&[bag]).unwrap(), Mode::Eval, 0).unwrap_err();
    assert!(matches!(err, slidemil::Error::DimensionMismatch { .. }), "{err}");
}
