use std::collections::BTreeMap;

use proptest::prelude::*;
use serde_json::{json, Map, Value};
use slidemil::model::{ModelConfig, Strategy as Arch};
use slidemil::train::{MonitoredMetric, TrainConfig};
use slidemil::tuner::{
    anonymize_outcome, config_values, default_stages, exhaustive_count, job_hash, run_tuning, ParamAxis,
    SearchMethod, StageSpec, TrialResult, TrialRunner, TrialSpec, TrialStatus, TuneConfig, OUTCOME_ALLOWLIST,
};
use slidemil::{Error, Result};

fn labels() -> Vec<String> {
    vec!["benign".into(), "tumor".into()]
}

/// A smooth synthetic objective over the tuned values, with a few
/// configurations made to fail.
fn objective(train: &TrainConfig, model: &ModelConfig) -> Option<f64> {
    if model.head.dropout == 0.6 {
        return None;
    }
    let lr = (train.learning_rate.log10() + 3.3).powi(2);
    let width = (model.aggregator.attn_dim as f64 / 128.0).ln().powi(2);
    let reg = (model.head.dropout - 0.3).powi(2) + (model.aggregator.attn_dropout - 0.2).powi(2);
    let loss = (train.label_smoothing - 0.1).powi(2) + (train.weight_decay.log10() + 2.0).powi(2) * 0.01;
    Some(0.99 - 0.05 * lr - 0.03 * width - 0.2 * reg - 0.5 * loss)
}

#[derive(Default)]
struct Stub {
    seen: Vec<TrialSpec>,
}

impl TrialRunner for Stub {
    fn run_trial(&mut self, trial: &TrialSpec) -> Result<TrialResult> {
        self.seen.push(trial.clone());
        objective(&trial.train, &trial.model)
            .map(|val_auroc| TrialResult { val_auroc, epochs_run: 7 })
            .ok_or_else(|| Error::Trial("diverged".into()))
    }
}

/// Exhaustive search over each stage's grid with all earlier winners
/// applied, computed directly from the objective.
fn oracle(stages: &[StageSpec], mut train: TrainConfig, mut model: ModelConfig) -> (BTreeMap<String, f64>, f64) {
    let mut locked = BTreeMap::new();
    let mut last = f64::NAN;
    for stage in stages {
        let mut best: Option<(f64, f64, f64)> = None;
        for &a in &stage.param_a.candidates {
            for &b in &stage.param_b.candidates {
                let (mut t, mut m) = (train.clone(), model.clone());
                set(&mut t, &mut m, &stage.param_a.key, a);
                set(&mut t, &mut m, &stage.param_b.key, b);
                if let Some(score) = objective(&t, &m) {
                    if best.is_none_or(|(s, _, _)| score > s) {
                        best = Some((score, a, b));
                    }
                }
            }
        }
        let (score, a, b) = best.unwrap();
        set(&mut train, &mut model, &stage.param_a.key, a);
        set(&mut train, &mut model, &stage.param_b.key, b);
        locked.insert(stage.param_a.key.clone(), a);
        locked.insert(stage.param_b.key.clone(), b);
        last = score;
    }
    (locked, last)
}

fn set(t: &mut TrainConfig, m: &mut ModelConfig, key: &str, v: f64) {
    match key {
        "learning_rate" => t.learning_rate = v,
        "weight_decay" => t.weight_decay = v,
        "label_smoothing" => t.label_smoothing = v,
        "head_dropout" => m.head.dropout = v,
        "attn_dropout" => m.aggregator.attn_dropout = v,
        "attn_dim" => m.aggregator.attn_dim = v as usize,
        "hidden_size" => m.head.hidden_sizes = vec![v as usize],
        _ => panic!("{key}"),
    }
}

#[test]
fn staged_grid_matches_the_oracle_in_33_trials() {
    let model = ModelConfig::for_strategy(Arch::Abmil, labels(), 1024);
    let train = TrainConfig::default();
    let tune = TuneConfig::default();
    let stages = default_stages(Arch::Abmil);
    assert_eq!(exhaustive_count(&stages), 1296);
    assert_eq!(tune.trial_counts(Arch::Abmil), [12, 12, 9]);

    let mut stub = Stub::default();
    let result = run_tuning(&tune, &train, &model, &mut stub).unwrap();
    assert_eq!(stub.seen.len(), 33);
    assert_eq!(result.trials.len(), 33);

    let (locked, metric) = oracle(&stages, train.clone(), model.clone());
    assert_eq!(result.locked, locked);
    assert_eq!(result.winning_metric, metric);
    assert_eq!(result.best_train.learning_rate, locked["learning_rate"]);
    assert_eq!(result.best_model.aggregator.attn_dim as f64, locked["attn_dim"]);

    let failed = result.trials.iter().filter(|t| t.status == TrialStatus::Failed).count();
    assert_eq!(failed, 3);
    assert!(result.trials.iter().filter(|t| t.status == TrialStatus::Failed).all(|t| t.error.is_some()));

    for spec in &stub.seen {
        assert_eq!(spec.train.early_stop.patience, tune.trial_overrides.patience);
        assert_eq!(spec.train.early_stop.min_epochs, tune.trial_overrides.min_epochs);
        assert_eq!(spec.train.monitored_metric, MonitoredMetric::ValAuroc);
        if spec.stage_index == 2 {
            assert_eq!(spec.train.learning_rate, locked["learning_rate"]);
            assert_eq!(spec.model.head.dropout, locked["head_dropout"]);
        }
    }
}

#[test]
fn random_search_samples_within_budget() {
    let model = ModelConfig::for_strategy(Arch::Pooling, labels(), 64);
    let tune = TuneConfig { method: SearchMethod::Random, n_trials_per_stage: Some(4), seed: 9, ..Default::default() };
    let mut stub = Stub::default();
    let result = run_tuning(&tune, &TrainConfig::default(), &model, &mut stub).unwrap();
    assert_eq!(result.trials.len(), 12);
    for stage in 0..3 {
        let deltas: Vec<_> = result.trials.iter().filter(|t| t.stage_index == stage).map(|t| &t.config_delta).collect();
        let unique: std::collections::BTreeSet<_> = deltas.iter().map(|d| format!("{d:?}")).collect();
        assert_eq!(unique.len(), 4);
    }
    assert!(result.trials.iter().filter(|t| t.stage_index == 1).all(|t| t.note.is_some()));

    let again = run_tuning(&tune, &TrainConfig::default(), &model, &mut Stub::default()).unwrap();
    assert_eq!(again, result);

    let big = TuneConfig { n_trials_per_stage: Some(100), ..tune };
    assert_eq!(run_tuning(&big, &TrainConfig::default(), &model, &mut Stub::default()).unwrap().trials.len(), 33);
}

#[test]
fn a_stage_with_no_survivors_fails_with_every_status() {
    struct AlwaysFails;
    impl TrialRunner for AlwaysFails {
        fn run_trial(&mut self, trial: &TrialSpec) -> Result<TrialResult> {
            Err(Error::Trial(format!("boom {}", trial.trial_index)))
        }
    }
    let model = ModelConfig::for_strategy(Arch::Abmil, labels(), 64);
    let err = run_tuning(&TuneConfig::default(), &TrainConfig::default(), &model, &mut AlwaysFails).unwrap_err();
    match err {
        Error::StageFailed { stage, statuses } => {
            assert_eq!(stage, 0);
            assert!(statuses.contains("boom 0") && statuses.contains("boom 11"), "{statuses}");
        }
        other => panic!("{other}"),
    }
}

#[test]
fn invalid_stage_definitions_are_rejected() {
    let model = ModelConfig::for_strategy(Arch::Abmil, labels(), 64);
    let bad = |param_a: ParamAxis, param_b: ParamAxis| TuneConfig {
        stages: Some(vec![StageSpec { name: "x".into(), param_a, param_b }]),
        ..Default::default()
    };
    let axis = |k: &str, c: &[f64]| ParamAxis { key: k.into(), candidates: c.to_vec() };
    for tune in [
        bad(axis("learning_rate", &[1e-3]), axis("weight_decay", &[0.0, 0.1])),
        bad(axis("learning_rate", &[1e-3, 1e-4]), axis("learning_rate", &[1e-3, 1e-4])),
        bad(axis("momentum", &[0.9, 0.99]), axis("weight_decay", &[0.0, 0.1])),
    ] {
        assert!(matches!(
            run_tuning(&tune, &TrainConfig::default(), &model, &mut Stub::default()),
            Err(Error::Config(_))
        ));
    }
}

#[test]
fn job_hash_is_stable_hex() {
    let h = job_hash("job-123");
    assert_eq!(h.len(), 64);
    assert!(h.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
    assert_eq!(h, job_hash("job-123"));
    assert_ne!(h, job_hash("job-124"));
}

#[test]
fn outcome_keeps_only_allowlisted_shapes() {
    let model = ModelConfig::for_strategy(Arch::Abmil, labels(), 1024);
    let mut winning = config_values(&TrainConfig::default(), &model);
    winning.insert("store_dir".into(), json!("/data/hospital/cohort"));
    winning.insert("case_id".into(), json!("patient-0042"));
    winning.insert("class_labels".into(), json!(["benign", "tumor"]));
    winning.insert("learning_rate".into(), json!(1e-3));
    winning.insert("schedule".into(), json!("see /home/user/notes"));
    winning.insert("hidden_sizes".into(), json!(["patient-0042"]));
    let out = anonymize_outcome("job-1", Arch::Abmil, SearchMethod::Grid, &winning, &Map::new(), 0.9);
    let text = serde_json::to_string(&out).unwrap();
    for leak in ["hospital", "patient", "benign", "/home", "job-1"] {
        assert!(!text.contains(leak), "{leak} leaked: {text}");
    }
    assert_eq!(out.winning_values["learning_rate"], json!(1e-3));
    assert!(!out.winning_values.contains_key("schedule"));
    assert!(!out.winning_values.contains_key("hidden_sizes"));
}

fn arbitrary_value() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()).prop_map(Value::from),
        "\\PC{0,16}".prop_map(Value::from),
        proptest::collection::vec("\\PC{0,8}", 0..3).prop_map(Value::from),
        Just(Value::Null),
        Just(json!({"nested": "secret"})),
    ]
}

proptest! {
    #[test]
    fn anonymized_outcomes_never_carry_free_text(
        entries in proptest::collection::vec(
            (prop_oneof![proptest::sample::select(OUTCOME_ALLOWLIST.to_vec()).prop_map(String::from), "\\PC{1,12}"],
             arbitrary_value()),
            0..20),
        job_id in "\\PC{1,20}",
    ) {
        let map: Map<String, Value> = entries.into_iter().collect();
        let out = anonymize_outcome(&job_id, Arch::Clam, SearchMethod::Random, &map, &map, 0.5);
        for values in [&out.winning_values, &out.baseline_values] {
            for (k, v) in values {
                prop_assert!(OUTCOME_ALLOWLIST.contains(&k.as_str()));
                match v {
                    Value::Number(_) => {}
                    Value::String(s) => prop_assert!(
                        ["adamw", "adam", "sgd", "cosine_warmup", "cosine", "step", "constant"].contains(&s.as_str())
                    ),
                    Value::Array(a) => prop_assert!(k == "hidden_sizes" && a.iter().all(Value::is_number)),
                    other => prop_assert!(false, "unexpected {}", other),
                }
            }
        }
        prop_assert_eq!(out.job_hash, job_hash(&job_id));
    }
}
