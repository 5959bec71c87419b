use std::collections::BTreeMap;

use ndarray::{Array2, Zip};

use super::config::OptimizerKind;
use crate::error::{Error, Result};
use crate::model::{ModelParams, Real};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Adam moments, keyed by parameter name. SGD keeps no moments.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T = f32> {
    pub kind: OptimizerKind,
    pub step: u64,
    pub first: BTreeMap<String, Array2<T>>,
    pub second: BTreeMap<String, Array2<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(kind: OptimizerKind) -> Self {
        Self { kind, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }
}

/// Apply one update for every tensor present in `grads`.
///
/// AdamW applies decay `p -= lr * wd * p` separately from the adaptive
/// step; Adam folds `wd * p` into the gradient; SGD is `p -= lr * (g + wd * p)`.
pub fn optimizer_step<T: Real>(
    state: &mut OptimizerState<T>,
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::Numeric { tensor: name.to_owned(), message: "non-finite gradient".into() });
    }
    for (name, g) in grads.iter() {
        let p = params.get(name);
        if p.dim() != g.dim() {
            return Err(Error::Shape(format!("gradient {name} is {:?}, parameter is {:?}", g.dim(), p.dim())));
        }
    }
    let c = |v: f64| T::from_f64(v).unwrap();
    let (lr_t, wd_t) = (c(lr), c(weight_decay));
    state.step += 1;
    let bias1 = c(1.0 - BETA1.powi(state.step as i32));
    let bias2 = c(1.0 - BETA2.powi(state.step as i32));
    let (b1, b2, eps) = (c(BETA1), c(BETA2), c(EPS));
    for (name, g) in grads.iter() {
        let p = params.get_mut(name).expect("checked above");
        match state.kind {
            OptimizerKind::Sgd => {
                Zip::from(p).and(g).for_each(|p, &g| *p -= lr_t * (g + wd_t * *p));
            }
            kind => {
                let m = state.first.entry(name.clone()).or_insert_with(|| Array2::zeros(g.raw_dim()));
                let v = state.second.entry(name.clone()).or_insert_with(|| Array2::zeros(g.raw_dim()));
                let decoupled = kind == OptimizerKind::Adamw;
                Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                    let g = if decoupled { g } else { g + wd_t * *p };
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    if decoupled {
                        *p -= lr_t * wd_t * *p;
                    }
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *p -= lr_t * m_hat / (v_hat.sqrt() + eps);
                });
            }
        }
    }
    Ok(())
}
