use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::config::{AggregatorKind, ModelConfig};
use super::lora::{adapter_names, effective_weight, trainable_names};
use super::params::*;
use super::Real;
use crate::error::{Error, Result};
use crate::rng::{substream, SplitMix64};
use crate::store::Batch;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub label_smoothing: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { label_smoothing: 0.1 }
    }
}

#[derive(Debug, Clone)]
struct BagCache<T> {
    h: Array2<T>,
    dropout: Option<Array2<T>>,
    hd: Array2<T>,
    attention: Array1<T>,
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    input: Array2<T>,
    pre: Array2<T>,
    dropout: Option<Array2<T>>,
}

#[derive(Debug, Clone)]
struct ForwardCache<T> {
    bags: Vec<Option<BagCache<T>>>,
    layers: Vec<LayerCache<T>>,
    last: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardResult<T> {
    pub logits: Array2<T>,
    pub probs: Array2<T>,
    /// `B x Pmax`; rows sum to one over real patches, zero on padding.
    pub attention: Option<Array2<T>>,
    cache: ForwardCache<T>,
}

#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: T,
    pub bag_loss: T,
    pub instance_loss: Option<T>,
    /// Gradients for trainable tensors only.
    pub grads: ModelParams<T>,
    pub probs: Array2<T>,
}

fn cast<T: Real>(v: f64) -> T {
    T::from_f64(v).unwrap()
}

/// Inverted-dropout mask: kept entries scaled by `1 / (1 - rate)`.
fn dropout_mask<T: Real>(shape: (usize, usize), rate: f64, rng: &mut SplitMix64) -> Array2<T> {
    let keep = 1.0 - rate;
    let scale = cast::<T>(1.0 / keep);
    Array2::from_shape_fn(shape, |_| if rng.next_f64() < keep { scale } else { T::zero() })
}

fn add_row<T: Real>(m: &mut Array2<T>, bias: &Array2<T>) {
    *m += &bias.row(0);
}

fn softmax_rows<T: Real>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum: T = row.iter().copied().sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn log_softmax_rows<T: Real>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn abmil_bag<T: Real>(
    x: ArrayView2<'_, T>,
    proj_w: &Array2<T>,
    params: &ModelParams<T>,
    dropout: Option<(f64, &mut SplitMix64)>,
) -> BagCache<T> {
    let mut pre = x.dot(&proj_w.t());
    add_row(&mut pre, params.get(ATTN_PROJ_B));
    let h = pre.mapv(|v| v.tanh());
    let mask = dropout.map(|(rate, rng)| dropout_mask::<T>(h.dim(), rate, rng));
    let hd = match &mask {
        Some(m) => &h * m,
        None => h.clone(),
    };
    let scores = hd.dot(&params.get(ATTN_SCORE_W).row(0)) + params.get(ATTN_SCORE_B)[[0, 0]];
    let max = scores.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut attention = scores.mapv(|s| (s - max).exp());
    let sum: T = attention.iter().copied().sum();
    attention.mapv_inplace(|v| v / sum);
    BagCache { h, dropout: mask, hd, attention }
}

fn pool_bag<T: Real>(kind: AggregatorKind, x: ArrayView2<'_, T>) -> Array1<T> {
    let n = cast::<T>(x.nrows() as f64);
    let mean = || x.sum_axis(Axis(0)) / n;
    // Fold from -inf so only real rows can win.
    let max = || x.fold_axis(Axis(0), T::neg_infinity(), |m, &v| m.max(v));
    match kind {
        AggregatorKind::Mean => mean(),
        AggregatorKind::Max => max(),
        AggregatorKind::Meanmax => ndarray::concatenate(Axis(0), &[mean().view(), max().view()]).unwrap(),
        AggregatorKind::Abmil => unreachable!("abmil has its own path"),
    }
}

/// Forward pass. Each bag is reduced over its real rows only, so padding
/// never influences any output. Train mode applies dropout drawn from
/// `dropout_seed`; eval mode applies none.
pub fn forward<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    batch: &Batch<T>,
    mode: Mode,
    dropout_seed: u64,
) -> Result<ForwardResult<T>> {
    if batch.feature_dim() != config.feature_dim {
        return Err(Error::DimensionMismatch { expected: config.feature_dim, found: batch.feature_dim() });
    }
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let train = mode == Mode::Train;
    let n_bags = batch.len();
    let width = config.aggregator.output_dim(config.feature_dim);
    let mut z = Array2::<T>::zeros((n_bags, width));
    let mut bags = Vec::with_capacity(n_bags);
    let mut attention = None;

    if config.uses_attention() {
        let proj_w = effective_weight(config, params, ATTN_PROJ_W);
        let rate = config.aggregator.attn_dropout;
        let mut attn = Array2::<T>::zeros((n_bags, batch.max_len()));
        for b in 0..n_bags {
            let x = batch.bag(b);
            let mut rng = substream(dropout_seed, "dropout/attn", b as u64);
            let drop = (train && rate > 0.0).then_some((rate, &mut rng));
            let cache = abmil_bag(x, &proj_w, params, drop);
            z.row_mut(b).assign(&x.t().dot(&cache.attention));
            attn.row_mut(b).slice_mut(ndarray::s![..batch.lengths[b]]).assign(&cache.attention);
            bags.push(Some(cache));
        }
        attention = Some(attn);
    } else {
        for b in 0..n_bags {
            z.row_mut(b).assign(&pool_bag(config.aggregator.kind, batch.bag(b)));
            bags.push(None);
        }
    }

    let mut layers = Vec::with_capacity(config.head.hidden_sizes.len());
    let mut u = z;
    for l in 0..config.head.hidden_sizes.len() {
        let w = effective_weight(config, params, &head_weight(l));
        let mut pre = u.dot(&w.t());
        add_row(&mut pre, params.get(&head_bias(l)));
        let mut act = pre.mapv(|v| v.max(T::zero()));
        let rate = config.head.dropout;
        let mask = (train && rate > 0.0).then(|| {
            let mut rng = substream(dropout_seed, "dropout/head", l as u64);
            dropout_mask::<T>(act.dim(), rate, &mut rng)
        });
        if let Some(m) = &mask {
            act *= m;
        }
        layers.push(LayerCache { input: u, pre, dropout: mask });
        u = act;
    }
    let out_w = effective_weight(config, params, HEAD_OUT_W);
    let mut logits = u.dot(&out_w.t());
    add_row(&mut logits, params.get(HEAD_OUT_B));
    let probs = softmax_rows(&logits);
    Ok(ForwardResult { logits, probs, attention, cache: ForwardCache { bags, layers, last: u } })
}

/// Top-k and bottom-k patch indices by attention (ties to the lower index),
/// with `k` clipped to `P / 2` so the two sets never overlap.
pub(crate) fn extreme_patches<T: Real>(attention: &Array1<T>, k: usize) -> (Vec<usize>, Vec<usize>) {
    let p = attention.len();
    let k = k.min(p / 2);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| attention[j].partial_cmp(&attention[i]).unwrap().then(i.cmp(&j)));
    (order[..k].to_vec(), order[p - k..].to_vec())
}

struct GradSink<'a, T: Real> {
    config: &'a ModelConfig,
    params: &'a ModelParams<T>,
    trainable: Vec<String>,
    grads: ModelParams<T>,
}

impl<'a, T: Real> GradSink<'a, T> {
    fn wants(&self, name: &str) -> bool {
        self.trainable.iter().any(|n| n == name)
    }

    fn add(&mut self, name: &str, g: &Array2<T>) {
        if self.wants(name) {
            match self.grads.get_mut(name) {
                Some(acc) => *acc += g,
                None => self.grads.insert(name, g.clone()),
            }
        }
    }

    /// Route the gradient of an effective weight to the base tensor and/or
    /// its adapter factors.
    fn add_weight(&mut self, name: &str, g_eff: &Array2<T>) {
        self.add(name, g_eff);
        let (a_name, b_name) = adapter_names(name);
        if let (Some(lora), Some(a), Some(b)) =
            (&self.config.lora, self.params.try_get(&a_name), self.params.try_get(&b_name))
        {
            let scale = cast::<T>(lora.scale());
            let db = g_eff.dot(&a.t()) * scale;
            let da = b.t().dot(g_eff) * scale;
            self.add(&b_name, &db);
            self.add(&a_name, &da);
        }
    }

    fn attention_trainable(&self) -> bool {
        [ATTN_PROJ_W, ATTN_PROJ_B, ATTN_SCORE_W, ATTN_SCORE_B]
            .iter()
            .any(|n| self.wants(n) || self.wants(&adapter_names(n).0))
    }
}

fn col_sum<T: Real>(m: &Array2<T>) -> Array2<T> {
    m.sum_axis(Axis(0)).insert_axis(Axis(0))
}

/// Loss and gradients for every trainable tensor.
///
/// Bag loss is cross-entropy against `(1 - eps) * onehot + eps / C`, averaged
/// over the batch. For CLAM the total is `(1 - w) * bag + w * instance`,
/// where the instance loss supervises the true class's instance classifier
/// on the top-k (positive) and bottom-k (negative) attention patches.
pub fn loss_and_grads<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    batch: &Batch<T>,
    loss_cfg: &LossConfig,
    mode: Mode,
    dropout_seed: u64,
) -> Result<LossOutput<T>> {
    let labels: Vec<usize> = batch
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::MissingLabels(format!("bag {i} has no label"))))
        .collect::<Result<_>>()?;
    let n_classes = config.n_classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Config(format!("label {bad} out of range for {n_classes} classes")));
    }
    let fwd = forward(params, config, batch, mode, dropout_seed)?;
    let n_bags = batch.len();
    let inv_b = cast::<T>(1.0 / n_bags as f64);

    let eps = loss_cfg.label_smoothing;
    let targets = Array2::from_shape_fn((n_bags, n_classes), |(b, c)| {
        cast::<T>((if labels[b] == c { 1.0 - eps } else { 0.0 }) + eps / n_classes as f64)
    });
    let log_probs = log_softmax_rows(&fwd.logits);
    let bag_loss = -(&targets * &log_probs).sum() * inv_b;

    let inst_share = config.clam.as_ref().map(|c| cast::<T>(c.instance_weight));
    let bag_weight = inst_share.map_or(T::one(), |w| T::one() - w);

    let mut sink = GradSink {
        config,
        params,
        trainable: trainable_names(config, params),
        grads: ModelParams::from_tensors(Default::default()),
    };

    // CLAM instance loss.
    let mut instance_loss = None;
    if let (Some(clam), Some(w_inst)) = (&config.clam, inst_share) {
        let mut per_bag = Vec::new();
        for (b, &label) in labels.iter().enumerate().take(n_bags) {
            let cache = fwd.cache.bags[b].as_ref().expect("clam runs on attention");
            let (top, bottom) = extreme_patches(&cache.attention, clam.k);
            if top.is_empty() {
                continue;
            }
            let rows: Vec<usize> = top.iter().chain(bottom.iter()).copied().collect();
            let x = batch.bag(b).select(Axis(0), &rows);
            let w = params.get(&instance_weight(label));
            let mut logits = x.dot(&w.t());
            add_row(&mut logits, params.get(&instance_bias(label)));
            let targets: Vec<usize> = (0..rows.len()).map(|i| usize::from(i < top.len())).collect();
            per_bag.push((b, x, logits, targets));
        }
        if !per_bag.is_empty() {
            let inv_bags = cast::<T>(1.0 / per_bag.len() as f64);
            let mut total = T::zero();
            for (b, x, logits, targets) in &per_bag {
                let inv_n = cast::<T>(1.0 / targets.len() as f64);
                let lp = log_softmax_rows(logits);
                let mut d = softmax_rows(logits);
                for (i, &t) in targets.iter().enumerate() {
                    total -= lp[[i, t]] * inv_n * inv_bags;
                    d[[i, t]] -= T::one();
                }
                d *= inv_n * inv_bags * w_inst;
                sink.add(&instance_weight(labels[*b]), &d.t().dot(x));
                sink.add(&instance_bias(labels[*b]), &col_sum(&d));
            }
            instance_loss = Some(total);
        } else {
            instance_loss = Some(T::zero());
        }
    }

    let loss = match (instance_loss, inst_share) {
        (Some(il), Some(w)) => bag_weight * bag_loss + w * il,
        _ => bag_loss,
    };
    if !loss.is_finite() {
        let tensor = params.first_non_finite().map_or_else(
            || if batch.data.iter().any(|v| !v.is_finite()) { "features".to_owned() } else { "logits".to_owned() },
            str::to_owned,
        );
        return Err(Error::Numeric { tensor, message: "non-finite loss".into() });
    }

    // Head backward.
    let d_logits = (&fwd.probs - &targets) * (inv_b * bag_weight);
    let out_w = effective_weight(config, params, HEAD_OUT_W);
    sink.add_weight(HEAD_OUT_W, &d_logits.t().dot(&fwd.cache.last));
    sink.add(HEAD_OUT_B, &col_sum(&d_logits));
    let mut du = d_logits.dot(out_w.as_ref());
    for (l, layer) in fwd.cache.layers.iter().enumerate().rev() {
        if let Some(m) = &layer.dropout {
            du *= m;
        }
        ndarray::Zip::from(&mut du).and(&layer.pre).for_each(|g, &p| {
            if p <= T::zero() {
                *g = T::zero();
            }
        });
        let w = effective_weight(config, params, &head_weight(l));
        sink.add_weight(&head_weight(l), &du.t().dot(&layer.input));
        sink.add(&head_bias(l), &col_sum(&du));
        du = du.dot(w.as_ref());
    }
    let d_z = du;

    // Attention backward.
    if config.uses_attention() && sink.attention_trainable() {
        let score_w = params.get(ATTN_SCORE_W).row(0).to_owned();
        let a_dim = config.aggregator.attn_dim;
        let mut g_proj = Array2::<T>::zeros((a_dim, config.feature_dim));
        let mut g_proj_b = Array2::<T>::zeros((1, a_dim));
        let mut g_score = Array2::<T>::zeros((1, a_dim));
        let mut g_score_b = T::zero();
        for b in 0..n_bags {
            let cache = fwd.cache.bags[b].as_ref().expect("attention cache");
            let x = batch.bag(b);
            let d_att = x.dot(&d_z.row(b));
            let inner = cache.attention.dot(&d_att);
            let d_scores = &cache.attention * &d_att.mapv(|v| v - inner);
            g_score_b += d_scores.sum();
            g_score.row_mut(0).scaled_add(T::one(), &cache.hd.t().dot(&d_scores));
            let mut d_h = d_scores.insert_axis(Axis(1)).dot(&score_w.view().insert_axis(Axis(0)));
            if let Some(m) = &cache.dropout {
                d_h *= m;
            }
            ndarray::Zip::from(&mut d_h).and(&cache.h).for_each(|g, &h| *g *= T::one() - h * h);
            g_proj += &d_h.t().dot(&x);
            g_proj_b += &col_sum(&d_h);
        }
        sink.add_weight(ATTN_PROJ_W, &g_proj);
        sink.add(ATTN_PROJ_B, &g_proj_b);
        sink.add(ATTN_SCORE_W, &g_score);
        sink.add(ATTN_SCORE_B, &Array2::from_elem((1, 1), g_score_b));
    }

    // Every trainable tensor gets an entry, zero if untouched.
    let mut grads = sink.grads;
    for name in &sink.trainable {
        if grads.try_get(name).is_none() {
            grads.insert(name.clone(), Array2::zeros(params.get(name).raw_dim()));
        }
    }
    Ok(LossOutput { loss, bag_loss, instance_loss, grads, probs: fwd.probs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig, Strategy};
    use crate::store::{collate, PatchFeatureBag};

    fn labels() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    fn bag(rows: usize, dim: usize, seed: u64, label: usize) -> PatchFeatureBag {
        let mut rng = SplitMix64::new(seed);
        PatchFeatureBag::new("c", "s", Array2::from_shape_fn((rows, dim), |_| rng.gaussian() as f32)).with_label(label)
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let mut cfg = ModelConfig::for_strategy(Strategy::Pooling, labels(), 4);
        cfg.aggregator.kind = AggregatorKind::Mean;
        let mut params = init_params::<f64>(&cfg, 0);
        for (_, t) in params.iter_mut() {
            t.fill(0.0);
        }
        let batch = collate(&[bag(3, 4, 1, 0), bag(2, 4, 2, 1)]).unwrap().cast::<f64>();
        let out = loss_and_grads(&params, &cfg, &batch, &LossConfig { label_smoothing: 0.0 }, Mode::Eval, 0).unwrap();
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn mean_of_identical_patches_is_the_patch() {
        let v = ndarray::array![1.5f64, -2.0, 0.25];
        let x = Array2::from_shape_fn((5, 3), |(_, j)| v[j]);
        assert_eq!(pool_bag(AggregatorKind::Mean, x.view()), v);
        assert_eq!(pool_bag(AggregatorKind::Max, x.view()), v);
    }

    #[test]
    fn extreme_patch_selection_clips_k() {
        let a = ndarray::array![0.1f64, 0.4, 0.2, 0.3];
        assert_eq!(extreme_patches(&a, 8), (vec![1, 3], vec![2, 0]));
        assert_eq!(extreme_patches(&ndarray::array![1.0f64], 8), (vec![], vec![]));
    }

    #[test]
    fn missing_labels_error() {
        let cfg = ModelConfig::for_strategy(Strategy::Abmil, labels(), 4);
        let params = init_params::<f32>(&cfg, 0);
        let mut b = bag(3, 4, 1, 0);
        b.label = None;
        let batch = collate(&[b]).unwrap();
        let err = loss_and_grads(&params, &cfg, &batch, &LossConfig::default(), Mode::Eval, 0).unwrap_err();
        assert!(matches!(err, Error::MissingLabels(_)));
    }

    #[test]
    fn non_finite_parameter_is_named() {
        let cfg = ModelConfig::for_strategy(Strategy::Abmil, labels(), 4);
        let mut params = init_params::<f32>(&cfg, 0);
        params.get_mut(HEAD_OUT_W).unwrap()[[0, 0]] = f32::NAN;
        let batch = collate(&[bag(3, 4, 1, 0)]).unwrap();
        match loss_and_grads(&params, &cfg, &batch, &LossConfig::default(), Mode::Eval, 0) {
            Err(Error::Numeric { tensor, .. }) => assert_eq!(tensor, HEAD_OUT_W),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let cfg = ModelConfig::for_strategy(Strategy::Abmil, labels(), 4);
        let params = init_params::<f32>(&cfg, 0);
        let batch = collate(&[bag(3, 5, 1, 0)]).unwrap();
        assert!(matches!(forward(&params, &cfg, &batch, Mode::Eval, 0), Err(Error::DimensionMismatch { .. })));
    }
}
