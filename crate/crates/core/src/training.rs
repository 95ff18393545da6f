//! Optimization of the fusion MLP and context embedding against MOS targets.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use log::{debug, warn};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::{evaluate_metrics, srcc, MetricsResult, ScoreTable};
use crate::backbones::{FeatureBundle, ForwardMode, FragmentEncoder, FusionGrads, FusionMlp, Linear, TextEncoder, VisualEncoder};
use crate::dimensions::{axis_index, registry, AXIS_COUNT};
use crate::error::{Error, Result};
use crate::evaluator::{softmax_score, ModelState, Predictor};
use crate::prompts::{AbstractForm, ContextEmbedding, ContextMode, Polarity, PromptSet};

/// Maps a MOS in `[-1, 1]` onto the score range `[0, 1]`.
pub fn rescale_mos(mos: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&mos) {
        return Err(Error::MosOutOfRange(mos));
    }
    Ok((mos + 1.0) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub plcc: f64,
    pub rank: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { plcc: 1.0, rank: 0.3 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.plcc >= 0.0 && self.rank >= 0.0) || self.plcc + self.rank == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "loss weights ({}, {}) must be non-negative and not both zero",
                self.plcc, self.rank
            )));
        }
        Ok(())
    }
}

/// Per-axis targets in `[0, 1]`; `mask[a]` is false where axis `a` is unlabeled.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTarget {
    pub video_id: String,
    pub targets: Vec<f64>,
    pub mask: Vec<bool>,
}

impl TrainTarget {
    pub fn new(video_id: impl Into<String>, values: &BTreeMap<String, f64>) -> Result<Self> {
        let mut targets = vec![0.0; AXIS_COUNT];
        let mut mask = vec![false; AXIS_COUNT];
        for (code, &v) in values {
            let a = axis_index(code)?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("target {v} for {code} is outside [0, 1]")));
            }
            targets[a] = v;
            mask[a] = true;
        }
        Ok(Self {
            video_id: video_id.into(),
            targets,
            mask,
        })
    }

    /// All 16 axes labeled, registry order.
    pub fn full(video_id: impl Into<String>, values: &[f64]) -> Result<Self> {
        let values: BTreeMap<String, f64> = registry()
            .iter()
            .zip(values)
            .map(|(s, &v)| (s.code.to_string(), v))
            .collect();
        if values.len() != AXIS_COUNT {
            return Err(Error::Shape(format!("expected {AXIS_COUNT} targets")));
        }
        Self::new(video_id, &values)
    }

    pub fn get(&self, axis: usize) -> Option<f64> {
        self.mask[axis].then_some(self.targets[axis])
    }
}

/// Loss value, `dL/dQ` per sample and axis, and which axes took part.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub value: f64,
    pub grad: Array2<f64>,
    pub active_axes: Vec<usize>,
    pub skipped_axes: Vec<usize>,
}

/// Value and gradient of `w_p (1 - PLCC) + w_r * hinge` for one axis.
fn axis_loss(p: &[f64], y: &[f64], weights: LossWeights, grad: &mut [f64]) -> f64 {
    let n = p.len() as f64;
    let mp = p.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let pc: Vec<f64> = p.iter().map(|v| v - mp).collect();
    let yc: Vec<f64> = y.iter().map(|v| v - my).collect();
    let sp = pc.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sy = yc.iter().map(|v| v * v).sum::<f64>().sqrt();
    // spreads at rounding level count as constant predictions
    let floor = f64::EPSILON * n.sqrt() * p.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut value = 0.0;
    if weights.plcc > 0.0 {
        if sp > floor {
            let r = pc.iter().zip(&yc).map(|(a, b)| a * b).sum::<f64>() / (sp * sy);
            value += weights.plcc * (1.0 - r);
            for k in 0..p.len() {
                grad[k] -= weights.plcc * (yc[k] / (sp * sy) - r * pc[k] / (sp * sp));
            }
        } else {
            value += weights.plcc;
        }
    }
    if weights.rank > 0.0 {
        let pairs = n * (n - 1.0);
        let scale = weights.rank / pairs;
        for i in 0..p.len() {
            for j in 0..p.len() {
                if y[i] == y[j] {
                    continue;
                }
                let sign = (y[j] - y[i]).signum();
                let m = (p[i] - p[j]) * sign;
                if m > 0.0 {
                    value += scale * m;
                    grad[i] += scale * sign;
                    grad[j] -= scale * sign;
                }
            }
        }
    }
    value
}

/// Mean over usable axes of the correlation and pairwise rank losses.
///
/// `predictions` is `n x 16`. An axis with fewer than two labeled samples or
/// constant targets is skipped; if every axis is skipped the batch is degenerate.
pub fn batch_loss(
    predictions: ArrayView2<'_, f64>,
    targets: &[&TrainTarget],
    axes: &[usize],
    weights: LossWeights,
) -> Result<BatchLoss> {
    let n = predictions.nrows();
    if targets.len() != n || predictions.ncols() != AXIS_COUNT {
        return Err(Error::Shape(format!(
            "{}x{} predictions for {} targets",
            n,
            predictions.ncols(),
            targets.len()
        )));
    }
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let mut grad = Array2::zeros((n, AXIS_COUNT));
    let mut value = 0.0;
    let mut active_axes = Vec::new();
    let mut skipped_axes = Vec::new();
    for &a in axes {
        let rows: Vec<usize> = (0..n).filter(|&k| targets[k].mask[a]).collect();
        let y: Vec<f64> = rows.iter().map(|&k| targets[k].targets[a]).collect();
        if rows.len() < 2 || y.iter().all(|&v| v == y[0]) {
            warn!("skipping axis {} in this batch: targets are constant", registry()[a].code);
            skipped_axes.push(a);
            continue;
        }
        let p: Vec<f64> = rows.iter().map(|&k| predictions[[k, a]]).collect();
        let mut g = vec![0.0; rows.len()];
        value += axis_loss(&p, &y, weights, &mut g);
        for (&k, gk) in rows.iter().zip(g) {
            grad[[k, a]] = gk;
        }
        active_axes.push(a);
    }
    if active_axes.is_empty() {
        return Err(Error::DegenerateBatch);
    }
    let m = active_axes.len() as f64;
    grad /= m;
    Ok(BatchLoss {
        value: value / m,
        grad,
        active_axes,
        skipped_axes,
    })
}

/// One training example: cached features and their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub bundle: FeatureBundle,
    pub target: TrainTarget,
}

/// Gradients for every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub mlp: Option<FusionGrads>,
    pub context: Array2<f64>,
}

impl Gradients {
    /// Same order as [`ModelState::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.context.iter().copied().collect();
        if let Some(g) = &self.mlp {
            out.extend(g.fc1_weight.iter());
            out.extend(g.fc1_bias.iter());
            out.extend(g.fc2_weight.iter());
            out.extend(g.fc2_bias.iter());
        }
        out
    }
}

impl ModelState {
    /// Trainable parameters flattened: context rows, then `fc1` weight and bias, then `fc2`.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.context.vectors.iter().copied().collect();
        if let Some(m) = &self.mlp {
            for l in [&m.fc1, &m.fc2] {
                out.extend(l.weight.iter());
                out.extend(l.bias.iter());
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.context.vectors.len()
            + self
                .mlp
                .as_ref()
                .map_or(0, |m| m.fc1.weight.len() + m.fc1.bias.len() + m.fc2.weight.len() + m.fc2.bias.len())
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.parameter_count()
            )));
        }
        let mut it = values.iter().copied();
        for v in self.context.vectors.iter_mut() {
            *v = it.next().expect("length checked");
        }
        if let Some(m) = &mut self.mlp {
            for l in [&mut m.fc1, &mut m.fc2] {
                for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                    *v = it.next().expect("length checked");
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over the trainable parameters.
    pub fn parameter_digest(&self) -> String {
        let mut h = Sha256::new();
        for v in self.parameters() {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn normalize_rows(m: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let norms: Array1<f64> = m.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if norms.iter().any(|&n| n == 0.0) {
        return Err(Error::ZeroVector);
    }
    Ok((m / &norms.view().insert_axis(Axis(1)), norms))
}

/// Scores computed along the training path (mean of normalized cells).
pub struct ForwardResult {
    pub predictions: Array2<f64>,
    pub loss: BatchLoss,
}

/// Loss and analytic gradients for one batch.
///
/// `rng` enables dropout; `None` runs the MLP in eval mode.
pub fn loss_and_grad(
    state: &ModelState,
    text: &dyn TextEncoder,
    batch: &[&Sample],
    axes: &[usize],
    weights: LossWeights,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(ForwardResult, Gradients)> {
    let emb = state.prompts.embed(text, &state.context)?;
    let (pos_hat, pos_norm) = normalize_rows(&emb.positive)?;
    let (neg_hat, neg_norm) = normalize_rows(&emb.negative)?;
    let n = batch.len();
    let d = pos_hat.ncols();

    let mut predictions = Array2::zeros((n, AXIS_COUNT));
    let mut sims_pos = Array2::zeros((n, AXIS_COUNT));
    let mut sims_neg = Array2::zeros((n, AXIS_COUNT));
    let mut means = Array2::zeros((n, d));
    let mut cached = Vec::with_capacity(n);
    for (k, sample) in batch.iter().enumerate() {
        let bundle = &sample.bundle;
        let (fused, tape) = match (&state.mlp, &bundle.fragment) {
            (None, _) => (bundle.local.clone(), None),
            (Some(mlp), Some(fragment)) => {
                let mode = match rng.as_deref_mut() {
                    Some(r) => ForwardMode::Train(r),
                    None => ForwardMode::Eval,
                };
                let (f, t) = mlp.forward_taped(&bundle.local, fragment, mode)?;
                (f, Some(t))
            }
            (Some(_), None) => {
                return Err(Error::InvalidArgument(format!(
                    "`{}` has no fragment features but the model fuses them",
                    bundle.source_id
                )))
            }
        };
        if fused.dim() != d {
            return Err(Error::Shape(format!("feature width {} vs prompt width {d}", fused.dim())));
        }
        if fused.data.nrows() == 0 {
            return Err(Error::Empty(format!("no features for `{}`", bundle.source_id)));
        }
        let (f_hat, f_norm) = normalize_rows(&fused.data)?;
        let mean = f_hat.mean_axis(Axis(0)).expect("non-empty");
        let sp = pos_hat.dot(&mean);
        let sn = neg_hat.dot(&mean);
        for a in 0..AXIS_COUNT {
            predictions[[k, a]] = softmax_score(sp[a], sn[a]);
        }
        sims_pos.row_mut(k).assign(&sp);
        sims_neg.row_mut(k).assign(&sn);
        means.row_mut(k).assign(&mean);
        cached.push((f_hat, f_norm, tape));
    }

    let targets: Vec<&TrainTarget> = batch.iter().map(|s| &s.target).collect();
    let loss = batch_loss(predictions.view(), &targets, axes, weights)?;
    // dL/dS+ = dL/dQ * Q (1 - Q), dL/dS- is its negative
    let g_pos = &loss.grad * &predictions.mapv(|q| q * (1.0 - q));
    let g_neg = -&g_pos;

    let mut mlp_grads = state.mlp.as_ref().map(FusionGrads::zeros_like);
    if let (Some(mlp), Some(acc)) = (&state.mlp, mlp_grads.as_mut()) {
        for (k, (f_hat, f_norm, tape)) in cached.iter().enumerate() {
            let g = g_pos.row(k).dot(&pos_hat) + g_neg.row(k).dot(&neg_hat);
            let proj = f_hat.dot(&g);
            let cells = f_hat.nrows() as f64;
            let mut grad_fused = f_hat * &proj.view().insert_axis(Axis(1));
            grad_fused.mapv_inplace(|v| -v);
            grad_fused += &g.view().insert_axis(Axis(0));
            grad_fused /= &(f_norm * cells).view().insert_axis(Axis(1));
            acc.accumulate(&mlp.backward(tape.as_ref().expect("taped when fusing"), &grad_fused));
        }
    }

    let embedding_grad = |g: &Array2<f64>, sims: &Array2<f64>, hat: &Array2<f64>, norm: &Array1<f64>| {
        let a = g.t().dot(&means);
        let b = (g * sims).sum_axis(Axis(0));
        (a - hat * &b.view().insert_axis(Axis(1))) / norm.view().insert_axis(Axis(1))
    };
    let grad_pos = embedding_grad(&g_pos, &sims_pos, &pos_hat, &pos_norm);
    let grad_neg = embedding_grad(&g_neg, &sims_neg, &neg_hat, &neg_norm);

    let mut context = state.context.zeros_like();
    for (a, pair) in state.prompts.pairs.iter().enumerate() {
        let ctx = state.context.for_axis(a);
        let row = state.context.row_for_axis(a);
        for (pol, grad) in [(Polarity::Positive, &grad_pos), (Polarity::Negative, &grad_neg)] {
            let ge = grad.row(a);
            if ge.iter().all(|&v| v == 0.0) {
                continue;
            }
            let gc = text.context_gradient(pair.tokens(pol), ctx, ge)?;
            let mut target = context.row_mut(row);
            target += &gc;
        }
    }

    Ok((
        ForwardResult { predictions, loss },
        Gradients {
            mlp: mlp_grads,
            context,
        },
    ))
}

/// Eval-mode loss over a whole sample set.
pub fn dataset_loss(
    state: &ModelState,
    text: &dyn TextEncoder,
    samples: &[Sample],
    axes: &[usize],
    weights: LossWeights,
) -> Result<f64> {
    let refs: Vec<&Sample> = samples.iter().collect();
    Ok(loss_and_grad(state, text, &refs, axes, weights, None)?.0.loss.value)
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(size: usize, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; size],
            v: vec![0.0; size],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            let g = grads[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * params[k]);
        }
    }
}

/// Cosine decay from `base` at step 0 towards zero at `total`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    0.5 * base * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub loss_weights: LossWeights,
    pub seed: u64,
    /// Restricts the loss to these axis codes (e.g. `["O"]`).
    pub axis_subset: Option<Vec<String>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            epochs: 30,
            loss_weights: LossWeights::default(),
            seed: 42,
            axis_subset: None,
        }
    }
}

impl TrainConfig {
    /// Validates the config and returns the axis indices the loss covers.
    pub fn axes(&self) -> Result<Vec<usize>> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("learning rate and weight decay must be >= 0".into()));
        }
        self.loss_weights.validate()?;
        match &self.axis_subset {
            None => Ok((0..AXIS_COUNT).collect()),
            Some(codes) if codes.is_empty() => Err(Error::InvalidArgument("axis_subset is empty".into())),
            Some(codes) => {
                let mut axes = codes.iter().map(|c| axis_index(c)).collect::<Result<Vec<_>>>()?;
                axes.sort_unstable();
                axes.dedup();
                Ok(axes)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training-mode batch loss.
    pub loss: f64,
    pub learning_rate: f64,
    pub validation: Option<MetricsResult>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: ModelState,
    pub history: Vec<EpochRecord>,
    pub steps: usize,
}

fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size.max(2)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        let tail = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(tail);
    }
    out
}

/// Predictions for `samples` as a score table.
pub fn predict_table(state: &ModelState, text: &dyn TextEncoder, samples: &[Sample]) -> Result<ScoreTable> {
    let predictor = Predictor::new(state, text)?;
    let mut values = Array2::zeros((samples.len(), AXIS_COUNT));
    for (k, s) in samples.iter().enumerate() {
        values.row_mut(k).assign(&predictor.predict(&s.bundle, false)?.scores());
    }
    ScoreTable::new(samples.iter().map(|s| s.bundle.source_id.clone()).collect(), values)
}

/// Targets for `samples`, `NaN` where unlabeled.
pub fn target_table(samples: &[Sample]) -> Result<ScoreTable> {
    let mut values = Array2::from_elem((samples.len(), AXIS_COUNT), f64::NAN);
    for (k, s) in samples.iter().enumerate() {
        for a in 0..AXIS_COUNT {
            if let Some(v) = s.target.get(a) {
                values[[k, a]] = v;
            }
        }
    }
    ScoreTable::new(samples.iter().map(|s| s.bundle.source_id.clone()).collect(), values)
}

/// Trains `state` in place of its MLP and context; encoders are only read.
pub fn train(
    mut state: ModelState,
    text: &dyn TextEncoder,
    train_set: &[Sample],
    validation: Option<&[Sample]>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let axes = config.axes()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if train_set.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: train_set.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = state.parameters();
    let mut adam = Adam::new(params.len(), config.weight_decay);
    let per_epoch = batches(&(0..train_set.len()).collect::<Vec<_>>(), config.batch_size).len();
    let total = per_epoch * config.epochs;
    let mut step = 0;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        let lr_at_start = cosine_lr(config.learning_rate, step, total);
        for batch in batches(&order, config.batch_size) {
            let refs: Vec<&Sample> = batch.iter().map(|&k| &train_set[k]).collect();
            let (fwd, grads) = match loss_and_grad(&state, text, &refs, &axes, config.loss_weights, Some(&mut rng)) {
                Ok(r) => r,
                Err(Error::DegenerateBatch) => {
                    warn!("epoch {epoch}: skipping a batch with constant targets on every axis");
                    continue;
                }
                Err(e) => return Err(e),
            };
            let lr = cosine_lr(config.learning_rate, step, total);
            adam.step(&mut params, &grads.flatten(), lr);
            state.set_parameters(&params)?;
            losses.push(fwd.loss.value);
            step += 1;
        }
        let loss = if losses.is_empty() {
            f64::NAN
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };
        let validation = match validation {
            Some(v) if v.len() >= 2 => Some(evaluate_metrics(&predict_table(&state, text, v)?, &target_table(v)?)?),
            _ => None,
        };
        debug!("epoch {epoch}: loss {loss:.6}");
        history.push(EpochRecord {
            epoch,
            loss,
            learning_rate: lr_at_start,
            validation,
        });
    }
    Ok(TrainOutcome {
        state,
        history,
        steps: step,
    })
}

/// Rows `epoch,loss,learning_rate` then `srcc_<code>,plcc_<code>` per axis.
pub fn write_history_csv<W: Write>(history: &[EpochRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["epoch".to_string(), "loss".into(), "learning_rate".into()];
    for s in registry() {
        header.push(format!("srcc_{}", s.code));
        header.push(format!("plcc_{}", s.code));
    }
    w.write_record(&header)?;
    for r in history {
        let mut rec = vec![r.epoch.to_string(), r.loss.to_string(), r.learning_rate.to_string()];
        for a in 0..AXIS_COUNT {
            let m = r.validation.as_ref().map(|v| &v.per_axis[a]);
            rec.push(m.and_then(|m| m.srcc).map_or_else(String::new, |v| v.to_string()));
            rec.push(m.and_then(|m| m.plcc).map_or_else(String::new, |v| v.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-axis SRCC between training-path predictions and targets.
pub fn train_srcc(state: &ModelState, text: &dyn TextEncoder, samples: &[Sample]) -> Result<Vec<Option<f64>>> {
    let preds = predict_table(state, text, samples)?;
    let targets = target_table(samples)?;
    Ok((0..AXIS_COUNT)
        .map(|a| {
            let (x, y): (Vec<f64>, Vec<f64>) = preds
                .values
                .column(a)
                .iter()
                .zip(targets.values.column(a))
                .filter(|(_, t)| t.is_finite())
                .map(|(p, t)| (*p, *t))
                .unzip();
            srcc(ArrayView1::from(&x), ArrayView1::from(&y)).ok()
        })
        .collect())
}

/// Parameter digests of the frozen encoders, taken before and after training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezeAudit {
    pub digests: Vec<(String, String)>,
}

impl FreezeAudit {
    pub fn capture(
        visual: Option<&dyn VisualEncoder>,
        text: &dyn TextEncoder,
        fragment: Option<&dyn FragmentEncoder>,
    ) -> Self {
        let mut digests = vec![(text.id(), text.parameter_digest())];
        if let Some(v) = visual {
            digests.push((v.id(), v.parameter_digest()));
        }
        if let Some(f) = fragment {
            digests.push((f.id(), f.parameter_digest()));
        }
        Self { digests }
    }

    /// Ids of encoders whose parameters changed since `before`.
    pub fn changed_since(&self, before: &FreezeAudit) -> Vec<String> {
        self.digests
            .iter()
            .zip(&before.digests)
            .filter(|(a, b)| a != b)
            .map(|(a, _)| a.0.clone())
            .collect()
    }
}

const CHECKPOINT_FORMAT: &str = "maxvqa-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBlock {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Text manifest stored next to the raw parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub text_encoder: String,
    pub context_mode: ContextMode,
    pub abstract_form: AbstractForm,
    pub dropout: Option<f64>,
    pub init: String,
    pub steps: usize,
    pub epochs: usize,
    pub blocks: Vec<ParameterBlock>,
    pub parameters_sha256: String,
}

fn blocks_of(state: &ModelState) -> Vec<ParameterBlock> {
    let mut blocks = vec![ParameterBlock {
        name: "context".into(),
        shape: state.context.vectors.shape().to_vec(),
    }];
    if let Some(m) = &state.mlp {
        for (name, l) in [("fc1", &m.fc1), ("fc2", &m.fc2)] {
            blocks.push(ParameterBlock {
                name: format!("{name}.weight"),
                shape: l.weight.shape().to_vec(),
            });
            blocks.push(ParameterBlock {
                name: format!("{name}.bias"),
                shape: vec![l.bias.len()],
            });
        }
    }
    blocks
}

/// Writes `manifest.json` and `parameters.bin` (little-endian `f64`) into `dir`.
pub fn save_checkpoint(dir: &Path, state: &ModelState, text: &dyn TextEncoder, steps: usize, epochs: usize) -> Result<()> {
    fs::create_dir_all(dir)?;
    let params = state.parameters();
    let mut bytes = Vec::with_capacity(params.len() * 8);
    for v in &params {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        text_encoder: text.id(),
        context_mode: state.context.mode,
        abstract_form: state.prompts.abstract_form,
        dropout: state.mlp.as_ref().map(|m| m.dropout),
        init: "context: embedding of the literal X; fc1: uniform(+-1/sqrt(fan_in)); fc2: zeros".into(),
        steps,
        epochs,
        blocks: blocks_of(state),
        parameters_sha256: state.parameter_digest(),
    };
    let tmp = dir.join("parameters.bin.tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, dir.join("parameters.bin"))?;
    let tmp = dir.join("manifest.json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(&manifest)?)?;
    fs::rename(&tmp, dir.join("manifest.json"))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(ModelState, CheckpointManifest)> {
    let manifest_path = dir.join("manifest.json");
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            &manifest_path,
            format!("unsupported checkpoint {} v{}", manifest.format, manifest.version),
        ));
    }
    let bin_path = dir.join("parameters.bin");
    let bytes = fs::read(&bin_path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::format(&bin_path, "length is not a multiple of 8"));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let shape = |name: &str| manifest.blocks.iter().find(|b| b.name == name).map(|b| b.shape.clone());
    let ctx_shape = shape("context").ok_or_else(|| Error::format(&manifest_path, "missing context block"))?;
    if ctx_shape.len() != 2 {
        return Err(Error::format(&manifest_path, "context block must be 2-D"));
    }
    let mlp = match (shape("fc1.weight"), shape("fc2.weight")) {
        (Some(w1), Some(w2)) if w1.len() == 2 && w2.len() == 2 => Some(FusionMlp {
            fc1: Linear::zeros(w1[1], w1[0]),
            fc2: Linear::zeros(w2[1], w2[0]),
            dropout: manifest.dropout.unwrap_or(0.0),
        }),
        (None, None) => None,
        _ => return Err(Error::format(&manifest_path, "incomplete fusion MLP blocks")),
    };
    let mut state = ModelState {
        mlp,
        context: ContextEmbedding {
            mode: manifest.context_mode,
            vectors: Array2::zeros((ctx_shape[0], ctx_shape[1])),
        },
        prompts: PromptSet::with_form(manifest.abstract_form),
    };
    if blocks_of(&state) != manifest.blocks {
        return Err(Error::format(&manifest_path, "parameter blocks are inconsistent"));
    }
    state
        .set_parameters(&values)
        .map_err(|e| Error::format(&bin_path, e.to_string()))?;
    if state.parameter_digest() != manifest.parameters_sha256 {
        return Err(Error::format(&bin_path, "parameter checksum mismatch"));
    }
    Ok((state, manifest))
}

/// Per-dataset z-scoring of each axis, then one affine map of the pooled
/// z-range onto `[0, 1]`, so datasets with different MOS scales can be mixed.
pub fn normalize_mixed(datasets: &[Vec<TrainTarget>]) -> Result<Vec<Vec<TrainTarget>>> {
    let mut out: Vec<Vec<TrainTarget>> = datasets.to_vec();
    let mut lo = [f64::INFINITY; AXIS_COUNT];
    let mut hi = [f64::NEG_INFINITY; AXIS_COUNT];
    for set in &mut out {
        for a in 0..AXIS_COUNT {
            let vals: Vec<f64> = set.iter().filter_map(|t| t.get(a)).collect();
            if vals.is_empty() {
                continue;
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            for t in set.iter_mut().filter(|t| t.mask[a]) {
                let z = if std > 0.0 { (t.targets[a] - mean) / std } else { 0.0 };
                t.targets[a] = z;
                lo[a] = lo[a].min(z);
                hi[a] = hi[a].max(z);
            }
        }
    }
    for set in &mut out {
        for t in set.iter_mut() {
            for a in 0..AXIS_COUNT {
                if t.mask[a] {
                    t.targets[a] = if hi[a] > lo[a] {
                        (t.targets[a] - lo[a]) / (hi[a] - lo[a])
                    } else {
                        0.5
                    };
                }
            }
        }
    }
    Ok(out)
}

pub const MAXWELL_TRAIN_SIZE: usize = 3634;
pub const MAXWELL_TEST_SIZE: usize = 909;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

fn shuffled_ids(ids: &[String], seed: u64) -> Vec<String> {
    let mut sorted = ids.to_vec();
    sorted.sort();
    sorted.dedup();
    sorted.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    sorted
}

/// Fixed holdout: the given test list if any, otherwise `test_size` seeded picks.
pub fn fixed_split(
    ids: &[String],
    test_list: Option<&[String]>,
    test_size: usize,
    seed: u64,
) -> Result<Split> {
    match test_list {
        Some(list) => {
            let test: std::collections::BTreeSet<&String> = list.iter().collect();
            let missing: Vec<&&String> = test.iter().filter(|id| !ids.contains(id)).collect();
            if let Some(m) = missing.first() {
                return Err(Error::Alignment(format!("test video `{m}` is not in the dataset")));
            }
            let mut train: Vec<String> = ids.iter().filter(|id| !test.contains(id)).cloned().collect();
            train.sort();
            Ok(Split {
                train,
                test: test.into_iter().cloned().collect(),
            })
        }
        None => {
            let shuffled = shuffled_ids(ids, seed);
            if shuffled.len() <= test_size {
                return Err(Error::TooFewSamples {
                    needed: test_size + 1,
                    got: shuffled.len(),
                });
            }
            let mut test = shuffled[..test_size].to_vec();
            let mut train = shuffled[test_size..].to_vec();
            test.sort();
            train.sort();
            Ok(Split { train, test })
        }
    }
}

/// `k` seeded random splits, each with `train_fraction` of the videos for training.
pub fn random_splits(ids: &[String], k: usize, train_fraction: f64, seed: u64) -> Result<Vec<Split>> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("train fraction {train_fraction} not in (0, 1)")));
    }
    (0..k as u64)
        .map(|s| {
            let shuffled = shuffled_ids(ids, seed.wrapping_add(s));
            let cut = (shuffled.len() as f64 * train_fraction).round() as usize;
            if cut < 2 || shuffled.len() - cut < 2 {
                return Err(Error::TooFewSamples {
                    needed: 4,
                    got: shuffled.len(),
                });
            }
            let mut train = shuffled[..cut].to_vec();
            let mut test = shuffled[cut..].to_vec();
            train.sort();
            test.sort();
            Ok(Split { train, test })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::Rng;

    use super::*;
    use crate::backbones::{FeatureGrid, StubTextEncoder};
    use crate::prompts::Vocabulary;

    fn full(id: &str, v: f64) -> TrainTarget {
        TrainTarget::full(id, &[v; AXIS_COUNT]).unwrap()
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_mos(-1.0).unwrap(), 0.0);
        assert_eq!(rescale_mos(0.0).unwrap(), 0.5);
        assert_eq!(rescale_mos(0.25).unwrap(), 0.625);
        assert!(matches!(rescale_mos(1.5), Err(Error::MosOutOfRange(_))));
    }

    fn single_axis_batch(p: &[f64], y: &[f64], axis: usize) -> (Array2<f64>, Vec<TrainTarget>) {
        let mut preds = Array2::from_elem((p.len(), AXIS_COUNT), 0.5);
        let targets = p
            .iter()
            .zip(y)
            .enumerate()
            .map(|(k, (&pk, &yk))| {
                preds[[k, axis]] = pk;
                let mut m = BTreeMap::new();
                m.insert(registry()[axis].code.to_string(), yk);
                TrainTarget::new(format!("v{k}"), &m).unwrap()
            })
            .collect();
        (preds, targets)
    }

    #[test]
    fn tied_predictions_give_no_correlation_gradient() {
        let (preds, targets) = single_axis_batch(&[0.7; 8], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8], 0);
        let refs: Vec<&TrainTarget> = targets.iter().collect();
        let l = batch_loss(preds.view(), &refs, &[0], LossWeights { plcc: 1.0, rank: 0.0 }).unwrap();
        assert_eq!(l.value, 1.0);
        assert!(l.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn batch_of_three_matches_hand_oracle() {
        let (preds, targets) = single_axis_batch(&[0.2, 0.5, 0.4], &[0.1, 0.3, 0.9], 0);
        let refs: Vec<&TrainTarget> = targets.iter().collect();
        let l = batch_loss(preds.view(), &refs, &[0], LossWeights::default()).unwrap();
        // 1 - r = 0.580686..., hinge = 0.1 / 3
        assert_relative_eq!(l.value, 0.590_686_065_311_232_7, max_relative = 1e-12);
    }

    #[test]
    fn perfect_and_affine_predictions_have_zero_loss() {
        let y = [0.1, 0.7, 0.3, 0.9];
        for p in [y, y.map(|v| 0.2 * v + 0.4)] {
            let (preds, targets) = single_axis_batch(&p, &y, 3);
            let refs: Vec<&TrainTarget> = targets.iter().collect();
            let l = batch_loss(preds.view(), &refs, &[3], LossWeights::default()).unwrap();
            assert!(l.value.abs() < 1e-12);
        }
    }

    #[test]
    fn loss_averages_active_axes() {
        let p1 = [0.2, 0.5, 0.4];
        let p2 = [0.7, 0.6, 0.65];
        let mut preds = Array2::from_elem((3, AXIS_COUNT), 0.5);
        let mut targets = Vec::new();
        for k in 0..3 {
            preds[[k, 0]] = p1[k];
            preds[[k, 15]] = p2[k];
            let mut m = BTreeMap::new();
            m.insert("T-1".to_string(), [0.1, 0.3, 0.9][k]);
            m.insert("O".to_string(), [0.2, 0.8, 0.5][k]);
            m.insert("A-1".to_string(), 0.4);
            targets.push(TrainTarget::new(format!("v{k}"), &m).unwrap());
        }
        let refs: Vec<&TrainTarget> = targets.iter().collect();
        let l = batch_loss(preds.view(), &refs, &[0, 9, 15], LossWeights::default()).unwrap();
        assert_eq!(l.active_axes, vec![0, 15]);
        assert_eq!(l.skipped_axes, vec![9]);
        assert_relative_eq!(l.value, 1.305_343_032_655_616_3, max_relative = 1e-12);
    }

    #[test]
    fn degenerate_and_tiny_batches() {
        let t = [full("a", 0.5), full("b", 0.5)];
        let refs: Vec<&TrainTarget> = t.iter().collect();
        let preds = array![[0.1; AXIS_COUNT], [0.2; AXIS_COUNT]];
        assert!(matches!(
            batch_loss(preds.view(), &refs, &[0, 1], LossWeights::default()),
            Err(Error::DegenerateBatch)
        ));
        assert!(matches!(
            batch_loss(preds.slice(ndarray::s![..1, ..]), &refs[..1], &[0], LossWeights::default()),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 6;
        let preds = Array2::from_shape_simple_fn((n, AXIS_COUNT), || rng.random_range(0.2..0.8));
        let targets: Vec<TrainTarget> = (0..n)
            .map(|k| {
                let vals: Vec<f64> = (0..AXIS_COUNT).map(|_| rng.random()).collect();
                TrainTarget::full(format!("v{k}"), &vals).unwrap()
            })
            .collect();
        let refs: Vec<&TrainTarget> = targets.iter().collect();
        let axes: Vec<usize> = (0..AXIS_COUNT).collect();
        let w = LossWeights::default();
        let base = batch_loss(preds.view(), &refs, &axes, w).unwrap();
        let eps = 1e-7;
        for k in 0..n {
            for a in [0, 7, 15] {
                let mut p = preds.clone();
                p[[k, a]] += eps;
                let mut m = preds.clone();
                m[[k, a]] -= eps;
                let num = (batch_loss(p.view(), &refs, &axes, w).unwrap().value
                    - batch_loss(m.view(), &refs, &axes, w).unwrap().value)
                    / (2.0 * eps);
                assert!((num - base.grad[[k, a]]).abs() < 1e-6, "{num} vs {}", base.grad[[k, a]]);
            }
        }
    }

    fn stub_text(seed: u64) -> StubTextEncoder {
        StubTextEncoder::new(Vocabulary::standard().len(), 6, 10, 8, 77, seed)
    }

    fn samples(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|k| {
                let local = Array2::from_shape_simple_fn((2 * 4, 8), || rng.random_range(-1.0..1.0));
                let frag = Array2::from_shape_simple_fn((2 * 4, 5), || rng.random_range(-1.0..1.0));
                let vals: Vec<f64> = (0..AXIS_COUNT).map(|_| rng.random()).collect();
                Sample {
                    bundle: FeatureBundle {
                        source_id: format!("s{k}"),
                        global: Array2::zeros((2, 8)),
                        local: FeatureGrid::new(2, 2, local).unwrap(),
                        fragment: Some(FeatureGrid::new(2, 2, frag).unwrap()),
                    },
                    target: TrainTarget::full(format!("s{k}"), &vals).unwrap(),
                }
            })
            .collect()
    }

    fn perturbed_state(text: &StubTextEncoder, mode: ContextMode) -> ModelState {
        let mut state = ModelState::initial(text, Some(5), Some(7), 0.5, 1, mode).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut p = state.parameters();
        for v in p.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        state.set_parameters(&p).unwrap();
        state
    }

    fn check_gradient(mode: ContextMode) {
        let text = stub_text(2);
        let state = perturbed_state(&text, mode);
        let data = samples(5, 4);
        let refs: Vec<&Sample> = data.iter().collect();
        let axes: Vec<usize> = (0..AXIS_COUNT).collect();
        let w = LossWeights::default();
        let (_, grads) = loss_and_grad(&state, &text, &refs, &axes, w, None).unwrap();
        let g = grads.flatten();
        let theta = state.parameters();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eps = 1e-6;
        for _ in 0..10 {
            let u: Vec<f64> = (0..theta.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let shifted = |s: f64| {
                let mut st = state.clone();
                let p: Vec<f64> = theta.iter().zip(&u).map(|(t, d)| t + s * d).collect();
                st.set_parameters(&p).unwrap();
                loss_and_grad(&st, &text, &refs, &axes, w, None).unwrap().0.loss.value
            };
            let num = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
            let ana: f64 = g.iter().zip(&u).map(|(a, b)| a * b).sum();
            assert!((num - ana).abs() / num.abs().max(ana.abs()) < 1e-5, "{num} vs {ana}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences_shared() {
        check_gradient(ContextMode::Shared);
    }

    #[test]
    fn gradient_matches_finite_differences_per_axis() {
        check_gradient(ContextMode::PerAxis);
    }

    #[test]
    fn training_path_scores_match_predictor() {
        let text = stub_text(2);
        let state = perturbed_state(&text, ContextMode::Shared);
        let data = samples(4, 9);
        let refs: Vec<&Sample> = data.iter().collect();
        let (fwd, _) = loss_and_grad(&state, &text, &refs, &[15], LossWeights::default(), None).unwrap();
        let table = predict_table(&state, &text, &data).unwrap();
        for (a, b) in fwd.predictions.iter().zip(table.values.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_learning_rate_is_a_null_update() {
        let text = stub_text(2);
        let state = perturbed_state(&text, ContextMode::Shared);
        let config = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            batch_size: 4,
            ..Default::default()
        };
        let out = train(state.clone(), &text, &samples(8, 1), None, &config).unwrap();
        assert_eq!(out.state, state);
        assert!(out.history[0].loss.is_finite());
        assert_eq!(out.steps, 2);
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let text = stub_text(2);
        let state = perturbed_state(&text, ContextMode::Shared);
        let data = samples(10, 3);
        let config = TrainConfig {
            epochs: 3,
            batch_size: 4,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let a = train(state.clone(), &text, &data, Some(&data), &config).unwrap();
        let b = train(state.clone(), &text, &data, Some(&data), &config).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.history, b.history);
        assert_ne!(a.state, state);
        let mut csv_out = Vec::new();
        write_history_csv(&a.history, &mut csv_out).unwrap();
        assert_eq!(String::from_utf8(csv_out).unwrap().lines().count(), 4);
    }

    #[test]
    fn single_axis_variant_only_sees_its_axis() {
        let text = stub_text(2);
        let state = perturbed_state(&text, ContextMode::PerAxis);
        let data = samples(6, 3);
        let refs: Vec<&Sample> = data.iter().collect();
        let config = TrainConfig {
            axis_subset: Some(vec!["O".into()]),
            ..Default::default()
        };
        let axes = config.axes().unwrap();
        assert_eq!(axes, vec![15]);
        let (fwd, grads) = loss_and_grad(&state, &text, &refs, &axes, LossWeights::default(), None).unwrap();
        assert_eq!(fwd.loss.active_axes, vec![15]);
        assert!(fwd.loss.grad.column(0).iter().all(|&v| v == 0.0));
        for a in 0..15 {
            assert!(grads.context.row(a).iter().all(|&v| v == 0.0));
        }
        assert!(grads.context.row(15).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn config_rejects_bad_axes_and_weights() {
        let bad = TrainConfig {
            axis_subset: Some(vec!["Q-7".into()]),
            ..Default::default()
        };
        assert!(matches!(bad.axes(), Err(Error::UnknownAxis(_))));
        let bad = TrainConfig {
            loss_weights: LossWeights { plcc: 0.0, rank: 0.0 },
            ..Default::default()
        };
        assert!(bad.axes().is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let text = stub_text(2);
        let state = perturbed_state(&text, ContextMode::PerAxis);
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &state, &text, 12, 3).unwrap();
        let (loaded, manifest) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded, state);
        assert_eq!(manifest.steps, 12);
        assert_eq!(manifest.blocks[1].shape, vec![7, 13]);

        let bin = dir.path().join("parameters.bin");
        let mut bytes = fs::read(&bin).unwrap();
        bytes[3] ^= 1;
        fs::write(&bin, bytes).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn mixed_normalization_maps_onto_unit_range() {
        let a: Vec<TrainTarget> = [0.1, 0.2, 0.3].iter().enumerate().map(|(k, &v)| full(&format!("a{k}"), v)).collect();
        let b: Vec<TrainTarget> = [10.0f64, 50.0, 90.0]
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let mut m = BTreeMap::new();
                m.insert("O".to_string(), v / 100.0);
                TrainTarget::new(format!("b{k}"), &m).unwrap()
            })
            .collect();
        let out = normalize_mixed(&[a, b]).unwrap();
        // both sets have the same z-scores, so they map identically
        for k in 0..3 {
            assert_relative_eq!(out[0][k].targets[15], out[1][k].targets[15], epsilon = 1e-12);
        }
        assert_relative_eq!(out[0][0].targets[15], 0.0, epsilon = 1e-12);
        assert_relative_eq!(out[0][2].targets[15], 1.0, epsilon = 1e-12);
        assert!(!out[1][0].mask[0]);
    }

    #[test]
    fn splits() {
        let ids: Vec<String> = (0..4543).map(|k| format!("vid{k:05}")).collect();
        let s = fixed_split(&ids, None, MAXWELL_TEST_SIZE, 0).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (MAXWELL_TRAIN_SIZE, MAXWELL_TEST_SIZE));
        assert_eq!(s, fixed_split(&ids, None, MAXWELL_TEST_SIZE, 0).unwrap());
        let listed = fixed_split(&ids, Some(&ids[..909]), 0, 0).unwrap();
        assert_eq!(listed.train.len(), 3634);

        let r = random_splits(&ids[..100], 10, 0.8, 7).unwrap();
        assert_eq!(r.len(), 10);
        assert!(r.iter().all(|s| s.train.len() == 80 && s.test.len() == 20));
        assert_ne!(r[0], r[1]);
        assert_eq!(r, random_splits(&ids[..100], 10, 0.8, 7).unwrap());
    }
}
