//! Training: mean per-timestep binary cross-entropy minimized by
//! backpropagation through time.
//!
//! Dropout (inverted scaling) applies to the hidden-state sequence before the
//! dense head, during training only; the recurrent path always sees the
//! undropped state. All shuffling and masking derives from the config seed,
//! keyed by epoch and dataset index, so results do not depend on thread
//! count or iteration order.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seeds;

use super::{
    clamp_prob, optimizer_by_name, sigmoid, LstmModel, ParamLayout, GATE_CELL, GATE_FORGET,
    GATE_INPUT, GATE_OUTPUT,
};

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Dropout rate on the hidden sequence before the dense head.
    pub dropout: f64,
    /// Windows per optimizer step; `None` means full batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Optimizer name from the registry (`adam` or `sgd`).
    pub optimizer: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 1e-3,
            dropout: 0.5,
            batch_size: Some(32),
            seed: 0,
            optimizer: "adam".into(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Usage("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Usage(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Usage(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Usage("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// One training example: a window of readings with per-timestep tamper labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub values: Vec<f64>,
    pub labels: Vec<bool>,
}

impl LabeledWindow {
    pub fn new(values: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        let w = LabeledWindow { values, labels };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Usage("training window must be non-empty".into()));
        }
        if self.values.len() != self.labels.len() {
            return Err(Error::Usage(format!(
                "training window has {} values but {} labels",
                self.values.len(),
                self.labels.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("training window contains non-finite values".into()));
        }
        Ok(())
    }
}

/// Stable `ln(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Per-step BCE on the pre-sigmoid logit.
fn bce_from_logit(z: f64, label: bool) -> f64 {
    if label {
        softplus(-z)
    } else {
        softplus(z)
    }
}

/// Everything the backward pass needs about one timestep.
struct StepCache {
    x: f64,
    gate_i: Vec<f64>,
    gate_f: Vec<f64>,
    gate_g: Vec<f64>,
    gate_o: Vec<f64>,
    cell: Vec<f64>,
    tanh_c: Vec<f64>,
    hidden: Vec<f64>,
    /// Inverted-dropout mask (0 or 1/keep); empty when dropout is off.
    mask: Vec<f64>,
    p: f64,
}

/// Forward pass keeping intermediates; returns caches and the summed
/// (not yet averaged) per-step loss.
fn forward_cached(
    params: &[f64],
    layout: &ParamLayout,
    values: &[f64],
    labels: &[bool],
    dropout: f64,
    mask_rng: Option<&mut rand_chacha::ChaCha8Rng>,
) -> Result<(Vec<StepCache>, f64)> {
    let h = layout.hidden;
    let wx = &params[layout.wx.clone()];
    let wh = &params[layout.wh.clone()];
    let bias = &params[layout.bias.clone()];
    let dw = &params[layout.dense_w.clone()];
    let db = params[layout.dense_b];
    let keep = 1.0 - dropout;
    let mut mask_rng = mask_rng;

    let mut hid = vec![0.0_f64; h];
    let mut cell = vec![0.0_f64; h];
    let mut pre = vec![0.0_f64; 4 * h];
    let mut caches = Vec::with_capacity(values.len());
    let mut loss_sum = 0.0;

    for (t, &x) in values.iter().enumerate() {
        for (r, p) in pre.iter_mut().enumerate() {
            let row = &wh[r * h..(r + 1) * h];
            *p = bias[r] + wx[r] * x + super::dot(row, &hid);
        }
        let mut gate_i = vec![0.0; h];
        let mut gate_f = vec![0.0; h];
        let mut gate_g = vec![0.0; h];
        let mut gate_o = vec![0.0; h];
        let mut new_cell = vec![0.0; h];
        let mut tanh_c = vec![0.0; h];
        let mut new_hid = vec![0.0; h];
        for j in 0..h {
            let i_g = sigmoid(pre[GATE_INPUT * h + j]);
            let f_g = sigmoid(pre[GATE_FORGET * h + j]);
            let g_g = pre[GATE_CELL * h + j].tanh();
            let o_g = sigmoid(pre[GATE_OUTPUT * h + j]);
            let c = f_g * cell[j] + i_g * g_g;
            let tc = c.tanh();
            gate_i[j] = i_g;
            gate_f[j] = f_g;
            gate_g[j] = g_g;
            gate_o[j] = o_g;
            new_cell[j] = c;
            tanh_c[j] = tc;
            new_hid[j] = o_g * tc;
        }

        let mask: Vec<f64> = if dropout > 0.0 {
            let rng = mask_rng
                .as_deref_mut()
                .expect("dropout requires a mask rng");
            (0..h)
                .map(|_| if rng.gen::<f64>() < dropout { 0.0 } else { 1.0 / keep })
                .collect()
        } else {
            Vec::new()
        };

        let mut z = db;
        for j in 0..h {
            let hj = if mask.is_empty() { new_hid[j] } else { new_hid[j] * mask[j] };
            z += dw[j] * hj;
        }
        if !z.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite activation at timestep {t}"
            )));
        }
        loss_sum += bce_from_logit(z, labels[t]);
        let p = clamp_prob(sigmoid(z));

        hid.copy_from_slice(&new_hid);
        cell.copy_from_slice(&new_cell);
        caches.push(StepCache {
            x,
            gate_i,
            gate_f,
            gate_g,
            gate_o,
            cell: new_cell,
            tanh_c,
            hidden: new_hid,
            mask,
            p,
        });
    }
    Ok((caches, loss_sum))
}

/// Loss-only forward pass (no caches) for finite differences.
fn loss_sum_only(params: &[f64], layout: &ParamLayout, values: &[f64], labels: &[bool]) -> Result<f64> {
    let (_, loss) = forward_cached(params, layout, values, labels, 0.0, None)?;
    Ok(loss)
}

/// BPTT over one window. `scale` multiplies every per-step loss gradient
/// (use `1/N` for a mean over `N` steps). Gradients accumulate into `grads`.
fn backward(
    params: &[f64],
    layout: &ParamLayout,
    caches: &[StepCache],
    labels: &[bool],
    scale: f64,
    grads: &mut [f64],
) {
    let h = layout.hidden;
    let wh = &params[layout.wh.clone()];
    let dw = &params[layout.dense_w.clone()];
    let zeros = vec![0.0_f64; h];

    let mut dh_next = vec![0.0_f64; h];
    let mut dc_next = vec![0.0_f64; h];
    let mut d_pre = vec![0.0_f64; 4 * h];

    for t in (0..caches.len()).rev() {
        let cache = &caches[t];
        let (h_prev, c_prev) = if t == 0 {
            (&zeros, &zeros)
        } else {
            (&caches[t - 1].hidden, &caches[t - 1].cell)
        };

        let dz = (cache.p - if labels[t] { 1.0 } else { 0.0 }) * scale;
        grads[layout.dense_b] += dz;

        for j in 0..h {
            let m = if cache.mask.is_empty() { 1.0 } else { cache.mask[j] };
            grads[layout.dense_w.start + j] += dz * cache.hidden[j] * m;

            let dh = dz * dw[j] * m + dh_next[j];
            let dc = dh * cache.gate_o[j] * (1.0 - cache.tanh_c[j] * cache.tanh_c[j]) + dc_next[j];

            let i_g = cache.gate_i[j];
            let f_g = cache.gate_f[j];
            let g_g = cache.gate_g[j];
            let o_g = cache.gate_o[j];

            d_pre[GATE_INPUT * h + j] = dc * g_g * i_g * (1.0 - i_g);
            d_pre[GATE_FORGET * h + j] = dc * c_prev[j] * f_g * (1.0 - f_g);
            d_pre[GATE_CELL * h + j] = dc * i_g * (1.0 - g_g * g_g);
            d_pre[GATE_OUTPUT * h + j] = dh * cache.tanh_c[j] * o_g * (1.0 - o_g);

            dc_next[j] = dc * f_g;
        }

        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..4 * h {
            let dp = d_pre[r];
            grads[layout.wx.start + r] += dp * cache.x;
            grads[layout.bias.start + r] += dp;
            let row = &wh[r * h..(r + 1) * h];
            let grad_row = &mut grads[layout.wh.start + r * h..layout.wh.start + (r + 1) * h];
            for k in 0..h {
                grad_row[k] += dp * h_prev[k];
                dh_next[k] += row[k] * dp;
            }
        }
    }
}

/// Train a model. Returns the trained model and the per-epoch mean loss.
pub fn train(
    model: &LstmModel,
    dataset: &[LabeledWindow],
    cfg: &TrainConfig,
) -> Result<(LstmModel, Vec<f64>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Usage("training dataset is empty".into()));
    }
    for w in dataset {
        w.validate()?;
    }

    let mut model = model.clone();
    let layout = model.layout();
    let mut opt = optimizer_by_name(&cfg.optimizer, cfg.learning_rate, layout.total)?;
    let batch = cfg.batch_size.unwrap_or(dataset.len()).max(1);
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut shuffle_rng = seeds::rng_for(cfg.seed, "train-shuffle", &epoch.to_string());
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0usize;

        for chunk in order.chunks(batch) {
            let total_steps: usize = chunk.iter().map(|&i| dataset[i].values.len()).sum();
            let scale = 1.0 / total_steps as f64;

            // Per-window passes run in parallel; the ordered collect plus
            // sequential accumulation keeps gradients bitwise deterministic.
            let params = model.params().to_vec();
            let results: Vec<(f64, Vec<f64>)> = chunk
                .par_iter()
                .map(|&idx| {
                    let w = &dataset[idx];
                    let mut mask_rng =
                        seeds::rng_for(cfg.seed, "dropout", &format!("{epoch}/{idx}"));
                    let (caches, loss_sum) = forward_cached(
                        &params,
                        &layout,
                        &w.values,
                        &w.labels,
                        cfg.dropout,
                        Some(&mut mask_rng),
                    )
                    .map_err(|e| Error::Numeric(format!("epoch {epoch}: {e}")))?;
                    let mut grads = vec![0.0_f64; layout.total];
                    backward(&params, &layout, &caches, &w.labels, scale, &mut grads);
                    Ok((loss_sum, grads))
                })
                .collect::<Result<Vec<_>>>()?;

            let mut grad_acc = vec![0.0_f64; layout.total];
            for (loss_sum, grads) in &results {
                epoch_loss += loss_sum;
                for (a, g) in grad_acc.iter_mut().zip(grads) {
                    *a += g;
                }
            }
            epoch_steps += total_steps;
            opt.step(model.params_mut(), &grad_acc);
        }

        let mean = epoch_loss / epoch_steps as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite training loss at epoch {epoch}"
            )));
        }
        trace.push(mean);
    }
    Ok((model, trace))
}

/// Relative-error floor: gradient pairs smaller than this in magnitude are
/// compared absolutely (finite differences bottom out near 1e-10).
const REL_FLOOR: f64 = 1e-4;

/// Compare analytic BPTT gradients against central finite differences for
/// every parameter; returns the maximum relative error.
///
/// Dropout is off for the check, so the loss is a pure function of the
/// parameters.
pub fn gradient_check(
    model: &LstmModel,
    values: &[f64],
    labels: &[bool],
    epsilon: f64,
) -> Result<f64> {
    if values.is_empty() || values.len() != labels.len() {
        return Err(Error::Usage(
            "gradient check needs equal-length non-empty values and labels".into(),
        ));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Usage(format!("epsilon must be positive, got {epsilon}")));
    }
    let layout = model.layout();
    let scale = 1.0 / values.len() as f64;

    let base = model.params().to_vec();
    let (caches, _) = forward_cached(&base, &layout, values, labels, 0.0, None)?;
    let mut analytic = vec![0.0_f64; layout.total];
    backward(&base, &layout, &caches, labels, scale, &mut analytic);

    let mut max_rel: f64 = 0.0;
    let mut probe = base.clone();
    for i in 0..layout.total {
        probe[i] = base[i] + epsilon;
        let up = loss_sum_only(&probe, &layout, values, labels)? * scale;
        probe[i] = base[i] - epsilon;
        let down = loss_sum_only(&probe, &layout, values, labels)? * scale;
        probe[i] = base[i];

        let numeric = (up - down) / (2.0 * epsilon);
        let denom = analytic[i].abs().max(numeric.abs()).max(REL_FLOOR);
        max_rel = max_rel.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(max_rel)
}

/// Per-parameter absolute difference between analytic and finite-difference
/// gradients; used to verify the O(epsilon^2) truncation behaviour.
pub fn gradient_fd_differences(
    model: &LstmModel,
    values: &[f64],
    labels: &[bool],
    epsilon: f64,
) -> Result<Vec<f64>> {
    let layout = model.layout();
    let scale = 1.0 / values.len() as f64;
    let base = model.params().to_vec();
    let (caches, _) = forward_cached(&base, &layout, values, labels, 0.0, None)?;
    let mut analytic = vec![0.0_f64; layout.total];
    backward(&base, &layout, &caches, labels, scale, &mut analytic);

    let mut out = Vec::with_capacity(layout.total);
    let mut probe = base.clone();
    for i in 0..layout.total {
        probe[i] = base[i] + epsilon;
        let up = loss_sum_only(&probe, &layout, values, labels)? * scale;
        probe[i] = base[i] - epsilon;
        let down = loss_sum_only(&probe, &layout, values, labels)? * scale;
        probe[i] = base[i];
        out.push(((up - down) / (2.0 * epsilon) - analytic[i]).abs());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(n: usize, len: usize, seed: u64) -> Vec<LabeledWindow> {
        // Tampered steps read 0.0, normal steps 1.0: perfectly separable.
        (0..n)
            .map(|i| {
                let mut rng = seeds::rng_for(seed, "toy", &i.to_string());
                let labels: Vec<bool> = (0..len).map(|_| rng.gen::<f64>() < 0.3).collect();
                let values: Vec<f64> =
                    labels.iter().map(|&l| if l { 0.0 } else { 1.0 }).collect();
                LabeledWindow { values, labels }
            })
            .collect()
    }

    #[test]
    fn constant_label_dataset_reaches_base_rate_loss() {
        // All labels 0: the base-rate predictor drives BCE to ~0 through the
        // dense bias alone. -ln(sigmoid(-3)) ~= 0.049, so < 0.05 is reachable.
        let dataset: Vec<LabeledWindow> = (0..100)
            .map(|i| LabeledWindow {
                values: (0..24).map(|t| ((t + i) % 7) as f64 * 0.4).collect(),
                labels: vec![false; 24],
            })
            .collect();
        let model = LstmModel::init(8, 24, 0.5, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 0.02,
            dropout: 0.0,
            batch_size: Some(10),
            seed: 2,
            optimizer: "adam".into(),
        };
        let (_, trace) = train(&model, &dataset, &cfg).unwrap();
        let last = *trace.last().unwrap();
        assert!(last < 0.05, "final loss {last}");
    }

    #[test]
    fn training_is_deterministic() {
        let dataset = toy_dataset(20, 24, 7);
        let model = LstmModel::init(6, 24, 0.5, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            dropout: 0.5,
            batch_size: Some(8),
            seed: 11,
            ..TrainConfig::default()
        };
        let (m1, t1) = train(&model, &dataset, &cfg).unwrap();
        let (m2, t2) = train(&model, &dataset, &cfg).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(m1.params(), m2.params());
    }

    #[test]
    fn separable_toy_task_is_learnable() {
        let dataset = toy_dataset(120, 24, 5);
        let model = LstmModel::init(8, 24, 0.5, 9).unwrap();
        let cfg = TrainConfig {
            epochs: 40,
            learning_rate: 0.02,
            dropout: 0.2,
            batch_size: Some(16),
            seed: 4,
            optimizer: "adam".into(),
        };
        let (trained, trace) = train(&model, &dataset, &cfg).unwrap();
        assert!(trace.last().unwrap() < &trace[0]);

        // held-out windows from the same generator
        let eval = toy_dataset(40, 24, 999);
        let mut tp = 0;
        let mut fn_ = 0;
        for w in &eval {
            let probs = trained.forward_values(&w.values).unwrap();
            let c = super::super::classify(&probs, 0.5).unwrap();
            let truth = w.labels.iter().any(|&b| b);
            if truth && c.outcome {
                tp += 1;
            } else if truth {
                fn_ += 1;
            }
        }
        let recall = tp as f64 / (tp + fn_) as f64;
        assert!(recall >= 0.9, "recall {recall}");
    }

    #[test]
    fn empty_dataset_is_usage_error() {
        let model = LstmModel::init(4, 24, 0.5, 1).unwrap();
        assert!(matches!(
            train(&model, &[], &TrainConfig::default()).unwrap_err(),
            Error::Usage(_)
        ));
    }

    #[test]
    fn poisoned_model_reports_epoch() {
        let mut model = LstmModel::init(4, 24, 0.5, 1).unwrap();
        model.params_mut()[0] = f64::NAN;
        let dataset = toy_dataset(4, 12, 1);
        let err = train(&model, &dataset, &TrainConfig::default()).unwrap_err();
        match err {
            Error::Numeric(msg) => assert!(msg.contains("epoch 0"), "{msg}"),
            other => panic!("expected numeric error, got {other}"),
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (hidden, len, seed) in [(2usize, 6usize, 1u64), (4, 10, 2), (8, 5, 3)] {
            let model = LstmModel::init(hidden, len, 0.5, seed).unwrap();
            let mut rng = seeds::rng_for(seed, "gc-data", "x");
            let values: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..3.0)).collect();
            let labels: Vec<bool> = (0..len).map(|_| rng.gen::<f64>() < 0.5).collect();
            let err = gradient_check(&model, &values, &labels, 1e-5).unwrap();
            assert!(err < 1e-4, "hidden {hidden}: max rel err {err}");
        }
    }

    #[test]
    fn unused_recurrent_weights_have_zero_gradient() {
        // With a single timestep the recurrent weights multiply h_{-1} = 0.
        let model = LstmModel::init(3, 1, 0.5, 5).unwrap();
        let layout = model.layout();
        let values = [1.7];
        let labels = [true];

        let scale = 1.0;
        let (caches, _) = forward_cached(model.params(), &layout, &values, &labels, 0.0, None).unwrap();
        let mut analytic = vec![0.0; layout.total];
        backward(model.params(), &layout, &caches, &labels, scale, &mut analytic);
        for i in layout.wh.clone() {
            assert_eq!(analytic[i], 0.0);
        }
        // finite differences agree
        let diffs = gradient_fd_differences(&model, &values, &labels, 1e-5).unwrap();
        for i in layout.wh.clone() {
            assert!(diffs[i] < 1e-9, "wh[{i}] fd diff {}", diffs[i]);
        }
    }

    #[test]
    fn fd_truncation_scales_quadratically() {
        // Central differences truncate at O(eps^2): doubling eps should
        // multiply the dominant analytic-vs-numeric gap by ~4.
        let model = LstmModel::init(4, 10, 0.5, 13).unwrap();
        let mut rng = seeds::rng_for(13, "rich", "x");
        let values: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..4.0)).collect();
        let labels: Vec<bool> = (0..10).map(|_| rng.gen::<f64>() < 0.5).collect();

        let d1 = gradient_fd_differences(&model, &values, &labels, 1e-3).unwrap();
        let d2 = gradient_fd_differences(&model, &values, &labels, 2e-3).unwrap();
        let (idx, &e1) = d1
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert!(e1 > 1e-12, "truncation error too small to measure: {e1}");
        let ratio = d2[idx] / e1;
        assert!(
            (2.0..8.0).contains(&ratio),
            "expected ~4x growth, got {ratio} (e1 {e1}, e2 {})",
            d2[idx]
        );
    }

    #[test]
    fn sgd_also_trains() {
        let dataset = toy_dataset(20, 16, 3);
        let model = LstmModel::init(4, 16, 0.5, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            learning_rate: 0.5,
            dropout: 0.0,
            batch_size: Some(5),
            seed: 1,
            optimizer: "sgd".into(),
        };
        let (_, trace) = train(&model, &dataset, &cfg).unwrap();
        assert!(trace.last().unwrap() < &trace[0]);
    }
}
