//! The prediction unit: a lightweight single-layer LSTM.
//!
//! One input feature (kWh), `hidden` recurrent units (64 in production), and
//! a single-neuron sigmoid head applied at every timestep, so a 72-hour
//! window yields 72 theft probabilities. A window is classified by its
//! maximum probability: theft iff `max >= decision_threshold`.
//!
//! All math is 64-bit; parameters live in one flat vector (see
//! [`ParamLayout`]) shared by the optimizer, the gradient checker, and the
//! weight file format.

pub mod optim;
pub mod train;
pub mod weights;

use std::ops::Range;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seeds;

pub use optim::{optimizer_by_name, optimizer_names, Optimizer};
pub use train::{gradient_check, train, LabeledWindow, TrainConfig};
pub use weights::{load_weights, load_weights_expecting, save_weights};

/// Hidden units in the production model.
pub const DEFAULT_HIDDEN: usize = 64;

/// Default input window length (hours).
pub const DEFAULT_WINDOW_LEN: usize = 72;

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` so the output
/// stays in the open interval and cross-entropy stays finite.
pub const PROB_EPS: f64 = 1e-15;

/// Gate order within the flat parameter vector: input, forget, cell, output.
pub const GATE_INPUT: usize = 0;
pub const GATE_FORGET: usize = 1;
pub const GATE_CELL: usize = 2;
pub const GATE_OUTPUT: usize = 3;

/// Offsets of the named tensors inside the flat parameter vector.
///
/// Row `r = gate * hidden + j` addresses unit `j` of a gate; `wh` is
/// row-major with `hidden` columns (the previous hidden state).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub hidden: usize,
    /// Input weights, one per gate row: `4 * hidden`.
    pub wx: Range<usize>,
    /// Recurrent weights, row-major: `4 * hidden * hidden`.
    pub wh: Range<usize>,
    /// Gate biases: `4 * hidden`.
    pub bias: Range<usize>,
    /// Dense head weights: `hidden`.
    pub dense_w: Range<usize>,
    /// Dense head bias index.
    pub dense_b: usize,
    pub total: usize,
}

impl ParamLayout {
    pub fn for_hidden(hidden: usize) -> Self {
        let g = 4 * hidden;
        let wx = 0..g;
        let wh = wx.end..wx.end + g * hidden;
        let bias = wh.end..wh.end + g;
        let dense_w = bias.end..bias.end + hidden;
        let dense_b = dense_w.end;
        ParamLayout {
            hidden,
            total: dense_b + 1,
            wx,
            wh,
            bias,
            dense_w,
            dense_b,
        }
    }
}

/// The classifier: gate weights, dense head, and decision threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    hidden: usize,
    window_len: usize,
    decision_threshold: f64,
    params: Vec<f64>,
}

impl LstmModel {
    /// Seeded initialization: weights uniform in `±1/sqrt(fan_in)` per
    /// tensor, biases zero except the forget gate at +1.
    pub fn init(hidden: usize, window_len: usize, decision_threshold: f64, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(hidden, window_len, decision_threshold)?;
        let layout = model.layout();
        let mut rng = seeds::rng_for(seed, "lstm-init", "");
        let bound_x = 1.0; // input dimension is 1
        let bound_h = 1.0 / (hidden as f64).sqrt();
        for i in layout.wx.clone() {
            model.params[i] = rng.gen_range(-bound_x..bound_x);
        }
        for i in layout.wh.clone() {
            model.params[i] = rng.gen_range(-bound_h..bound_h);
        }
        let forget = layout.bias.start + GATE_FORGET * hidden..layout.bias.start + (GATE_FORGET + 1) * hidden;
        for i in forget {
            model.params[i] = 1.0;
        }
        for i in layout.dense_w.clone() {
            model.params[i] = rng.gen_range(-bound_h..bound_h);
        }
        Ok(model)
    }

    /// All-zero parameters (useful as a fixture: every output is exactly 0.5).
    pub fn zeroed(hidden: usize, window_len: usize, decision_threshold: f64) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Usage("hidden size must be at least 1".into()));
        }
        if window_len == 0 {
            return Err(Error::Usage("window_len must be at least 1".into()));
        }
        if !(decision_threshold > 0.0 && decision_threshold < 1.0) {
            return Err(Error::Usage(format!(
                "decision_threshold must be in (0, 1), got {decision_threshold}"
            )));
        }
        let layout = ParamLayout::for_hidden(hidden);
        Ok(LstmModel {
            hidden,
            window_len,
            decision_threshold,
            params: vec![0.0; layout.total],
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn decision_threshold(&self) -> f64 {
        self.decision_threshold
    }

    pub fn set_decision_threshold(&mut self, t: f64) -> Result<()> {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Usage(format!(
                "decision_threshold must be in (0, 1), got {t}"
            )));
        }
        self.decision_threshold = t;
        Ok(())
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::for_hidden(self.hidden)
    }

    /// The flat parameter vector (see [`ParamLayout`] for offsets).
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn from_parts(
        hidden: usize,
        window_len: usize,
        decision_threshold: f64,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut model = Self::zeroed(hidden, window_len, decision_threshold)?;
        if params.len() != model.params.len() {
            return Err(Error::Format(format!(
                "parameter vector has {} entries, hidden size {hidden} needs {}",
                params.len(),
                model.params.len()
            )));
        }
        model.params = params;
        Ok(model)
    }

    /// Run the recurrence over raw values (zero initial state, dropout
    /// inactive) and return one probability per timestep.
    pub fn forward_values(&self, xs: &[f64]) -> Result<Vec<f64>> {
        if xs.is_empty() {
            return Err(Error::Usage("forward pass needs a non-empty window".into()));
        }
        let h = self.hidden;
        let layout = self.layout();
        let wx = &self.params[layout.wx.clone()];
        let wh = &self.params[layout.wh.clone()];
        let bias = &self.params[layout.bias.clone()];
        let dw = &self.params[layout.dense_w.clone()];
        let db = self.params[layout.dense_b];

        let mut hid = vec![0.0_f64; h];
        let mut cell = vec![0.0_f64; h];
        let mut pre = vec![0.0_f64; 4 * h];
        let mut probs = Vec::with_capacity(xs.len());

        for (t, &x) in xs.iter().enumerate() {
            for (r, p) in pre.iter_mut().enumerate() {
                let row = &wh[r * h..(r + 1) * h];
                *p = bias[r] + wx[r] * x + dot(row, &hid);
            }
            for j in 0..h {
                let i_g = sigmoid(pre[GATE_INPUT * h + j]);
                let f_g = sigmoid(pre[GATE_FORGET * h + j]);
                let g_g = pre[GATE_CELL * h + j].tanh();
                let o_g = sigmoid(pre[GATE_OUTPUT * h + j]);
                let c = f_g * cell[j] + i_g * g_g;
                cell[j] = c;
                hid[j] = o_g * c.tanh();
            }
            let z = db + dot(dw, &hid);
            if !z.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite activation at timestep {t}"
                )));
            }
            probs.push(clamp_prob(sigmoid(z)));
        }
        Ok(probs)
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Dot product with four independent accumulators. Breaking the serial
/// addition chain keeps the recurrence from being latency-bound; the fixed
/// summation order keeps results deterministic.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let mut acc = [0.0_f64; 4];
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut rest = 0.0;
    for j in 4 * chunks..a.len() {
        rest += a[j] * b[j];
    }
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + rest
}

pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// A classifier input: `window_len` consecutive hourly readings for one meter.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub meter_id: String,
    /// Absolute hour index of the final reading.
    pub end_hour: u64,
    pub values: Vec<f64>,
}

impl Window {
    pub fn new(meter_id: impl Into<String>, end_hour: u64, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Usage("window must be non-empty".into()));
        }
        for (k, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Data(format!(
                    "window value {v} at offset {k} is not a finite non-negative kWh reading"
                )));
            }
        }
        Ok(Window {
            meter_id: meter_id.into(),
            end_hour,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-timestep probabilities for one window.
pub fn lstm_forward(model: &LstmModel, window: &Window) -> Result<Vec<f64>> {
    model.forward_values(&window.values)
}

/// Outcome of thresholding a probability sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub outcome: bool,
    /// Maximum probability over the sequence.
    pub confidence: f64,
    /// First index attaining the maximum.
    pub argmax: usize,
}

/// `outcome = max(probs) >= threshold`; ties in the maximum resolve to the
/// first index.
pub fn classify(probs: &[f64], threshold: f64) -> Result<Classification> {
    if probs.is_empty() {
        return Err(Error::Usage("cannot classify an empty probability sequence".into()));
    }
    let mut best = f64::NEG_INFINITY;
    let mut argmax = 0;
    for (i, &p) in probs.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Usage(format!(
                "probability {p} at index {i} outside [0, 1]"
            )));
        }
        if p > best {
            best = p;
            argmax = i;
        }
    }
    Ok(Classification {
        outcome: best >= threshold,
        confidence: best,
        argmax,
    })
}

/// One meter's verdict for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub meter_id: String,
    pub outcome: bool,
    pub confidence: f64,
    pub argmax: usize,
}

/// Classify a batch of windows; output order matches input order and each
/// window's detection is independent of the others.
pub fn predict_batch(model: &LstmModel, windows: &[Window]) -> Result<Vec<Detection>> {
    if windows.is_empty() {
        return Ok(Vec::new());
    }
    let len = windows[0].len();
    if let Some(w) = windows.iter().find(|w| w.len() != len) {
        return Err(Error::Usage(format!(
            "window lengths differ: meter {} has {}, expected {len}",
            w.meter_id,
            w.len()
        )));
    }
    windows
        .par_iter()
        .map(|w| {
            let probs = model.forward_values(&w.values).map_err(|e| {
                Error::Numeric(format!("meter {}: {e}", w.meter_id))
            })?;
            let c = classify(&probs, model.decision_threshold)?;
            Ok(Detection {
                meter_id: w.meter_id.clone(),
                outcome: c.outcome,
                confidence: c.confidence,
                argmax: c.argmax,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn window(values: Vec<f64>) -> Window {
        Window::new("m0", values.len() as u64 - 1, values).unwrap()
    }

    #[test]
    fn zero_model_outputs_half_everywhere() {
        let model = LstmModel::zeroed(8, 72, 0.5).unwrap();
        let probs = model.forward_values(&vec![1.25; 20]).unwrap();
        assert_eq!(probs.len(), 20);
        for p in probs {
            assert_eq!(p, 0.5);
        }
    }

    #[test]
    fn dense_bias_dominates_with_zero_weights() {
        let mut model = LstmModel::zeroed(4, 72, 0.5).unwrap();
        let idx = model.layout().dense_b;
        model.params_mut()[idx] = 10.0;
        let probs = model.forward_values(&[0.0, 3.7, 9.9]).unwrap();
        for p in probs {
            assert!((p - sigmoid(10.0)).abs() < 1e-15);
            assert!((p - 0.99995).abs() < 1e-4);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let model = LstmModel::init(16, 72, 0.5, 7).unwrap();
        let xs: Vec<f64> = (0..72).map(|t| (t as f64 * 0.1).sin().abs()).collect();
        assert_eq!(model.forward_values(&xs).unwrap(), model.forward_values(&xs).unwrap());
    }

    #[test]
    fn outputs_stay_in_open_interval() {
        for seed in 0..5 {
            let model = LstmModel::init(8, 72, 0.5, seed).unwrap();
            let xs: Vec<f64> = (0..72).map(|t| ((t * 7 + 3) % 11) as f64).collect();
            for p in model.forward_values(&xs).unwrap() {
                assert!(p > 0.0 && p < 1.0);
            }
        }
    }

    #[test]
    fn nan_parameter_is_a_numeric_error() {
        let mut model = LstmModel::init(4, 72, 0.5, 1).unwrap();
        model.params_mut()[3] = f64::NAN;
        let err = model.forward_values(&[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn classify_examples() {
        let c = classify(&[0.1, 0.6, 0.2], 0.5).unwrap();
        assert!(c.outcome);
        assert_eq!(c.confidence, 0.6);
        assert_eq!(c.argmax, 1);

        let c = classify(&[0.49, 0.49, 0.49], 0.5).unwrap();
        assert!(!c.outcome);

        // equality counts as a detection
        let c = classify(&[0.2, 0.5], 0.5).unwrap();
        assert!(c.outcome);

        // ties resolve to the first index
        let c = classify(&[0.3, 0.7, 0.7], 0.1).unwrap();
        assert_eq!(c.argmax, 1);

        assert!(matches!(classify(&[], 0.5).unwrap_err(), Error::Usage(_)));
        assert!(classify(&[1.2], 0.5).is_err());
    }

    #[test]
    fn predict_batch_empty_and_order() {
        let model = LstmModel::init(8, 72, 0.5, 3).unwrap();
        assert!(predict_batch(&model, &[]).unwrap().is_empty());

        let windows: Vec<Window> = (0..4)
            .map(|i| {
                Window::new(
                    format!("m{i}"),
                    71,
                    (0..72).map(|t| ((t + i * 13) % 9) as f64 * 0.3).collect(),
                )
                .unwrap()
            })
            .collect();
        let batch = predict_batch(&model, &windows).unwrap();
        assert_eq!(batch.len(), 4);
        for (i, d) in batch.iter().enumerate() {
            assert_eq!(d.meter_id, format!("m{i}"));
        }

        // batch equals per-window sequential evaluation
        for (w, d) in windows.iter().zip(&batch) {
            let probs = lstm_forward(&model, w).unwrap();
            let c = classify(&probs, model.decision_threshold()).unwrap();
            assert_eq!((c.outcome, c.confidence, c.argmax), (d.outcome, d.confidence, d.argmax));
        }
    }

    #[test]
    fn predict_batch_rejects_ragged_windows() {
        let model = LstmModel::init(4, 72, 0.5, 3).unwrap();
        let a = Window::new("a", 9, vec![1.0; 10]).unwrap();
        let b = Window::new("b", 9, vec![1.0; 9]).unwrap();
        assert!(matches!(
            predict_batch(&model, &[a, b]).unwrap_err(),
            Error::Usage(_)
        ));
    }

    #[test]
    fn window_validation() {
        assert!(Window::new("m", 0, vec![]).is_err());
        assert!(Window::new("m", 0, vec![-1.0]).is_err());
        assert!(Window::new("m", 0, vec![f64::NAN]).is_err());
        assert!(Window::new("m", 0, vec![0.0, 1.5]).is_ok());
    }

    proptest! {
        /// Raising the threshold can only turn detections off, never on.
        #[test]
        fn threshold_monotonicity(
            probs in proptest::collection::vec(0.0f64..=1.0, 1..64),
            t1 in 0.01f64..0.99,
            t2 in 0.01f64..0.99,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let at_lo = classify(&probs, lo).unwrap();
            let at_hi = classify(&probs, hi).unwrap();
            if at_hi.outcome {
                prop_assert!(at_lo.outcome);
            }
            prop_assert_eq!(at_lo.confidence, at_hi.confidence);
            prop_assert_eq!(at_lo.argmax, at_hi.argmax);
        }
    }
}
