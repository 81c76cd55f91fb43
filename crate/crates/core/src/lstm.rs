//! Stacked LSTM sequence classifier with full-matrix peephole connections and
//! a softmax head on the last time step.
//!
//! Per layer and time step:
//!
//! ```text
//! i_t = σ(W_xi x_t + W_hi h_{t-1} + W_ci c_{t-1} + b_i)
//! f_t = σ(W_xf x_t + W_hf h_{t-1} + W_cf c_{t-1} + b_f)
//! c_t = f_t ⊙ c_{t-1} + i_t ⊙ tanh(W_xc x_t + W_hc h_{t-1} + b_c)
//! o_t = σ(W_xo x_t + W_ho h_{t-1} + W_co c_t + b_o)
//! h_t = o_t ⊙ tanh(c_t)
//! ```
//!
//! Layer `l > 1` takes `h_t^{l-1}` as its input. The class distribution is
//! `softmax(W h_T^K + b)`; the training loss is the cross-entropy of that
//! distribution.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::numcore::{self, Matrix, RngSource};

pub const LSTM_MAGIC: &[u8; 4] = b"HSLM";
pub const LSTM_VERSION: u32 = 1;

const INIT_RANGE: f64 = 0.08;
const FORGET_BIAS: f64 = 1.0;

/// Weights feeding one gate (or the cell candidate, which has no peephole).
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub w_x: Matrix,
    pub w_h: Matrix,
    pub w_c: Option<Matrix>,
    pub b: Vec<f64>,
}

impl GateParams {
    fn zeros(input: usize, hidden: usize, peephole: bool) -> Self {
        GateParams {
            w_x: Matrix::zeros(hidden, input),
            w_h: Matrix::zeros(hidden, hidden),
            w_c: peephole.then(|| Matrix::zeros(hidden, hidden)),
            b: vec![0.0; hidden],
        }
    }

    fn random(input: usize, hidden: usize, peephole: bool, bias: f64, rng: &mut RngSource) -> Self {
        GateParams {
            w_x: Matrix::random_uniform(hidden, input, INIT_RANGE, rng),
            w_h: Matrix::random_uniform(hidden, hidden, INIT_RANGE, rng),
            w_c: peephole.then(|| Matrix::random_uniform(hidden, hidden, INIT_RANGE, rng)),
            b: vec![bias; hidden],
        }
    }

    /// `W_x x + W_h h + W_c c + b`.
    fn preactivation(&self, x: &[f64], h: &[f64], c: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut a = self.b.clone();
        self.w_x.matvec_acc(x, &mut a)?;
        self.w_h.matvec_acc(h, &mut a)?;
        if let (Some(w), Some(c)) = (&self.w_c, c) {
            w.matvec_acc(c, &mut a)?;
        }
        Ok(a)
    }

    fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
        out.push((format!("{prefix}.w_x"), self.w_x.data_mut()));
        out.push((format!("{prefix}.w_h"), self.w_h.data_mut()));
        if let Some(w) = &mut self.w_c {
            out.push((format!("{prefix}.w_c"), w.data_mut()));
        }
        out.push((format!("{prefix}.b"), &mut self.b));
    }

    fn tensors<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        out.push(self.w_x.data());
        out.push(self.w_h.data());
        if let Some(w) = &self.w_c {
            out.push(w.data());
        }
        out.push(&self.b);
    }
}

/// One LSTM layer: input gate, forget gate, cell candidate, output gate.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    pub input_gate: GateParams,
    pub forget_gate: GateParams,
    pub cell: GateParams,
    pub output_gate: GateParams,
}

impl LstmLayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmLayerParams {
            input_gate: GateParams::zeros(input, hidden, true),
            forget_gate: GateParams::zeros(input, hidden, true),
            cell: GateParams::zeros(input, hidden, false),
            output_gate: GateParams::zeros(input, hidden, true),
        }
    }

    pub fn random(input: usize, hidden: usize, rng: &mut RngSource) -> Self {
        LstmLayerParams {
            input_gate: GateParams::random(input, hidden, true, 0.0, rng),
            forget_gate: GateParams::random(input, hidden, true, FORGET_BIAS, rng),
            cell: GateParams::random(input, hidden, false, 0.0, rng),
            output_gate: GateParams::random(input, hidden, true, 0.0, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_gate.w_x.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.input_gate.b.len()
    }

    fn gates(&self) -> [&GateParams; 4] {
        [&self.input_gate, &self.forget_gate, &self.cell, &self.output_gate]
    }

    fn gates_mut(&mut self) -> [(&'static str, &mut GateParams); 4] {
        [
            ("i", &mut self.input_gate),
            ("f", &mut self.forget_gate),
            ("c", &mut self.cell),
            ("o", &mut self.output_gate),
        ]
    }

    fn validate(&self) -> Result<()> {
        let (d, h) = (self.input_dim(), self.hidden_dim());
        for g in self.gates() {
            let peep_ok = g.w_c.as_ref().is_none_or(|w| w.shape() == (h, h));
            if g.w_x.shape() != (h, d) || g.w_h.shape() != (h, h) || g.b.len() != h || !peep_ok {
                return Err(Error::shape("LSTM layer", format!("input {d}, hidden {h}"), "inconsistent gate weights"));
            }
        }
        Ok(())
    }
}

/// Activations of one layer at one time step, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    /// Cell candidate `tanh(W_xc x + W_hc h + b_c)`.
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

/// One time step of one layer.
pub fn lstm_step(layer: &LstmLayerParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<StepCache> {
    let h_dim = layer.hidden_dim();
    if x.len() != layer.input_dim() || h_prev.len() != h_dim || c_prev.len() != h_dim {
        return Err(Error::shape(
            "lstm_step",
            format!("layer (input {}, hidden {h_dim})", layer.input_dim()),
            format!("x {}, h {}, c {}", x.len(), h_prev.len(), c_prev.len()),
        ));
    }
    let mut i = layer.input_gate.preactivation(x, h_prev, Some(c_prev))?;
    numcore::sigmoid_in_place(&mut i);
    let mut f = layer.forget_gate.preactivation(x, h_prev, Some(c_prev))?;
    numcore::sigmoid_in_place(&mut f);
    let mut g = layer.cell.preactivation(x, h_prev, None)?;
    numcore::tanh_in_place(&mut g);
    let c: Vec<f64> = (0..h_dim).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    // the output gate peeks at the new cell state
    let mut o = layer.output_gate.preactivation(x, h_prev, Some(&c))?;
    numcore::sigmoid_in_place(&mut o);
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h = o.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();
    Ok(StepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        f,
        g,
        o,
        c,
        tanh_c,
        h,
    })
}

/// K stacked layers plus the softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStack {
    pub layers: Vec<LstmLayerParams>,
    /// Head weights, one row per class.
    pub head_w: Matrix,
    pub head_b: Vec<f64>,
}

impl LstmStack {
    pub fn zeros(input: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        Self::check_arch(input, hidden, classes)?;
        let mut layers = Vec::with_capacity(hidden.len());
        let mut d = input;
        for &h in hidden {
            layers.push(LstmLayerParams::zeros(d, h));
            d = h;
        }
        Ok(LstmStack {
            layers,
            head_w: Matrix::zeros(classes, d),
            head_b: vec![0.0; classes],
        })
    }

    /// Weights uniform in ±0.08, forget-gate bias 1, other biases 0.
    pub fn init(input: usize, hidden: &[usize], classes: usize, rng: &mut RngSource) -> Result<Self> {
        Self::check_arch(input, hidden, classes)?;
        let mut layers = Vec::with_capacity(hidden.len());
        let mut d = input;
        for &h in hidden {
            layers.push(LstmLayerParams::random(d, h, rng));
            d = h;
        }
        Ok(LstmStack {
            layers,
            head_w: Matrix::random_uniform(classes, d, INIT_RANGE, rng),
            head_b: vec![0.0; classes],
        })
    }

    fn check_arch(input: usize, hidden: &[usize], classes: usize) -> Result<()> {
        if hidden.is_empty() || hidden.contains(&0) || input == 0 {
            return Err(Error::Argument(format!("invalid LSTM widths: input {input}, hidden {hidden:?}")));
        }
        if classes < 2 {
            return Err(Error::Argument("LSTM head needs at least 2 classes".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.layers.iter().map(LstmLayerParams::hidden_dim).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.head_b.len()
    }

    pub fn zeros_like(&self) -> Self {
        LstmStack::zeros(self.input_dim(), &self.hidden_dims(), self.num_classes())
            .expect("existing stack has a valid architecture")
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Argument("LSTM stack has no layers".into()));
        }
        let mut d = self.input_dim();
        for layer in &self.layers {
            layer.validate()?;
            if layer.input_dim() != d {
                return Err(Error::shape("LSTM stack", format!("layer input {}", layer.input_dim()), format!("previous width {d}")));
            }
            d = layer.hidden_dim();
        }
        if self.head_w.shape() != (self.head_b.len(), d) || self.head_b.len() < 2 {
            return Err(Error::shape("LSTM head", self.head_w.shape_str(), format!("{} biases, width {d}", self.head_b.len())));
        }
        Ok(())
    }

    /// Every parameter tensor with a stable name, in checkpoint order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (name, gate) in layer.gates_mut() {
                gate.tensors_mut(&format!("layer{l}.{name}"), &mut out);
            }
        }
        out.push(("head.w".into(), self.head_w.data_mut()));
        out.push(("head.b".into(), &mut self.head_b));
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for gate in layer.gates() {
                gate.tensors(&mut out);
            }
        }
        out.push(self.head_w.data());
        out.push(&self.head_b);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    fn axpy(&mut self, scale: f64, other: &LstmStack) {
        for ((_, dst), src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| Error::format(path, msg))
    }

    /// Checkpoint layout: `"HSLM"`, u32 version, u32 K, u32 input width,
    /// K × u32 hidden widths, u32 classes, then per layer the gates in order
    /// i, f, c, o (each `W_x`, `W_h`, `W_c` when present, `b`), then head
    /// weights and biases; all reals f64 little-endian, row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new(LSTM_MAGIC, LSTM_VERSION);
        w.u32(self.layers.len() as u32);
        w.u32(self.input_dim() as u32);
        for h in self.hidden_dims() {
            w.u32(h as u32);
        }
        w.u32(self.num_classes() as u32);
        for t in self.tensors() {
            w.f64s(t);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = ByteReader::new(bytes, LSTM_MAGIC, LSTM_VERSION)?;
        let k = r.u32()? as usize;
        let input = r.u32()? as usize;
        if k == 0 || k > 64 {
            return Err(format!("implausible layer count {k}"));
        }
        let hidden: Vec<usize> = (0..k).map(|_| r.u32().map(|v| v as usize)).collect::<std::result::Result<_, _>>()?;
        let classes = r.u32()? as usize;
        let mut stack = LstmStack::zeros(input, &hidden, classes).map_err(|e| e.to_string())?;
        for (name, t) in stack.tensors_mut() {
            r.f64s_into(t).map_err(|e| format!("{name}: {e}"))?;
        }
        r.expect_end()?;
        if !stack.is_finite() {
            return Err("non-finite parameter".into());
        }
        Ok(stack)
    }
}

/// Forward pass over a whole sequence. `steps[t][l]` is layer `l` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmTrace {
    pub steps: Vec<Vec<StepCache>>,
    pub logits: Vec<f64>,
    pub scores: Vec<f64>,
}

impl LstmTrace {
    pub fn final_hidden(&self) -> &[f64] {
        &self.steps.last().unwrap().last().unwrap().h
    }
}

pub fn lstm_forward(stack: &LstmStack, seq: &FeatureSequence) -> Result<LstmTrace> {
    if seq.is_empty() {
        return Err(Error::Argument("empty sequence".into()));
    }
    if seq.dim() != stack.input_dim() {
        return Err(Error::shape("lstm_forward", format!("input width {}", stack.input_dim()), format!("feature dim {}", seq.dim())));
    }
    let mut h: Vec<Vec<f64>> = stack.hidden_dims().iter().map(|&n| vec![0.0; n]).collect();
    let mut c = h.clone();
    let mut steps = Vec::with_capacity(seq.len());
    for x in seq.iter() {
        let mut per_layer = Vec::with_capacity(stack.layers.len());
        let mut input = x.to_vec();
        for (l, layer) in stack.layers.iter().enumerate() {
            let step = lstm_step(layer, &input, &h[l], &c[l])?;
            h[l].clone_from(&step.h);
            c[l].clone_from(&step.c);
            input.clone_from(&step.h);
            per_layer.push(step);
        }
        steps.push(per_layer);
    }
    let top = h.last().unwrap();
    let mut logits = stack.head_b.clone();
    stack.head_w.matvec_acc(top, &mut logits)?;
    let scores = numcore::softmax(&logits)?;
    Ok(LstmTrace { steps, logits, scores })
}

/// Class probabilities for one sequence.
pub fn lstm_predict(stack: &LstmStack, seq: &FeatureSequence) -> Result<Vec<f64>> {
    Ok(lstm_forward(stack, seq)?.scores)
}

/// One-hot target for `label`; errors when the class id is out of range.
pub fn one_hot(label: usize, classes: usize) -> Result<Vec<f64>> {
    if label >= classes {
        return Err(Error::Argument(format!("label {label} out of range for {classes} classes")));
    }
    let mut t = vec![0.0; classes];
    t[label] = 1.0;
    Ok(t)
}

/// Cross-entropy loss and its exact gradient for a single class label.
pub fn lstm_bptt(stack: &LstmStack, seq: &FeatureSequence, label: usize) -> Result<(LstmStack, f64)> {
    let target = one_hot(label, stack.num_classes())?;
    lstm_bptt_target(stack, seq, &target)
}

/// As [`lstm_bptt`] with a target distribution (a multi-hot label is
/// normalized to sum to one). Loss is `-Σ_c t_c log p_c`.
pub fn lstm_bptt_target(stack: &LstmStack, seq: &FeatureSequence, target: &[f64]) -> Result<(LstmStack, f64)> {
    let c_count = stack.num_classes();
    if target.len() != c_count {
        return Err(Error::shape("lstm_bptt", format!("{c_count} classes"), format!("target of length {}", target.len())));
    }
    let mass: f64 = target.iter().sum();
    if !(mass > 0.0) || target.iter().any(|&t| t < 0.0 || !t.is_finite()) {
        return Err(Error::Argument("target must be non-negative with positive mass".into()));
    }
    let target: Vec<f64> = target.iter().map(|t| t / mass).collect();

    let trace = lstm_forward(stack, seq)?;
    let loss = -target
        .iter()
        .zip(&trace.scores)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, p)| t * p.max(f64::MIN_POSITIVE).ln())
        .sum::<f64>();

    let mut grad = stack.zeros_like();
    let dz: Vec<f64> = trace.scores.iter().zip(&target).map(|(p, t)| p - t).collect();
    grad.head_w.add_outer(&dz, trace.final_hidden(), 1.0);
    grad.head_b.clone_from(&dz);

    let k = stack.layers.len();
    let t_len = trace.steps.len();
    // Gradients flowing into h_t and c_t of each layer from step t+1.
    let mut dh_next: Vec<Vec<f64>> = stack.hidden_dims().iter().map(|&n| vec![0.0; n]).collect();
    let mut dc_next = dh_next.clone();
    let mut head_dh = vec![0.0; *stack.hidden_dims().last().unwrap()];
    stack.head_w.tr_matvec_acc(&dz, &mut head_dh)?;

    for t in (0..t_len).rev() {
        // gradient arriving at layer l's h_t from the layer above
        let mut dh_from_above: Option<Vec<f64>> = (t == t_len - 1).then(|| head_dh.clone());
        for l in (0..k).rev() {
            let layer = &stack.layers[l];
            let s = &trace.steps[t][l];
            let gl = &mut grad.layers[l];
            let n = layer.hidden_dim();

            let mut dh = dh_next[l].clone();
            if let Some(above) = &dh_from_above {
                for (a, b) in dh.iter_mut().zip(above) {
                    *a += b;
                }
            }

            let da_o: Vec<f64> = (0..n).map(|j| dh[j] * s.tanh_c[j] * s.o[j] * (1.0 - s.o[j])).collect();
            let mut dc: Vec<f64> = (0..n)
                .map(|j| dc_next[l][j] + dh[j] * s.o[j] * (1.0 - s.tanh_c[j] * s.tanh_c[j]))
                .collect();
            // o_t depends on c_t through the output peephole
            layer.output_gate.w_c.as_ref().unwrap().tr_matvec_acc(&da_o, &mut dc)?;

            let da_i: Vec<f64> = (0..n).map(|j| dc[j] * s.g[j] * s.i[j] * (1.0 - s.i[j])).collect();
            let da_f: Vec<f64> = (0..n).map(|j| dc[j] * s.c_prev[j] * s.f[j] * (1.0 - s.f[j])).collect();
            let da_g: Vec<f64> = (0..n).map(|j| dc[j] * s.i[j] * (1.0 - s.g[j] * s.g[j])).collect();

            let mut dx = vec![0.0; layer.input_dim()];
            let mut dh_prev = vec![0.0; n];
            let mut dc_prev: Vec<f64> = (0..n).map(|j| dc[j] * s.f[j]).collect();

            // (gate, its gradient, pre-activation gradient, peephole source, peephole reads c_{t-1})
            for (gate, ggrad, da, peep_src, reads_prev) in [
                (&layer.input_gate, &mut gl.input_gate, &da_i, Some(&s.c_prev), true),
                (&layer.forget_gate, &mut gl.forget_gate, &da_f, Some(&s.c_prev), true),
                (&layer.cell, &mut gl.cell, &da_g, None, false),
                (&layer.output_gate, &mut gl.output_gate, &da_o, Some(&s.c), false),
            ] {
                ggrad.w_x.add_outer(da, &s.x, 1.0);
                ggrad.w_h.add_outer(da, &s.h_prev, 1.0);
                for (b, d) in ggrad.b.iter_mut().zip(da.iter()) {
                    *b += d;
                }
                gate.w_x.tr_matvec_acc(da, &mut dx)?;
                gate.w_h.tr_matvec_acc(da, &mut dh_prev)?;
                if let (Some(wc), Some(gc), Some(src)) = (&gate.w_c, ggrad.w_c.as_mut(), peep_src) {
                    gc.add_outer(da, src, 1.0);
                    if reads_prev {
                        wc.tr_matvec_acc(da, &mut dc_prev)?;
                    }
                }
            }

            dh_next[l] = dh_prev;
            dc_next[l] = dc_prev;
            dh_from_above = Some(dx);
        }
    }
    Ok((grad, loss))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LstmTrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Upper bound on parameter updates.
    pub max_iterations: usize,
    /// Passes over the data; `None` runs until `max_iterations`.
    pub epochs: Option<usize>,
    /// Per-element absolute gradient clip.
    pub clip: f64,
    pub seed: u64,
}

impl Default for LstmTrainConfig {
    fn default() -> Self {
        LstmTrainConfig {
            hidden: vec![1024, 512],
            learning_rate: 1e-4,
            momentum: 0.9,
            batch_size: 10,
            max_iterations: 150_000,
            epochs: None,
            clip: 5.0,
            seed: 0,
        }
    }
}

impl LstmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Argument("momentum must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be at least 1".into()));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Argument("clip threshold must be positive".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Argument("hidden widths must be non-empty and positive".into()));
        }
        Ok(())
    }
}

/// A training sequence with its target distribution over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub seq: FeatureSequence,
    pub target: Vec<f64>,
}

impl LabeledSequence {
    pub fn new(seq: FeatureSequence, label: usize, classes: usize) -> Result<Self> {
        Ok(LabeledSequence {
            seq,
            target: one_hot(label, classes)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmEpochLog {
    pub epoch: usize,
    pub iterations: usize,
    /// Mean per-sample loss over the epoch's mini-batches, measured before
    /// each update.
    pub mean_loss: f64,
}

/// Checks dimensions and labels of the whole dataset before any update.
fn check_dataset(data: &[LabeledSequence], input: usize, classes: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data("empty LSTM training set".into()));
    }
    for (n, s) in data.iter().enumerate() {
        if s.seq.dim() != input {
            return Err(Error::Data(format!("sequence {n} has feature dim {}, expected {input}", s.seq.dim())));
        }
        if s.target.len() != classes {
            return Err(Error::Data(format!("sequence {n} has {} targets, expected {classes}", s.target.len())));
        }
    }
    Ok(())
}

/// Mini-batch SGD with momentum from a seeded initialization. Gradients are
/// averaged over each mini-batch, clipped per element, then applied.
pub fn train_lstm(data: &[LabeledSequence], classes: usize, cfg: &LstmTrainConfig) -> Result<(LstmStack, Vec<LstmEpochLog>)> {
    cfg.validate()?;
    let input = data.first().map(|s| s.seq.dim()).ok_or_else(|| Error::Data("empty LSTM training set".into()))?;
    let mut rng = RngSource::new(cfg.seed);
    let stack = LstmStack::init(input, &cfg.hidden, classes, &mut rng)?;
    train_lstm_from(stack, data, cfg, &mut rng)
}

/// Continues training an existing stack.
pub fn train_lstm_from(
    mut stack: LstmStack,
    data: &[LabeledSequence],
    cfg: &LstmTrainConfig,
    rng: &mut RngSource,
) -> Result<(LstmStack, Vec<LstmEpochLog>)> {
    cfg.validate()?;
    stack.validate()?;
    check_dataset(data, stack.input_dim(), stack.num_classes())?;

    let mut velocity = stack.zeros_like();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut logs = Vec::new();
    let mut iterations = 0;
    let mut epoch = 0;
    while iterations < cfg.max_iterations && cfg.epochs.is_none_or(|e| epoch < e) {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            if iterations >= cfg.max_iterations {
                break;
            }
            let mut grad = stack.zeros_like();
            for &n in batch {
                let (g, loss) = lstm_bptt_target(&stack, &data[n].seq, &data[n].target)?;
                grad.axpy(1.0, &g);
                loss_sum += loss;
            }
            let scale = 1.0 / batch.len() as f64;
            for (name, t) in grad.tensors_mut() {
                for v in t.iter_mut() {
                    *v *= scale;
                    if !v.is_finite() {
                        return Err(Error::NonFiniteGradient { layer: name });
                    }
                    *v = v.clamp(-cfg.clip, cfg.clip);
                }
            }
            for ((_, vel), g) in velocity.tensors_mut().into_iter().zip(grad.tensors()) {
                for (v, g) in vel.iter_mut().zip(g) {
                    *v = cfg.momentum * *v - cfg.learning_rate * g;
                }
            }
            stack.axpy(1.0, &velocity);
            iterations += 1;
        }
        epoch += 1;
        logs.push(LstmEpochLog {
            epoch,
            iterations,
            mean_loss: loss_sum / data.len() as f64,
        });
    }
    Ok((stack, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Stream;

    fn seq(rows: &[Vec<f64>]) -> FeatureSequence {
        FeatureSequence::from_frames(Stream::Spatial, rows).unwrap()
    }

    fn random_seq(rng: &mut RngSource, t: usize, d: usize) -> FeatureSequence {
        FeatureSequence::new(Stream::Spatial, Matrix::random_uniform(t, d, 1.0, rng)).unwrap()
    }

    #[test]
    fn zero_layer_step() {
        let layer = LstmLayerParams::zeros(3, 2);
        let s = lstm_step(&layer, &[0.4, -2.0, 7.0], &[0.0; 2], &[0.0; 2]).unwrap();
        assert_eq!(s.i, vec![0.5; 2]);
        assert_eq!(s.f, vec![0.5; 2]);
        assert_eq!(s.o, vec![0.5; 2]);
        assert_eq!(s.c, vec![0.0; 2]);
        assert_eq!(s.h, vec![0.0; 2]);
    }

    #[test]
    fn zero_layer_step_with_unit_cell() {
        let layer = LstmLayerParams::zeros(2, 3);
        let s = lstm_step(&layer, &[1.0, 1.0], &[0.0; 3], &[1.0; 3]).unwrap();
        for j in 0..3 {
            assert!((s.c[j] - 0.5).abs() < 1e-15);
            // 0.5 * tanh(0.5)
            assert!((s.h[j] - 0.231_058_578_630_004_9).abs() < 1e-12);
        }
    }

    #[test]
    fn step_rejects_bad_dims() {
        let layer = LstmLayerParams::zeros(2, 3);
        assert!(matches!(lstm_step(&layer, &[1.0], &[0.0; 3], &[0.0; 3]), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_stack_gives_uniform_scores() {
        let stack = LstmStack::zeros(3, &[4, 2], 5).unwrap();
        let mut rng = RngSource::new(1);
        let p = lstm_predict(&stack, &random_seq(&mut rng, 6, 3)).unwrap();
        assert!(p.iter().all(|v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn empty_sequence_and_bad_label() {
        let stack = LstmStack::zeros(2, &[2], 3).unwrap();
        assert!(matches!(lstm_bptt(&stack, &seq(&[vec![0.0, 1.0]]), 3), Err(Error::Argument(_))));
    }

    #[test]
    fn head_bias_gradient_is_softmax_residual() {
        let mut rng = RngSource::new(9);
        let stack = LstmStack::init(3, &[4, 3], 3, &mut rng).unwrap();
        let s = random_seq(&mut rng, 5, 3);
        let (g, loss) = lstm_bptt(&stack, &s, 2).unwrap();
        let p = lstm_predict(&stack, &s).unwrap();
        assert!((loss + p[2].ln()).abs() < 1e-12);
        for c in 0..3 {
            let expect = p[c] - if c == 2 { 1.0 } else { 0.0 };
            assert!((g.head_b[c] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_stack_gradient_is_finite() {
        let stack = LstmStack::zeros(2, &[3, 2], 2).unwrap();
        let (g, _) = lstm_bptt_target(&stack, &seq(&[vec![1.0, 2.0], vec![0.5, -1.0]]), &[1.0, 1.0]).unwrap();
        assert!(g.is_finite());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = RngSource::new(4);
        let stack = LstmStack::init(3, &[5, 2], 4, &mut rng).unwrap();
        let bytes = stack.to_bytes();
        assert_eq!(&bytes[..4], b"HSLM");
        assert_eq!(LstmStack::from_bytes(&bytes).unwrap(), stack);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(LstmStack::from_bytes(&bad).is_err());
        assert!(LstmStack::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn zero_iterations_returns_init() {
        let mut rng = RngSource::new(0);
        let data = vec![LabeledSequence::new(random_seq(&mut rng, 3, 2), 0, 2).unwrap()];
        let cfg = LstmTrainConfig {
            hidden: vec![3],
            max_iterations: 0,
            seed: 17,
            ..LstmTrainConfig::default()
        };
        let (trained, logs) = train_lstm(&data, 2, &cfg).unwrap();
        let init = LstmStack::init(2, &[3], 2, &mut RngSource::new(17)).unwrap();
        assert_eq!(trained, init);
        assert!(logs.is_empty());
    }

    #[test]
    fn inconsistent_dims_fail_before_training() {
        let mut rng = RngSource::new(0);
        let data = vec![
            LabeledSequence::new(random_seq(&mut rng, 3, 2), 0, 2).unwrap(),
            LabeledSequence::new(random_seq(&mut rng, 3, 4), 1, 2).unwrap(),
        ];
        let cfg = LstmTrainConfig {
            hidden: vec![3],
            ..LstmTrainConfig::default()
        };
        assert!(matches!(train_lstm(&data, 2, &cfg), Err(Error::Data(_))));
    }
}
