//! Regularized feature fusion network.
//!
//! Pooled spatial and motion features are each mapped through a sigmoid
//! abstraction layer, concatenated (spatial block first) and fed to a sigmoid
//! fusion layer whose incoming weight matrix `W^E` carries the structural
//! penalties, then to per-class sigmoid outputs. The objective is
//!
//! ```text
//! L + λ1 Σ_l ‖W^l‖_F² + (λ2/2) ‖W^E‖_{2,1} + λ3 ‖W^E‖_{1,1}
//! ```
//!
//! with `L` the summed squared error (or per-class cross-entropy). Training
//! takes a gradient step on the smooth part for every layer, then applies the
//! closed-form ℓ21/ℓ11 proximal map to `W^E` with thresholds `η·λ2`, `η·λ3`.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::features::PooledSample;
use crate::numcore::{self, sigmoid, Matrix, RngSource};

pub const FUSION_MAGIC: &[u8; 4] = b"HSFN";
pub const FUSION_VERSION: u32 = 1;

/// Fully connected layer, `W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Dense {
            w: Matrix::zeros(out, inp),
            b: vec![0.0; out],
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(out: usize, inp: usize, rng: &mut RngSource) -> Self {
        let r = (6.0 / (inp + out) as f64).sqrt();
        Dense {
            w: Matrix::random_uniform(out, inp, r, rng),
            b: vec![0.0; out],
        }
    }

    fn sigmoid_forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.preactivation(x)?;
        numcore::sigmoid_in_place(&mut z);
        Ok(z)
    }

    fn preactivation(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.b.clone();
        self.w.matvec_acc(x, &mut z)?;
        Ok(z)
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionArch {
    pub spatial_in: usize,
    pub motion_in: usize,
    pub spatial_width: usize,
    pub motion_width: usize,
    pub fusion_width: usize,
    pub classes: usize,
}

impl FusionArch {
    fn validate(&self) -> Result<()> {
        let dims = [
            self.spatial_in,
            self.motion_in,
            self.spatial_width,
            self.motion_width,
            self.fusion_width,
        ];
        if dims.contains(&0) || self.classes < 1 {
            return Err(Error::Argument(format!("invalid fusion architecture {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionNet {
    pub spatial: Dense,
    pub motion: Dense,
    /// `W^E = [W^E_s, W^E_m]`, shape P × (spatial_width + motion_width).
    pub fusion: Dense,
    pub output: Dense,
}

impl FusionNet {
    pub fn zeros(arch: FusionArch) -> Result<Self> {
        arch.validate()?;
        Ok(FusionNet {
            spatial: Dense::zeros(arch.spatial_width, arch.spatial_in),
            motion: Dense::zeros(arch.motion_width, arch.motion_in),
            fusion: Dense::zeros(arch.fusion_width, arch.spatial_width + arch.motion_width),
            output: Dense::zeros(arch.classes, arch.fusion_width),
        })
    }

    pub fn init(arch: FusionArch, rng: &mut RngSource) -> Result<Self> {
        arch.validate()?;
        Ok(FusionNet {
            spatial: Dense::glorot(arch.spatial_width, arch.spatial_in, rng),
            motion: Dense::glorot(arch.motion_width, arch.motion_in, rng),
            fusion: Dense::glorot(arch.fusion_width, arch.spatial_width + arch.motion_width, rng),
            output: Dense::glorot(arch.classes, arch.fusion_width, rng),
        })
    }

    pub fn arch(&self) -> FusionArch {
        FusionArch {
            spatial_in: self.spatial.in_dim(),
            motion_in: self.motion.in_dim(),
            spatial_width: self.spatial.out_dim(),
            motion_width: self.motion.out_dim(),
            fusion_width: self.fusion.out_dim(),
            classes: self.output.out_dim(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        FusionNet::zeros(self.arch()).expect("existing net has a valid architecture")
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.spatial.b.len() == self.spatial.out_dim()
            && self.motion.b.len() == self.motion.out_dim()
            && self.fusion.b.len() == self.fusion.out_dim()
            && self.output.b.len() == self.output.out_dim()
            && self.fusion.in_dim() == self.spatial.out_dim() + self.motion.out_dim()
            && self.output.in_dim() == self.fusion.out_dim();
        if !ok {
            return Err(Error::shape("FusionNet", format!("{:?}", self.arch()), "layer shapes do not chain"));
        }
        Ok(())
    }

    /// Spatial column block `W^E_s`.
    pub fn fusion_spatial_block(&self) -> Matrix {
        self.fusion.w.column_block(0, self.spatial.out_dim())
    }

    /// Motion column block `W^E_m`.
    pub fn fusion_motion_block(&self) -> Matrix {
        self.fusion.w.column_block(self.spatial.out_dim(), self.fusion.in_dim())
    }

    fn layers(&self) -> [(&'static str, &Dense); 4] {
        [
            ("spatial", &self.spatial),
            ("motion", &self.motion),
            ("fusion", &self.fusion),
            ("output", &self.output),
        ]
    }

    fn layers_mut(&mut self) -> [(&'static str, &mut Dense); 4] {
        [
            ("spatial", &mut self.spatial),
            ("motion", &mut self.motion),
            ("fusion", &mut self.fusion),
            ("output", &mut self.output),
        ]
    }

    /// Every parameter tensor with a stable name, in checkpoint order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::with_capacity(8);
        for (name, layer) in self.layers_mut() {
            out.push((format!("{name}.w"), layer.w.data_mut()));
            out.push((format!("{name}.b"), &mut layer.b[..]));
        }
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(8);
        for (_, layer) in self.layers() {
            out.push(layer.w.data());
            out.push(&layer.b[..]);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Sum of squared Frobenius norms of all four weight matrices.
    pub fn frobenius_penalty(&self) -> f64 {
        self.layers().iter().map(|(_, l)| l.w.frobenius_sq()).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| Error::format(path, msg))
    }

    /// Checkpoint layout: `"HSFN"`, u32 version, u32 layer count (4), then
    /// (rows, cols) u32 pairs for the spatial, motion, fusion and output
    /// layers, then for each layer in that order its weights (row-major) and
    /// biases; reals are f64 little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new(FUSION_MAGIC, FUSION_VERSION);
        let layers = self.layers();
        w.u32(layers.len() as u32);
        for (_, l) in &layers {
            w.u32(l.w.rows() as u32);
            w.u32(l.w.cols() as u32);
        }
        for t in self.tensors() {
            w.f64s(t);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = ByteReader::new(bytes, FUSION_MAGIC, FUSION_VERSION)?;
        let count = r.u32()?;
        if count != 4 {
            return Err(format!("expected 4 layers, found {count}"));
        }
        let mut shapes = [(0usize, 0usize); 4];
        for s in &mut shapes {
            *s = (r.u32()? as usize, r.u32()? as usize);
        }
        let [sp, mo, fu, out] = shapes;
        let arch = FusionArch {
            spatial_in: sp.1,
            motion_in: mo.1,
            spatial_width: sp.0,
            motion_width: mo.0,
            fusion_width: fu.0,
            classes: out.0,
        };
        if fu.1 != sp.0 + mo.0 || out.1 != fu.0 {
            return Err("layer shape table does not chain".into());
        }
        let mut net = FusionNet::zeros(arch).map_err(|e| e.to_string())?;
        for (name, t) in net.tensors_mut() {
            r.f64s_into(t).map_err(|e| format!("{name}: {e}"))?;
        }
        r.expect_end()?;
        if !net.is_finite() {
            return Err("non-finite parameter".into());
        }
        Ok(net)
    }
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionTrace {
    pub spatial_hidden: Vec<f64>,
    pub motion_hidden: Vec<f64>,
    /// `[h_s; h_m]`, the input of the fusion layer.
    pub concat: Vec<f64>,
    pub fused: Vec<f64>,
    pub logits: Vec<f64>,
    pub scores: Vec<f64>,
}

pub fn fusion_trace(net: &FusionNet, x_s: &[f64], x_m: &[f64]) -> Result<FusionTrace> {
    if x_s.len() != net.spatial.in_dim() || x_m.len() != net.motion.in_dim() {
        return Err(Error::shape(
            "fusion_forward",
            format!("inputs ({}, {})", net.spatial.in_dim(), net.motion.in_dim()),
            format!("({}, {})", x_s.len(), x_m.len()),
        ));
    }
    let spatial_hidden = net.spatial.sigmoid_forward(x_s)?;
    let motion_hidden = net.motion.sigmoid_forward(x_m)?;
    let concat = [spatial_hidden.as_slice(), motion_hidden.as_slice()].concat();
    let fused = net.fusion.sigmoid_forward(&concat)?;
    let logits = net.output.preactivation(&fused)?;
    let scores = logits.iter().map(|&z| sigmoid(z)).collect();
    Ok(FusionTrace {
        spatial_hidden,
        motion_hidden,
        concat,
        fused,
        logits,
        scores,
    })
}

/// Per-class scores in (0, 1).
pub fn fusion_forward(net: &FusionNet, x_s: &[f64], x_m: &[f64]) -> Result<Vec<f64>> {
    Ok(fusion_trace(net, x_s, x_m)?.scores)
}

/// `Σ_i ‖W_i·‖₂`.
pub fn norm_l21(w: &Matrix) -> f64 {
    (0..w.rows()).map(|r| numcore::norm2(w.row(r))).sum()
}

/// `Σ_ij |w_ij|`.
pub fn norm_l11(w: &Matrix) -> f64 {
    w.data().iter().map(|v| v.abs()).sum()
}

/// Rows that are exactly zero.
pub fn zero_rows(w: &Matrix) -> Vec<usize> {
    (0..w.rows()).filter(|&r| w.row(r).iter().all(|&v| v == 0.0)).collect()
}

/// Proximal map of `τ2‖·‖_{2,1} + τ3‖·‖_{1,1}` under `½‖· − V‖²`, row by row:
/// soft-threshold each entry by `τ3`, then shrink the row's norm by `τ2`,
/// zeroing rows whose thresholded norm does not exceed `τ2`.
pub fn prox_l21_l11(v: &Matrix, tau2: f64, tau3: f64) -> Matrix {
    let mut out = v.clone();
    prox_l21_l11_in_place(&mut out, tau2, tau3);
    out
}

pub fn prox_l21_l11_in_place(w: &mut Matrix, tau2: f64, tau3: f64) {
    for r in 0..w.rows() {
        let row = w.row_mut(r);
        let mut sq = 0.0;
        for x in row.iter_mut() {
            let mag = (x.abs() - tau3).max(0.0);
            *x = if mag > 0.0 { mag.copysign(*x) } else { 0.0 };
            sq += *x * *x;
        }
        let norm = sq.sqrt();
        if norm <= tau2 {
            row.iter_mut().for_each(|x| *x = 0.0);
        } else if tau2 > 0.0 {
            let factor = 1.0 - tau2 / norm;
            row.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputLoss {
    /// `Σ_c (s_c − y_c)²`.
    Squared,
    /// Per-class logistic loss, for multi-label data.
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionHyper {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: OutputLoss,
    pub seed: u64,
}

impl Default for FusionHyper {
    fn default() -> Self {
        FusionHyper {
            lambda1: 3e-5,
            lambda2: 3e-5,
            lambda3: 3e-5,
            learning_rate: 0.7,
            momentum: 0.0,
            epochs: 100,
            batch_size: 10,
            loss: OutputLoss::Squared,
            seed: 0,
        }
    }
}

impl FusionHyper {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Argument(format!("{name} must be finite and non-negative")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Argument("momentum must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    /// Proximal thresholds `(η·λ2, η·λ3)` for one step.
    pub fn prox_thresholds(&self) -> (f64, f64) {
        (self.learning_rate * self.lambda2, self.learning_rate * self.lambda3)
    }
}

/// The objective split into its terms (each already weighted by its λ).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveParts {
    pub loss: f64,
    pub frobenius: f64,
    pub l21: f64,
    pub l11: f64,
}

impl ObjectiveParts {
    pub fn smooth(&self) -> f64 {
        self.loss + self.frobenius
    }

    pub fn total(&self) -> f64 {
        self.loss + self.frobenius + self.l21 + self.l11
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sample_loss(trace: &FusionTrace, y: &[f64], loss: OutputLoss) -> f64 {
    match loss {
        OutputLoss::Squared => trace.scores.iter().zip(y).map(|(s, y)| (s - y) * (s - y)).sum(),
        // −y log σ(z) − (1−y) log(1−σ(z)) = y·softplus(−z) + (1−y)·softplus(z)
        OutputLoss::CrossEntropy => trace
            .logits
            .iter()
            .zip(y)
            .map(|(&z, &y)| y * softplus(-z) + (1.0 - y) * softplus(z))
            .sum(),
    }
}

fn check_batch(net: &FusionNet, batch: &[PooledSample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    for s in batch {
        if s.label.len() != net.output.out_dim() {
            return Err(Error::shape(
                "fusion labels",
                format!("{} classes", net.output.out_dim()),
                format!("label of length {} for `{}`", s.label.len(), s.id),
            ));
        }
    }
    Ok(())
}

pub fn fusion_objective(net: &FusionNet, batch: &[PooledSample], hyper: &FusionHyper) -> Result<ObjectiveParts> {
    check_batch(net, batch)?;
    let mut loss = 0.0;
    for s in batch {
        let trace = fusion_trace(net, &s.spatial, &s.motion)?;
        loss += sample_loss(&trace, &s.label, hyper.loss);
    }
    Ok(ObjectiveParts {
        loss,
        frobenius: hyper.lambda1 * net.frobenius_penalty(),
        l21: 0.5 * hyper.lambda2 * norm_l21(&net.fusion.w),
        l11: hyper.lambda3 * norm_l11(&net.fusion.w),
    })
}

/// Gradient of the smooth part `L + λ1 Φ(W)` w.r.t. every parameter, and the
/// objective terms at the current parameters.
pub fn smooth_gradient(net: &FusionNet, batch: &[PooledSample], hyper: &FusionHyper) -> Result<(FusionNet, ObjectiveParts)> {
    check_batch(net, batch)?;
    let mut grad = net.zeros_like();
    let mut loss = 0.0;
    let hs = net.spatial.out_dim();
    for s in batch {
        let tr = fusion_trace(net, &s.spatial, &s.motion)?;
        loss += sample_loss(&tr, &s.label, hyper.loss);
        let dz_out: Vec<f64> = match hyper.loss {
            OutputLoss::Squared => tr
                .scores
                .iter()
                .zip(&s.label)
                .map(|(&p, &y)| 2.0 * (p - y) * p * (1.0 - p))
                .collect(),
            OutputLoss::CrossEntropy => tr.scores.iter().zip(&s.label).map(|(&p, &y)| p - y).collect(),
        };
        grad.output.w.add_outer(&dz_out, &tr.fused, 1.0);
        add_into(&mut grad.output.b, &dz_out);

        let mut d_fused = vec![0.0; tr.fused.len()];
        net.output.w.tr_matvec_acc(&dz_out, &mut d_fused)?;
        let dz_fused: Vec<f64> = d_fused.iter().zip(&tr.fused).map(|(d, f)| d * f * (1.0 - f)).collect();
        grad.fusion.w.add_outer(&dz_fused, &tr.concat, 1.0);
        add_into(&mut grad.fusion.b, &dz_fused);

        let mut d_concat = vec![0.0; tr.concat.len()];
        net.fusion.w.tr_matvec_acc(&dz_fused, &mut d_concat)?;
        let (d_s, d_m) = d_concat.split_at(hs);
        let dz_s: Vec<f64> = d_s.iter().zip(&tr.spatial_hidden).map(|(d, h)| d * h * (1.0 - h)).collect();
        let dz_m: Vec<f64> = d_m.iter().zip(&tr.motion_hidden).map(|(d, h)| d * h * (1.0 - h)).collect();
        grad.spatial.w.add_outer(&dz_s, &s.spatial, 1.0);
        add_into(&mut grad.spatial.b, &dz_s);
        grad.motion.w.add_outer(&dz_m, &s.motion, 1.0);
        add_into(&mut grad.motion.b, &dz_m);
    }
    for ((_, g), (_, w)) in grad.layers_mut().into_iter().zip(net.layers()) {
        for (gv, wv) in g.w.data_mut().iter_mut().zip(w.w.data()) {
            *gv += 2.0 * hyper.lambda1 * wv;
        }
    }
    let parts = ObjectiveParts {
        loss,
        frobenius: hyper.lambda1 * net.frobenius_penalty(),
        l21: 0.5 * hyper.lambda2 * norm_l21(&net.fusion.w),
        l11: hyper.lambda3 * norm_l11(&net.fusion.w),
    };
    Ok((grad, parts))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionMomentum {
    velocity: FusionNet,
}

impl FusionMomentum {
    pub fn new(net: &FusionNet) -> Self {
        FusionMomentum {
            velocity: net.zeros_like(),
        }
    }
}

/// One proximal-gradient step on `batch`: momentum update of every layer on
/// the smooth part, then the proximal map on `W^E`. Returns the objective
/// terms measured before the step.
pub fn fusion_train_step(
    net: &mut FusionNet,
    batch: &[PooledSample],
    hyper: &FusionHyper,
    momentum: &mut FusionMomentum,
) -> Result<ObjectiveParts> {
    let (grad, parts) = smooth_gradient(net, batch, hyper)?;
    for (name, g) in grad.layers() {
        if !(g.w.is_finite() && g.b.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFiniteGradient { layer: name.to_string() });
        }
    }
    let eta = hyper.learning_rate;
    for ((_, vel), g) in momentum.velocity.tensors_mut().into_iter().zip(grad.tensors()) {
        for (v, g) in vel.iter_mut().zip(g) {
            *v = hyper.momentum * *v - eta * g;
        }
    }
    for ((_, w), v) in net.tensors_mut().into_iter().zip(momentum.velocity.tensors()) {
        add_into(w, v);
    }
    let (tau2, tau3) = hyper.prox_thresholds();
    prox_l21_l11_in_place(&mut net.fusion.w, tau2, tau3);
    Ok(parts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionEpochLog {
    pub epoch: usize,
    pub objective: ObjectiveParts,
    pub zero_rows: usize,
}

impl fmt::Display for FusionEpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} objective={:.9e} loss={:.9e} frobenius={:.9e} l21={:.9e} l11={:.9e} zero_rows={}",
            self.epoch,
            self.objective.total(),
            self.objective.loss,
            self.objective.frobenius,
            self.objective.l21,
            self.objective.l11,
            self.zero_rows
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionTraining {
    pub net: FusionNet,
    pub log: Vec<FusionEpochLog>,
    /// Objective over the full training set after the last epoch.
    pub final_objective: ObjectiveParts,
}

fn check_dataset(data: &[PooledSample], arch: &FusionArch) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data("empty fusion training set".into()));
    }
    for s in data {
        if s.spatial.len() != arch.spatial_in || s.motion.len() != arch.motion_in || s.label.len() != arch.classes {
            return Err(Error::Data(format!(
                "sample `{}` has dims ({}, {}, {}), expected ({}, {}, {})",
                s.id,
                s.spatial.len(),
                s.motion.len(),
                s.label.len(),
                arch.spatial_in,
                arch.motion_in,
                arch.classes
            )));
        }
    }
    Ok(())
}

/// `hyper.epochs` passes of shuffled mini-batch proximal gradient descent
/// from a seeded initialization.
pub fn train_fusion(data: &[PooledSample], arch: FusionArch, hyper: &FusionHyper) -> Result<FusionTraining> {
    hyper.validate()?;
    check_dataset(data, &arch)?;
    let mut rng = RngSource::new(hyper.seed);
    let net = FusionNet::init(arch, &mut rng)?;
    train_fusion_from(net, data, hyper, &mut rng)
}

pub fn train_fusion_from(
    mut net: FusionNet,
    data: &[PooledSample],
    hyper: &FusionHyper,
    rng: &mut RngSource,
) -> Result<FusionTraining> {
    hyper.validate()?;
    net.validate()?;
    check_dataset(data, &net.arch())?;
    let mut momentum = FusionMomentum::new(&net);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(hyper.epochs);
    let mut batch = Vec::with_capacity(hyper.batch_size);
    for epoch in 1..=hyper.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(hyper.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            fusion_train_step(&mut net, &batch, hyper, &mut momentum)?;
        }
        log.push(FusionEpochLog {
            epoch,
            objective: fusion_objective(&net, data, hyper)?,
            zero_rows: zero_rows(&net.fusion.w).len(),
        });
    }
    let final_objective = match log.last() {
        Some(l) => l.objective,
        None => fusion_objective(&net, data, hyper)?,
    };
    Ok(FusionTraining {
        net,
        log,
        final_objective,
    })
}

/// Per-class scores for every sample.
pub fn fusion_predict_all(net: &FusionNet, data: &[PooledSample]) -> Result<Vec<Vec<f64>>> {
    data.iter().map(|s| fusion_forward(net, &s.spatial, &s.motion)).collect()
}
