//! Oracle-backed self checks exposed through `hybridnet verify`.
//!
//! * `gradcheck`: analytic gradients of the LSTM loss and of the fusion
//!   network's smooth objective against central finite differences.
//! * `prox`: the closed-form proximal map against a numerical minimizer of
//!   the row objective, plus the zero-row and contraction laws.
//! * `metrics`: AP against a rank-counting definition.

use std::fmt;

use crate::features::{FeatureSequence, PooledSample, Stream};
use crate::fusion::{self, FusionArch, FusionHyper, FusionNet, OutputLoss};
use crate::lstm::{self, LstmStack};
use crate::metrics;
use crate::numcore::{self, Matrix, RngSource};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-6;
pub const PROX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    fn new(suite: &'static str) -> Self {
        SuiteReport { suite, checks: Vec::new() }
    }

    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "[{}] {}/{}: {}", if c.passed { "PASS" } else { "FAIL" }, self.suite, c.name, c.detail)?;
        }
        Ok(())
    }
}

/// `|a − b| / max(|a|, |b|, GRAD_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Largest relative error over all parameters between `analytic` (flattened
/// in `tensors_mut` order) and central differences of `loss`.
pub fn max_fd_error<P: Clone>(
    params: &P,
    analytic: &[f64],
    tensors_mut: impl Fn(&mut P) -> Vec<(String, &mut [f64])>,
    loss: impl Fn(&P) -> f64,
) -> (f64, String) {
    let mut p = params.clone();
    let shapes: Vec<(String, usize)> = tensors_mut(&mut p).into_iter().map(|(n, t)| (n, t.len())).collect();
    let mut worst = (0.0, String::new());
    let mut flat = 0;
    for (ti, (name, len)) in shapes.iter().enumerate() {
        for k in 0..*len {
            let orig = tensors_mut(&mut p)[ti].1[k];
            tensors_mut(&mut p)[ti].1[k] = orig + FD_STEP;
            let up = loss(&p);
            tensors_mut(&mut p)[ti].1[k] = orig - FD_STEP;
            let down = loss(&p);
            tensors_mut(&mut p)[ti].1[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(analytic[flat], numeric);
            if err > worst.0 {
                worst = (err, format!("{name}[{k}]"));
            }
            flat += 1;
        }
    }
    worst
}

fn flatten(tensors: Vec<&[f64]>) -> Vec<f64> {
    tensors.concat()
}

/// One random LSTM gradient check; returns the worst relative error.
pub fn lstm_gradcheck_instance(rng: &mut RngSource, hidden: &[usize], input: usize, t: usize, classes: usize) -> (f64, String) {
    let mut stack = LstmStack::init(input, hidden, classes, rng).expect("valid architecture");
    // larger weights than the default init exercise the nonlinearities
    for (_, tns) in stack.tensors_mut() {
        tns.iter_mut().for_each(|v| *v = rng.uniform(-0.6, 0.6));
    }
    let seq = FeatureSequence::new(Stream::Spatial, Matrix::random_uniform(t, input, 1.0, rng)).unwrap();
    let label = rng.below(classes);
    let (grad, _) = lstm::lstm_bptt(&stack, &seq, label).unwrap();
    let loss = |s: &LstmStack| -lstm::lstm_predict(s, &seq).unwrap()[label].ln();
    max_fd_error(&stack, &flatten(grad.tensors()), |s| s.tensors_mut(), loss)
}

/// One random fusion smooth-objective gradient check.
pub fn fusion_gradcheck_instance(rng: &mut RngSource, arch: FusionArch, batch: usize, loss_kind: OutputLoss) -> (f64, String) {
    let mut net = FusionNet::init(arch, rng).unwrap();
    for (_, tns) in net.tensors_mut() {
        tns.iter_mut().for_each(|v| *v = rng.uniform(-1.0, 1.0));
    }
    let samples: Vec<PooledSample> = (0..batch)
        .map(|i| {
            let mut label = vec![0.0; arch.classes];
            label[rng.below(arch.classes)] = 1.0;
            PooledSample {
                id: format!("g{i}"),
                spatial: (0..arch.spatial_in).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                motion: (0..arch.motion_in).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                label,
            }
        })
        .collect();
    let hyper = FusionHyper {
        lambda1: rng.uniform(0.0, 0.1),
        loss: loss_kind,
        ..FusionHyper::default()
    };
    let (grad, _) = fusion::smooth_gradient(&net, &samples, &hyper).unwrap();
    let loss = |n: &FusionNet| fusion::fusion_objective(n, &samples, &hyper).unwrap().smooth();
    max_fd_error(&net, &flatten(grad.tensors()), |n| n.tensors_mut(), loss)
}

pub fn gradcheck_suite(seed: u64, instances: usize) -> SuiteReport {
    let mut report = SuiteReport::new("gradcheck");
    let mut rng = RngSource::new(seed);
    let mut worst = (0.0f64, String::new());
    for _ in 0..instances {
        let h1 = rng.int_inclusive(1, 6);
        let h2 = rng.int_inclusive(1, 6);
        let input = rng.int_inclusive(1, 5);
        let t = rng.int_inclusive(1, 8);
        let c = rng.int_inclusive(2, 4);
        let e = lstm_gradcheck_instance(&mut rng, &[h1, h2], input, t, c);
        if e.0 >= worst.0 {
            worst = e;
        }
    }
    report.push(
        "lstm-bptt",
        worst.0 < GRAD_TOLERANCE,
        format!("{instances} instances, max relative error {:.3e} at {}", worst.0, worst.1),
    );

    let mut worst = (0.0f64, String::new());
    for i in 0..instances {
        let arch = FusionArch {
            spatial_in: rng.int_inclusive(1, 8),
            motion_in: rng.int_inclusive(1, 8),
            spatial_width: rng.int_inclusive(1, 6),
            motion_width: rng.int_inclusive(1, 6),
            fusion_width: rng.int_inclusive(1, 6),
            classes: rng.int_inclusive(2, 4),
        };
        let kind = if i % 2 == 0 { OutputLoss::Squared } else { OutputLoss::CrossEntropy };
        let batch = rng.int_inclusive(1, 4);
        let e = fusion_gradcheck_instance(&mut rng, arch, batch, kind);
        if e.0 >= worst.0 {
            worst = e;
        }
    }
    report.push(
        "fusion-smooth",
        worst.0 < GRAD_TOLERANCE,
        format!("{instances} instances, max relative error {:.3e} at {}", worst.0, worst.1),
    );
    report
}

/// `½‖x − v‖² + τ2‖x‖₂ + τ3‖x‖₁`.
pub fn prox_row_objective(x: &[f64], v: &[f64], tau2: f64, tau3: f64) -> f64 {
    let quad: f64 = x.iter().zip(v).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum();
    quad + tau2 * numcore::norm2(x) + tau3 * x.iter().map(|a| a.abs()).sum::<f64>()
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Numerical minimizer of the row objective: damped Newton on the smoothed
/// objective (`|t| → sqrt(t² + ε²)`), driving ε from 1 down to 1e-13.
pub fn prox_row_oracle(v: &[f64], tau2: f64, tau3: f64) -> Vec<f64> {
    let n = v.len();
    let mut x = v.to_vec();
    let mut eps = 1.0;
    while eps >= 1e-13 {
        let smoothed = |x: &[f64]| -> f64 {
            let quad: f64 = x.iter().zip(v).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum();
            let rho = (x.iter().map(|a| a * a).sum::<f64>() + eps * eps).sqrt();
            quad + tau2 * rho + tau3 * x.iter().map(|a| (a * a + eps * eps).sqrt()).sum::<f64>()
        };
        for _ in 0..200 {
            let rho = (x.iter().map(|a| a * a).sum::<f64>() + eps * eps).sqrt();
            let s: Vec<f64> = x.iter().map(|a| (a * a + eps * eps).sqrt()).collect();
            let grad: Vec<f64> = (0..n).map(|j| x[j] - v[j] + tau2 * x[j] / rho + tau3 * x[j] / s[j]).collect();
            let mut hess = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    hess[i][j] = -tau2 * x[i] * x[j] / (rho * rho * rho);
                }
                hess[i][i] += 1.0 + tau2 / rho + tau3 * eps * eps / (s[i] * s[i] * s[i]);
            }
            let step = solve_dense(hess, grad.clone());
            let f0 = smoothed(&x);
            let slope: f64 = grad.iter().zip(&step).map(|(g, d)| g * d).sum();
            let mut t = 1.0;
            let mut next: Vec<f64>;
            loop {
                next = x.iter().zip(&step).map(|(a, d)| a - t * d).collect();
                if smoothed(&next) <= f0 - 1e-4 * t * slope || t < 1e-12 {
                    break;
                }
                t *= 0.5;
            }
            let moved = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            x = next;
            if moved < 1e-16 {
                break;
            }
        }
        eps /= 10.0;
    }
    x
}

pub fn prox_suite(seed: u64, rows: usize) -> SuiteReport {
    let mut report = SuiteReport::new("prox");
    let mut rng = RngSource::new(seed);
    let mut worst = 0.0f64;
    let mut zero_law_ok = true;
    let mut contraction_ok = true;
    for _ in 0..rows {
        let len = rng.int_inclusive(1, 4);
        let v: Vec<f64> = (0..len).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let tau2 = rng.uniform(0.0, 2.0);
        let tau3 = rng.uniform(0.0, 2.0);
        let vm = Matrix::from_vec(1, len, v.clone()).unwrap();
        let w = fusion::prox_l21_l11(&vm, tau2, tau3);
        let oracle = prox_row_oracle(&v, tau2, tau3);
        let diff = w.row(0).iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(diff);

        let u: Vec<f64> = v.iter().map(|x| (x.abs() - tau3).max(0.0) * x.signum()).collect();
        let zeroed = w.row(0).iter().all(|&x| x == 0.0);
        if zeroed != (numcore::norm2(&u) <= tau2) {
            zero_law_ok = false;
        }
        if numcore::norm2(w.row(0)) > numcore::norm2(&v) {
            contraction_ok = false;
        }
    }
    report.push(
        "minimizer",
        worst <= PROX_TOLERANCE,
        format!("{rows} random rows, max deviation from numerical minimizer {worst:.3e}"),
    );
    report.push("zero-row-law", zero_law_ok, "rows zeroed exactly when the thresholded norm is at most τ2");
    report.push("contraction", contraction_ok, "no row norm increases");
    report
}

/// AP by direct rank counting: a video's rank is the number of videos scored
/// above it, plus ties whose id does not sort after it. Terms are summed in
/// rank order.
pub fn ap_by_counting(scores: &[f64], labels: &[bool], ids: &[&str]) -> Option<f64> {
    let n = scores.len();
    let ahead = |i: usize, j: usize| scores[j] > scores[i] || (scores[j] == scores[i] && ids[j] <= ids[i]);
    let mut at_rank = vec![usize::MAX; n + 1];
    for i in 0..n {
        at_rank[(0..n).filter(|&j| ahead(i, j)).count()] = i;
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for k in 1..=n {
        if labels[at_rank[k]] {
            hits += 1;
            total += hits as f64 / k as f64;
        }
    }
    (hits > 0).then(|| total / hits as f64)
}

pub fn metrics_suite(seed: u64, instances: usize) -> SuiteReport {
    let mut report = SuiteReport::new("metrics");
    let ap = metrics::average_precision(&[0.9, 0.8, 0.7], &[true, false, true], &["v1", "v2", "v3"])
        .ok()
        .flatten()
        .unwrap_or(f64::NAN);
    report.push("ap-example", (ap - 5.0 / 6.0).abs() < 1e-9, format!("AP = {ap:.12} (expected 0.833333333333)"));

    let table: [(&[f64], &[bool], f64); 3] = [
        (&[0.9, 0.8, 0.7, 0.6], &[true, true, false, false], 1.0),
        (&[0.9, 0.8, 0.7, 0.6], &[false, false, true, true], (1.0 / 3.0 + 2.0 / 4.0) / 2.0),
        (&[0.4, 0.3, 0.2, 0.1], &[false, true, false, true], (1.0 / 2.0 + 2.0 / 4.0) / 2.0),
    ];
    let ids = ["a", "b", "c", "d"];
    let ok = table.iter().all(|(s, l, want)| {
        metrics::average_precision(s, l, &ids).ok().flatten().is_some_and(|ap| (ap - want).abs() < 1e-12)
    });
    report.push("ap-table", ok, "hand-computed AP table");

    let mut rng = RngSource::new(seed);
    let mut mismatches = 0;
    for _ in 0..instances {
        let n = rng.int_inclusive(1, 12);
        // coarse scores so ties occur
        let scores: Vec<f64> = (0..n).map(|_| rng.below(5) as f64 / 4.0).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.below(2) == 1).collect();
        let owned: Vec<String> = (0..n).map(|i| format!("v{:02}", rng.below(1000) * 100 + i)).collect();
        let ids: Vec<&str> = owned.iter().map(String::as_str).collect();
        if metrics::average_precision(&scores, &labels, &ids).ok().flatten() != ap_by_counting(&scores, &labels, &ids) {
            mismatches += 1;
        }
    }
    report.push(
        "ap-random",
        mismatches == 0,
        format!("{instances} random rankings, {mismatches} mismatches against rank counting"),
    );
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_finds_scalar_solution() {
        let x = prox_row_oracle(&[2.0], 0.6, 0.5);
        assert!((x[0] - 0.9).abs() < 1e-8, "{x:?}");
    }

    #[test]
    fn oracle_finds_zero_row() {
        let x = prox_row_oracle(&[0.3, -0.4], 0.5, 0.1);
        assert!(x.iter().all(|v| v.abs() < 1e-8), "{x:?}");
    }

    #[test]
    fn suites_pass() {
        assert!(prox_suite(1, 200).passed());
        let m = metrics_suite(2, 50);
        assert!(m.passed(), "{m}");
        let g = gradcheck_suite(3, 4);
        assert!(g.passed(), "{g}");
    }
}
