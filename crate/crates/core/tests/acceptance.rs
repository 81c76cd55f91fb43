//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Every reference value here comes from an oracle written in this
//! file (finite differences, sign-pattern enumeration, rank counting) or from
//! running the experiment directly.

use std::path::Path;
use std::process::Command;
use std::thread;
use std::time::{Duration, Instant};

use hybridnet::ensemble::{self, Metric, ScoreTable};
use hybridnet::features::{self, FeatureSequence, PooledSample, Split, Stream, SynthMode, SynthSpec};
use hybridnet::fusion::{self, FusionArch, FusionHyper, FusionNet, OutputLoss};
use hybridnet::lstm::{self, LabeledSequence, LstmStack, LstmTrainConfig};
use hybridnet::metrics::{self, GroundTruth};
use hybridnet::numcore::{argmax, Matrix, RngSource};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

// ---------------------------------------------------------------- oracles

const FD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Worst relative error between `analytic` and central differences of
/// `loss`, perturbing every parameter reachable through `params`.
fn fd_worst<P: Clone>(
    p0: &P,
    analytic: Vec<f64>,
    params: impl Fn(&mut P) -> Vec<(String, &mut [f64])>,
    loss: impl Fn(&P) -> f64,
) -> f64 {
    let mut p = p0.clone();
    let sizes: Vec<usize> = params(&mut p).iter().map(|(_, t)| t.len()).collect();
    let mut numeric = Vec::new();
    for (ti, &len) in sizes.iter().enumerate() {
        for k in 0..len {
            let x = params(&mut p)[ti].1[k];
            params(&mut p)[ti].1[k] = x + FD_STEP;
            let up = loss(&p);
            params(&mut p)[ti].1[k] = x - FD_STEP;
            let down = loss(&p);
            params(&mut p)[ti].1[k] = x;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    assert_eq!(numeric.len(), analytic.len());
    analytic.iter().zip(&numeric).map(|(a, n)| rel_err(*a, *n)).fold(0.0, f64::max)
}

/// Exact minimizer of `½‖x − v‖² + τ2‖x‖₂ + τ3‖x‖₁` by enumeration: for each
/// support and sign pattern the stationarity condition has a closed-form
/// solution; the objective's minimum over all candidates is the minimizer.
fn prox_row_brute_force(v: &[f64], tau2: f64, tau3: f64) -> Vec<f64> {
    let n = v.len();
    let objective = |x: &[f64]| -> f64 {
        let quad: f64 = x.iter().zip(v).map(|(a, b)| 0.5 * (a - b).powi(2)).sum();
        quad + tau2 * x.iter().map(|a| a * a).sum::<f64>().sqrt() + tau3 * x.iter().map(|a| a.abs()).sum::<f64>()
    };
    let mut best = vec![0.0; n];
    let mut best_val = objective(&best);
    let mut pattern = vec![0i8; n];
    loop {
        // pattern[j] ∈ {-1, 0, 1}: sign of x_j, 0 meaning x_j = 0
        if pattern.iter().any(|&s| s != 0) {
            let w: Vec<f64> = (0..n).map(|j| if pattern[j] == 0 { 0.0 } else { v[j] - tau3 * pattern[j] as f64 }).collect();
            let wn = w.iter().map(|a| a * a).sum::<f64>().sqrt();
            if wn > tau2 {
                let x: Vec<f64> = w.iter().map(|a| a * (1.0 - tau2 / wn)).collect();
                let val = objective(&x);
                if val < best_val {
                    best_val = val;
                    best = x;
                }
            }
        }
        let mut j = 0;
        loop {
            if j == n {
                return best;
            }
            pattern[j] = match pattern[j] {
                -1 => 0,
                0 => 1,
                _ => -1,
            };
            if pattern[j] != 0 {
                break;
            }
            j += 1;
        }
    }
}

/// Non-interpolated AP straight from the definition: ranks by counting,
/// precision at each positive, accumulated in rank order.
fn ap_oracle(scores: &[f64], labels: &[bool], ids: &[String]) -> Option<f64> {
    let n = scores.len();
    let mut by_rank = vec![0usize; n];
    for i in 0..n {
        let ahead = (0..n)
            .filter(|&j| j != i && (scores[j] > scores[i] || (scores[j] == scores[i] && ids[j] < ids[i])))
            .count();
        by_rank[ahead] = i;
    }
    let mut found = 0;
    let mut sum = 0.0;
    for (r, &i) in by_rank.iter().enumerate() {
        if labels[i] {
            found += 1;
            sum += found as f64 / (r + 1) as f64;
        }
    }
    (found > 0).then(|| sum / found as f64)
}

// ------------------------------------------------------------ criteria 1-3

fn c1_lstm_gradients() -> Outcome {
    let mut rng = RngSource::new(101);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let hidden = [rng.int_inclusive(1, 6), rng.int_inclusive(1, 6)];
        let input = rng.int_inclusive(1, 5);
        let t = rng.int_inclusive(1, 8);
        let classes = rng.int_inclusive(2, 4);
        let mut stack = LstmStack::init(input, &hidden, classes, &mut rng).unwrap();
        for (_, w) in stack.tensors_mut() {
            w.iter_mut().for_each(|x| *x = rng.uniform(-0.5, 0.5));
        }
        let seq = FeatureSequence::new(Stream::Motion, Matrix::random_uniform(t, input, 1.0, &mut rng)).unwrap();
        let label = rng.below(classes);
        let (grad, _) = lstm::lstm_bptt(&stack, &seq, label).unwrap();
        let analytic: Vec<f64> = grad.tensors().concat();
        let e = fd_worst(&stack, analytic, |s| s.tensors_mut(), |s| -lstm::lstm_predict(s, &seq).unwrap()[label].ln());
        worst = worst.max(e);
    }
    outcome(worst < GRAD_TOL, format!("20 instances, max relative error {worst:.2e} (< {GRAD_TOL:.0e})"))
}

fn c2_fusion_gradients() -> Outcome {
    let mut rng = RngSource::new(202);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let arch = FusionArch {
            spatial_in: rng.int_inclusive(1, 8),
            motion_in: rng.int_inclusive(1, 8),
            spatial_width: rng.int_inclusive(1, 6),
            motion_width: rng.int_inclusive(1, 6),
            fusion_width: rng.int_inclusive(1, 6),
            classes: rng.int_inclusive(2, 4),
        };
        let mut net = FusionNet::init(arch, &mut rng).unwrap();
        for (_, w) in net.tensors_mut() {
            w.iter_mut().for_each(|x| *x = rng.uniform(-1.0, 1.0));
        }
        let batch: Vec<PooledSample> = (0..rng.int_inclusive(1, 5))
            .map(|k| {
                let mut label = vec![0.0; arch.classes];
                label[rng.below(arch.classes)] = 1.0;
                PooledSample {
                    id: format!("v{k}"),
                    spatial: (0..arch.spatial_in).map(|_| rng.uniform(-2.0, 2.0)).collect(),
                    motion: (0..arch.motion_in).map(|_| rng.uniform(-2.0, 2.0)).collect(),
                    label,
                }
            })
            .collect();
        let hyper = FusionHyper {
            lambda1: rng.uniform(0.0, 0.05),
            lambda2: 0.3,
            lambda3: 0.3,
            loss: if i % 2 == 0 { OutputLoss::Squared } else { OutputLoss::CrossEntropy },
            ..FusionHyper::default()
        };
        let (grad, _) = fusion::smooth_gradient(&net, &batch, &hyper).unwrap();
        let analytic: Vec<f64> = grad.tensors().concat();
        let e = fd_worst(&net, analytic, |n| n.tensors_mut(), |n| fusion::fusion_objective(n, &batch, &hyper).unwrap().smooth());
        worst = worst.max(e);
    }
    outcome(worst < GRAD_TOL, format!("20 instances, max relative error {worst:.2e} (< {GRAD_TOL:.0e})"))
}

fn c3_prox() -> Outcome {
    let mut rng = RngSource::new(303);
    let mut worst = 0.0f64;
    let mut law_failures = 0;
    for _ in 0..1000 {
        let d = rng.int_inclusive(1, 4);
        let v: Vec<f64> = (0..d).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let (tau2, tau3) = (rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0));
        let got = fusion::prox_l21_l11(&Matrix::from_vec(1, d, v.clone()).unwrap(), tau2, tau3);
        let got = got.row(0);
        let want = prox_row_brute_force(&v, tau2, tau3);
        worst = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);

        let shrunk_norm = v.iter().map(|x| (x.abs() - tau3).max(0.0).powi(2)).sum::<f64>().sqrt();
        let is_zero = got.iter().all(|&x| x == 0.0);
        let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
        if is_zero != (shrunk_norm <= tau2) || norm(got) > norm(&v) {
            law_failures += 1;
        }
    }
    outcome(
        worst < 1e-6 && law_failures == 0,
        format!("1000 rows, max deviation {worst:.2e} (< 1e-6), zero-row/contraction violations {law_failures}"),
    )
}

// ------------------------------------------------------------ criteria 4-6

fn accuracy_of(pred: impl Iterator<Item = (Vec<f64>, usize)>) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for (scores, class) in pred {
        hit += (argmax(&scores) == class) as usize;
        n += 1;
    }
    hit as f64 / n as f64
}

fn sequences(samples: &[&features::VideoSample], stream: Stream, classes: usize) -> Vec<LabeledSequence> {
    samples
        .iter()
        .map(|s| LabeledSequence::new(s.stream(stream).clone(), s.class_index().unwrap(), classes).unwrap())
        .collect()
}

fn small_lstm(seed: u64, epochs: usize) -> LstmTrainConfig {
    LstmTrainConfig {
        hidden: vec![8, 8],
        learning_rate: 0.05,
        momentum: 0.9,
        batch_size: 10,
        max_iterations: usize::MAX,
        epochs: Some(epochs),
        clip: 5.0,
        seed,
    }
}

fn fusion_accuracy(net: &FusionNet, data: &[PooledSample]) -> f64 {
    accuracy_of(data.iter().map(|s| (fusion::fusion_forward(net, &s.spatial, &s.motion).unwrap(), argmax(&s.label))))
}

fn c4_temporal() -> Outcome {
    let spec = SynthSpec {
        mode: SynthMode::Temporal,
        classes: 2,
        train_per_class: 100,
        test_per_class: 200,
        seed: 4,
        ..SynthSpec::default()
    };
    let ds = features::synthesize(&spec).unwrap();
    let (train, test) = (ds.split(Split::Train), ds.split(Split::Test));
    let (stack, _) = lstm::train_lstm(&sequences(&train, Stream::Spatial, 2), 2, &small_lstm(4, 20)).unwrap();
    let lstm_acc = accuracy_of(test.iter().map(|s| (lstm::lstm_predict(&stack, &s.spatial).unwrap(), s.class_index().unwrap())));

    let pooled_train = features::pool_all(train.iter().copied()).unwrap();
    let pooled_test = features::pool_all(test.iter().copied()).unwrap();
    let arch = FusionArch {
        spatial_in: spec.spatial_dim,
        motion_in: spec.motion_dim,
        spatial_width: 16,
        motion_width: 16,
        fusion_width: 16,
        classes: 2,
    };
    let net = fusion::train_fusion(&pooled_train, arch, &FusionHyper { seed: 4, ..FusionHyper::default() }).unwrap().net;
    let fusion_acc = fusion_accuracy(&net, &pooled_test);
    outcome(
        lstm_acc >= 0.90 && fusion_acc <= 0.60,
        format!("LSTM test accuracy {lstm_acc:.3} (>= 0.90), pooled fusion network {fusion_acc:.3} (<= 0.60)"),
    )
}

fn c5_regularization() -> Outcome {
    const GRID: [f64; 3] = [0.0, 1e-3, 1e-2];
    let seeds: Vec<u64> = (0..10).collect();
    let results: Vec<(f64, f64)> = thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                s.spawn(move || {
                    let spec = SynthSpec {
                        mode: SynthMode::Correlation,
                        classes: 4,
                        train_per_class: 5,
                        val_per_class: 50,
                        test_per_class: 100,
                        spatial_dim: 100,
                        motion_dim: 100,
                        shared_dims: 2,
                        unique_dims: 2,
                        noise: 0.5,
                        seed,
                        ..SynthSpec::default()
                    };
                    let ds = features::synthesize(&spec).unwrap();
                    let pool = |split| features::pool_all(ds.split(split)).unwrap();
                    let (train, val, test) = (pool(Split::Train), pool(Split::Val), pool(Split::Test));
                    let arch = FusionArch {
                        spatial_in: 100,
                        motion_in: 100,
                        spatial_width: 32,
                        motion_width: 32,
                        fusion_width: 32,
                        classes: 4,
                    };
                    let base = FusionHyper {
                        lambda2: 0.0,
                        lambda3: 0.0,
                        epochs: 300,
                        seed,
                        ..FusionHyper::default()
                    };
                    let mut unregularized = None;
                    let mut best: Option<(f64, FusionNet)> = None;
                    for &l2 in &GRID {
                        for &l3 in &GRID {
                            let net = fusion::train_fusion(&train, arch, &FusionHyper { lambda2: l2, lambda3: l3, ..base.clone() })
                                .unwrap()
                                .net;
                            let v = fusion_accuracy(&net, &val);
                            if l2 == 0.0 && l3 == 0.0 {
                                unregularized = Some(net.clone());
                            }
                            if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
                                best = Some((v, net));
                            }
                        }
                    }
                    (fusion_accuracy(&unregularized.unwrap(), &test), fusion_accuracy(&best.unwrap().1, &test))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let base = results.iter().map(|r| r.0).sum::<f64>() / 10.0;
    let tuned = results.iter().map(|r| r.1).sum::<f64>() / 10.0;
    let gain = 100.0 * (tuned - base);
    outcome(
        gain >= 2.0,
        format!("mean test accuracy over 10 seeds: tuned λ2/λ3 {tuned:.4} vs λ2=λ3=0 {base:.4}, gain {gain:.2} pp (>= 2)"),
    )
}

fn c6_hybrid() -> Outcome {
    let results: Vec<(bool, bool, String)> = thread::scope(|s| {
        let handles: Vec<_> = (0..10u64)
            .map(|seed| {
                s.spawn(move || {
                    let spec = SynthSpec {
                        mode: SynthMode::Mixed,
                        classes: 2,
                        train_per_class: 50,
                        val_per_class: 50,
                        test_per_class: 100,
                        spatial_dim: 12,
                        motion_dim: 8,
                        shared_dims: 4,
                        unique_dims: 4,
                        noise: 1.2,
                        frame_noise: 3.0,
                        seed,
                        ..SynthSpec::default()
                    };
                    let ds = features::synthesize(&spec).unwrap();
                    let train = ds.split(Split::Train);
                    let (stack, _) = lstm::train_lstm(&sequences(&train, Stream::Motion, 2), 2, &small_lstm(seed, 40)).unwrap();
                    let arch = FusionArch {
                        spatial_in: 12,
                        motion_in: 8,
                        spatial_width: 16,
                        motion_width: 16,
                        fusion_width: 16,
                        classes: 2,
                    };
                    let pooled = features::pool_all(train.iter().copied()).unwrap();
                    let net = fusion::train_fusion(&pooled, arch, &FusionHyper { seed, ..FusionHyper::default() }).unwrap().net;
                    let names = ds.class_names.clone();
                    let tables = |split| {
                        let vids = ds.split(split);
                        let lstm_rows = vids.iter().map(|v| (v.id.clone(), lstm::lstm_predict(&stack, &v.motion).unwrap())).collect();
                        let fusion_rows = vids
                            .iter()
                            .map(|v| {
                                let p = v.pooled().unwrap();
                                (v.id.clone(), fusion::fusion_forward(&net, &p.spatial, &p.motion).unwrap())
                            })
                            .collect();
                        (
                            ScoreTable::new("lstm-motion", names.clone(), lstm_rows).unwrap(),
                            ScoreTable::new("fusion", names.clone(), fusion_rows).unwrap(),
                            GroundTruth::from_samples(vids.iter().copied()),
                        )
                    };
                    let acc = |t: &ScoreTable, g: &GroundTruth| metrics::accuracy(t, g).unwrap();

                    let (l, f, truth) = tables(Split::Test);
                    let avg = ensemble::average_fuse(&[&l, &f]).unwrap();
                    let (la, fa, aa) = (acc(&l, &truth), acc(&f, &truth), acc(&avg, &truth));

                    let (lv, fv, vtruth) = tables(Split::Val);
                    let cv = ensemble::cross_validate_weights(&[&lv, &fv], &vtruth, Metric::Accuracy, 0.1).unwrap();
                    let cv_val = acc(&ensemble::weighted_fuse(&[&lv, &fv], &cv.weights).unwrap(), &vtruth);
                    let avg_val = acc(&ensemble::average_fuse(&[&lv, &fv]).unwrap(), &vtruth);
                    (aa >= la.max(fa), cv_val >= avg_val, format!("{la:.3}/{fa:.3}/{aa:.3}"))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let wins = results.iter().filter(|r| r.0).count();
    let cv_ok = results.iter().filter(|r| r.1).count();
    let per_seed: Vec<&str> = results.iter().map(|r| r.2.as_str()).collect();
    outcome(
        wins >= 8 && cv_ok == 10,
        format!(
            "average >= best single on {wins}/10 seeds (>= 8); CV >= average on validation {cv_ok}/10; lstm/fusion/avg test accuracy: {}",
            per_seed.join(" ")
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn id_refs(ids: &[String]) -> Vec<&str> {
    ids.iter().map(String::as_str).collect()
}

fn c7_metrics() -> Outcome {
    let ids3: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let example = metrics::average_precision(&[0.9, 0.8, 0.7], &[true, false, true], &id_refs(&ids3)).unwrap().unwrap();
    let example_ok = (example - 0.83333).abs() <= 1e-5 && (example - 5.0 / 6.0).abs() <= 1e-9;

    let mut rng = RngSource::new(707);
    let mut mismatches = 0;
    for _ in 0..50 {
        let n = rng.int_inclusive(1, 30);
        // coarse scores force ties, so the id tie-break is exercised
        let scores: Vec<f64> = (0..n).map(|_| rng.below(6) as f64 / 5.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.below(2) == 1).collect();
        labels[rng.below(n)] = true;
        let mut ids: Vec<String> = (0..n).map(|i| format!("vid{:03}", i * 7 % 101)).collect();
        rng.shuffle(&mut ids);
        let got = metrics::average_precision(&scores, &labels, &id_refs(&ids)).unwrap();
        if got != ap_oracle(&scores, &labels, &ids) {
            mismatches += 1;
        }
    }

    // strictly monotone maps applied to a fixed random table
    let classes = 4;
    let n = 60;
    let names: Vec<String> = (0..classes).map(|c| format!("c{c}")).collect();
    let ids: Vec<String> = (0..n).map(|i| format!("v{i:03}")).collect();
    let rows: Vec<(String, Vec<f64>)> = ids
        .iter()
        .map(|id| (id.clone(), (0..classes).map(|_| rng.below(1025) as f64 / 1024.0).collect()))
        .collect();
    let truth = GroundTruth::from_classes(ids.iter().map(|id| (id.as_str(), rng.below(classes))), classes);
    let table = ScoreTable::new("m", names.clone(), rows.clone()).unwrap();
    let acc0 = metrics::accuracy(&table, &truth).unwrap();
    let ap0 = metrics::per_class_ap(&table, &truth).unwrap();
    let mut variant_failures = 0;
    for k in 0..20 {
        let a = rng.uniform(0.5, 3.0);
        let b = rng.uniform(-2.0, 2.0);
        let map = move |x: f64| -> f64 {
            match k % 4 {
                0 => a * x + b,
                1 => (a * x).exp(),
                2 => x.powi(3) * a + x + b,
                _ => 1.0 / (1.0 + (-(a * x + b)).exp()),
            }
        };
        let moved: Vec<(String, Vec<f64>)> = rows.iter().map(|(id, r)| (id.clone(), r.iter().map(|&x| map(x)).collect())).collect();
        let t = ScoreTable::new("m", names.clone(), moved).unwrap();
        if metrics::accuracy(&t, &truth).unwrap() != acc0 || metrics::per_class_ap(&t, &truth).unwrap() != ap0 {
            variant_failures += 1;
        }
    }
    outcome(
        example_ok && mismatches == 0 && variant_failures == 0,
        format!(
            "example AP {example:.9}; 50 random rankings, {mismatches} mismatches vs oracle; 20 monotone transforms, {variant_failures} changed accuracy/AP"
        ),
    )
}

// ---------------------------------------------------------------- criterion 8

fn run_cli(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_hybridnet")).args(args).output().expect("binary runs");
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn files_equal(a: &Path, b: &Path) -> bool {
    matches!((std::fs::read(a), std::fs::read(b)), (Ok(x), Ok(y)) if x == y)
}

fn c8_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    run_cli(&["synth", "--out", &s(&data), "--mode", "mixed", "--seed", "8", "--train-per-class", "20", "--val-per-class", "10", "--test-per-class", "10"]);
    let config = root.join("run.toml");
    std::fs::write(
        &config,
        "manifest = \"data/manifest.toml\"\nseed = 8\n\n[lstm]\nhidden = [6, 4]\nlearning_rate = 0.05\nepochs = 3\n\n[fusion]\nspatial_width = 8\nmotion_width = 8\nfusion_width = 6\nepochs = 10\nlambda2 = 0.001\n",
    )
    .unwrap();
    let mut compared = 0;
    let mut differing = Vec::new();
    for (model, ckpt) in [("lstm-spatial", "model.hslm"), ("lstm-motion", "model.hslm"), ("fusion", "model.hsfn")] {
        let first = root.join(format!("{model}-a"));
        let second = root.join(format!("{model}-b"));
        run_cli(&["train", model, "--config", &s(&config), "--out", &s(&first)]);
        run_cli(&["train", model, "--config", &s(&first.join("resolved_config.toml")), "--out", &s(&second)]);
        for file in [ckpt, "scores_val.tsv", "scores_test.tsv", "train.log"] {
            compared += 1;
            if !files_equal(&first.join(file), &second.join(file)) {
                differing.push(format!("{model}/{file}"));
            }
        }
    }
    outcome(
        differing.is_empty(),
        format!("3 training commands rerun from resolved configs: {compared} files compared, differing: {differing:?}"),
    )
}

// ---------------------------------------------------------------- criterion 9

fn min_prox_time(p: usize, d: usize, reps: usize, rng: &mut RngSource) -> Duration {
    let v = Matrix::random_uniform(p, d, 1.0, rng);
    let mut best = Duration::MAX;
    for _ in 0..reps {
        let mut w = v.clone();
        let start = Instant::now();
        fusion::prox_l21_l11_in_place(&mut w, 0.3, 0.01);
        best = best.min(start.elapsed());
        std::hint::black_box(&w);
    }
    best
}

fn c9_prox_scaling() -> Outcome {
    let mut rng = RngSource::new(909);
    // warm up, then interleave rounds and keep each size's fastest run
    min_prox_time(128, 256, 20, &mut rng);
    let (mut small, mut large) = (Duration::MAX, Duration::MAX);
    for _ in 0..5 {
        small = small.min(min_prox_time(64, 128, 200, &mut rng));
        large = large.min(min_prox_time(128, 256, 50, &mut rng));
    }
    let ratio = large.as_secs_f64() / small.as_secs_f64();
    outcome(
        (2.0..=12.0).contains(&ratio),
        format!("prox time (64,128) {small:?}, (128,256) {large:?}, ratio {ratio:.2} (in [2, 12])"),
    )
}

// ---------------------------------------------------------------------- main

fn main() {
    let start = Instant::now();
    type Criterion = (u32, &'static str, fn() -> Outcome);
    let parallel: [Criterion; 8] = [
        (1, "LSTM gradient fidelity", c1_lstm_gradients),
        (2, "fusion smooth-gradient fidelity", c2_fusion_gradients),
        (3, "proximal operator", c3_prox),
        (4, "temporal complementarity", c4_temporal),
        (5, "regularization benefit", c5_regularization),
        (6, "hybrid gain", c6_hybrid),
        (7, "metric oracles", c7_metrics),
        (8, "determinism", c8_determinism),
    ];
    let mut results: Vec<(u32, &str, Outcome)> = thread::scope(|s| {
        let handles: Vec<_> = parallel.iter().map(|&(n, name, f)| (n, name, s.spawn(f))).collect();
        handles
            .into_iter()
            .map(|(n, name, h)| {
                let o = h.join().unwrap_or_else(|e| {
                    let msg = e
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_default();
                    outcome(false, format!("panicked: {msg}"))
                });
                (n, name, o)
            })
            .collect()
    });
    // timing runs alone, after the heavy criteria have finished
    results.push((9, "prox scaling", c9_prox_scaling()));

    println!();
    let mut failed = 0;
    for (n, name, o) in &results {
        println!("{} criterion {n} ({name}): {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        failed += (!o.passed) as usize;
    }
    println!("acceptance: {} passed, {failed} failed in {:.1}s", results.len() - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
