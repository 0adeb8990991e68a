//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! each, and exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use calad::bench::{run_bench, BenchResult};
use calad::checkpoint::Checkpoint;
use calad::config::{DataConfig, RunConfig, SyntheticData};
use calad::dataio::{generate_synthetic, make_windows, normalize, Matrix, SyntheticSpec};
use calad::detection::{self, compute_metrics, Metrics};
use calad::model::{contrastive_loss_var, reconstruction_loss_var, CaladConfig, CaladNetwork};
use calad::neighbor::{triplet_loss_var, EncoderConfig, TripletEncoder};
use calad::pipeline::{self, EntityPaths};
use calad::relevance::{lasso_fit, soft_threshold, AutoencoderConfig, AutoencoderModel, ChannelRelevance, RegressionProblem};
use calad::spectral::{build_triplets, fft_forward, fft_inverse, perturb_channel, AugmentConfig};
use calad::tensor::gradcheck::{check_inputs, check_parameters, worst, GradCheck};
use calad::tensor::{
    FeedForward, LayerNorm, Linear, MultiHeadAttention, ParamStore, Prng, ResidualConvBlock, Tape, Tensor,
    TransformerBlock, TransformerEncoder,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_tensor(rng: &mut StdRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Scalar probe loss with a fixed random projection, so every output
/// entry contributes a distinct gradient.
fn probe(tape: &mut Tape, y: calad::tensor::Var, seed: u64) -> calad::Result<calad::tensor::Var> {
    let shape = tape.shape(y).to_vec();
    let mut rng = StdRng::seed_from_u64(seed);
    let w = tape.constant(&shape, (0..shape.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let prod = tape.mul(y, w)?;
    Ok(tape.sum(prod))
}

// ---------------------------------------------------------------------------
// 1. Gradient oracle

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let step = 1e-5;
    let mut rng = StdRng::seed_from_u64(11);
    let mut checks: Vec<(String, Vec<GradCheck>)> = Vec::new();
    let x3 = random_tensor(&mut rng, &[2, 5, 8]);

    macro_rules! layer {
        ($name:expr, $store:expr, $input:expr, |$tape:ident, $p:ident, $x:ident| $body:expr) => {{
            let input = $input.clone();
            let report = check_parameters(&$store, step, |$tape, $p| {
                let $x = $tape.leaf(&input);
                let y = $body?;
                probe($tape, y, 99)
            })
            .map_err(|e| e.to_string())?;
            checks.push((format!("{} params", $name), report));
            let report = check_inputs(&[$input.clone()], step, |$tape, v| {
                let $p = &$store.bind($tape, false);
                let $x = v[0];
                let y = $body?;
                probe($tape, y, 99)
            })
            .map_err(|e| e.to_string())?;
            checks.push((format!("{} input", $name), report));
        }};
    }

    let mut s = ParamStore::new(1);
    let lin = Linear::new(&mut s, "lin", 8, 6);
    layer!("linear", s, x3, |tape, p, x| lin.forward(tape, p, x));

    let mut s = ParamStore::new(2);
    let ln = LayerNorm::new(&mut s, "ln", 8);
    for t in s.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    layer!("layer norm", s, x3, |tape, p, x| ln.forward(tape, p, x));

    let mut s = ParamStore::new(3);
    let mha = MultiHeadAttention::new(&mut s, "mha", 8, 2).unwrap();
    layer!("attention", s, x3, |tape, p, x| mha.forward(tape, p, x));

    let mut s = ParamStore::new(4);
    let ff = FeedForward::new(&mut s, "ff", 8, 12);
    layer!("feed-forward", s, x3, |tape, p, x| ff.forward(tape, p, x));

    let mut s = ParamStore::new(5);
    let block = TransformerBlock::new(&mut s, "blk", 8, 2, 12).unwrap();
    layer!("transformer block", s, x3, |tape, p, x| block.forward(tape, p, x));

    let x_in = random_tensor(&mut rng, &[2, 5, 3]);
    let mut s = ParamStore::new(6);
    let enc = TransformerEncoder::new(&mut s, "enc", 3, 8, 2, 2, 12).unwrap();
    layer!("transformer encoder", s, x_in, |tape, p, x| enc.forward(tape, p, x));

    let mut s = ParamStore::new(7);
    let conv = ResidualConvBlock::new(&mut s, "conv", 3, 4);
    for t in s.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    layer!("residual conv", s, x_in, |tape, p, x| conv.forward(tape, p, x));

    let ae = AutoencoderModel::new(
        3,
        5,
        &AutoencoderConfig {
            d_model: 8,
            layers: 1,
            heads: 2,
            ff_width: 12,
            ..AutoencoderConfig::default()
        },
        8,
    )
    .unwrap();
    let report = check_parameters(&ae.params, step, |tape, p| {
        let x = tape.leaf(&x_in);
        let y = ae.forward(tape, p, x)?;
        let t = tape.leaf(&x_in);
        let d = tape.sub(y, t)?;
        let sq = tape.mul(d, d)?;
        Ok(tape.mean(sq))
    })
    .map_err(|e| e.to_string())?;
    checks.push(("autoencoder mse".into(), report));

    let te = TripletEncoder::new(
        3,
        &EncoderConfig {
            widths: vec![4, 6],
            embed_dim: 5,
            ..EncoderConfig::default()
        },
        9,
    )
    .unwrap();
    let xs = [random_tensor(&mut rng, &[2, 5, 3]), random_tensor(&mut rng, &[2, 5, 3]), random_tensor(&mut rng, &[2, 5, 3])];
    let report = check_parameters(&te.params, step, |tape, p| {
        let (a, b, c) = (tape.leaf(&xs[0]), tape.leaf(&xs[1]), tape.leaf(&xs[2]));
        let za = te.forward(tape, p, a)?;
        let zp = te.forward(tape, p, b)?;
        let zn = te.forward(tape, p, c)?;
        // A small margin keeps every hinge strictly active or inactive.
        triplet_loss_var(tape, za, zp, zn, 0.05)
    })
    .map_err(|e| e.to_string())?;
    checks.push(("triplet encoder + triplet loss".into(), report));

    let logits = [random_tensor(&mut rng, &[2, 10]), random_tensor(&mut rng, &[2, 10]), random_tensor(&mut rng, &[2, 10])];
    for literal in [false, true] {
        let report = check_inputs(&logits, step, |tape, v| contrastive_loss_var(tape, v[0], v[1], v[2], literal))
            .map_err(|e| e.to_string())?;
        checks.push((format!("contrastive loss (literal={literal})"), report));
    }
    let rec_in = [random_tensor(&mut rng, &[2, 15]), random_tensor(&mut rng, &[2, 15])];
    let report = check_inputs(&rec_in, step, |tape, v| reconstruction_loss_var(tape, v[0], v[1])).map_err(|e| e.to_string())?;
    checks.push(("reconstruction loss".into(), report));

    let cfg = CaladConfig {
        d_model: 8,
        layers: 1,
        heads: 2,
        ff_width: 12,
        hidden: 16,
        ..CaladConfig::default()
    };
    let net = CaladNetwork::new(3, 5, &cfg, 10).unwrap();
    let windows: Vec<Vec<f64>> = (0..3).map(|_| random_tensor(&mut rng, &[2, 5, 3]).into_data()).collect();
    for literal in [false, true] {
        let report = check_parameters(&net.params, step, |tape, p| {
            Ok(net.batch_loss(tape, p, &windows[0], &windows[1], &windows[2], literal)?.total)
        })
        .map_err(|e| e.to_string())?;
        checks.push((format!("full joint loss, 2-window batch (literal={literal})"), report));
    }

    let elapsed = start.elapsed();
    let (name, err) = checks
        .iter()
        .map(|(n, r)| (n.clone(), worst(r)))
        .fold((String::new(), 0.0), |acc, (n, e)| if e > acc.1 { (n, e) } else { acc });
    let scalars: usize = checks.iter().flat_map(|(_, r)| r.iter().map(|c| c.entries)).sum();
    let vanishing: Vec<&GradCheck> = checks.iter().flat_map(|(_, r)| r.iter().filter(|c| c.vanishing)).collect();
    let failing: Vec<String> = checks
        .iter()
        .flat_map(|(n, r)| r.iter().filter(|c| !c.passes(1e-5)).map(move |c| format!("{n}/{}", c.name)))
        .collect();
    ensure(
        failing.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "{} checks over {scalars} scalars, worst relative error {err:.2e} ({name}); \
             {} identically-zero gradient tensors agree to {:.1e} absolute; failing {failing:?}; {:.1}s",
            checks.len(),
            vanishing.len(),
            vanishing.iter().fold(0.0f64, |m, c| m.max(c.max_abs_error)),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. LASSO oracle

/// Independent standardisation: population std, constant columns to zero.
fn standardize(x: &Matrix) -> Vec<Vec<f64>> {
    let n = x.rows as f64;
    (0..x.cols)
        .map(|c| {
            let col = x.column(c);
            let m = col.iter().sum::<f64>() / n;
            let s = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            col.iter().map(|v| if s < 1e-12 { 0.0 } else { (v - m) / s }).collect()
        })
        .collect()
}

fn centered(y: &[f64]) -> Vec<f64> {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    y.iter().map(|v| v - m).collect()
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

fn criterion_lasso() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(21);

    // (a) orthonormal designs: Walsh columns of length 16 are orthogonal,
    // zero-mean and unit population std, so each coefficient decouples.
    let n = 16;
    let walsh: Vec<Vec<f64>> = (1..6)
        .map(|k: u32| (0..n).map(|t: u32| if (t & k).count_ones().is_multiple_of(2) { 1.0 } else { -1.0 }).collect())
        .collect();
    let mut worst_a: f64 = 0.0;
    for trial in 0..40 {
        let cols = if trial % 2 == 0 { 1 } else { walsh.len() };
        let lambda = [0.0, 0.001, 0.1, 0.5][trial % 4];
        let truth: Vec<f64> = (0..cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..n as usize).map(|t| 3.0 + (0..cols).map(|c| truth[c] * walsh[c][t]).sum::<f64>()).collect();
        let x = Matrix::new(n as usize, cols, (0..n as usize).flat_map(|t| (0..cols).map(move |c| (t, c))).map(|(t, c)| walsh[c][t]).collect()).unwrap();
        let fit = lasso_fit(&RegressionProblem::new(&x, &y).unwrap(), lambda).unwrap();
        for c in 0..cols {
            let z: f64 = walsh[c].iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / n as f64;
            let expect = if z > lambda { z - lambda } else if z < -lambda { z + lambda } else { 0.0 };
            worst_a = worst_a.max((fit.beta[c] - expect).abs());
        }
    }
    let soft = soft_threshold(1.0, 0.001);

    // (b) KKT on random problems.
    let mut worst_kkt: f64 = 0.0;
    let mut kkt_fail = 0;
    for _ in 0..50 {
        let n = rng.gen_range(20..=200);
        let c = rng.gen_range(2..=20);
        let x = Matrix::new(n, c, (0..n * c).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap();
        let y: Vec<f64> = (0..n)
            .map(|t| x.get(t, 0) * 1.5 - x.get(t, 1) + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let lambda = 10f64.powf(rng.gen_range(-3.0..-0.3));
        let fit = lasso_fit(&RegressionProblem::new(&x, &y).unwrap(), lambda).unwrap();
        let xs = standardize(&x);
        let mut r = centered(&y);
        for (col, b) in xs.iter().zip(&fit.beta) {
            for (ri, xi) in r.iter_mut().zip(col) {
                *ri -= b * xi;
            }
        }
        for (col, &b) in xs.iter().zip(&fit.beta) {
            let g = col.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / n as f64;
            let violation = if b == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                if g.signum() != b.signum() {
                    kkt_fail += 1;
                }
                (g.abs() - lambda).abs()
            };
            worst_kkt = worst_kkt.max(violation);
        }
    }

    // (c) λ = 0 against the normal equations.
    let mut worst_ols: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.gen_range(30..=200);
        let c = rng.gen_range(1..=8);
        let x = Matrix::new(n, c, (0..n * c).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap();
        let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let fit = lasso_fit(&RegressionProblem::new(&x, &y).unwrap(), 0.0).unwrap();
        let xs = standardize(&x);
        let yc = centered(&y);
        let gram: Vec<Vec<f64>> = xs.iter().map(|a| xs.iter().map(|b| a.iter().zip(b).map(|(u, v)| u * v).sum()).collect()).collect();
        let rhs: Vec<f64> = xs.iter().map(|a| a.iter().zip(&yc).map(|(u, v)| u * v).sum()).collect();
        let ols = solve(gram, rhs);
        for (b, o) in fit.beta.iter().zip(&ols) {
            worst_ols = worst_ols.max((b - o).abs());
        }
    }
    let elapsed = start.elapsed();
    ensure(
        worst_a < 1e-6
            && (soft - 0.999).abs() < 1e-12
            && worst_kkt < 1e-6
            && kkt_fail == 0
            && worst_ols < 1e-6
            && elapsed < Duration::from_secs(30),
        format!(
            "orthonormal max err {worst_a:.1e}, KKT worst {worst_kkt:.1e} ({kkt_fail} sign errors) on 50 problems, \
             OLS max err {worst_ols:.1e}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. FFT / augmentation

fn criterion_fft() -> Outcome {
    let mut rng = StdRng::seed_from_u64(31);
    let mut round_trip: f64 = 0.0;
    for _ in 0..100 {
        let x: Vec<f64> = (0..200).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let back = fft_inverse(&fft_forward(&x).unwrap()).unwrap();
        round_trip = x.iter().zip(&back).fold(round_trip, |m, (a, b)| m.max((a - b).abs()));
    }

    let zero = AugmentConfig {
        amp_sigma: 0.0,
        phase_max: 0.0,
        ..AugmentConfig::default()
    };
    let mut identity: f64 = 0.0;
    for s in 0..100 {
        let x: Vec<f64> = (0..200).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let y = perturb_channel(&x, &zero, &mut Prng::new(s)).unwrap();
        identity = x.iter().zip(&y).fold(identity, |m, (a, b)| m.max((a - b).abs()));
    }

    // Full-set scan on two datasets: the default bench layout and a wide
    // 55-channel set with 9 relevant channels.
    let mut scanned = 0usize;
    let mut violations = 0usize;
    for (channels, relevant) in [(6usize, vec![0usize, 1]), (55, vec![2, 7, 11, 19, 23, 30, 38, 44, 51])] {
        let set = generate_synthetic(&SyntheticSpec::bench(5, 600, 400, channels, relevant.clone())).unwrap();
        let (norm, _) = normalize(&set).unwrap();
        let windows = make_windows(&norm.train, None, 64, 5).unwrap();
        let labels: Vec<u8> = (0..channels).map(|c| u8::from(relevant.contains(&c))).collect();
        let rel = ChannelRelevance::from_labels(labels.clone());
        let mut cfg = AugmentConfig::default();
        cfg.seed = 77;
        let t = build_triplets(&windows, &rel, &cfg).unwrap();
        let w = 64 * channels;
        for i in 0..t.len() {
            for step in 0..64 {
                for c in 0..channels {
                    let k = i * w + step * channels + c;
                    let kept = if labels[c] == 1 { &t.positives } else { &t.negatives };
                    if kept[k].to_bits() != t.anchors[k].to_bits() {
                        violations += 1;
                    }
                    scanned += 1;
                }
            }
        }
    }
    ensure(
        round_trip < 1e-9 && identity < 1e-9 && violations == 0,
        format!(
            "round trip max err {round_trip:.1e}, zero-strength max err {identity:.1e}, \
             {violations} non-bit-exact of {scanned} untouched entries"
        ),
    )
}

// ---------------------------------------------------------------------------
// 4-6. Synthetic bench

fn criterion_relevance(bench: &BenchResult, relevance_time: Duration) -> Outcome {
    let s = &bench.summary;
    let found: Vec<String> = bench
        .per_seed
        .iter()
        .map(|r| r.relevance.as_ref().map_or("failed".into(), |x| format!("{:?}", x.found)))
        .collect();
    ensure(
        s.relevance_f1.mean >= 0.8 && relevance_time < Duration::from_secs(300) && !bench.per_seed.iter().any(|r| r.relevance.is_none()),
        format!(
            "mean set-F1 {:.3} ± {:.3} (precision {:.3}, recall {:.3}), found {}, {:.0}s",
            s.relevance_f1.mean,
            s.relevance_f1.std,
            s.relevance_precision.mean,
            s.relevance_recall.mean,
            found.join(" "),
            relevance_time.as_secs_f64()
        ),
    )
}

fn criterion_detection(bench: &BenchResult, total: Duration) -> Outcome {
    let s = &bench.summary;
    let cw = &s.channel_wise;
    let margin = cw.f1.mean - s.random.f1.mean;
    ensure(
        !bench.partial && margin >= 0.20 && cw.au_pr.mean > s.prevalence.mean && total < Duration::from_secs(900),
        format!(
            "CALAD F1 {:.3} vs Random F1 {:.3} (margin {margin:+.3}, need +0.200); \
             CALAD AU-PR {:.3} vs prevalence {:.3}; bench {:.0}s",
            cw.f1.mean,
            s.random.f1.mean,
            cw.au_pr.mean,
            s.prevalence.mean,
            total.as_secs_f64()
        ),
    )
}

fn criterion_ablation(bench: &BenchResult) -> Outcome {
    let s = &bench.summary;
    let diff = s.channel_wise.f1.mean - s.all_channel.f1.mean;
    let direction = if diff >= 0.0 { "channel-wise ahead" } else { "all-channel ahead" };
    let paired: Vec<String> = bench
        .per_seed
        .iter()
        .map(|r| match (r.channel_wise.metrics(), r.all_channel.metrics()) {
            (Some(a), Some(b)) => format!("{:+.3}", a.f1 - b.f1),
            _ => "failed".into(),
        })
        .collect();
    ensure(
        !bench.partial && diff >= -0.05,
        format!(
            "channel-wise F1 {:.3} vs all-channel {:.3} ({direction} by {:.3}); per-seed {}",
            s.channel_wise.f1.mean,
            s.all_channel.f1.mean,
            diff.abs(),
            paired.join(" ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. Metrics

fn oracle_metrics(truth: &[u8], pred: &[u8], scores: &[f64]) -> Metrics {
    let count = |t: u8, p: u8| truth.iter().zip(pred).filter(|(&a, &b)| a == t && b == p).count();
    let (tp, fp, fn_) = (count(1, 1), count(0, 1), count(1, 0));
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    let positives = truth.iter().filter(|&&t| t == 1).count();
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut au_pr, mut prev) = (0.0, 0.0);
    for th in thresholds {
        let tp = truth.iter().zip(scores).filter(|(&t, &s)| t == 1 && s >= th).count();
        let flagged = scores.iter().filter(|&&s| s >= th).count();
        let r = tp as f64 / positives as f64;
        au_pr += (r - prev) * (tp as f64 / flagged as f64);
        prev = r;
    }
    Metrics { precision, recall, f1, au_pr }
}

fn criterion_metrics() -> Outcome {
    let mut rng = StdRng::seed_from_u64(71);
    let mut mismatches = 0;
    for trial in 0..100 {
        let n = rng.gen_range(2..=1000);
        let pi: f64 = rng.gen_range(0.02..0.6);
        let mut truth: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(pi))).collect();
        truth[0] = 1;
        let pred: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.4))).collect();
        let levels = if trial % 3 == 0 { 7.0 } else { 1e6 };
        let scores: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() * levels).floor() / levels).collect();
        if compute_metrics(&truth, &pred, &scores).unwrap() != oracle_metrics(&truth, &pred, &scores) {
            mismatches += 1;
        }
    }
    let truth = [0u8, 1, 1, 0, 0, 1, 0, 0, 0, 0];
    let perfect: Vec<f64> = truth.iter().map(|&t| f64::from(t) * 0.8 + 0.1).collect();
    let m = compute_metrics(&truth, &truth, &perfect).unwrap();
    let constant = compute_metrics(&truth, &[0; 10], &[0.3; 10]).unwrap();
    ensure(
        mismatches == 0 && m.f1 == 1.0 && m.au_pr == 1.0 && (constant.au_pr - 0.3).abs() < 1e-12,
        format!(
            "{mismatches}/100 oracle mismatches; perfect F1 {} AU-PR {}; constant-score AU-PR {} at prevalence 0.3",
            m.f1, m.au_pr, constant.au_pr
        ),
    )
}

// ---------------------------------------------------------------------------
// 8-9. Persistence and scoring on a small end-to-end run

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.seed = 3;
    cfg.data = DataConfig::Synthetic(SyntheticData {
        t_train: 800,
        t_test: 800,
        ..SyntheticData::default()
    });
    cfg.autoencoder.epochs = 2;
    cfg.encoder.widths = vec![8, 16];
    cfg.encoder.embed_dim = 16;
    cfg.encoder.epochs = 2;
    cfg.model.epochs = 3;
    cfg
}

fn criterion_persistence() -> Outcome {
    let cfg = small_config();
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    for dir in [a.path(), b.path()] {
        pipeline::cmd_run_all(&cfg, dir).map_err(|e| e.to_string())?;
    }
    let id = &pipeline::entity_ids(&cfg)[0];
    let (pa, pb) = (EntityPaths::new(a.path(), id), EntityPaths::new(b.path(), id));
    let report_a = std::fs::read(pa.report()).map_err(|e| e.to_string())?;
    let identical = report_a == std::fs::read(pb.report()).map_err(|e| e.to_string())?;

    let raw = pipeline::source_sets(&cfg).map_err(|e| e.to_string())?.remove(0);
    let run = pipeline::run_entity(&cfg, &raw).map_err(|e| e.to_string())?;
    let mut tensors = 0;
    let mut bad = 0;
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    for (path, params) in [
        (pa.autoencoder(), Some(&run.relevance.autoencoder.params)),
        (pa.encoder(), Some(&run.encoder.params)),
        (pa.model(), Some(&run.network.params)),
        (pa.triplets(), None),
    ] {
        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        let ck = Checkpoint::from_bytes(&bytes).map_err(|e| e.to_string())?;
        if ck.to_bytes().map_err(|e| e.to_string())? != bytes {
            bad += 1;
        }
        if let Some(params) = params {
            for (name, t) in params.names().iter().zip(params.tensors()) {
                tensors += 1;
                match ck.get(name) {
                    Ok(saved) if bits(saved) == bits(t) && saved.shape() == t.shape() => {}
                    _ => bad += 1,
                }
            }
        }
    }
    ensure(
        identical && bad == 0,
        format!(
            "report.json identical across runs: {identical} ({} bytes); {tensors} parameter tensors reloaded, {bad} mismatches",
            report_a.len()
        ),
    )
}

fn criterion_scoring() -> Outcome {
    let cfg = small_config();
    let raw = pipeline::source_sets(&cfg).map_err(|e| e.to_string())?.remove(0);
    let run = pipeline::run_entity(&cfg, &raw).map_err(|e| e.to_string())?;
    let data = pipeline::prepare(&cfg, &raw).map_err(|e| e.to_string())?;
    let report = &run.report;
    let normal = report.profile.normal_class;
    let k = run.network.classes;
    let in_range = report.windows.iter().all(|w| (0.0..=1.0).contains(&w.score));

    let logits = run.network.logits(&data.test_windows.windows).map_err(|e| e.to_string())?;
    let mut label_errors = 0;
    for (w, z) in report.windows.iter().zip(logits.chunks(k)) {
        if (w.pred == 0) != (detection::argmax(z) == normal) {
            label_errors += 1;
        }
    }
    let mut rng = StdRng::seed_from_u64(91);
    let n = report.windows.len();
    let sample: Vec<usize> = rand::seq::index::sample(&mut rng, n, 100.min(n)).into_vec();
    let mut worst: f64 = 0.0;
    for &i in &sample {
        let z = &logits[i * k..(i + 1) * k];
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let p_normal = e[normal] / e.iter().sum::<f64>();
        worst = worst.max((report.windows[i].score - (1.0 - p_normal)).abs());
    }
    ensure(
        in_range && label_errors == 0 && worst < 1e-12 && sample.len() == 100,
        format!(
            "{n} windows in [0,1]: {in_range}; {label_errors} label/argmax disagreements; \
             max |score − (1 − p_normal)| {worst:.1e} over {} sampled windows",
            sample.len()
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let tag = if outcome.is_ok() { "PASS" } else { "FAIL" };
        let detail = match &outcome {
            Ok(d) | Err(d) => d.clone(),
        };
        println!("[{tag}] criterion {id} ({name}): {detail}");
        results.push((id, name, outcome));
    };

    run(1, "gradient oracle", &mut criterion_gradients);
    run(2, "lasso oracle", &mut criterion_lasso);
    run(3, "fft and augmentation", &mut criterion_fft);

    let start = Instant::now();
    let bench = run_bench(&[0, 1, 2, 3, 4], &RunConfig::desk());
    let total = start.elapsed();
    match &bench {
        Ok(bench) => {
            let relevance_time: Duration = bench.timings.iter().map(|t| t.relevance).sum();
            print!("{}", calad::bench::render_table(bench));
            run(4, "relevance recovery", &mut || criterion_relevance(bench, relevance_time));
            run(5, "end-to-end detection", &mut || criterion_detection(bench, total));
            run(6, "ablation direction", &mut || criterion_ablation(bench));
        }
        Err(e) => {
            for (id, name) in [(4, "relevance recovery"), (5, "end-to-end detection"), (6, "ablation direction")] {
                let msg = format!("bench failed: {e}");
                run(id, name, &mut || Err(msg.clone()));
            }
        }
    }

    run(7, "metrics correctness", &mut criterion_metrics);
    run(8, "determinism and persistence", &mut criterion_persistence);
    run(9, "scoring identities", &mut criterion_scoring);

    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!("; failed {failed:?}") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
