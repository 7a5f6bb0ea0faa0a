//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test --release --test acceptance` runs everything; extra arguments
//! such as `A4 A6` select criteria.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use mar_rppg::data::chunk::{decode_chunk, encode_chunk};
use mar_rppg::data::synth::{plan_dataset, render_planned, synth_clip, SynthConfig};
use mar_rppg::data::{Split, VideoChunk};
use mar_rppg::eval::{evaluate_green_mean, evaluate_model, Clip};
use mar_rppg::metrics::{bland_altman, mae, mape, pearson_r, rmse};
use mar_rppg::model::{flip_align_tensor, ModelConfig};
use mar_rppg::numerics::rng::rng_from_seed;
use mar_rppg::numerics::{Graph, Rng, Tensor};
use mar_rppg::signal::{estimate_hr_fft, hrv_lf_hf, respiratory_frequency, Band, IbiSeries, SignalConfig};
use mar_rppg::training::losses::graph as gloss;
use mar_rppg::training::{
    attention_consistency_loss, l1_loss, neg_pearson_loss, regression_loss, total_loss, train, train_with, TrainConfig,
};
use mar_rppg::verify::{registry, run_checks, POINTS, TOLERANCE};
use mar_rppg::Error;
use rand::Rng as _;

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(
        elapsed <= Duration::from_secs(limit_s),
        format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64()),
    )
}

fn random_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn a1_gradcheck() -> Outcome {
    let t0 = Instant::now();
    let results = run_checks(&registry(), POINTS, 0);
    let elapsed = t0.elapsed();
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} ({:.2e})", r.name, r.max_rel_error))
        .collect();
    ensure(failed.is_empty(), format!("failing ops: {}", failed.join(", ")))?;
    within(elapsed, 60)?;
    Ok(format!(
        "{} ops x {POINTS} points, worst relative error {worst:.2e} < {TOLERANCE:e}, {:.1} s",
        results.len(),
        elapsed.as_secs_f64()
    ))
}

fn a2_loss_identities() -> Outcome {
    let mut rng = rng_from_seed(2);
    let mut worst_affine = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(8..128);
        let z = random_vec(&mut rng, n);
        let y = random_vec(&mut rng, n);
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        let same = neg_pearson_loss(&z, &z).map_err(|e| e.to_string())?;
        let opposite = neg_pearson_loss(&neg, &z).map_err(|e| e.to_string())?;
        ensure(same.abs() <= 1e-9, format!("loss(z, z) = {same}"))?;
        ensure((opposite - 2.0).abs() <= 1e-9, format!("loss(-z, z) = {opposite}"))?;

        let a = rng.random_range(0.01..100.0);
        let b = rng.random_range(-100.0..100.0);
        let mapped: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let base = neg_pearson_loss(&y, &z).map_err(|e| e.to_string())?;
        let moved = neg_pearson_loss(&mapped, &z).map_err(|e| e.to_string())?;
        worst_affine = worst_affine.max((base - moved).abs());

        let l1 = l1_loss(&y, &z).map_err(|e| e.to_string())?;
        ensure(regression_loss(&y, &z, 0.0).unwrap() == l1, "regression_loss at alpha=0 differs from l1")?;
        ensure(regression_loss(&y, &z, 1.0).unwrap() == base, "regression_loss at alpha=1 differs from neg_pearson")?;

        let (r1, r2, ac) = (rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
        ensure(total_loss(r1, r2, ac, 0.0) == (r1 + r2) / 2.0, "total_loss at beta=0 keeps the attention term")?;

        // the differentiable builders obey the same endpoints
        let mut g = Graph::new();
        let (yv, zv) = (g.constant(Tensor::from_vec(y.clone())), g.constant(Tensor::from_vec(z.clone())));
        let gl1 = gloss::l1(&mut g, yv, zv).unwrap();
        let gnp = gloss::neg_pearson(&mut g, yv, zv).unwrap();
        let reg0 = gloss::regression(&mut g, yv, zv, 0.0).unwrap();
        let reg1 = gloss::regression(&mut g, yv, zv, 1.0).unwrap();
        ensure(g.value(reg0).item() == g.value(gl1).item(), "graph regression at alpha=0")?;
        ensure(g.value(reg1).item() == g.value(gnp).item(), "graph regression at alpha=1")?;
        let acv = g.constant(Tensor::scalar(ac));
        let tot = gloss::total(&mut g, reg0, reg1, acv, 0.0).unwrap();
        let expect = (g.value(reg0).item() + g.value(reg1).item()) / 2.0;
        ensure(g.value(tot).item() == expect, "graph total at beta=0")?;
    }
    ensure(worst_affine <= 1e-9, format!("affine invariance off by {worst_affine:e}"))?;
    Ok(format!(
        "100 random pairs: 0 on y=z, 2 on y=-z, affine drift {worst_affine:.1e}, endpoints exact"
    ))
}

fn a3_attention_alignment() -> Outcome {
    let t0 = Instant::now();
    let mut rng = rng_from_seed(3);
    for _ in 0..20 {
        let m = Tensor::new(&[6, 4, 3, 3], random_vec(&mut rng, 6 * 4 * 9)).unwrap();
        let pre = flip_align_tensor(&m).unwrap();
        ensure(flip_align_tensor(&pre).unwrap() == m, "flip_align is not an involution")?;
        let ac = attention_consistency_loss(&m, &pre).unwrap();
        ensure(ac == 0.0, format!("loss on the preimage is {ac:e}"))?;
        let other = Tensor::new(&[6, 4, 3, 3], random_vec(&mut rng, 6 * 4 * 9)).unwrap();
        ensure(attention_consistency_loss(&m, &other).unwrap() > 0.0, "loss on unrelated maps is 0")?;
    }

    let synth = SynthConfig {
        frames: 32,
        height: 16,
        width: 16,
        motion_max_px: 1.0,
        seed: 3,
        ..SynthConfig::default()
    };
    let mut chunks = Vec::new();
    for plan in plan_dataset(&synth, 8, 0, 0) {
        chunks.extend(render_planned(&synth, &plan).unwrap());
    }
    let model = ModelConfig {
        frames: 32,
        height: 16,
        width: 16,
        encoder_channels: vec![8, 8],
        feature_size: 4,
        ..ModelConfig::default()
    };
    let steps = 200;
    let base = TrainConfig {
        chunk_len: 32,
        mask_size: 4,
        batch_size: 4,
        epochs: steps / 2,
        seed: 3,
        ..TrainConfig::default()
    };
    let tail_ac = |beta: f64| -> Result<f64, String> {
        let run = train(&TrainConfig { beta, ..base.clone() }, &model, &chunks).map_err(|e| e.to_string())?;
        ensure(run.log.len() == steps, format!("{} steps logged", run.log.len()))?;
        Ok(run.log[steps - 20..].iter().map(|r| r.loss_ac).sum::<f64>() / 20.0)
    };
    let with = tail_ac(0.5)?;
    let without = tail_ac(0.0)?;
    ensure(with < without, format!("mean loss_ac {with:.4e} (beta=0.5) not below {without:.4e} (beta=0)"))?;
    within(t0.elapsed(), 300)?;
    Ok(format!(
        "preimage loss 0, involution holds; last-20 mean loss_ac {with:.3e} (beta=0.5) < {without:.3e} (beta=0), {:.1} s",
        t0.elapsed().as_secs_f64()
    ))
}

/// Direct DFT power of `x` at frequency `f` (Hz) for samples at `fs`.
fn dft_power(x: &[f64], fs: f64, f: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (n, v) in x.iter().enumerate() {
        let ph = 2.0 * PI * f * n as f64 / fs;
        re += v * ph.cos();
        im -= v * ph.sin();
    }
    re * re + im * im
}

fn hann(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    x.iter()
        .enumerate()
        .map(|(i, v)| v * (0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()))
        .collect()
}

/// Intervals `0.85 + 0.05 sin(2 pi f t)` over `span` seconds.
fn modulated_ibi(f: f64, span: f64) -> IbiSeries {
    let mut t = 0.0;
    let mut intervals = Vec::new();
    while t < span {
        let iv = 0.85 + 0.05 * (2.0 * PI * f * t).sin();
        t += iv;
        intervals.push(iv);
    }
    IbiSeries::from_intervals(0.0, intervals).unwrap()
}

/// Normalised LF power of the modulation sampled directly at 4 Hz, from a
/// 0.001 Hz direct-DFT scan of both bands.
fn oracle_lf(ibi: &IbiSeries) -> f64 {
    let x = &ibi.times[1..];
    let n = ((x[x.len() - 1] - x[0]) * 4.0).floor() as usize + 1;
    let mut iv: Vec<f64> = Vec::with_capacity(n);
    // piecewise-linear interpolation keeps the oracle independent of the spline
    let mut seg = 0;
    for k in 0..n {
        let t = x[0] + k as f64 / 4.0;
        while seg + 2 < x.len() && t > x[seg + 1] {
            seg += 1;
        }
        let w = ((t - x[seg]) / (x[seg + 1] - x[seg])).clamp(0.0, 1.0);
        iv.push((1.0 - w) * ibi.intervals[seg] + w * ibi.intervals[seg + 1]);
    }
    let mean = iv.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = iv.iter().map(|v| v - mean).collect();
    let w = hann(&centred);
    let band_power = |b: Band| {
        let mut f = b.lo;
        let mut p = 0.0;
        while f <= b.hi {
            p += dft_power(&w, 4.0, f);
            f += 0.001;
        }
        p
    };
    let (lf, hf) = (band_power(Band::LF), band_power(Band::HF));
    lf / (lf + hf)
}

fn a4_spectral_oracle() -> Outcome {
    let fs = 30.0;
    let n = 1800;
    let mut rng = rng_from_seed(4);
    let mut worst_hr = 0.0f64;
    for k in 0..20 {
        let f0 = rng.random_range(0.8..2.4);
        let phase = rng.random_range(0.0..2.0 * PI);
        let s: Vec<f64> = if k % 2 == 0 {
            (0..n).map(|i| (2.0 * PI * f0 * i as f64 / fs + phase).sin()).collect()
        } else {
            // weaker second tone anywhere else in the band
            let mut f1 = rng.random_range(0.8..2.4);
            while (f1 - f0).abs() < 0.1 {
                f1 = rng.random_range(0.8..2.4);
            }
            (0..n)
                .map(|i| {
                    let t = i as f64 / fs;
                    (2.0 * PI * f0 * t + phase).sin() + 0.5 * (2.0 * PI * f1 * t).sin()
                })
                .collect()
        };
        let bpm = estimate_hr_fft(&s, fs, Band::HR).map_err(|e| e.to_string())?;
        worst_hr = worst_hr.max((bpm - 60.0 * f0).abs());
    }
    ensure(worst_hr <= 0.5, format!("HR off by {worst_hr:.3} BPM"))?;

    let mut notes = Vec::new();
    for (f, lf_expected) in [(0.1, true), (0.25, false)] {
        let ibi = modulated_ibi(f, 300.0);
        let rep = hrv_lf_hf(&ibi).map_err(|e| e.to_string())?;
        let oracle = oracle_lf(&ibi);
        let (got, want) = if lf_expected {
            (rep.lf_power, oracle)
        } else {
            (rep.hf_power, 1.0 - oracle)
        };
        ensure(got > 0.9, format!("{f} Hz: normalised power {got:.3} in the correct band"))?;
        ensure(want > 0.9, format!("{f} Hz: oracle puts only {want:.3} in the band"))?;
        ensure((got - want).abs() < 0.05, format!("{f} Hz: {got:.4} vs oracle {want:.4}"))?;
        notes.push(format!("{f} Hz -> {got:.3} (oracle {want:.3})"));
    }
    let mut worst_rf = 0.0f64;
    for f in [0.15, 0.25, 0.33, 0.4] {
        let rf = respiratory_frequency(&modulated_ibi(f, 300.0)).map_err(|e| e.to_string())?;
        worst_rf = worst_rf.max((rf - f).abs());
    }
    ensure(worst_rf <= 0.01, format!("RF off by {worst_rf:.4} Hz"))?;
    Ok(format!(
        "HR worst error {worst_hr:.3} BPM over 20 signals; band power {}; RF worst error {worst_rf:.4} Hz",
        notes.join(", ")
    ))
}

/// Epoch budget of the end-to-end benchmark.
const A5_EPOCHS: usize = 5;

fn a5_benchmark() -> Outcome {
    let t0 = Instant::now();
    let synth = SynthConfig {
        motion_min_px: 0.0,
        motion_max_px: 2.0,
        eval_clip_chunks: 10,
        seed: 5,
        ..SynthConfig::default()
    };
    let plan = plan_dataset(&synth, 64, 0, 16);
    let mut train_chunks: Vec<VideoChunk> = Vec::new();
    let mut test: Vec<Clip> = Vec::new();
    let (mut train_hr, mut test_hr) = (Vec::new(), Vec::new());
    for p in &plan {
        let chunks = render_planned(&synth, p).unwrap();
        if p.split == Split::Train {
            train_hr.push(p.hr_bpm);
            train_chunks.extend(chunks);
        } else {
            test_hr.push(p.hr_bpm);
            test.push((p.source_id.clone(), chunks));
        }
    }
    ensure(train_hr.len() == 64 && test.len() == 16, "dataset sizes")?;
    ensure(
        test_hr.iter().all(|h| !train_hr.contains(h)),
        "train and test heart rates overlap",
    )?;
    let all = train_hr.iter().chain(&test_hr);
    ensure(all.clone().all(|h| (48.0..=144.0).contains(h)), "heart rate outside 48-144")?;

    let scfg = SignalConfig::default();
    let green = evaluate_green_mean(&test, &scfg).map_err(|e| e.to_string())?;
    ensure(green.mae <= 1.0, format!("green-mean self-oracle MAE {:.3} > 1 BPM", green.mae))?;

    let cfg = TrainConfig {
        epochs: A5_EPOCHS,
        seed: 5,
        ..TrainConfig::default()
    };
    let run = train_with(&cfg, &ModelConfig::default(), &train_chunks, |_| {}).map_err(|e| e.to_string())?;
    let report = evaluate_model(&run.model, &run.store, &test, &scfg).map_err(|e| e.to_string())?;
    let r = report.pearson_r.unwrap_or(f64::NAN);
    let elapsed = t0.elapsed();
    let summary = format!(
        "MAE {:.3} BPM, RMSE {:.3}, r {r:.4} on 16 held-out clips after {A5_EPOCHS} epochs (green-mean MAE {:.3}), {:.0} s",
        report.mae,
        report.rmse,
        green.mae,
        elapsed.as_secs_f64()
    );
    ensure(report.mae <= 3.0 && r >= 0.95, summary.clone())?;
    within(elapsed, 20 * 60)?;
    Ok(summary)
}

fn a6_metrics() -> Outcome {
    let mut rng = rng_from_seed(6);
    for _ in 0..100 {
        let n = rng.random_range(2..64);
        let gt: Vec<f64> = (0..n).map(|_| rng.random_range(40.0..160.0)).collect();
        let pred: Vec<f64> = gt.iter().map(|g| g + rng.random_range(-20.0..20.0)).collect();
        let (mut sa, mut ss, mut sp) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let d = pred[i] - gt[i];
            sa += d.abs();
            ss += d * d;
            sp += (d / gt[i]).abs();
        }
        let nf = n as f64;
        let (mg, mp) = (gt.iter().sum::<f64>() / nf, pred.iter().sum::<f64>() / nf);
        let (mut cov, mut vg, mut vp) = (0.0, 0.0, 0.0);
        for i in 0..n {
            cov += (gt[i] - mg) * (pred[i] - mp);
            vg += (gt[i] - mg).powi(2);
            vp += (pred[i] - mp).powi(2);
        }
        let checks = [
            ("mae", mae(&gt, &pred).unwrap(), sa / nf),
            ("rmse", rmse(&gt, &pred).unwrap(), (ss / nf).sqrt()),
            ("mape", mape(&gt, &pred).unwrap(), sp / nf),
            ("pearson_r", pearson_r(&gt, &pred).unwrap(), cov / (vg * vp).sqrt()),
        ];
        for (name, got, want) in checks {
            ensure((got - want).abs() <= 1e-12 * want.abs().max(1.0), format!("{name}: {got} vs loop {want}"))?;
        }
        ensure(rmse(&gt, &pred).unwrap() >= mae(&gt, &pred).unwrap(), "rmse < mae")?;
    }
    let ba = bland_altman(&[0.0, 0.0], &[-2.0, 2.0]).unwrap();
    ensure(
        ba.bias == 0.0 && (ba.loa_low + 3.92).abs() < 1e-12 && (ba.loa_high - 3.92).abs() < 1e-12,
        format!("diffs [-2, 2]: {ba:?}"),
    )?;
    for c in [-3.5, 0.1, 7.0] {
        let gt = [60.0, 72.5, 90.0, 101.0, 130.0];
        let pred: Vec<f64> = gt.iter().map(|g| g + c).collect();
        let ba = bland_altman(&gt, &pred).unwrap();
        let close = |v: f64| (v - c).abs() < 1e-12;
        ensure(close(ba.bias) && close(ba.loa_low) && close(ba.loa_high), format!("offset {c}: {ba:?}"))?;
    }
    Ok("100 random vectors match naive loops to 1e-12, rmse >= mae, Bland-Altman fixtures exact".into())
}

fn bin(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mar-rppg"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(
        out.status.success(),
        format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)),
    )
}

fn same_files(a: &Path, b: &Path, names: &[String]) -> Result<(), String> {
    for n in names {
        let (x, y) = (std::fs::read(a.join(n)), std::fs::read(b.join(n)));
        ensure(matches!((&x, &y), (Ok(x), Ok(y)) if x == y), format!("{n} differs between runs"))?;
    }
    Ok(())
}

fn a7_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    std::fs::write(
        dir.join("tiny.cfg"),
        "chunk_len = 32\nframe_size = 16\nencoder_channels = 4,4\nfeature_size = 4\nmask_size = 4\n\
         epochs = 2\nn_train = 6\nn_test = 2\nmanifest = d1/manifest.txt\n",
    )
    .unwrap();
    bin(&["synth", "--config", "tiny.cfg", "--seed", "7", "--out", "d1"], dir)?;
    bin(&["synth", "--config", "tiny.cfg", "--seed", "7", "--out", "d2"], dir)?;
    let mut names: Vec<String> = std::fs::read_dir(dir.join("d1"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    ensure(names.len() == 9, format!("synth wrote {} files", names.len()))?;
    same_files(&dir.join("d1"), &dir.join("d2"), &names)?;

    for out in ["r1", "r2"] {
        bin(&["train", "--config", "tiny.cfg", "--seed", "7", "--out", out, "--deterministic"], dir)?;
    }
    let trained = ["model.marw".to_string(), "training_log.csv".to_string()];
    same_files(&dir.join("r1"), &dir.join("r2"), &trained)?;
    let log = std::fs::read_to_string(dir.join("r1/training_log.csv")).unwrap();
    ensure(log.lines().count() == 1 + 2 * 2, "log rows != epochs x batches")?;
    Ok(format!(
        "two synth runs: {} identical files; two train runs: identical checkpoint and log",
        names.len()
    ))
}

fn a8_corruption() -> Outcome {
    let synth = SynthConfig {
        frames: 8,
        height: 6,
        width: 6,
        ..SynthConfig::default()
    };
    let chunk = synth_clip(&synth, &mut rng_from_seed(8)).unwrap();
    let bytes = encode_chunk(&chunk);
    ensure(decode_chunk(&bytes, "x").is_ok(), "pristine file rejected")?;
    let mut rng = rng_from_seed(88);
    let mut kinds = [0usize; 4];
    for i in 0..1000 {
        let mut b = bytes.clone();
        let kind = i % 4;
        match kind {
            0 => b.truncate(rng.random_range(0..bytes.len())),
            1 => {
                for _ in 0..rng.random_range(1..=4) {
                    let at = rng.random_range(0..b.len());
                    b[at] ^= rng.random_range(1..=255u8);
                }
            }
            2 => {
                b.truncate(rng.random_range(0..bytes.len()));
                if !b.is_empty() {
                    let at = rng.random_range(0..b.len());
                    b[at] ^= 0x80;
                }
            }
            _ => {
                // garbage in the header, or trailing bytes
                if rng.random_bool(0.5) {
                    let at = rng.random_range(0..28);
                    b[at] = rng.random_range(0..=255u8).wrapping_add(if b[at] == 0 { 1 } else { 0 });
                    if b == bytes {
                        b[at] ^= 1;
                    }
                } else {
                    b.extend((0..rng.random_range(1..16)).map(|_| rng.random::<u8>()));
                }
            }
        }
        let outcome = catch_unwind(AssertUnwindSafe(|| decode_chunk(&b, "x")));
        match outcome {
            Ok(Err(Error::Parse { .. })) => kinds[kind] += 1,
            Ok(Err(e)) => return Err(format!("case {i}: unstructured error {e}")),
            Ok(Ok(_)) => return Err(format!("case {i}: corrupted file accepted")),
            Err(_) => return Err(format!("case {i}: decoder panicked")),
        }
    }
    Ok(format!(
        "1000/1000 corrupted files rejected with parse errors (truncated {}, bit-flipped {}, both {}, header/trailing {})",
        kinds[0], kinds[1], kinds[2], kinds[3]
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("A1", "gradient correctness", a1_gradcheck),
        ("A2", "loss identities", a2_loss_identities),
        ("A3", "attention alignment", a3_attention_alignment),
        ("A4", "spectral oracle", a4_spectral_oracle),
        ("A5", "end-to-end synthetic benchmark", a5_benchmark),
        ("A6", "metrics", a6_metrics),
        ("A7", "determinism", a7_determinism),
        ("A8", "chunk corruption", a8_corruption),
    ];
    let selected: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| a.len() == 2 && a.starts_with('A'))
        .collect();
    let mut failures = 0;
    for (id, title, f) in criteria {
        if !selected.is_empty() && !selected.iter().any(|s| s == id) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("{id} PASS {title}: {msg} [{secs:.1} s]"),
            Err(msg) => {
                failures += 1;
                println!("{id} FAIL {title}: {msg} [{secs:.1} s]");
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
