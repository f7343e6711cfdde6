//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

use std::cell::Cell;

use chestsep::bench::{bench, time_runs, Scenario, BENCH_BATCH, BENCH_RUNS, BENCH_WARMUPS};
use chestsep::metrics::{decompose, si_sdr, si_sdri, evaluate_testset, MetricColumn, Summary};
use chestsep::mixture::{
    synth_source, DatasetParams, MixtureSample, NoiseGroup, SourceKind, SourceSpec, TrainSampling, TrainStream,
};
use chestsep::model::{Checkpoint, Separator, SeparatorConfig};
use chestsep::nn::gradcheck::run_suite;
use chestsep::signal::{design_butterworth_bandpass, frame_count, istft, resample_decimate, stft, Waveform};
use chestsep::train::{validation_set, Ablation, TrainConfig, TrainData, Trainer};
use chestsep::vitals::{estimate_breathing_rate, estimate_heart_rate, ImprovementStats};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    println!("criterion {n:>2}: {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn model(cfg: SeparatorConfig, seed: u64) -> Separator<f32> {
    Separator::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn overfit_set() -> Vec<MixtureSample> {
    let s = TrainStream::new(DatasetParams::default(), 0, TrainSampling::default()).unwrap();
    (0..8).map(|i| s.sample(i).unwrap()).collect()
}

#[test]
fn criterion_01_parameter_counts() {
    const TOL: f64 = 0.05;
    let (t, m) = (TrainConfig::default(), SeparatorConfig::default());
    let count = |a: Ablation| model(a.apply(&t, &m).1, 0).num_parameters() as f64;
    let (base, k256, k1024) = (count(Ablation::Baseline), count(Ablation::Kernel(256)), count(Ablation::Kernel(1024)));
    let near = |v: f64, want: f64| (v / want - 1.0).abs() <= TOL;
    let pass = near(base, 8.42e6) && near(k256, 8.16e6) && near(k1024, 8.95e6) && k256 < base && base < k1024;
    report(1, "parameter counts", pass, &format!("baseline {base}, kernel-256 {k256}, kernel-1024 {k1024} (±5% of 8.42/8.16/8.95 M)"));
}

#[test]
fn criterion_02_shapes() {
    let c = SeparatorConfig::default();
    let frames = (c.frames_for(32000).unwrap().1, c.frames_for(40000).unwrap().1);
    let m = model(SeparatorConfig::reduced(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad = Vec::new();
    for _ in 0..50 {
        let t = rng.gen_range(512..12000);
        let x = Waveform::at_canonical_rate((0..t).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let [h, l] = m.separate(&x).unwrap();
        if h.len() != t || l.len() != t {
            bad.push(t);
        }
    }
    let pass = frames == (124, 156) && bad.is_empty();
    report(2, "shapes", pass, &format!("frames {frames:?} (want (124, 156)); {} of 50 random lengths mismatched", bad.len()));
}

#[test]
fn criterion_03_gradients() {
    const TOL: f64 = 1e-6;
    let checks = run_suite(3, 5).unwrap();
    let worst = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    let failing: Vec<&str> = checks.iter().filter(|c| !(c.max_rel_err < TOL) || c.instances < 5).map(|c| c.op).collect();
    report(3, "gradient checks", failing.is_empty(), &format!("{} ops, worst relative error {worst:.2e} (< 1e-6), failing {failing:?}", checks.len()));
}

#[test]
fn criterion_04_metric_identities() {
    const TOL: f64 = 1e-9;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let norm = |a: &[f64]| dot(a, a).sqrt();
    let cos = |a: &[f64], b: &[f64]| {
        let d = norm(a) * norm(b);
        if d == 0.0 { 0.0 } else { dot(a, b).abs() / d }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(16..400);
        let mut v = || (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (est, t, i, z) = (v(), v(), v(), v());
        let d = decompose(&est, &t, &i, Some(&z)).unwrap();
        let recon: Vec<f64> = (0..n).map(|k| d.s_target[k] + d.e_interf[k] + d.e_noise[k] + d.e_artif[k] - est[k]).collect();
        let alpha = dot(&d.s_target, &t) / dot(&t, &t);
        let par: Vec<f64> = (0..n).map(|k| d.s_target[k] - alpha * t[k]).collect();
        for e in [
            norm(&recon) / norm(&est),
            norm(&par) / norm(&d.s_target),
            cos(&d.e_interf, &t),
            cos(&d.e_noise, &t),
            cos(&d.e_noise, &i),
            cos(&d.e_artif, &t),
            cos(&d.e_artif, &i),
            cos(&d.e_artif, &z),
        ] {
            worst = worst.max(e);
        }
    }
    let x: Vec<f64> = (0..64).map(|k| (k as f64 * 0.3).sin()).collect();
    let y: Vec<f64> = x.iter().enumerate().map(|(k, v)| v + 0.1 * (k as f64 * 1.7).cos()).collect();
    let base = si_sdr(&y, &x).unwrap();
    let scale_err = [0.01, 3.0, -7.5]
        .iter()
        .map(|c| (si_sdr(&y.iter().map(|v| c * v).collect::<Vec<_>>(), &x).unwrap() - base).abs())
        .fold(0.0, f64::max);
    let hand = si_sdr(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
    let pass = worst < TOL && scale_err < TOL && hand.abs() < TOL;
    report(4, "metric identities", pass, &format!("worst identity residual {worst:.2e}, scale drift {scale_err:.2e}, hand case {hand:.2e} dB (all < 1e-9)"));
}

#[test]
fn criterion_05_overfit() {
    const TARGET_DB: f64 = 10.0;
    const EPOCHS: usize = 200;
    const MAX_NON_MONOTONE: usize = 2;
    let set = overfit_set();

    let mut full = Trainer::new(model(SeparatorConfig::reduced(), 0), TrainConfig { lr: 1e-3, ..TrainConfig::default() }).unwrap();
    let losses: Vec<f64> = (0..20).map(|_| full.train_step(&set).unwrap().loss).collect();
    let rises = losses.windows(2).filter(|w| w[1] >= w[0]).count();

    let cfg = TrainConfig { lr: 1e-3, batch_size: 1, epochs: EPOCHS, finetune_epoch: EPOCHS, ..TrainConfig::default() };
    let t = Trainer::new(model(SeparatorConfig::reduced(), 0), cfg).unwrap();
    let out = t.run(&TrainData::Fixed(set.clone()), &set).unwrap();
    let max_clip = out.log.steps.iter().map(|s| s.clipped_norm).fold(0.0, f64::max);
    let (mut h, mut l) = (Vec::new(), Vec::new());
    for x in &set {
        let [eh, el] = out.best.separate(&x.mixture).unwrap();
        h.push(si_sdri(eh.samples(), x.mixture.samples(), x.target_heart.samples()).unwrap());
        l.push(si_sdri(el.samples(), x.mixture.samples(), x.target_lung.samples()).unwrap());
    }
    let (hs, ls) = (Summary::of(&h).unwrap(), Summary::of(&l).unwrap());
    let lrs: Vec<f64> = out.log.epochs.iter().map(|e| e.lr).collect();
    let pass = hs.median >= TARGET_DB && ls.median >= TARGET_DB && rises <= MAX_NON_MONOTONE && max_clip <= 5.0 + 1e-6;
    report(
        5,
        "overfit trainability",
        pass,
        &format!(
            "median SI-SDRi heart {:.2} dB (min {:.2}), lung {:.2} dB (min {:.2}) after {EPOCHS} epochs (>= 10 dB); \
             {rises} non-monotone of first 20 full-batch steps (<= 2); max clipped norm {max_clip:.3}; lr {:.1e} -> {:.1e}",
            hs.median,
            h.iter().cloned().fold(f64::INFINITY, f64::min),
            ls.median,
            l.iter().cloned().fold(f64::INFINITY, f64::min),
            lrs[0],
            lrs[lrs.len() - 1],
        ),
    );
}

#[test]
#[ignore = "slow: trains 2000 steps of 16 mixtures"]
fn criterion_06_desk_scale_separation() {
    let data = DatasetParams::default();
    let cfg = TrainConfig { epochs: 8, steps_per_epoch: 250, batch_size: 16, finetune_epoch: 4, ..TrainConfig::default() };
    let steps = cfg.epochs * cfg.steps_per_epoch;
    let val = validation_set(&data).unwrap();
    let out = Trainer::new(model(SeparatorConfig::reduced(), 6), cfg).unwrap().run(&TrainData::Stream(data.clone()), &val).unwrap();
    let mut lines = Vec::new();
    let mut medians = Vec::new();
    for g in [NoiseGroup::NoNoise, NoiseGroup::RespSupport] {
        let r = evaluate_testset(&out.best, &data.test_manifest(g).unwrap().samples).unwrap();
        let med = |s| r.summary(s, MetricColumn::SiSdri, Some(g)).map_or(f64::NAN, |s| s.median);
        lines.push(format!("{g}: heart {:.2} dB, lung {:.2} dB over {} mixtures", med(0), med(1), r.rows.len()));
        medians.push((med(0), med(1)));
    }
    let pass = medians[0].0 > 0.0 && medians[0].1 > 0.0;
    report(6, "desk-scale separation", pass, &format!("{steps} steps; median SI-SDRi {} (no_noise both > 0)", lines.join("; ")));
}

#[test]
fn criterion_07_vitals() {
    const HR_TOL: f64 = 2.0;
    const BR_TOL: f64 = 4.0;
    let mut hs = SourceSpec::new(SourceKind::Heart, 1000, 11);
    hs.heart_bpm = 144.0;
    hs.duration_s = 30.0;
    let hr = estimate_heart_rate(&synth_source(&hs).unwrap()).unwrap();
    let mut ls = SourceSpec::new(SourceKind::Lung, 1000, 12);
    ls.breath_bpm = 48.0;
    ls.duration_s = 30.0;
    let br = estimate_breathing_rate(&synth_source(&ls).unwrap()).unwrap();
    let worst = |vals: Vec<f64>, want: f64| vals.iter().map(|v| (v - want).abs()).fold(0.0, f64::max);
    let (hr_err, br_err) = (worst(hr.valid_values(), 144.0), worst(br.valid_values(), 48.0));
    let stats = ImprovementStats::from_errors(&[10.0, 4.0, 6.0], &[2.0, 4.0, 1.0]).unwrap();
    let arith = stats.improvements() == vec![8.0, 0.0, 5.0]
        && stats.mean == 13.0 / 3.0
        && stats.median == 5.0
        && (stats.std - (98.0f64 / 9.0).sqrt()).abs() < 1e-12;
    let pass = hr.valid_count() >= 24 && br.valid_count() >= 24 && hr_err <= HR_TOL && br_err <= BR_TOL && arith;
    report(
        7,
        "vitals",
        pass,
        &format!(
            "heart {}/30 s valid, max error {hr_err:.2} bpm (<= 2); breathing {}/30 s valid, max error {br_err:.2} /min (<= 4); improvement arithmetic exact: {arith}",
            hr.valid_count(),
            br.valid_count()
        ),
    );
}

#[test]
fn criterion_08_bench_protocol() {
    let calls = Cell::new(0);
    let runs = time_runs(BENCH_WARMUPS, BENCH_RUNS, || calls.set(calls.get() + 1));
    let harness = runs.len() == 10 && calls.get() == 12;
    let m = model(SeparatorConfig::reduced(), 8);
    let single = bench(&m, Scenario::Single, 0, None).unwrap();
    let batch = bench(&m, Scenario::Batch16, 0, None).unwrap();
    let mean = |r: &[f64]| r.iter().sum::<f64>() / r.len() as f64;
    let pass = harness
        && single.runs_ms.len() == 10
        && batch.runs_ms.len() == 10
        && batch.batch_size == BENCH_BATCH
        && batch.per_item_ms == batch.mean_ms / 16.0
        && (single.mean_ms - mean(&single.runs_ms)).abs() <= 1e-12 * single.mean_ms
        && single.warmups == 2;
    report(
        8,
        "bench protocol",
        pass,
        &format!(
            "single mean {:.2} ms, batch16 mean {:.2} ms -> {:.2} ms per item, 10 runs after 2 warmups ({})",
            single.mean_ms, batch.mean_ms, batch.per_item_ms, single.hardware
        ),
    );
}

#[test]
fn criterion_09_determinism() {
    let params = DatasetParams { seed: 9, ..DatasetParams::default() };
    let m1 = params.test_manifest(NoiseGroup::General).unwrap();
    let m2 = params.test_manifest(NoiseGroup::General).unwrap();
    let bits = |x: &MixtureSample| -> Vec<u64> {
        [&x.mixture, &x.target_heart, &x.target_lung, &x.noise].iter().flat_map(|w| w.samples().iter().map(|v| v.to_bits())).collect()
    };
    let audio = m1.to_text() == m2.to_text()
        && m1.samples.iter().take(12).zip(&m2.samples).all(|(a, b)| bits(&a.render().unwrap()) == bits(&b.render().unwrap()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let m = model(SeparatorConfig::reduced(), 9);
    m.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let ckpt = back.to_bytes().unwrap() == m.to_checkpoint().to_bytes().unwrap() && back == m.to_checkpoint();

    let set = overfit_set();
    let cfg = TrainConfig { batch_size: 2, ..TrainConfig::default() };
    let step = || {
        let mut t = Trainer::new(model(SeparatorConfig::reduced(), 10), cfg.clone()).unwrap();
        t.train_step(&set[..2]).unwrap();
        t
    };
    let (mut a, b) = (step(), step());
    let same_step = a.to_checkpoint().to_bytes().unwrap() == b.to_checkpoint().to_bytes().unwrap();
    let mut resumed = Trainer::resume(&Checkpoint::from_bytes(&a.to_checkpoint().to_bytes().unwrap()).unwrap(), cfg.clone()).unwrap();
    a.train_step(&set[2..4]).unwrap();
    resumed.train_step(&set[2..4]).unwrap();
    let same_resume = a.to_checkpoint().to_bytes().unwrap() == resumed.to_checkpoint().to_bytes().unwrap();

    let pass = audio && ckpt && same_step && same_resume;
    report(
        9,
        "determinism",
        pass,
        &format!("manifest audio identical {audio}; checkpoint round trip identical {ckpt}; seeded step identical {same_step}; resumed step identical {same_resume}"),
    );
}

#[test]
fn criterion_10_dsp() {
    const EDGE_DB: f64 = 0.5;
    const STFT_TOL: f64 = 1e-6;
    const ALIAS_RMS: f64 = 0.05;
    let fs = 4000.0;
    let mut edges = Vec::new();
    for (lo, hi, checked) in [(50.0, 250.0, vec![50.0, 250.0]), (200.0, 1000.0, vec![200.0, 1000.0]), (300.0, 450.0, vec![300.0])] {
        let bp = design_butterworth_bandpass(4, lo, hi, fs).unwrap();
        for f in checked {
            edges.push((f, 20.0 * bp.magnitude(f, fs).log10()));
        }
    }
    let edge_err = edges.iter().map(|(_, db)| (db + 3.0103).abs()).fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = Waveform::at_canonical_rate((0..40000).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let y = istft(&stft(&x, 512, 256).unwrap()).unwrap();
    let covered = frame_count(x.len(), 512, 256) * 256;
    let stft_err = (256..covered).map(|i| (x.samples()[i] - y.samples()[i]).abs()).fold(0.0, f64::max) / x.peak();

    let rms = |v: &[f64]| (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt();
    let tone: Vec<f64> = (0..64000).map(|n| (2.0 * std::f64::consts::PI * 3500.0 * n as f64 / 16000.0).sin()).collect();
    let d = resample_decimate(&Waveform::new(tone.clone(), 16000).unwrap(), 4).unwrap();
    let alias = rms(&d.samples()[50..]) / rms(&tone);

    let pass = edge_err <= EDGE_DB && stft_err < STFT_TOL && alias < ALIAS_RMS;
    report(
        10,
        "DSP",
        pass,
        &format!("worst -3 dB edge deviation {edge_err:.3} dB (<= 0.5); STFT round trip {stft_err:.2e} (< 1e-6); alias residual {:.2}% RMS (< 5%)", alias * 100.0),
    );
}
