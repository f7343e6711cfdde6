use std::path::Path;

use chestsep::cli::cli_main;
use chestsep::io::{wav_read, wav_write};
use chestsep::model::{Separator, SeparatorConfig};
use chestsep::signal::Waveform;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn run(args: &[&str]) -> i32 {
    cli_main(std::iter::once("chestsep").chain(args.iter().copied()))
}

fn tiny_model(path: &Path) {
    let cfg = SeparatorConfig {
        kernel_size: 16,
        stride: 8,
        feature_size: 8,
        mask_feature_size: 8,
        conv_layers: 2,
        num_heads: 2,
        transformer_depth: 1,
        ..SeparatorConfig::default()
    };
    Separator::<f32>::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().save(path).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn datagen_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let (a, b, c) = (d.path().join("a.txt"), d.path().join("b.txt"), d.path().join("c.txt"));
    for p in [&a, &b] {
        assert_eq!(run(&["datagen", "--manifest", s(p), "--partition", "test", "--seed", "7"]), 0);
    }
    assert_eq!(run(&["datagen", "--manifest", s(&c), "--partition", "test", "--seed", "8"]), 0);
    let (ta, tb, tc) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), std::fs::read(&c).unwrap());
    assert_eq!(ta, tb);
    assert_ne!(ta, tc);
}

#[test]
fn datagen_exports_identical_audio() {
    let d = tempfile::tempdir().unwrap();
    for sub in ["x", "y"] {
        let dir = d.path().join(sub);
        let m = dir.join("m.txt");
        let args = ["datagen", "--manifest", s(&m), "--partition", "train", "--count", "2", "--seed", "3", "--export-dir", s(&dir)];
        assert_eq!(run(&args), 0);
    }
    let name = "train_00001_mixture.wav";
    let (x, y) = (std::fs::read(d.path().join("x").join(name)).unwrap(), std::fs::read(d.path().join("y").join(name)).unwrap());
    assert_eq!(x, y);
}

#[test]
fn separate_writes_two_input_length_wavs() {
    let d = tempfile::tempdir().unwrap();
    let (ck, mix, h, l) = (d.path().join("m.ckpt"), d.path().join("mix.wav"), d.path().join("h.wav"), d.path().join("l.wav"));
    tiny_model(&ck);
    let x: Vec<f64> = (0..4321).map(|i| (i as f64 * 0.07).sin() * 0.3).collect();
    wav_write(&mix, &Waveform::at_canonical_rate(x).unwrap()).unwrap();
    assert_eq!(run(&["separate", "--model", s(&ck), "--in", s(&mix), "--out-heart", s(&h), "--out-lung", s(&l)]), 0);
    assert_eq!(wav_read(&h).unwrap().len(), 4321);
    assert_eq!(wav_read(&l).unwrap().len(), 4321);
}

#[test]
fn eval_appends_partition_medians() {
    let d = tempfile::tempdir().unwrap();
    let (ck, m, out) = (d.path().join("m.ckpt"), d.path().join("m.txt"), d.path().join("r.csv"));
    tiny_model(&ck);
    assert_eq!(run(&["datagen", "--manifest", s(&m), "--partition", "test", "--noise", "resp", "--seed", "1"]), 0);
    assert_eq!(run(&["eval", "--model", s(&ck), "--manifest", s(&m), "--out", s(&out), "--threads", "1"]), 0);
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("median,resp")), "{csv}");
    assert!(csv.lines().any(|l| l.starts_with("median,all")));
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["frobnicate"]), 1);
    assert_eq!(run(&["datagen", "--partition", "nope"]), 1);
    assert_eq!(run(&["separate", "--in", "x.wav"]), 1);
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("c.conf");
    std::fs::write(&cfg, "seed = 1\nunknown_key = 2\n").unwrap();
    assert_eq!(run(&["datagen", "--config", s(&cfg), "--manifest", "m.txt"]), 1);
    let missing = d.path().join("missing.ckpt");
    let args = ["separate", "--model", s(&missing), "--in", "a.wav", "--out-heart", "h.wav", "--out-lung", "l.wav"];
    assert_eq!(run(&args), 2);
}

#[test]
fn flags_override_config_file() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("c.conf");
    std::fs::write(&cfg, "# dataset\nseed = 7\npartition = test\nnoise = none\n").unwrap();
    let (a, b) = (d.path().join("a.txt"), d.path().join("b.txt"));
    assert_eq!(run(&["datagen", "--config", s(&cfg), "--manifest", s(&a)]), 0);
    assert_eq!(run(&["datagen", "--config", s(&cfg), "--manifest", s(&b), "--seed", "9"]), 0);
    let (ta, tb) = (std::fs::read_to_string(&a).unwrap(), std::fs::read_to_string(&b).unwrap());
    assert!(ta.starts_with("# seed=7") && tb.starts_with("# seed=9"));
}

#[test]
fn bench_reports_both_scenarios() {
    let d = tempfile::tempdir().unwrap();
    let (ck, out) = (d.path().join("m.ckpt"), d.path().join("b.csv"));
    tiny_model(&ck);
    assert_eq!(run(&["bench", "--model", s(&ck), "--out", s(&out)]), 0);
    let csv = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("single,1,2,1,40000,") && rows[2].starts_with("batch16,16,2,1,40000,"));
}
