//! Scores a separator on the synthetic test partition and prints the
//! per-group medians; the CSV report goes to stdout with `--csv`.
//!
//! ```bash
//! cargo run --release --example evaluate -- [model.ckpt] [--csv]
//! ```

use chestsep::cli::load_model;
use chestsep::metrics::{evaluate_testset, MetricColumn, MetricsReport, Passthrough};
use chestsep::mixture::{DatasetParams, Partition};

fn show(name: &str, r: &MetricsReport) {
    for g in r.groups() {
        let med = |s: usize, c: MetricColumn| r.summary(s, c, Some(g)).map_or(f64::NAN, |s| s.median);
        println!(
            "{name:>11} {g:>8}: heart SI-SDRi {:6.2}  SDRi {:6.2} | lung SI-SDRi {:6.2}  SDRi {:6.2}",
            med(0, MetricColumn::SiSdri),
            med(0, MetricColumn::Sdri),
            med(1, MetricColumn::SiSdri),
            med(1, MetricColumn::Sdri)
        );
    }
}

fn main() -> chestsep::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let test = DatasetParams::default().manifest(Partition::Test, None, 0)?.samples;
    let baseline = evaluate_testset(&Passthrough, &test)?;
    show("passthrough", &baseline);
    if let Some(path) = args.iter().find(|a| !a.starts_with("--")) {
        let report = evaluate_testset(&load_model(path)?, &test)?;
        show("model", &report);
        if args.iter().any(|a| a == "--csv") {
            print!("{}", report.to_csv());
        }
    }
    Ok(())
}
