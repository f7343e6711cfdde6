//! Command-line front end shared by the `chestsep` binary and tests.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bench::{bench, BenchReport, Scenario};
use crate::error::{Error, Result};
use crate::io::{export_sample, wav_read, wav_write, RunConfig};
use crate::metrics::evaluate_testset;
use crate::mixture::{mix64, DatasetManifest, Partition};
use crate::model::{Checkpoint, Separator};
use crate::train::{ablation_run, suffixed, validation_set, TrainData, Trainer};
use crate::vitals::{
    estimate_breathing_rate, estimate_heart_rate, read_reference_csv, recording_error, write_reference_csv, RateSeries,
};

#[derive(Debug, Parser)]
#[command(name = "chestsep", version, about = "Heart and lung sound separation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a dataset manifest (and optionally its audio)
    Datagen(Common),
    /// Train a separator on the synthetic stream
    Train(Common),
    /// Split one WAV into heart and lung WAVs
    Separate(Common),
    /// Score a model on a manifest and write a metrics CSV
    Eval(Common),
    /// Per-second heart and breathing rates of a WAV
    Vitals(Common),
    /// Time inference on random 10 s input
    Bench(Common),
    /// Train and score one ablation
    Ablate(Common),
}

#[derive(Debug, Args, Default)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["train", "val", "test"])]
    partition: Option<String>,
    #[arg(long, value_parser = ["none", "general", "resp"])]
    noise: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out_heart: Option<PathBuf>,
    #[arg(long)]
    out_lung: Option<PathBuf>,
    /// Reference rates CSV (second_index,hr_bpm,br_bpm)
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    ablation: Option<String>,
    /// Number of training-partition mixtures for datagen
    #[arg(long)]
    count: Option<usize>,
    /// Directory for rendered WAVs from datagen
    #[arg(long)]
    export_dir: Option<PathBuf>,
    /// Extra `key=value` settings, same keys as the config file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    /// Config file first, then `--set`, then dedicated flags.
    fn run_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let mut flags = RunConfig::default();
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::invalid(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            flags.set(k.trim(), v.trim())?;
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned());
        let pairs = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("model", path(&self.model)),
            ("manifest", path(&self.manifest)),
            ("out", path(&self.out)),
            ("partition", self.partition.clone()),
            ("noise", self.noise.clone()),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("threads", self.threads.map(|v| v.to_string())),
            ("in", path(&self.input)),
            ("out_heart", path(&self.out_heart)),
            ("out_lung", path(&self.out_lung)),
            ("reference", path(&self.reference)),
            ("ablation", self.ablation.clone()),
            ("count", self.count.map(|v| v.to_string())),
            ("export_dir", path(&self.export_dir)),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                flags.set(k, &v)?;
            }
        }
        c.overlay(&flags);
        Ok(c)
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns 0 on success, 1 on usage errors and 2 on runtime errors.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e @ Error::InvalidArgument(_)) => {
            eprintln!("error: {e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    let (name, common) = match &cmd {
        Command::Datagen(c) => ("datagen", c),
        Command::Train(c) => ("train", c),
        Command::Separate(c) => ("separate", c),
        Command::Eval(c) => ("eval", c),
        Command::Vitals(c) => ("vitals", c),
        Command::Bench(c) => ("bench", c),
        Command::Ablate(c) => ("ablate", c),
    };
    let cfg = common.run_config()?;
    log::debug!("{name}: {cfg:?}");
    if name != "bench" {
        if let Some(n) = cfg.threads()? {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        }
    }
    match cmd {
        Command::Datagen(_) => datagen(&cfg),
        Command::Train(_) => train_cmd(&cfg),
        Command::Separate(_) => separate(&cfg),
        Command::Eval(_) => eval(&cfg),
        Command::Vitals(_) => vitals(&cfg),
        Command::Bench(_) => bench_cmd(&cfg),
        Command::Ablate(_) => ablate(&cfg),
    }
}

/// Loads model parameters from a separator or trainer checkpoint.
pub fn load_model(path: impl AsRef<Path>) -> Result<Separator<f32>> {
    let mut ck = Checkpoint::load(path)?;
    ck.take_prefixed("optim.");
    Separator::from_checkpoint(&ck)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(std::fs::write(path, text)?)
}

fn datagen(cfg: &RunConfig) -> Result<()> {
    let params = cfg.dataset_params()?;
    let partition = cfg.partition()?.unwrap_or(Partition::Test);
    let count = cfg.count()?.unwrap_or(256);
    let m = params.manifest(partition, cfg.noise()?, count)?;
    let out = cfg.require_path("manifest")?;
    write_text(&out, &m.to_text())?;
    if let Some(dir) = cfg.path("export_dir") {
        for d in &m.samples {
            export_sample(&dir, &format!("{}_{:05}", d.partition, d.index), &d.render()?)?;
        }
    }
    println!("wrote {} {partition} descriptors to {}", m.samples.len(), out.display());
    Ok(())
}

fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let params = cfg.dataset_params()?;
    let mut tc = cfg.train_config()?;
    let prefix = cfg.require_path("out")?;
    tc.checkpoint_prefix = Some(prefix.clone());
    let trainer = match cfg.path("model") {
        Some(p) => Trainer::resume(&Checkpoint::load(p)?, tc)?,
        None => {
            let mc = cfg.separator_config()?;
            let model = Separator::<f32>::new(mc, &mut ChaCha8Rng::seed_from_u64(mix64(tc.seed, 0x1417)))?;
            Trainer::new(model, tc)?
        }
    };
    log::info!("training {} parameters", trainer.model.num_parameters());
    let val = validation_set(&params)?;
    let out = trainer.run(&TrainData::Stream(params), &val)?;
    write_text(&suffixed(&prefix, "log.csv"), &out.log.to_csv())?;
    println!(
        "best validation loss {:.3} at epoch {}; checkpoints at {}",
        out.best_val_loss,
        out.log.best_epoch().unwrap_or(0),
        suffixed(&prefix, "best").display()
    );
    Ok(())
}

fn separate(cfg: &RunConfig) -> Result<()> {
    let model = load_model(cfg.require_path("model")?)?;
    let x = wav_read(cfg.require_path("in")?)?;
    let [h, l] = model.separate(&x)?;
    wav_write(cfg.require_path("out_heart")?, &h)?;
    wav_write(cfg.require_path("out_lung")?, &l)?;
    Ok(())
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let model = load_model(cfg.require_path("model")?)?;
    let mut samples = DatasetManifest::parse(&std::fs::read_to_string(cfg.require_path("manifest")?)?)?;
    if let Some(g) = cfg.noise()? {
        samples.retain(|d| d.group == g);
    }
    let report = evaluate_testset(&model, &samples)?;
    let csv = report.to_csv();
    match cfg.path("out") {
        Some(p) => write_text(&p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn rates(x: &crate::signal::Waveform) -> Result<(RateSeries, RateSeries)> {
    let hr = estimate_heart_rate(x)?;
    let br = match estimate_breathing_rate(x) {
        Ok(r) => r,
        Err(Error::InvalidArgument(e)) => {
            log::warn!("breathing rate unavailable: {e}");
            RateSeries::new(vec![None; hr.len()])
        }
        Err(e) => return Err(e),
    };
    Ok((hr, br))
}

fn vitals(cfg: &RunConfig) -> Result<()> {
    let x = wav_read(cfg.require_path("in")?)?;
    let (hr0, br0) = rates(&x)?;
    let (hr, br) = match cfg.path("model") {
        Some(p) => {
            let [h, l] = load_model(p)?.separate(&x)?;
            (rates(&h)?.0, rates(&l)?.1)
        }
        None => (hr0.clone(), br0.clone()),
    };
    let csv = write_reference_csv(&hr, &br);
    match cfg.path("out") {
        Some(p) => write_text(&p, &csv)?,
        None => print!("{csv}"),
    }
    if let Some(r) = cfg.path("reference") {
        let (hr_ref, br_ref) = read_reference_csv(&std::fs::read_to_string(r)?)?;
        let mut s = String::new();
        for (name, before, after, reference) in [("hr", &hr0, &hr, &hr_ref), ("br", &br0, &br, &br_ref)] {
            let fmt = |r: Result<f64>| r.map_or_else(|e| format!("undefined ({e})"), |v| format!("{v:.3}"));
            writeln!(
                s,
                "{name}: error_before={} error_after={}",
                fmt(recording_error(before, reference)),
                fmt(recording_error(after, reference))
            )
            .unwrap();
        }
        eprint!("{s}");
    }
    Ok(())
}

fn bench_cmd(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let model = match cfg.path("model") {
        Some(p) => load_model(p)?,
        None => Separator::<f32>::new(cfg.separator_config()?, &mut ChaCha8Rng::seed_from_u64(seed))?,
    };
    let mut csv = format!("{}\n", BenchReport::CSV_HEADER);
    for s in Scenario::ALL {
        let r = bench(&model, s, seed, cfg.threads()?)?;
        println!(
            "{s}: mean {:.2} ms over {} runs ({} warmups), {:.2} ms per item",
            r.mean_ms,
            r.runs_ms.len(),
            r.warmups,
            r.per_item_ms
        );
        csv.push_str(&r.to_csv_row());
        csv.push('\n');
    }
    if let Some(p) = cfg.path("out") {
        write_text(&p, &csv)?;
    }
    Ok(())
}

fn ablate(cfg: &RunConfig) -> Result<()> {
    let ablation = cfg.ablation()?.ok_or_else(|| Error::invalid("missing required setting --ablation"))?;
    let params = cfg.dataset_params()?;
    let test = match cfg.path("manifest") {
        Some(p) => DatasetManifest::parse(&std::fs::read_to_string(p)?)?,
        None => params.manifest(Partition::Test, cfg.noise()?, 0)?.samples,
    };
    let r = ablation_run(ablation, &cfg.train_config()?, &cfg.separator_config()?, &params, &test)?;
    let out = cfg.require_path("out")?;
    write_text(&suffixed(&out, "log.csv"), &r.log.to_csv())?;
    write_text(&suffixed(&out, "report.csv"), &format!("# ablation={ablation} parameters={}\n{}", r.num_parameters, r.report.to_csv()))?;
    println!("{ablation}: {} parameters, outputs at {}.*", r.num_parameters, out.display());
    Ok(())
}
