//! Inference timing on random input.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::SourceSeparator;
use crate::signal::Waveform;

pub const BENCH_RUNS: usize = 10;
pub const BENCH_WARMUPS: usize = 2;
pub const BENCH_INPUT_LEN: usize = 40_000;
pub const BENCH_BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Single,
    Batch16,
}

impl Scenario {
    pub const ALL: [Scenario; 2] = [Scenario::Single, Scenario::Batch16];

    pub fn batch_size(self) -> usize {
        match self {
            Scenario::Single => 1,
            Scenario::Batch16 => BENCH_BATCH,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Single => "single",
            Scenario::Batch16 => "batch16",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Scenario::Single),
            "batch16" => Ok(Scenario::Batch16),
            _ => Err(Error::invalid(format!("unknown scenario {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub scenario: Scenario,
    pub batch_size: usize,
    pub warmups: usize,
    pub runs_ms: Vec<f64>,
    pub mean_ms: f64,
    /// `mean_ms / batch_size`.
    pub per_item_ms: f64,
    pub threads: usize,
    pub input_len: usize,
    pub hardware: String,
}

impl BenchReport {
    pub fn from_runs(scenario: Scenario, runs_ms: Vec<f64>, warmups: usize, threads: usize) -> Self {
        let batch_size = scenario.batch_size();
        let mean_ms = runs_ms.iter().sum::<f64>() / runs_ms.len() as f64;
        Self {
            scenario,
            batch_size,
            warmups,
            runs_ms,
            mean_ms,
            per_item_ms: mean_ms / batch_size as f64,
            threads,
            input_len: BENCH_INPUT_LEN,
            hardware: hardware_description(),
        }
    }

    pub const CSV_HEADER: &'static str = "scenario,batch_size,warmups,threads,input_len,mean_ms,per_item_ms,runs_ms,hardware";

    pub fn to_csv_row(&self) -> String {
        let runs: Vec<String> = self.runs_ms.iter().map(|r| format!("{r:.3}")).collect();
        format!(
            "{},{},{},{},{},{:.3},{:.3},{},\"{}\"",
            self.scenario,
            self.batch_size,
            self.warmups,
            self.threads,
            self.input_len,
            self.mean_ms,
            self.per_item_ms,
            runs.join(";"),
            self.hardware.replace('"', "'")
        )
    }
}

/// CPU model name and logical core count.
pub fn hardware_description() -> String {
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    format!("{model}, {cores} logical cores, {}", std::env::consts::OS)
}

/// Runs `f` `warmups` times untimed, then `runs` times timed; returns milliseconds per run.
/// The result buffer is allocated before the first call.
pub fn time_runs<F: FnMut()>(warmups: usize, runs: usize, mut f: F) -> Vec<f64> {
    let mut out = Vec::with_capacity(runs);
    for _ in 0..warmups {
        f();
    }
    for _ in 0..runs {
        let t = Instant::now();
        f();
        out.push(t.elapsed().as_secs_f64() * 1e3);
    }
    out
}

/// Uniform input in `[-1, 1]` at 4 kHz.
pub fn bench_input(seed: u64, batch: usize) -> Vec<Waveform> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..batch)
        .map(|_| Waveform::at_canonical_rate((0..BENCH_INPUT_LEN).map(|_| rng.gen_range(-1.0..=1.0)).collect()).unwrap())
        .collect()
}

/// Times `model` on random input in a dedicated pool of `threads` workers (1 when `None`).
pub fn bench<S: SourceSeparator + ?Sized>(model: &S, scenario: Scenario, seed: u64, threads: Option<usize>) -> Result<BenchReport> {
    let threads = threads.unwrap_or(1).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let inputs = bench_input(seed, scenario.batch_size());
    let mut err = None;
    let runs = pool.install(|| {
        time_runs(BENCH_WARMUPS, BENCH_RUNS, || {
            if let Err(e) = model.separate_batch(&inputs) {
                err.get_or_insert(e);
            }
        })
    });
    match err {
        Some(e) => Err(e),
        None => Ok(BenchReport::from_runs(scenario, runs, BENCH_WARMUPS, threads)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn warmups_are_excluded() {
        let calls = Cell::new(0);
        let r = time_runs(2, 10, || calls.set(calls.get() + 1));
        assert_eq!((calls.get(), r.len()), (12, 10));
    }

    #[test]
    fn amortization_is_exact() {
        let runs: Vec<f64> = (1..=10).map(|i| i as f64 * 16.0).collect();
        let r = BenchReport::from_runs(Scenario::Batch16, runs, 2, 1);
        assert_eq!(r.mean_ms, 88.0);
        assert_eq!(r.per_item_ms, 5.5);
        let s = BenchReport::from_runs(Scenario::Single, vec![3.0; 10], 2, 1);
        assert_eq!(s.per_item_ms, s.mean_ms);
    }

    #[test]
    fn input_is_bounded_and_seeded() {
        let a = bench_input(3, 2);
        assert_eq!(a, bench_input(3, 2));
        assert_ne!(a[0], a[1]);
        assert!(a.iter().all(|w| w.len() == BENCH_INPUT_LEN && w.peak() <= 1.0));
        assert!(a[0].peak() > 0.99);
    }

    #[test]
    fn scenario_names() {
        for s in Scenario::ALL {
            assert_eq!(s.to_string().parse::<Scenario>().unwrap(), s);
        }
        assert!(!hardware_description().is_empty());
    }
}
