use std::fmt::Write as _;

use rayon::prelude::*;

use super::bss::{decompose, sdr, si_sdr, METRIC_CAP_DB};
use crate::error::{Error, Result};
use crate::mixture::{MixingMode, MixtureSample, NoiseGroup, SampleDescriptor, SourceKind};
use crate::model::Separator;
use crate::nn::Scalar;
use crate::signal::Waveform;

/// Anything that maps a mixture to `[heart, lung]` estimates.
pub trait SourceSeparator: Sync {
    fn separate(&self, mixture: &Waveform) -> Result<[Waveform; 2]>;

    /// Separates each input on the current rayon pool, preserving order.
    fn separate_batch(&self, mixtures: &[Waveform]) -> Result<Vec<[Waveform; 2]>> {
        mixtures.par_iter().map(|x| self.separate(x)).collect()
    }
}

impl<T: Scalar> SourceSeparator for Separator<T> {
    fn separate(&self, mixture: &Waveform) -> Result<[Waveform; 2]> {
        Separator::separate(self, mixture)
    }
}

/// Returns the mixture as both estimates.
#[derive(Debug, Clone, Copy, Default)]
pub struct Passthrough;

impl SourceSeparator for Passthrough {
    fn separate(&self, mixture: &Waveform) -> Result<[Waveform; 2]> {
        Ok([mixture.clone(), mixture.clone()])
    }
}

/// Median, mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub median: f64,
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Some(Self { count: n, median, mean, std: var.sqrt() })
    }
}

/// Metrics of one estimated source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceMetrics {
    pub sdr: f64,
    pub sdri: f64,
    pub si_sdr: f64,
    pub si_sdri: f64,
}

impl SourceMetrics {
    pub const NAMES: [&'static str; 4] = ["sdr", "sdri", "si_sdr", "si_sdri"];

    pub fn values(&self) -> [f64; 4] {
        [self.sdr, self.sdri, self.si_sdr, self.si_sdri]
    }

    /// `target`, `interferer` and `noise` are the contributions present in `mixture`.
    pub fn compute(est: &[f64], mixture: &[f64], target: &[f64], interferer: &[f64], noise: Option<&[f64]>) -> Result<Self> {
        let s_est = sdr(&decompose(est, target, interferer, noise)?)?;
        let s_mix = sdr(&decompose(mixture, target, interferer, noise)?)?;
        let si_est = si_sdr(est, target)?;
        let si_mix = si_sdr(mixture, target)?;
        Ok(Self { sdr: s_est, sdri: s_est - s_mix, si_sdr: si_est, si_sdri: si_est - si_mix })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub sample_index: u64,
    pub group: NoiseGroup,
    pub noise_kind: Option<SourceKind>,
    pub mode: MixingMode,
    pub rel_db_lung: f64,
    pub rel_db_noise: f64,
    pub heart: SourceMetrics,
    pub lung: SourceMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedSample {
    pub sample_index: u64,
    pub group: NoiseGroup,
    pub reason: String,
}

/// Per-sample metrics of a test run plus the samples that could not be scored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
    pub skipped: Vec<SkippedSample>,
}

/// Which metric of which source to aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricColumn {
    Sdr,
    Sdri,
    SiSdr,
    SiSdri,
}

impl MetricColumn {
    fn pick(self, m: &SourceMetrics) -> f64 {
        match self {
            MetricColumn::Sdr => m.sdr,
            MetricColumn::Sdri => m.sdri,
            MetricColumn::SiSdr => m.si_sdr,
            MetricColumn::SiSdri => m.si_sdri,
        }
    }
}

pub const CSV_HEADER: &str = "sample_index,partition,noise_kind,mode,rel_db_lung,rel_db_noise,\
sdr_heart,sdri_heart,si_sdr_heart,si_sdri_heart,sdr_lung,sdri_lung,si_sdr_lung,si_sdri_lung,skipped_reason";

impl MetricsReport {
    /// Values of one column for `source` (0 heart, 1 lung), optionally
    /// restricted to a noise group.
    pub fn column(&self, source: usize, col: MetricColumn, group: Option<NoiseGroup>) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| group.is_none_or(|g| r.group == g))
            .map(|r| col.pick(if source == 0 { &r.heart } else { &r.lung }))
            .collect()
    }

    pub fn summary(&self, source: usize, col: MetricColumn, group: Option<NoiseGroup>) -> Option<Summary> {
        Summary::of(&self.column(source, col, group))
    }

    /// Groups present in the rows, in canonical order.
    pub fn groups(&self) -> Vec<NoiseGroup> {
        NoiseGroup::ALL
            .into_iter()
            .filter(|g| self.rows.iter().any(|r| r.group == *g))
            .collect()
    }

    /// Rows, skipped samples, then one median row per group and one overall.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# metric_cap_db={METRIC_CAP_DB}\n{CSV_HEADER}\n");
        let mut lines: Vec<(u64, String)> = Vec::new();
        for r in &self.rows {
            let mut l = format!(
                "{},{},{},{},{},{}",
                r.sample_index,
                r.group,
                r.noise_kind.map_or("none", SourceKind::as_str),
                r.mode,
                r.rel_db_lung,
                r.rel_db_noise
            );
            for v in r.heart.values().iter().chain(&r.lung.values()) {
                write!(l, ",{v}").unwrap();
            }
            l.push(',');
            lines.push((r.sample_index, l));
        }
        for k in &self.skipped {
            lines.push((k.sample_index, format!("{},{},,,,,,,,,,,,,{}", k.sample_index, k.group, k.reason.replace(',', ";"))));
        }
        lines.sort_by_key(|(i, _)| *i);
        for (_, l) in lines {
            s.push_str(&l);
            s.push('\n');
        }
        let groups: Vec<Option<NoiseGroup>> = self.groups().into_iter().map(Some).chain([None]).collect();
        for g in groups {
            let label = g.map_or("all".to_string(), |g| g.to_string());
            let mut l = format!("median,{label},,,,");
            for source in 0..2 {
                for col in [MetricColumn::Sdr, MetricColumn::Sdri, MetricColumn::SiSdr, MetricColumn::SiSdri] {
                    match self.summary(source, col, g) {
                        Some(m) => write!(l, ",{:.2}", m.median).unwrap(),
                        None => l.push(','),
                    }
                }
            }
            let n = self.rows.iter().filter(|r| g.is_none_or(|g| r.group == g)).count();
            writeln!(l, ",n={n}").unwrap();
            s.push_str(&l);
        }
        s
    }
}

/// Scores one rendered sample.
pub fn evaluate_sample<S: SourceSeparator + ?Sized>(model: &S, index: u64, x: &MixtureSample) -> Result<ReportRow> {
    let [h_est, l_est] = model.separate(&x.mixture)?;
    if h_est.len() != x.mixture.len() || l_est.len() != x.mixture.len() {
        return Err(Error::invalid("separator changed the signal length"));
    }
    let m = x.mixture.samples();
    let (h, l) = (x.target_heart.samples(), x.target_lung.samples());
    let noise = (x.noise.power() > 0.0).then(|| x.noise.samples());
    Ok(ReportRow {
        sample_index: index,
        group: x.group,
        noise_kind: x.noise_kind,
        mode: x.mixing,
        rel_db_lung: x.rel_db_lung,
        rel_db_noise: x.rel_db_noise,
        heart: SourceMetrics::compute(h_est.samples(), m, h, l, noise)?,
        lung: SourceMetrics::compute(l_est.samples(), m, l, h, noise)?,
    })
}

/// Renders and scores every descriptor, fanning out over the rayon pool.
/// Samples whose metrics are undefined are recorded as skipped.
pub fn evaluate_testset<S: SourceSeparator + ?Sized>(model: &S, samples: &[SampleDescriptor]) -> Result<MetricsReport> {
    let results: Vec<Result<std::result::Result<ReportRow, SkippedSample>>> = samples
        .par_iter()
        .map(|d| {
            let x = d.render()?;
            match evaluate_sample(model, d.index, &x) {
                Ok(r) => Ok(Ok(r)),
                Err(e @ (Error::UndefinedMetric(_) | Error::DegenerateReferences)) => Ok(Err(SkippedSample {
                    sample_index: d.index,
                    group: d.group,
                    reason: e.to_string(),
                })),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut report = MetricsReport::default();
    for r in results {
        match r? {
            Ok(row) => report.rows.push(row),
            Err(skip) => {
                log::warn!("sample {} skipped: {}", skip.sample_index, skip.reason);
                report.skipped.push(skip);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::DatasetParams;

    /// Looks up the ground truth by mixture identity.
    struct Oracle(Vec<MixtureSample>);

    impl SourceSeparator for Oracle {
        fn separate(&self, mixture: &Waveform) -> Result<[Waveform; 2]> {
            let x = self.0.iter().find(|x| &x.mixture == mixture).expect("known mixture");
            Ok([x.target_heart.clone(), x.target_lung.clone()])
        }
    }

    fn manifest() -> Vec<SampleDescriptor> {
        let p = DatasetParams { duration_s: 2.0, ..DatasetParams::default() };
        let mut v = p.test_manifest(NoiseGroup::NoNoise).unwrap().samples;
        v.extend(p.test_manifest(NoiseGroup::RespSupport).unwrap().samples.into_iter().step_by(10));
        for (i, d) in v.iter_mut().enumerate() {
            d.index = i as u64;
        }
        v
    }

    #[test]
    fn passthrough_improves_nothing() {
        let rep = evaluate_testset(&Passthrough, &manifest()).unwrap();
        assert!(rep.skipped.is_empty());
        for r in &rep.rows {
            assert_eq!([r.heart.sdri, r.heart.si_sdri, r.lung.sdri, r.lung.si_sdri], [0.0; 4]);
        }
    }

    #[test]
    fn oracle_reaches_cap_minus_baseline() {
        let m = manifest();
        let oracle = Oracle(m.iter().map(|d| d.render().unwrap()).collect());
        let rep = evaluate_testset(&oracle, &m).unwrap();
        assert_eq!(rep.rows.len() + rep.skipped.len(), m.len());
        for (r, x) in rep.rows.iter().zip(&oracle.0) {
            assert_eq!(r.heart.si_sdr, METRIC_CAP_DB);
            assert_eq!(r.lung.sdr, METRIC_CAP_DB);
            let base = si_sdr(x.mixture.samples(), x.target_heart.samples()).unwrap();
            assert!((r.heart.si_sdri - (METRIC_CAP_DB - base)).abs() < 1e-12);
        }
        let med = rep.summary(0, MetricColumn::SiSdr, Some(NoiseGroup::NoNoise)).unwrap().median;
        assert_eq!(med, METRIC_CAP_DB);
    }

    #[test]
    fn csv_has_rows_and_summaries() {
        let m = manifest();
        let mut rep = evaluate_testset(&Passthrough, &m).unwrap();
        rep.skipped.push(SkippedSample { sample_index: 999, group: NoiseGroup::General, reason: "x".into() });
        let csv = rep.to_csv();
        let lines: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines[0], CSV_HEADER);
        let cols = CSV_HEADER.split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == cols), "{csv}");
        assert_eq!(lines.len(), 1 + m.len() + 1 + rep.groups().len() + 1);
        assert!(lines.iter().any(|l| l.starts_with("median,no_noise")));
        assert!(lines.iter().any(|l| l.starts_with("median,all")));
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[1.0, 3.0, 2.0, 10.0]).unwrap();
        assert_eq!((s.median, s.mean), (2.5, 4.0));
        assert!((s.std - (12.5f64).sqrt()).abs() < 1e-12);
        assert!(Summary::of(&[]).is_none());
    }
}
