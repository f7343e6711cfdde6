use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::Summary;

/// One rate per elapsed second; `None` marks an invalid second.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RateSeries {
    pub rates: Vec<Option<f64>>,
}

impl RateSeries {
    pub fn new(rates: Vec<Option<f64>>) -> Self {
        Self { rates }
    }

    /// Every second valid at `rate`.
    pub fn constant(rate: f64, seconds: usize) -> Self {
        Self { rates: vec![Some(rate); seconds] }
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.rates.iter().flatten().count()
    }

    pub fn valid_values(&self) -> Vec<f64> {
        self.rates.iter().flatten().copied().collect()
    }

    pub fn median(&self) -> Option<f64> {
        Summary::of(&self.valid_values()).map(|s| s.median)
    }
}

/// Mean absolute error over seconds valid in both series.
pub fn recording_error(estimate: &RateSeries, reference: &RateSeries) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::invalid(format!(
            "series lengths differ: {} and {}",
            estimate.len(),
            reference.len()
        )));
    }
    let errs: Vec<f64> = estimate
        .rates
        .iter()
        .zip(&reference.rates)
        .filter_map(|(e, r)| Some((e.as_ref()? - r.as_ref()?).abs()))
        .collect();
    if errs.is_empty() {
        return Err(Error::UndefinedMetric("no overlapping valid seconds".into()));
    }
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Per-recording `error_before - error_after` and its aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct ImprovementStats {
    pub error_before: Vec<f64>,
    pub error_after: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

impl ImprovementStats {
    pub fn from_errors(before: &[f64], after: &[f64]) -> Result<Self> {
        if before.len() != after.len() || before.is_empty() {
            return Err(Error::invalid("need equal, non-zero numbers of before and after errors"));
        }
        let imp: Vec<f64> = before.iter().zip(after).map(|(b, a)| b - a).collect();
        let s = Summary::of(&imp).expect("non-empty");
        Ok(Self {
            error_before: before.to_vec(),
            error_after: after.to_vec(),
            mean: s.mean,
            median: s.median,
            std: s.std,
        })
    }

    /// Each item is `(before, after, reference)` for one recording.
    pub fn from_recordings(recs: &[(RateSeries, RateSeries, RateSeries)]) -> Result<Self> {
        let mut before = Vec::with_capacity(recs.len());
        let mut after = Vec::with_capacity(recs.len());
        for (b, a, r) in recs {
            before.push(recording_error(b, r)?);
            after.push(recording_error(a, r)?);
        }
        Self::from_errors(&before, &after)
    }

    pub fn improvements(&self) -> Vec<f64> {
        self.error_before.iter().zip(&self.error_after).map(|(b, a)| b - a).collect()
    }
}

/// Parses `second_index,hr_bpm,br_bpm` rows; blank cells are missing.
/// Seconds absent from the file are missing too.
pub fn read_reference_csv(text: &str) -> Result<(RateSeries, RateSeries)> {
    let mut rows: Vec<(usize, Option<f64>, Option<f64>)> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("second_index") {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != 3 {
            return Err(Error::Format(format!("line {}: expected 3 columns", ln + 1)));
        }
        let idx = cells[0]
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad second index {:?}", ln + 1, cells[0])))?;
        let cell = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                return Ok(None);
            }
            let v: f64 = s.parse().map_err(|_| Error::Format(format!("line {}: bad rate {s:?}", ln + 1)))?;
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Format(format!("line {}: rate must be positive", ln + 1)));
            }
            Ok(Some(v))
        };
        rows.push((idx, cell(cells[1])?, cell(cells[2])?));
    }
    let n = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let (mut hr, mut br) = (vec![None; n], vec![None; n]);
    for (i, h, b) in rows {
        hr[i] = h;
        br[i] = b;
    }
    Ok((RateSeries::new(hr), RateSeries::new(br)))
}

pub fn write_reference_csv(hr: &RateSeries, br: &RateSeries) -> String {
    let mut s = String::from("second_index,hr_bpm,br_bpm\n");
    let fmt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for i in 0..hr.len().max(br.len()) {
        let h = hr.rates.get(i).copied().flatten();
        let b = br.rates.get(i).copied().flatten();
        writeln!(s, "{i},{},{}", fmt(h), fmt(b)).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_after_recovers_before_error() {
        let r = RateSeries::constant(140.0, 10);
        let b = RateSeries::constant(150.0, 10);
        let s = ImprovementStats::from_recordings(&[(b, r.clone(), r)]).unwrap();
        assert_eq!(s.improvements(), vec![10.0]);
    }

    #[test]
    fn identical_before_after_gives_zero() {
        let r = RateSeries::constant(140.0, 5);
        let b = RateSeries::new(vec![Some(141.0), None, Some(150.0), Some(139.0), None]);
        let s = ImprovementStats::from_recordings(&[(b.clone(), b.clone(), r.clone()), (b.clone(), b, r)]).unwrap();
        assert_eq!((s.mean, s.median, s.std), (0.0, 0.0, 0.0));
    }

    #[test]
    fn two_recording_arithmetic() {
        let s = ImprovementStats::from_errors(&[10.0, 4.0], &[3.0, 4.0]).unwrap();
        assert_eq!((s.mean, s.median), (3.5, 3.5));
        assert_eq!(s.std, 3.5);
    }

    #[test]
    fn error_uses_overlapping_valid_seconds_only() {
        let e = RateSeries::new(vec![Some(10.0), None, Some(30.0)]);
        let r = RateSeries::new(vec![Some(12.0), Some(0.5), None]);
        assert_eq!(recording_error(&e, &r).unwrap(), 2.0);
        let none = RateSeries::new(vec![None, None, None]);
        assert!(matches!(recording_error(&none, &r), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn reference_csv_round_trip() {
        let text = "second_index,hr_bpm,br_bpm\n0,140,40\n1,,41.5\n3,142,\n";
        let (hr, br) = read_reference_csv(text).unwrap();
        assert_eq!(hr.rates, vec![Some(140.0), None, None, Some(142.0)]);
        assert_eq!(br.rates, vec![Some(40.0), Some(41.5), None, None]);
        let (hr2, br2) = read_reference_csv(&write_reference_csv(&hr, &br)).unwrap();
        assert_eq!((hr2, br2), (hr, br));
        assert!(read_reference_csv("0,1").is_err());
        assert!(read_reference_csv("0,-3,1").is_err());
    }
}
