//! Comparison statistics between platform RMS readings and a reference meter.
//!
//! For each comparison-set size `n`, `n` platform records are drawn at random
//! (seeded, without replacement), each is paired with the reference reading
//! nearest in time, and both series are summarized by their mean, their
//! sample standard deviation `s` (the `n - 1` form), and the mean percentage
//! difference `|mean_ref - mean_platform| / mean_ref`.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::capture::CaptureRecord;
use crate::waveform::WaveformSpec;

/// Half of a 50 Hz RMS cycle.
pub const PAIRING_TOLERANCE_US: u64 = 10_000;
pub const DEFAULT_SIZES: [usize; 3] = [10, 20, 30];
pub const REPORT_HEADER: [&str; 7] = [
    "waveform",
    "n",
    "ref_mean",
    "platform_mean",
    "ref_s",
    "platform_s",
    "pct_diff",
];

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("mean of an empty series")]
    Empty,
    #[error("standard error needs at least 2 values (got {0})")]
    TooFew(usize),
    #[error("reference mean is zero")]
    ZeroReference,
    #[error("comparison set size must be >= 2 (got {0})")]
    SetSize(usize),
    #[error("need {needed} platform records for the largest comparison set, have {available}")]
    Insufficient { needed: usize, available: usize },
    #[error("no reference reading within {tolerance_us} us of platform timestamp {unix_us}")]
    Unpaired { unix_us: u64, tolerance_us: u64 },
    #[error("reference bias must be finite and > -1 (got {0})")]
    Bias(f64),
}

pub fn mean(values: &[f64]) -> Result<f64, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::Empty);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// `sqrt(sum((v - mean)^2) / (n - 1))`.
pub fn std_error(values: &[f64]) -> Result<f64, AnalysisError> {
    if values.len() < 2 {
        return Err(AnalysisError::TooFew(values.len()));
    }
    let m = mean(values)?;
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    Ok((ss / (values.len() - 1) as f64).sqrt())
}

/// Mean percentage difference, in percent.
pub fn mean_pct_diff(ref_mean: f64, platform_mean: f64) -> Result<f64, AnalysisError> {
    if ref_mean == 0.0 {
        return Err(AnalysisError::ZeroReference);
    }
    Ok((ref_mean - platform_mean).abs() / ref_mean.abs() * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    pub unix_us: u64,
    pub volts: f64,
}

/// Analytic stand-in for the reference meter: the stationary RMS of the
/// input, optionally scaled by `1 + bias`, at each requested timestamp.
pub fn reference_meter(
    spec: &WaveformSpec,
    timestamps: &[u64],
    bias: f64,
) -> Result<Vec<ReferencePoint>, AnalysisError> {
    if !(bias.is_finite() && bias > -1.0) {
        return Err(AnalysisError::Bias(bias));
    }
    let volts = spec.analytic_rms() * (1.0 + bias);
    Ok(timestamps
        .iter()
        .map(|&unix_us| ReferencePoint { unix_us, volts })
        .collect())
}

/// Reference reading nearest to `unix_us` within `tolerance_us`.
/// `reference` must be sorted by timestamp.
pub fn pair_nearest(
    reference: &[ReferencePoint],
    unix_us: u64,
    tolerance_us: u64,
) -> Option<&ReferencePoint> {
    let i = reference.partition_point(|r| r.unix_us < unix_us);
    let after = reference.get(i);
    let before = i.checked_sub(1).and_then(|j| reference.get(j));
    [before, after]
        .into_iter()
        .flatten()
        .min_by_key(|r| r.unix_us.abs_diff(unix_us))
        .filter(|r| r.unix_us.abs_diff(unix_us) <= tolerance_us)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRow {
    pub n: usize,
    pub ref_mean: f64,
    pub platform_mean: f64,
    pub ref_s: f64,
    pub platform_s: f64,
    pub pct_diff: f64,
}

impl ComparisonRow {
    /// Statistics for already-paired series.
    pub fn from_pairs(reference: &[f64], platform: &[f64]) -> Result<Self, AnalysisError> {
        debug_assert_eq!(reference.len(), platform.len());
        let ref_mean = mean(reference)?;
        let platform_mean = mean(platform)?;
        Ok(Self {
            n: platform.len(),
            ref_mean,
            platform_mean,
            ref_s: std_error(reference)?,
            platform_s: std_error(platform)?,
            pct_diff: mean_pct_diff(ref_mean, platform_mean)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub waveform: String,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(REPORT_HEADER)?;
        for r in &self.rows {
            w.write_record([
                self.waveform.clone(),
                r.n.to_string(),
                r.ref_mean.to_string(),
                r.platform_mean.to_string(),
                r.ref_s.to_string(),
                r.platform_s.to_string(),
                r.pct_diff.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

/// Build the comparison report.
///
/// Records preceding the first completed RMS cycle (RMS exactly zero) are
/// skipped. The same seeded generator draws every comparison set in order of
/// `sizes`, so the report is a pure function of its inputs.
pub fn build_report(
    waveform: &str,
    platform: &[CaptureRecord],
    reference: &[ReferencePoint],
    sizes: &[usize],
    seed: u64,
) -> Result<ComparisonReport, AnalysisError> {
    let first = platform
        .iter()
        .position(|r| r.rms_v != 0.0)
        .unwrap_or(platform.len());
    let records = &platform[first..];
    if let Some(&bad) = sizes.iter().find(|&&n| n < 2) {
        return Err(AnalysisError::SetSize(bad));
    }
    let needed = sizes.iter().copied().max().unwrap_or(0);
    if records.len() < needed {
        return Err(AnalysisError::Insufficient {
            needed,
            available: records.len(),
        });
    }
    let mut sorted_ref = reference.to_vec();
    sorted_ref.sort_by_key(|r| r.unix_us);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let mut picks = rand::seq::index::sample(&mut rng, records.len(), n).into_vec();
        picks.sort_unstable();
        let mut plat = Vec::with_capacity(n);
        let mut refs = Vec::with_capacity(n);
        for i in picks {
            let rec = &records[i];
            let r = pair_nearest(&sorted_ref, rec.unix_us, PAIRING_TOLERANCE_US).ok_or(
                AnalysisError::Unpaired {
                    unix_us: rec.unix_us,
                    tolerance_us: PAIRING_TOLERANCE_US,
                },
            )?;
            plat.push(rec.rms_v);
            refs.push(r.volts);
        }
        rows.push(ComparisonRow::from_pairs(&refs, &plat)?);
    }
    Ok(ComparisonReport {
        waveform: waveform.to_string(),
        rows,
    })
}
