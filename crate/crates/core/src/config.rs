//! Run configuration, read from `key=value` text.
//!
//! Every key is optional; missing keys take the defaults below, which are the
//! platform's nominal operating values (4000 Sa/s, 80-sample RMS cycle,
//! divider 0.02120, 0.1 ms MCU tick, timestamp constant 16e12).

use std::path::Path;

use thiserror::Error;

use crate::analysis::DEFAULT_SIZES;
use crate::capture::{EmissionPolicy, DEFAULT_BUFFER_CAPACITY};
use crate::framecodec::{DEFAULT_TIMESTAMP_CONSTANT, TIMESTAMP_TICK_US};
use crate::kv::{KvDoc, KvError, KvWriter};
use crate::metercore::{FrontEndConfig, MeterConfig};
use crate::ptpsync::LinkModel;
use crate::simclock::{ClockState, MCU_RESOLUTION_NS, NANOS_PER_SEC};
use crate::waveform::{WaveKind, WaveformSpec};

/// 2023-11-14T22:13:20Z, on the 100 us grid.
pub const DEFAULT_START_UNIX_US: u64 = 1_700_000_000_000_000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Kv(#[from] KvError),
    #[error("config field `{field}`: {reason}")]
    Field { field: &'static str, reason: String },
    #[error("config: {0}")]
    Io(#[from] std::io::Error),
}

fn field(field: &'static str, reason: impl ToString) -> ConfigError {
    ConfigError::Field {
        field,
        reason: reason.to_string(),
    }
}

const KEYS: &[&str] = &[
    "waveform",
    "frequency_hz",
    "amplitude_vpp",
    "phase_rad",
    "divider_ratio",
    "full_scale_v",
    "sample_rate",
    "rms_cycle",
    "mcu_offset_ns",
    "mcu_drift_ppm",
    "mcu_resolution_ns",
    "master_resolution_ns",
    "delay_m2s_ns",
    "delay_s2m_ns",
    "jitter_ns",
    "drop_probability",
    "duration_s",
    "emission",
    "seed",
    "start_unix_us",
    "timestamp_constant",
    "buffer_capacity",
    "reference_bias",
    "sizes",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub waveform: WaveformSpec,
    pub front: FrontEndConfig,
    pub meter: MeterConfig,
    pub mcu_offset_ns: i64,
    pub mcu_drift_ppm: f64,
    pub mcu_resolution_ns: i64,
    pub master_resolution_ns: i64,
    /// Link delays; the seed is taken from `seed`.
    pub link: LinkModel,
    pub duration_ns: i64,
    pub emission: EmissionPolicy,
    pub seed: u64,
    /// UNIX time of the simulation epoch (true time zero).
    pub start_unix_us: u64,
    pub timestamp_constant: u64,
    pub buffer_capacity: usize,
    pub reference_bias: f64,
    pub sizes: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            waveform: WaveformSpec::sine(50.0, 20.0).expect("valid default waveform"),
            front: FrontEndConfig::default(),
            meter: MeterConfig::default(),
            mcu_offset_ns: 0,
            mcu_drift_ppm: 0.0,
            mcu_resolution_ns: MCU_RESOLUTION_NS,
            master_resolution_ns: 1,
            link: LinkModel {
                seed: 1,
                ..LinkModel::symmetric(1_000_000)
            },
            duration_ns: 10 * NANOS_PER_SEC,
            emission: EmissionPolicy::PerRmsCycle,
            seed: 1,
            start_unix_us: DEFAULT_START_UNIX_US,
            timestamp_constant: DEFAULT_TIMESTAMP_CONSTANT,
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
            reference_bias: 0.0,
            sizes: DEFAULT_SIZES.to_vec(),
        }
    }
}

fn parse_sizes(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect()
}

fn seconds_to_ns(name: &'static str, secs: f64) -> Result<i64, ConfigError> {
    if !(secs.is_finite() && secs >= 0.0) {
        return Err(field(name, "must be finite and >= 0"));
    }
    Ok((secs * NANOS_PER_SEC as f64).round() as i64)
}

impl RunConfig {
    pub fn from_kv(text: &str) -> Result<Self, ConfigError> {
        let doc = KvDoc::parse(text)?;
        doc.reject_unknown(KEYS)?;
        let d = Self::default();

        let kind = match doc.get("waveform")? {
            Some(v) => v.parse::<WaveKind>().map_err(|e| field("waveform", e))?,
            None => d.waveform.kind(),
        };
        let waveform = WaveformSpec::new(
            kind,
            doc.parsed("frequency_hz")?
                .unwrap_or(d.waveform.frequency()),
            doc.parsed("amplitude_vpp")?
                .unwrap_or(d.waveform.amplitude_pp()),
            doc.parsed("phase_rad")?.unwrap_or(d.waveform.phase()),
        )
        .map_err(|e| field("waveform", e))?;

        let emission = match doc.get("emission")? {
            Some(v) => v.parse().map_err(|e| field("emission", e))?,
            None => d.emission,
        };
        let sizes = match doc.get("sizes")? {
            Some(v) => parse_sizes(v).map_err(|e| field("sizes", e))?,
            None => d.sizes.clone(),
        };
        let duration_ns = match doc.parsed::<f64>("duration_s")? {
            Some(s) => seconds_to_ns("duration_s", s)?,
            None => d.duration_ns,
        };
        let seed = doc.parsed("seed")?.unwrap_or(d.seed);

        let cfg = Self {
            waveform,
            front: FrontEndConfig {
                divider_ratio: doc
                    .parsed("divider_ratio")?
                    .unwrap_or(d.front.divider_ratio),
                full_scale: doc.parsed("full_scale_v")?.unwrap_or(d.front.full_scale),
            },
            meter: MeterConfig {
                sample_rate: doc.parsed("sample_rate")?.unwrap_or(d.meter.sample_rate),
                rms_cycle: doc.parsed("rms_cycle")?.unwrap_or(d.meter.rms_cycle),
            },
            mcu_offset_ns: doc.parsed("mcu_offset_ns")?.unwrap_or(d.mcu_offset_ns),
            mcu_drift_ppm: doc.parsed("mcu_drift_ppm")?.unwrap_or(d.mcu_drift_ppm),
            mcu_resolution_ns: doc
                .parsed("mcu_resolution_ns")?
                .unwrap_or(d.mcu_resolution_ns),
            master_resolution_ns: doc
                .parsed("master_resolution_ns")?
                .unwrap_or(d.master_resolution_ns),
            link: LinkModel {
                delay_m2s: doc.parsed("delay_m2s_ns")?.unwrap_or(d.link.delay_m2s),
                delay_s2m: doc.parsed("delay_s2m_ns")?.unwrap_or(d.link.delay_s2m),
                jitter: doc.parsed("jitter_ns")?.unwrap_or(d.link.jitter),
                drop_probability: doc
                    .parsed("drop_probability")?
                    .unwrap_or(d.link.drop_probability),
                seed,
            },
            duration_ns,
            emission,
            seed,
            start_unix_us: doc.parsed("start_unix_us")?.unwrap_or(d.start_unix_us),
            timestamp_constant: doc
                .parsed("timestamp_constant")?
                .unwrap_or(d.timestamp_constant),
            buffer_capacity: doc.parsed("buffer_capacity")?.unwrap_or(d.buffer_capacity),
            reference_bias: doc.parsed("reference_bias")?.unwrap_or(d.reference_bias),
            sizes,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_kv(&std::fs::read_to_string(path)?)
    }

    /// Override the seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.link.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.front.validate().map_err(|e| match e {
            crate::metercore::MeterError::DividerRatio(_) => field("divider_ratio", e),
            _ => field("full_scale_v", e),
        })?;
        self.meter.validate().map_err(|e| match e {
            crate::metercore::MeterError::SampleRate => field("sample_rate", e),
            _ => field("rms_cycle", e),
        })?;
        ClockState::new(
            self.mcu_offset_ns,
            self.mcu_drift_ppm,
            self.mcu_resolution_ns,
        )
        .map_err(|e| match e {
            crate::simclock::ClockError::Resolution(_) => field("mcu_resolution_ns", e),
            _ => field("mcu_drift_ppm", e),
        })?;
        if self.master_resolution_ns <= 0 {
            return Err(field("master_resolution_ns", "must be > 0"));
        }
        if self.link.delay_m2s < 0 {
            return Err(field("delay_m2s_ns", "must be >= 0"));
        }
        if self.link.delay_s2m < 0 {
            return Err(field("delay_s2m_ns", "must be >= 0"));
        }
        if self.link.jitter < 0 {
            return Err(field("jitter_ns", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.link.drop_probability) {
            return Err(field("drop_probability", "must lie in [0, 1]"));
        }
        if self.duration_ns < 0 {
            return Err(field("duration_s", "must be >= 0"));
        }
        if !self.start_unix_us.is_multiple_of(TIMESTAMP_TICK_US) {
            return Err(field("start_unix_us", "must be a multiple of 100 us"));
        }
        if self.start_unix_us / TIMESTAMP_TICK_US < self.timestamp_constant {
            return Err(field(
                "timestamp_constant",
                "exceeds start_unix_us / 100; timestamps would underflow",
            ));
        }
        if self.buffer_capacity == 0 {
            return Err(field("buffer_capacity", "must be >= 1"));
        }
        if !(self.reference_bias.is_finite() && self.reference_bias > -1.0) {
            return Err(field("reference_bias", "must be finite and > -1"));
        }
        if self.sizes.is_empty() || self.sizes.iter().any(|&n| n < 2) {
            return Err(field("sizes", "each comparison set size must be >= 2"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let sizes: Vec<String> = self.sizes.iter().map(ToString::to_string).collect();
        KvWriter::new()
            .put("waveform", self.waveform.kind())
            .put("frequency_hz", self.waveform.frequency())
            .put("amplitude_vpp", self.waveform.amplitude_pp())
            .put("phase_rad", self.waveform.phase())
            .put("divider_ratio", self.front.divider_ratio)
            .put("full_scale_v", self.front.full_scale)
            .put("sample_rate", self.meter.sample_rate)
            .put("rms_cycle", self.meter.rms_cycle)
            .put("mcu_offset_ns", self.mcu_offset_ns)
            .put("mcu_drift_ppm", self.mcu_drift_ppm)
            .put("mcu_resolution_ns", self.mcu_resolution_ns)
            .put("master_resolution_ns", self.master_resolution_ns)
            .put("delay_m2s_ns", self.link.delay_m2s)
            .put("delay_s2m_ns", self.link.delay_s2m)
            .put("jitter_ns", self.link.jitter)
            .put("drop_probability", self.link.drop_probability)
            .put("duration_s", self.duration_ns as f64 / NANOS_PER_SEC as f64)
            .put("emission", self.emission)
            .put("seed", self.seed)
            .put("start_unix_us", self.start_unix_us)
            .put("timestamp_constant", self.timestamp_constant)
            .put("buffer_capacity", self.buffer_capacity)
            .put("reference_bias", self.reference_bias)
            .put("sizes", sizes.join(","))
            .finish()
    }
}
