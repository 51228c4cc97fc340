//! Virtual metering IC: divider front end, 24-bit sampling, and RMS cycles.
//!
//! Instantaneous samples are normalized two's complement codes in
//! `[-2^23, 2^23 - 1]` (value `code / 2^23`). RMS results are unsigned codes
//! in `[0, 2^24 - 1]` (value `code / 2^24`). The RMS is computed from the
//! quantized sample codes, as the IC computes from its own samples.

use thiserror::Error;

use crate::simclock::{ClockError, ClockState, SimInstant, NANOS_PER_SEC};
use crate::waveform::WaveformSpec;

pub const SAMPLE_SCALE: f64 = (1u32 << 23) as f64;
pub const RMS_SCALE: f64 = (1u32 << 24) as f64;
pub const SAMPLE_MIN: i32 = -(1 << 23);
pub const SAMPLE_MAX: i32 = (1 << 23) - 1;
pub const RMS_MAX: u32 = (1 << 24) - 1;

pub const DEFAULT_DIVIDER_RATIO: f64 = 0.02120;
/// 500 mVpp differential input limit, i.e. 0.25 V peak.
pub const DEFAULT_FULL_SCALE_V: f64 = 0.25;
pub const DEFAULT_SAMPLE_RATE: u32 = 4000;
pub const DEFAULT_RMS_CYCLE: u32 = 80;

#[derive(Debug, Error, PartialEq)]
pub enum MeterError {
    #[error("divider_ratio must lie in (0, 1) (got {0})")]
    DividerRatio(f64),
    #[error("full_scale_v must be finite and > 0 (got {0})")]
    FullScale(f64),
    #[error("sample_rate must be > 0")]
    SampleRate,
    #[error("rms_cycle must be > 0")]
    RmsCycle,
    #[error("RMS window holds {got} samples, expected {expected}")]
    WindowLength { expected: usize, got: usize },
    #[error("sample code {0} outside the 24-bit signed range")]
    SampleRange(i32),
    #[error("RMS code {0} outside the 24-bit unsigned range")]
    RmsRange(u32),
    #[error(transparent)]
    Waveform(#[from] crate::waveform::WaveformError),
    #[error(transparent)]
    Clock(#[from] ClockError),
}

/// 24-bit normalized two's complement sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SampleCode(i32);

impl SampleCode {
    pub const MIN: SampleCode = SampleCode(SAMPLE_MIN);
    pub const MAX: SampleCode = SampleCode(SAMPLE_MAX);

    pub fn new(code: i32) -> Result<Self, MeterError> {
        if (SAMPLE_MIN..=SAMPLE_MAX).contains(&code) {
            Ok(SampleCode(code))
        } else {
            Err(MeterError::SampleRange(code))
        }
    }

    pub fn code(self) -> i32 {
        self.0
    }

    /// Normalized value in [-1, 1).
    pub fn normalized(self) -> f64 {
        self.0 as f64 / SAMPLE_SCALE
    }
}

/// 24-bit unsigned RMS result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct RmsCode(u32);

impl RmsCode {
    pub const MAX: RmsCode = RmsCode(RMS_MAX);

    pub fn new(code: u32) -> Result<Self, MeterError> {
        if code <= RMS_MAX {
            Ok(RmsCode(code))
        } else {
            Err(MeterError::RmsRange(code))
        }
    }

    pub fn code(self) -> u32 {
        self.0
    }

    /// Fraction of full scale in [0, 1).
    pub fn fraction(self) -> f64 {
        self.0 as f64 / RMS_SCALE
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontEndConfig {
    pub divider_ratio: f64,
    /// Volts at the IC input mapped to normalized 1.0.
    pub full_scale: f64,
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        Self {
            divider_ratio: DEFAULT_DIVIDER_RATIO,
            full_scale: DEFAULT_FULL_SCALE_V,
        }
    }
}

impl FrontEndConfig {
    pub fn validate(&self) -> Result<(), MeterError> {
        if !(self.divider_ratio > 0.0 && self.divider_ratio < 1.0) {
            return Err(MeterError::DividerRatio(self.divider_ratio));
        }
        if !(self.full_scale.is_finite() && self.full_scale > 0.0) {
            return Err(MeterError::FullScale(self.full_scale));
        }
        Ok(())
    }

    /// Line-side volts represented by one RMS output LSB.
    pub fn rms_lsb_volts(&self) -> f64 {
        self.full_scale / RMS_SCALE / self.divider_ratio
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeterConfig {
    pub sample_rate: u32,
    pub rms_cycle: u32,
}

impl Default for MeterConfig {
    fn default() -> Self {
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            rms_cycle: DEFAULT_RMS_CYCLE,
        }
    }
}

impl MeterConfig {
    pub fn validate(&self) -> Result<(), MeterError> {
        if self.sample_rate == 0 {
            return Err(MeterError::SampleRate);
        }
        if self.rms_cycle == 0 {
            return Err(MeterError::RmsCycle);
        }
        Ok(())
    }

    pub fn rms_rate(&self) -> f64 {
        self.sample_rate as f64 / self.rms_cycle as f64
    }

    /// True instant of sample `index`, counted from `start`.
    pub fn sample_instant(&self, start: SimInstant, index: u64) -> SimInstant {
        let ns = index as u128 * NANOS_PER_SEC as u128 / self.sample_rate as u128;
        start + ns as i64
    }

    /// Number of whole samples that fit in `duration_ns`.
    pub fn samples_in(&self, duration_ns: i64) -> u64 {
        (duration_ns.max(0) as u128 * self.sample_rate as u128 / NANOS_PER_SEC as u128) as u64
    }
}

pub fn front_end(v_in: f64, cfg: &FrontEndConfig) -> f64 {
    v_in * cfg.divider_ratio
}

/// Round-half-even onto the 24-bit grid, clamped to the code range.
pub fn quantize(v_ic: f64, cfg: &FrontEndConfig) -> SampleCode {
    let scaled = (v_ic / cfg.full_scale * SAMPLE_SCALE).round_ties_even();
    SampleCode(scaled.clamp(SAMPLE_MIN as f64, SAMPLE_MAX as f64) as i32)
}

/// RMS of one window of sample codes.
///
/// `code = floor(2^24 * sqrt(sum(c_i^2) / (N * 2^46)))`, which reduces to the
/// exact integer `isqrt(4 * sum(c_i^2) / N)`.
pub fn rms_cycle(samples: &[SampleCode], mcfg: &MeterConfig) -> Result<RmsCode, MeterError> {
    let expected = mcfg.rms_cycle as usize;
    if samples.len() != expected {
        return Err(MeterError::WindowLength {
            expected,
            got: samples.len(),
        });
    }
    let sum_sq: u128 = samples
        .iter()
        .map(|s| {
            let c = s.0 as i64;
            (c * c) as u128
        })
        .sum();
    let code = (4 * sum_sq / expected as u128).isqrt();
    Ok(RmsCode(code.min(RMS_MAX as u128) as u32))
}

/// Line-side RMS volts for an RMS code.
pub fn decode_voltage(rms: RmsCode, cfg: &FrontEndConfig) -> f64 {
    rms.fraction() * cfg.full_scale / cfg.divider_ratio
}

/// Line-side instantaneous volts for a sample code.
pub fn decode_instantaneous(sample: SampleCode, cfg: &FrontEndConfig) -> f64 {
    sample.normalized() * cfg.full_scale / cfg.divider_ratio
}

/// One IC sample as delivered to the MCU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeterSample {
    pub index: u64,
    pub true_time: SimInstant,
    /// MCU clock reading when the sample was taken.
    pub mcu_time: SimInstant,
    pub inst: SampleCode,
    /// Latest completed RMS (zero before the first cycle completes).
    pub rms: RmsCode,
    /// Set on the sample that closes an RMS window.
    pub rms_updated: bool,
}

/// Sequential sample stream on a uniform true-time grid.
///
/// The MCU clock follows the 1PPS discipline: every pulse due before a
/// sample is applied first, so each timestamp reflects the disciplined clock.
/// RMS window `k` covers samples `[N*k, N*k + N - 1]`.
#[derive(Debug, Clone)]
pub struct Capture {
    spec: WaveformSpec,
    front: FrontEndConfig,
    meter: MeterConfig,
    clock: ClockState,
    start: SimInstant,
    next: u64,
    limit: Option<u64>,
    window: Vec<SampleCode>,
    latest: RmsCode,
}

impl Capture {
    pub fn new(
        spec: WaveformSpec,
        front: FrontEndConfig,
        meter: MeterConfig,
        clock: ClockState,
        start: SimInstant,
    ) -> Result<Self, MeterError> {
        front.validate()?;
        meter.validate()?;
        Ok(Self {
            spec,
            front,
            meter,
            clock,
            start,
            next: 0,
            limit: None,
            window: Vec::with_capacity(meter.rms_cycle as usize),
            latest: RmsCode::default(),
        })
    }

    /// Restrict the iterator to the samples of `duration_ns`.
    pub fn with_duration(mut self, duration_ns: i64) -> Self {
        self.limit = Some(self.meter.samples_in(duration_ns));
        self
    }

    pub fn clock(&self) -> &ClockState {
        &self.clock
    }

    pub fn samples_taken(&self) -> u64 {
        self.next
    }

    /// Take the next sample regardless of the duration limit.
    pub fn take_sample(&mut self) -> Result<MeterSample, MeterError> {
        let index = self.next;
        let true_time = self.meter.sample_instant(self.start, index);
        if self.clock.is_synchronized() {
            self.clock = self.clock.advance_pulses(true_time)?;
        }
        let volts = self.spec.sample(true_time.as_secs_f64())?;
        let inst = quantize(front_end(volts, &self.front), &self.front);
        self.window.push(inst);
        let rms_updated = self.window.len() == self.meter.rms_cycle as usize;
        if rms_updated {
            self.latest = rms_cycle(&self.window, &self.meter)?;
            self.window.clear();
        }
        self.next += 1;
        Ok(MeterSample {
            index,
            true_time,
            mcu_time: self.clock.read(true_time),
            inst,
            rms: self.latest,
            rms_updated,
        })
    }
}

impl Iterator for Capture {
    type Item = Result<MeterSample, MeterError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.limit.is_some_and(|limit| self.next >= limit) {
            return None;
        }
        Some(self.take_sample())
    }
}

/// Stream samples for `duration_ns` of true time starting at `start`.
pub fn run_capture(
    spec: WaveformSpec,
    front: FrontEndConfig,
    meter: MeterConfig,
    clock: ClockState,
    start: SimInstant,
    duration_ns: i64,
) -> Result<Capture, MeterError> {
    Ok(Capture::new(spec, front, meter, clock, start)?.with_duration(duration_ns))
}
