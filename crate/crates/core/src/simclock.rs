//! Simulated clocks on an integer-nanosecond time base.
//!
//! True time is a [`SimInstant`] counted from the simulation epoch. A
//! [`ClockState`] maps true time to a local reading through an anchor point,
//! a linear drift and a tick resolution. Readings are always floored onto the
//! resolution grid, the way a hardware tick counter would report them.
//!
//! The MCU clock additionally carries the `pulse_time` register used by the
//! one-pulse-per-second discipline: after the first synchronization each
//! pulse advances `pulse_time` by exactly one second and re-anchors the local
//! time to it.

use std::fmt;
use std::ops::{Add, Sub};

use thiserror::Error;

pub const NANOS_PER_SEC: i64 = 1_000_000_000;
pub const NANOS_PER_MS: i64 = 1_000_000;
/// MCU tick: 0.1 ms.
pub const MCU_RESOLUTION_NS: i64 = 100_000;
/// Spacing between 1PPS pulses, and the `pulse_time` increment.
pub const PULSE_INTERVAL_NS: i64 = NANOS_PER_SEC;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClockError {
    #[error("pulse received before the first synchronization")]
    NotSynchronized,
    #[error("clock resolution must be > 0 ns (got {0})")]
    Resolution(i64),
    #[error("drift must be finite and > -1e6 ppm (got {0})")]
    Drift(String),
}

/// Nanoseconds on a time line. True time is never negative; local clock
/// readings may be, when a clock starts behind the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimInstant(i64);

impl SimInstant {
    pub const EPOCH: SimInstant = SimInstant(0);

    pub const fn from_nanos(ns: i64) -> Self {
        SimInstant(ns)
    }

    pub const fn from_millis(ms: i64) -> Self {
        SimInstant(ms * NANOS_PER_MS)
    }

    pub const fn from_secs(s: i64) -> Self {
        SimInstant(s * NANOS_PER_SEC)
    }

    pub const fn as_nanos(self) -> i64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC as f64
    }

    /// Floor onto a grid of `resolution` ns.
    pub fn floor_to(self, resolution: i64) -> Self {
        SimInstant(self.0.div_euclid(resolution) * resolution)
    }
}

impl Add<i64> for SimInstant {
    type Output = SimInstant;
    fn add(self, ns: i64) -> SimInstant {
        SimInstant(self.0 + ns)
    }
}

impl Sub<i64> for SimInstant {
    type Output = SimInstant;
    fn sub(self, ns: i64) -> SimInstant {
        SimInstant(self.0 - ns)
    }
}

impl Sub for SimInstant {
    type Output = i64;
    fn sub(self, rhs: SimInstant) -> i64 {
        self.0 - rhs.0
    }
}

impl fmt::Display for SimInstant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ns", self.0)
    }
}

/// Immutable snapshot of a simulated clock. Transitions return new states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockState {
    /// True instant at which the local time was last set.
    anchor_true: SimInstant,
    /// Unquantized local time at `anchor_true`.
    anchor_local: i64,
    drift_ppm: f64,
    resolution: i64,
    /// Pulse register, in ns; `None` until the first synchronization.
    pulse_time: Option<i64>,
    /// True instant of the pulse that `pulse_time` refers to.
    pulse_true: SimInstant,
}

impl ClockState {
    /// A clock that reads `true + offset + drift * true` (floored to
    /// `resolution`) from the epoch.
    pub fn new(offset_ns: i64, drift_ppm: f64, resolution_ns: i64) -> Result<Self, ClockError> {
        if resolution_ns <= 0 {
            return Err(ClockError::Resolution(resolution_ns));
        }
        if !(drift_ppm.is_finite() && drift_ppm > -1e6) {
            return Err(ClockError::Drift(drift_ppm.to_string()));
        }
        Ok(Self {
            anchor_true: SimInstant::EPOCH,
            anchor_local: offset_ns,
            drift_ppm,
            resolution: resolution_ns,
            pulse_time: None,
            pulse_true: SimInstant::EPOCH,
        })
    }

    /// Ideal reference clock: no offset, no drift.
    pub fn ideal(resolution_ns: i64) -> Result<Self, ClockError> {
        Self::new(0, 0.0, resolution_ns)
    }

    /// MCU clock with the 0.1 ms tick.
    pub fn mcu(offset_ns: i64, drift_ppm: f64) -> Result<Self, ClockError> {
        Self::new(offset_ns, drift_ppm, MCU_RESOLUTION_NS)
    }

    pub fn resolution(&self) -> i64 {
        self.resolution
    }

    pub fn drift_ppm(&self) -> f64 {
        self.drift_ppm
    }

    pub fn pulse_time(&self) -> Option<SimInstant> {
        self.pulse_time.map(SimInstant)
    }

    /// `pulse_time` in milliseconds (0.1 ms granularity on the MCU tick).
    pub fn pulse_time_ms(&self) -> Option<f64> {
        self.pulse_time.map(|ns| ns as f64 / NANOS_PER_MS as f64)
    }

    /// True instant of the most recent pulse (or synchronization pulse).
    pub fn pulse_true(&self) -> SimInstant {
        self.pulse_true
    }

    pub fn is_synchronized(&self) -> bool {
        self.pulse_time.is_some()
    }

    /// Unquantized local time at `true_now`, in ns.
    fn local_exact(&self, true_now: SimInstant) -> i64 {
        let elapsed = true_now - self.anchor_true;
        let drift = (elapsed as f64 * self.drift_ppm * 1e-6).floor() as i64;
        self.anchor_local + elapsed + drift
    }

    /// Local reading at `true_now`, floored to the resolution grid.
    pub fn read(&self, true_now: SimInstant) -> SimInstant {
        SimInstant(self.local_exact(true_now)).floor_to(self.resolution)
    }

    /// Error of the local reading against true time, in ns.
    pub fn error(&self, true_now: SimInstant) -> i64 {
        self.read(true_now) - true_now
    }

    /// Offset of the local clock from true time at the epoch, as currently
    /// anchored (drift excluded).
    pub fn effective_offset(&self) -> i64 {
        self.anchor_local - self.anchor_true.as_nanos()
    }

    /// Subtract a measured offset from the local time.
    pub fn apply_correction(&self, offset_ns: i64) -> Self {
        Self {
            anchor_local: self.anchor_local - offset_ns,
            ..*self
        }
    }

    /// Record the first synchronization: the pulse that started it arrived at
    /// `pulse_true` and corresponds to local time `pulse_time`.
    pub fn with_pulse_time(&self, pulse_time: SimInstant, pulse_true: SimInstant) -> Self {
        Self {
            pulse_time: Some(pulse_time.floor_to(self.resolution).as_nanos()),
            pulse_true,
            ..*self
        }
    }

    /// Handle a 1PPS pulse: advance `pulse_time` by one second and set the
    /// local time to it. The pulse arrives one second of true time after the
    /// previous one.
    pub fn pulse_tick(&self) -> Result<Self, ClockError> {
        let pulse_time = self.pulse_time.ok_or(ClockError::NotSynchronized)? + PULSE_INTERVAL_NS;
        let pulse_true = self.pulse_true + PULSE_INTERVAL_NS;
        Ok(Self {
            anchor_true: pulse_true,
            anchor_local: pulse_time,
            pulse_time: Some(pulse_time),
            pulse_true,
            ..*self
        })
    }

    /// Apply every pulse due at or before `true_now`.
    pub fn advance_pulses(&self, true_now: SimInstant) -> Result<Self, ClockError> {
        let mut clock = *self;
        while clock.pulse_true + PULSE_INTERVAL_NS <= true_now {
            clock = clock.pulse_tick()?;
        }
        Ok(clock)
    }
}
