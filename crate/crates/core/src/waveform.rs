//! Analytic test signals fed into the front end.
//!
//! Waveforms are pure functions of time, so any instant can be sampled in any
//! order and the simulation stays deterministic.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WaveformError {
    #[error("frequency must be finite and > 0 (got {0})")]
    Frequency(f64),
    #[error("amplitude_pp must be finite and >= 0 (got {0})")]
    Amplitude(f64),
    #[error("phase must lie in [0, 2pi) (got {0})")]
    Phase(f64),
    #[error("sample time must be finite and >= 0 (got {0})")]
    Time(f64),
    #[error("unknown waveform kind `{0}` (expected `sine` or `triangle`)")]
    Kind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WaveKind {
    Sine,
    Triangle,
}

impl fmt::Display for WaveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WaveKind::Sine => "sine",
            WaveKind::Triangle => "triangle",
        })
    }
}

impl FromStr for WaveKind {
    type Err = WaveformError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sine" | "sin" => Ok(WaveKind::Sine),
            "triangle" | "tri" => Ok(WaveKind::Triangle),
            other => Err(WaveformError::Kind(other.to_string())),
        }
    }
}

/// Periodic input signal: kind, frequency (Hz), peak-to-peak amplitude (V) and
/// phase (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveformSpec {
    kind: WaveKind,
    frequency: f64,
    amplitude_pp: f64,
    phase: f64,
}

impl WaveformSpec {
    pub fn new(
        kind: WaveKind,
        frequency: f64,
        amplitude_pp: f64,
        phase: f64,
    ) -> Result<Self, WaveformError> {
        if !(frequency.is_finite() && frequency > 0.0) {
            return Err(WaveformError::Frequency(frequency));
        }
        if !(amplitude_pp.is_finite() && amplitude_pp >= 0.0) {
            return Err(WaveformError::Amplitude(amplitude_pp));
        }
        if !(phase.is_finite() && (0.0..TAU).contains(&phase)) {
            return Err(WaveformError::Phase(phase));
        }
        Ok(Self {
            kind,
            frequency,
            amplitude_pp,
            phase,
        })
    }

    pub fn sine(frequency: f64, amplitude_pp: f64) -> Result<Self, WaveformError> {
        Self::new(WaveKind::Sine, frequency, amplitude_pp, 0.0)
    }

    pub fn triangle(frequency: f64, amplitude_pp: f64) -> Result<Self, WaveformError> {
        Self::new(WaveKind::Triangle, frequency, amplitude_pp, 0.0)
    }

    /// Same signal with a different phase.
    pub fn with_phase(self, phase: f64) -> Result<Self, WaveformError> {
        Self::new(self.kind, self.frequency, self.amplitude_pp, phase)
    }

    pub fn kind(&self) -> WaveKind {
        self.kind
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    pub fn amplitude_pp(&self) -> f64 {
        self.amplitude_pp
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn peak(&self) -> f64 {
        self.amplitude_pp / 2.0
    }

    /// Instantaneous value at `t` seconds.
    ///
    /// The triangle is phase-aligned with the sine: phase 0 starts at 0 V
    /// rising and peaks at a quarter period.
    pub fn sample(&self, t: f64) -> Result<f64, WaveformError> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(WaveformError::Time(t));
        }
        let peak = self.peak();
        let value = match self.kind {
            WaveKind::Sine => peak * (TAU * self.frequency * t + self.phase).sin(),
            WaveKind::Triangle => {
                let cycles = self.frequency * t + self.phase / TAU;
                peak * unit_triangle(cycles - cycles.floor())
            }
        };
        Ok(value.clamp(-peak, peak))
    }

    /// Continuous-time RMS over one period.
    pub fn analytic_rms(&self) -> f64 {
        match self.kind {
            WaveKind::Sine => self.peak() / 2f64.sqrt(),
            WaveKind::Triangle => self.peak() / 3f64.sqrt(),
        }
    }
}

/// Unit triangle over one period, `u` in [0, 1).
fn unit_triangle(u: f64) -> f64 {
    if u < 0.25 {
        4.0 * u
    } else if u < 0.75 {
        2.0 - 4.0 * u
    } else {
        4.0 * u - 4.0
    }
}

/// Convenience for tests and docs: period in seconds.
pub fn period(spec: &WaveformSpec) -> f64 {
    1.0 / spec.frequency
}
