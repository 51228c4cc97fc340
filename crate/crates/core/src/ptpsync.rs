//! Four-timestamp delay-request synchronization between the server master
//! clock and the MCU clock.
//!
//! The exchange runs as one deterministic transaction over a simulated link:
//!
//! ```text
//!   master                      slave (MCU)
//!     t1 ---- Sync(t1) -------->  t2
//!     t4 <--- Delay_Req -------  t3
//!        ---- Delay_Resp(t4) -->  apply offset, derive pulse_time
//! ```
//!
//! Each timestamp is taken from its own party's quantized clock.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::simclock::{ClockState, SimInstant};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SyncError {
    #[error("timed out waiting for {0} message")]
    Timeout(&'static str),
    #[error("invalid link model: {0}")]
    Link(String),
}

/// Path latency model between master and slave.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkModel {
    pub delay_m2s: i64,
    pub delay_s2m: i64,
    pub jitter: i64,
    /// Probability that any single message is lost. Off by default.
    pub drop_probability: f64,
    pub seed: u64,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            delay_m2s: 0,
            delay_s2m: 0,
            jitter: 0,
            drop_probability: 0.0,
            seed: 0,
        }
    }
}

impl LinkModel {
    pub fn symmetric(delay_ns: i64) -> Self {
        Self {
            delay_m2s: delay_ns,
            delay_s2m: delay_ns,
            ..Self::default()
        }
    }

    pub fn asymmetric(delay_m2s: i64, delay_s2m: i64) -> Self {
        Self {
            delay_m2s,
            delay_s2m,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SyncError> {
        if self.delay_m2s < 0 || self.delay_s2m < 0 {
            return Err(SyncError::Link("delays must be >= 0".into()));
        }
        if self.jitter < 0 {
            return Err(SyncError::Link("jitter must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(SyncError::Link(
                "drop_probability must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Instantiate the link with its own seeded random stream.
    pub fn open(&self) -> Result<SimLink, SyncError> {
        self.validate()?;
        Ok(SimLink {
            model: self.clone(),
            rng: ChaCha8Rng::seed_from_u64(self.seed),
        })
    }
}

/// A link with live random state. Identical seeds give identical delay
/// sequences.
#[derive(Debug, Clone)]
pub struct SimLink {
    model: LinkModel,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    MasterToSlave,
    SlaveToMaster,
}

impl SimLink {
    pub fn model(&self) -> &LinkModel {
        &self.model
    }

    /// Sample one transit delay, or `None` if the message is lost.
    fn transit(&mut self, dir: Direction) -> Option<i64> {
        let m = &self.model;
        if m.drop_probability > 0.0 && self.rng.gen_bool(m.drop_probability) {
            return None;
        }
        let nominal = match dir {
            Direction::MasterToSlave => m.delay_m2s,
            Direction::SlaveToMaster => m.delay_s2m,
        };
        if m.jitter == 0 {
            return Some(nominal);
        }
        let lo = (nominal - m.jitter).max(0);
        Some(self.rng.gen_range(lo..=nominal + m.jitter))
    }
}

/// Result of one exchange: the four timestamps and the computed offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PtpExchange {
    pub t1: i64,
    pub t2: i64,
    pub t3: i64,
    pub t4: i64,
    pub offset: i64,
}

/// `((t2 - t1) - (t4 - t3)) / 2`, truncated toward zero.
pub fn compute_offset(t1: i64, t2: i64, t3: i64, t4: i64) -> i64 {
    ((t2 - t1) - (t4 - t3)) / 2
}

/// Everything the slave learns from one synchronization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncOutcome {
    pub exchange: PtpExchange,
    /// Slave clock after the correction, with `pulse_time` set.
    pub slave: ClockState,
    /// Uncorrected MCU time when the triggering pulse arrived.
    pub start_local: SimInstant,
    /// Corrected MCU time when the Delay_Resp arrived.
    pub end_local: SimInstant,
    /// True instant at which the exchange finished.
    pub end_true: SimInstant,
}

/// Run one Sync / Delay_Req / Delay_Resp exchange starting at `true_now`,
/// the true instant of the pulse that triggers synchronization.
///
/// The slave's pulse reception time is derived from its uncorrected start
/// and end readings: `pulse_time = end_corrected - (end_raw - start_raw)`.
pub fn run_sync(
    master: &ClockState,
    slave: &ClockState,
    link: &mut SimLink,
    true_now: SimInstant,
) -> Result<SyncOutcome, SyncError> {
    let start_local = slave.read(true_now);

    let t1 = master.read(true_now).as_nanos();
    let arrive_sync = true_now
        + link
            .transit(Direction::MasterToSlave)
            .ok_or(SyncError::Timeout("Sync"))?;
    let t2 = slave.read(arrive_sync).as_nanos();

    // Delay_Req leaves as soon as Sync is handled.
    let t3 = slave.read(arrive_sync).as_nanos();
    let arrive_req = arrive_sync
        + link
            .transit(Direction::SlaveToMaster)
            .ok_or(SyncError::Timeout("Delay_Req"))?;
    let t4 = master.read(arrive_req).as_nanos();

    let end_true = arrive_req
        + link
            .transit(Direction::MasterToSlave)
            .ok_or(SyncError::Timeout("Delay_Resp"))?;

    let offset = compute_offset(t1, t2, t3, t4);
    let corrected = slave.apply_correction(offset);

    let end_raw = slave.read(end_true);
    let end_local = corrected.read(end_true);
    let pulse_time = end_local - (end_raw - start_local);

    Ok(SyncOutcome {
        exchange: PtpExchange {
            t1,
            t2,
            t3,
            t4,
            offset,
        },
        slave: corrected.with_pulse_time(pulse_time, true_now),
        start_local,
        end_local,
        end_true,
    })
}
