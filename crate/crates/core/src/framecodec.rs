//! The 12-byte meter-to-server frame and its compressed timestamp.
//!
//! ```text
//!  byte  0      1..=3            4..=6          7..=11
//!       +-----+----------------+--------------+--------------------+
//!       | ind | inst (i24, BE) | rms (u24,BE) | timestamp (u40,BE) |
//!       +-----+----------------+--------------+--------------------+
//! ```
//!
//! The timestamp is `floor(unix_us / 100) - constant`, i.e. 100 us ticks
//! relative to a base constant tracked by the server. When a timestamp no
//! longer fits in 40 bits the base is moved forward and the move is recorded
//! so that absolute time can be reconstructed across the boundary.

use thiserror::Error;

use crate::metercore::{RmsCode, SampleCode};

pub const FRAME_LEN: usize = 12;
pub const INDICATOR_DATA: u8 = 0xD1;
pub const INDICATOR_STOP: u8 = 0x57;
/// Initial base constant, in 100 us units.
pub const DEFAULT_TIMESTAMP_CONSTANT: u64 = 16_000_000_000_000;
pub const TIMESTAMP_BITS: u32 = 40;
pub const TIMESTAMP_LIMIT: u64 = 1 << TIMESTAMP_BITS;
/// Microseconds per timestamp tick.
pub const TIMESTAMP_TICK_US: u64 = 100;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("unknown indicator byte 0x{0:02X}")]
    UnknownIndicator(u8),
    #[error("frame must be {FRAME_LEN} bytes (got {0})")]
    Length(usize),
    #[error("timestamp code {0} does not fit in 40 bits")]
    TimestampRange(u64),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TimestampError {
    #[error("timestamp {unix_us} us predates the base constant {constant}")]
    Underflow { unix_us: u64, constant: u64 },
    #[error("timestamp {unix_us} us overflows 40 bits above base {constant}; rebase required")]
    Overflow { unix_us: u64, constant: u64 },
}

/// 40-bit compressed timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TimestampCode(u64);

impl TimestampCode {
    pub const MAX: TimestampCode = TimestampCode(TIMESTAMP_LIMIT - 1);

    pub fn new(code: u64) -> Result<Self, FrameError> {
        if code < TIMESTAMP_LIMIT {
            Ok(TimestampCode(code))
        } else {
            Err(FrameError::TimestampRange(code))
        }
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn to_bytes(self) -> [u8; 5] {
        let be = self.0.to_be_bytes();
        [be[3], be[4], be[5], be[6], be[7]]
    }

    pub fn from_bytes(bytes: [u8; 5]) -> Self {
        let mut be = [0u8; 8];
        be[3..].copy_from_slice(&bytes);
        TimestampCode(u64::from_be_bytes(be))
    }
}

/// Subtractive base for timestamp compression, in 100 us units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimestampBase {
    pub constant: u64,
}

impl Default for TimestampBase {
    fn default() -> Self {
        Self {
            constant: DEFAULT_TIMESTAMP_CONSTANT,
        }
    }
}

impl TimestampBase {
    pub fn new(constant: u64) -> Self {
        Self { constant }
    }
}

pub fn encode_timestamp(
    unix_us: u64,
    base: TimestampBase,
) -> Result<TimestampCode, TimestampError> {
    let ticks = unix_us / TIMESTAMP_TICK_US;
    let code = ticks
        .checked_sub(base.constant)
        .ok_or(TimestampError::Underflow {
            unix_us,
            constant: base.constant,
        })?;
    if code >= TIMESTAMP_LIMIT {
        return Err(TimestampError::Overflow {
            unix_us,
            constant: base.constant,
        });
    }
    Ok(TimestampCode(code))
}

pub fn decode_timestamp(code: TimestampCode, base: TimestampBase) -> u64 {
    (code.0 + base.constant) * TIMESTAMP_TICK_US
}

/// New base with `constant = floor(unix_us / 100)`.
pub fn rebase(_base: TimestampBase, unix_us: u64) -> TimestampBase {
    TimestampBase::new(unix_us / TIMESTAMP_TICK_US)
}

/// A base change taking effect from `frame_index` onward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RebaseEvent {
    pub frame_index: u64,
    pub constant: u64,
}

/// Server-side bookkeeping of the base constant. Rebases only on actual
/// overflow and records each event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestampBook {
    initial: TimestampBase,
    current: TimestampBase,
    events: Vec<RebaseEvent>,
}

impl TimestampBook {
    pub fn new(initial: TimestampBase) -> Self {
        Self {
            initial,
            current: initial,
            events: Vec::new(),
        }
    }

    pub fn initial(&self) -> TimestampBase {
        self.initial
    }

    pub fn current(&self) -> TimestampBase {
        self.current
    }

    pub fn events(&self) -> &[RebaseEvent] {
        &self.events
    }

    /// Compress the timestamp of frame `frame_index`, moving the base forward
    /// if it would overflow.
    pub fn stamp(
        &mut self,
        unix_us: u64,
        frame_index: u64,
    ) -> Result<TimestampCode, TimestampError> {
        match encode_timestamp(unix_us, self.current) {
            Err(TimestampError::Overflow { .. }) => {
                self.current = rebase(self.current, unix_us);
                self.events.push(RebaseEvent {
                    frame_index,
                    constant: self.current.constant,
                });
                encode_timestamp(unix_us, self.current)
            }
            other => other,
        }
    }

    /// Base in force for `frame_index`.
    pub fn base_for(&self, frame_index: u64) -> TimestampBase {
        base_for(self.initial, &self.events, frame_index)
    }
}

/// Base in force for `frame_index` given the initial base and recorded
/// events (sorted by frame index).
pub fn base_for(initial: TimestampBase, events: &[RebaseEvent], frame_index: u64) -> TimestampBase {
    events
        .iter()
        .take_while(|e| e.frame_index <= frame_index)
        .last()
        .map_or(initial, |e| TimestampBase::new(e.constant))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DataFrame {
    pub inst: SampleCode,
    pub rms: RmsCode,
    pub tstamp: TimestampCode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Frame {
    Data(DataFrame),
    Stop,
}

impl Frame {
    pub fn encode(&self) -> [u8; FRAME_LEN] {
        match self {
            Frame::Data(d) => encode_frame(d),
            Frame::Stop => stop_marker(),
        }
    }
}

pub fn encode_frame(frame: &DataFrame) -> [u8; FRAME_LEN] {
    let mut out = [0u8; FRAME_LEN];
    out[0] = INDICATOR_DATA;
    out[1..4].copy_from_slice(&frame.inst.code().to_be_bytes()[1..]);
    out[4..7].copy_from_slice(&frame.rms.code().to_be_bytes()[1..]);
    out[7..12].copy_from_slice(&frame.tstamp.to_bytes());
    out
}

/// Stop marker: the stop indicator followed by zero padding.
pub fn stop_marker() -> [u8; FRAME_LEN] {
    let mut out = [0u8; FRAME_LEN];
    out[0] = INDICATOR_STOP;
    out
}

pub fn decode_frame(bytes: &[u8]) -> Result<Frame, FrameError> {
    let bytes: &[u8; FRAME_LEN] = bytes
        .try_into()
        .map_err(|_| FrameError::Length(bytes.len()))?;
    match bytes[0] {
        INDICATOR_DATA => {
            // sign-extend the 24-bit field through the top byte of an i32
            let inst = i32::from_be_bytes([bytes[1], bytes[2], bytes[3], 0]) >> 8;
            let rms = u32::from_be_bytes([0, bytes[4], bytes[5], bytes[6]]);
            let mut ts = [0u8; 5];
            ts.copy_from_slice(&bytes[7..12]);
            Ok(Frame::Data(DataFrame {
                inst: SampleCode::new(inst).expect("24-bit field is always in range"),
                rms: RmsCode::new(rms).expect("24-bit field is always in range"),
                tstamp: TimestampCode::from_bytes(ts),
            }))
        }
        INDICATOR_STOP => Ok(Frame::Stop),
        other => Err(FrameError::UnknownIndicator(other)),
    }
}
