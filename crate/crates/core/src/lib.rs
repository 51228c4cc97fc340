//! Desk-scale simulator of a PMU-like metering platform.
//!
//! The chain runs from an analytic input signal through a virtual metering
//! IC, a PTP-disciplined MCU clock and a 12-byte binary frame transport, into
//! a two-stage capture server, a raw-to-CSV parser, and finally a statistical
//! comparison against an analytic reference meter.
//!
//! | module        | role                                                   |
//! |---------------|--------------------------------------------------------|
//! | [`waveform`]  | sine / triangle test signals                           |
//! | [`simclock`]  | integer-ns clocks with offset, drift, 1PPS discipline  |
//! | [`ptpsync`]   | four-timestamp delay-request synchronization           |
//! | [`metercore`] | divider front end, 24-bit sampling, RMS cycles         |
//! | [`framecodec`]| 12-byte frame and 40-bit compressed timestamp          |
//! | [`capture`]   | transmitter, receiver/writer pipeline, parser          |
//! | [`analysis`]  | mean, `s`, mean percentage difference, reports         |
//! | [`session`]   | end-to-end simulate / syncdemo / report drivers        |

pub mod analysis;
pub mod capture;
pub mod config;
pub mod framecodec;
pub mod kv;
pub mod metercore;
pub mod ptpsync;
pub mod session;
pub mod simclock;
pub mod waveform;

pub use config::RunConfig;
