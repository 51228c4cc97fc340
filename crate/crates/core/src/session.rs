//! End-to-end drivers: simulate a capture, run repeated synchronizations,
//! and build the comparison report from parsed records.

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::{self, AnalysisError, ComparisonReport, ReferencePoint};
use crate::capture::{
    capture_to_file, sidecar_path, CaptureError, CaptureMetadata, CaptureRecord, FrameReader,
    MeterTransmitter, PipelineReport,
};
use crate::config::RunConfig;
use crate::framecodec::TimestampBase;
use crate::metercore::{run_capture, MeterError};
use crate::ptpsync::{run_sync, SyncError, SyncOutcome};
use crate::simclock::{ClockError, ClockState, SimInstant, NANOS_PER_SEC};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("clock: {0}")]
    Clock(#[from] ClockError),
    #[error("sync: {0}")]
    Sync(#[from] SyncError),
    #[error("meter: {0}")]
    Meter(#[from] MeterError),
    #[error("capture: {0}")]
    Capture(#[from] CaptureError),
    #[error("analysis: {0}")]
    Analysis(#[from] AnalysisError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// True instant of the pulse that triggers the initial synchronization.
pub const SYNC_PULSE: SimInstant = SimInstant::EPOCH;

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub sync: SyncOutcome,
    /// True instant of the first sample.
    pub capture_start: SimInstant,
    pub pipeline: PipelineReport,
    pub metadata: CaptureMetadata,
    pub bin_path: PathBuf,
    pub meta_path: PathBuf,
}

fn clocks(cfg: &RunConfig) -> Result<(ClockState, ClockState), ClockError> {
    let master = ClockState::ideal(cfg.master_resolution_ns)?;
    let slave = ClockState::new(cfg.mcu_offset_ns, cfg.mcu_drift_ppm, cfg.mcu_resolution_ns)?;
    Ok((master, slave))
}

/// Sync the MCU at the first pulse, capture from the next whole second for
/// the configured duration, stream the frames through the two-stage capture
/// pipeline into `bin_path`, and write the metadata sidecar next to it.
pub fn simulate(cfg: &RunConfig, bin_path: &Path) -> Result<SimulationOutcome, SessionError> {
    let (master, slave) = clocks(cfg)?;
    let mut link = cfg.link.open()?;
    let sync = run_sync(&master, &slave, &mut link, SYNC_PULSE)?;

    let end = sync.end_true.as_nanos();
    let capture_start = SimInstant::from_nanos((end / NANOS_PER_SEC + 1) * NANOS_PER_SEC);
    let capture = run_capture(
        cfg.waveform,
        cfg.front,
        cfg.meter,
        sync.slave,
        capture_start,
        cfg.duration_ns,
    )?;
    let base = TimestampBase::new(cfg.timestamp_constant);
    let mut transmitter = MeterTransmitter::new(capture, base, cfg.emission, cfg.start_unix_us);

    let pipeline = capture_to_file(
        FrameReader::new(&mut transmitter),
        bin_path,
        cfg.buffer_capacity,
    )?;

    let mut metadata = CaptureMetadata::new(base, &cfg.front, &cfg.meter);
    metadata.rebases = transmitter.book().events().to_vec();
    let meta_path = sidecar_path(bin_path);
    metadata.write(&meta_path)?;

    Ok(SimulationOutcome {
        sync,
        capture_start,
        pipeline,
        metadata,
        bin_path: bin_path.to_path_buf(),
        meta_path,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncDemoRow {
    pub repetition: u32,
    pub t1: i64,
    pub t2: i64,
    pub t3: i64,
    pub t4: i64,
    pub offset: i64,
    /// Slave minus master reading right after the exchange.
    pub residual: i64,
}

/// Repeat the synchronization once per second on the same (drifting) MCU
/// clock, starting from the configured offset.
pub fn sync_demo(cfg: &RunConfig, repetitions: u32) -> Result<Vec<SyncDemoRow>, SessionError> {
    let (master, mut slave) = clocks(cfg)?;
    let mut link = cfg.link.open()?;
    let mut rows = Vec::with_capacity(repetitions as usize);
    for repetition in 0..repetitions {
        let now = SimInstant::from_secs(repetition as i64);
        let out = run_sync(&master, &slave, &mut link, now)?;
        slave = out.slave;
        let e = out.exchange;
        rows.push(SyncDemoRow {
            repetition,
            t1: e.t1,
            t2: e.t2,
            t3: e.t3,
            t4: e.t4,
            offset: e.offset,
            residual: slave.read(out.end_true) - master.read(out.end_true),
        });
    }
    Ok(rows)
}

pub fn write_sync_csv<W: Write>(rows: &[SyncDemoRow], sink: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["repetition", "t1", "t2", "t3", "t4", "offset", "residual"])?;
    for r in rows {
        w.write_record(
            [
                r.repetition as i64,
                r.t1,
                r.t2,
                r.t3,
                r.t4,
                r.offset,
                r.residual,
            ]
            .map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Reference timestamps on the RMS-rate grid, aligned to whole seconds,
/// covering `[first_us, last_us]`.
pub fn reference_grid(first_us: u64, last_us: u64, rate_hz: f64) -> Vec<u64> {
    let step = (1e6 / rate_hz).round().max(1.0) as u64;
    let start = first_us - first_us % 1_000_000;
    (0..)
        .map(|k| start + k * step)
        .take_while(|&t| t <= last_us + step)
        .collect()
}

/// Compare parsed platform records against the analytic reference meter.
pub fn report_from_records(
    cfg: &RunConfig,
    records: &[CaptureRecord],
    seed: u64,
) -> Result<ComparisonReport, SessionError> {
    let (first, last) = match (records.first(), records.last()) {
        (Some(f), Some(l)) => (f.unix_us.min(l.unix_us), f.unix_us.max(l.unix_us)),
        _ => {
            return Err(AnalysisError::Insufficient {
                needed: cfg.sizes.iter().copied().max().unwrap_or(0),
                available: 0,
            }
            .into())
        }
    };
    let grid = reference_grid(first, last, cfg.meter.rms_rate());
    let reference: Vec<ReferencePoint> =
        analysis::reference_meter(&cfg.waveform, &grid, cfg.reference_bias)?;
    Ok(analysis::build_report(
        &cfg.waveform.kind().to_string(),
        records,
        &reference,
        &cfg.sizes,
        seed,
    )?)
}
