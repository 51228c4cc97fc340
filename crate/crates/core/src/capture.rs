//! Meter transmitter, server capture pipeline, and raw-to-CSV parser.
//!
//! The server side runs two stages joined by a bounded queue:
//!
//! * the receiver reads 12-byte frames from the byte stream, forwards data
//!   frames in arrival order, rejects unknown indicators, and stops at the
//!   stop marker;
//! * the writer appends every forwarded frame to the raw `.bin` file.
//!
//! The producer blocks when the queue is full, so no frame is ever dropped.
//! The raw file has no header; decoding parameters live in a `key=value`
//! sidecar next to it.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, SyncSender};
use std::thread;

use thiserror::Error;

use crate::framecodec::{
    self, decode_frame, decode_timestamp, encode_frame, stop_marker, DataFrame, Frame, FrameError,
    RebaseEvent, TimestampBase, TimestampBook, TimestampError, FRAME_LEN,
};
use crate::kv::{KvDoc, KvError, KvWriter};
use crate::metercore::{
    decode_instantaneous, decode_voltage, Capture, FrontEndConfig, MeterConfig, MeterError,
    MeterSample,
};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_BUFFER_CAPACITY: usize = 4096;
pub const CSV_HEADER: [&str; 3] = ["unix_us", "inst_v", "rms_v"];

pub type RawFrame = [u8; FRAME_LEN];

fn byte_word(n: &usize) -> &'static str {
    if *n == 1 {
        "byte"
    } else {
        "bytes"
    }
}

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("capture length {len} is not a multiple of {FRAME_LEN}: {trailing} trailing {}", byte_word(.trailing))]
    TrailingBytes { len: usize, trailing: usize },
    #[error("frame {index}: {source}")]
    Frame { index: u64, source: FrameError },
    #[error("frame {index}: stop marker inside raw capture data")]
    UnexpectedStop { index: u64 },
    #[error("metadata: {0}")]
    Metadata(String),
    #[error("metadata: {0}")]
    Kv(#[from] KvError),
    #[error("storage failure after {frames} frames: {source}")]
    Storage { frames: u64, source: io::Error },
    #[error("buffer capacity must be >= 1")]
    Capacity,
    #[error("MCU time {0} ns maps before the UNIX epoch")]
    BeforeUnixEpoch(i64),
    #[error("capture stage panicked")]
    StagePanic,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Meter(#[from] MeterError),
    #[error(transparent)]
    Timestamp(#[from] TimestampError),
}

/// Everything needed to decode a raw capture without outside knowledge.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureMetadata {
    pub version: u32,
    /// Timestamp base constant at the first frame, in 100 us units.
    pub constant: u64,
    pub divider_ratio: f64,
    pub full_scale_v: f64,
    pub sample_rate: u32,
    pub rms_cycle: u32,
    /// Base changes, ascending by frame index.
    pub rebases: Vec<RebaseEvent>,
}

impl CaptureMetadata {
    pub fn new(base: TimestampBase, front: &FrontEndConfig, meter: &MeterConfig) -> Self {
        Self {
            version: FORMAT_VERSION,
            constant: base.constant,
            divider_ratio: front.divider_ratio,
            full_scale_v: front.full_scale,
            sample_rate: meter.sample_rate,
            rms_cycle: meter.rms_cycle,
            rebases: Vec::new(),
        }
    }

    pub fn front_end(&self) -> FrontEndConfig {
        FrontEndConfig {
            divider_ratio: self.divider_ratio,
            full_scale: self.full_scale_v,
        }
    }

    pub fn base_for(&self, frame_index: u64) -> TimestampBase {
        framecodec::base_for(
            TimestampBase::new(self.constant),
            &self.rebases,
            frame_index,
        )
    }

    pub fn to_sidecar(&self) -> String {
        let mut w = KvWriter::new();
        w.put("version", self.version)
            .put("constant", self.constant)
            .put("divider_ratio", self.divider_ratio)
            .put("full_scale_v", self.full_scale_v)
            .put("sample_rate", self.sample_rate)
            .put("rms_cycle", self.rms_cycle);
        for e in &self.rebases {
            w.put("rebase", format!("{}:{}", e.frame_index, e.constant));
        }
        w.finish()
    }

    pub fn from_sidecar(text: &str) -> Result<Self, CaptureError> {
        let doc = KvDoc::parse(text)?;
        doc.reject_unknown(&[
            "version",
            "constant",
            "divider_ratio",
            "full_scale_v",
            "sample_rate",
            "rms_cycle",
            "rebase",
        ])?;
        let version: u32 = doc.required("version")?;
        if version != FORMAT_VERSION {
            return Err(CaptureError::Metadata(format!(
                "unsupported format version {version}"
            )));
        }
        let mut rebases = Vec::new();
        for v in doc.all("rebase") {
            let parsed = v
                .split_once(':')
                .and_then(|(i, c)| Some((i.trim().parse().ok()?, c.trim().parse().ok()?)));
            let (frame_index, constant) = parsed.ok_or_else(|| {
                CaptureError::Metadata(format!("rebase `{v}` is not `<frame>:<constant>`"))
            })?;
            rebases.push(RebaseEvent {
                frame_index,
                constant,
            });
        }
        if rebases
            .windows(2)
            .any(|w| w[0].frame_index >= w[1].frame_index)
        {
            return Err(CaptureError::Metadata(
                "rebase events must be strictly ascending by frame".into(),
            ));
        }
        let meta = Self {
            version,
            constant: doc.required("constant")?,
            divider_ratio: doc.required("divider_ratio")?,
            full_scale_v: doc.required("full_scale_v")?,
            sample_rate: doc.required("sample_rate")?,
            rms_cycle: doc.required("rms_cycle")?,
            rebases,
        };
        meta.front_end().validate()?;
        MeterConfig {
            sample_rate: meta.sample_rate,
            rms_cycle: meta.rms_cycle,
        }
        .validate()?;
        Ok(meta)
    }

    pub fn read(path: &Path) -> Result<Self, CaptureError> {
        Self::from_sidecar(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), CaptureError> {
        fs::write(path, self.to_sidecar())?;
        Ok(())
    }
}

/// Sidecar location for a raw capture: same stem, `.meta` extension.
pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("meta")
}

// ---------------------------------------------------------------------------
// Meter side

/// When the meter sends a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmissionPolicy {
    /// One frame per RMS cycle, carrying the cycle's last sample.
    #[default]
    PerRmsCycle,
    /// One frame per instantaneous sample, carrying the latest RMS.
    PerSample,
}

impl FromStr for EmissionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "per_cycle" | "per_rms_cycle" => Ok(Self::PerRmsCycle),
            "per_sample" => Ok(Self::PerSample),
            other => Err(format!(
                "expected `per_cycle` or `per_sample`, got `{other}`"
            )),
        }
    }
}

impl std::fmt::Display for EmissionPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PerRmsCycle => "per_cycle",
            Self::PerSample => "per_sample",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StopState {
    Running,
    Requested,
    FinalSent,
    Done,
}

/// MCU-side transmitter: timestamps samples and turns them into frames.
///
/// At the end of the capture duration, or when [`request_stop`] is called,
/// it takes one final measurement, sends it, then sends the stop marker.
///
/// [`request_stop`]: MeterTransmitter::request_stop
#[derive(Debug, Clone)]
pub struct MeterTransmitter {
    capture: Capture,
    book: TimestampBook,
    policy: EmissionPolicy,
    epoch_unix_us: u64,
    frames: u64,
    state: StopState,
}

impl MeterTransmitter {
    /// `epoch_unix_us` is the UNIX time of MCU clock reading zero.
    pub fn new(
        capture: Capture,
        base: TimestampBase,
        policy: EmissionPolicy,
        epoch_unix_us: u64,
    ) -> Self {
        Self {
            capture,
            book: TimestampBook::new(base),
            policy,
            epoch_unix_us,
            frames: 0,
            state: StopState::Running,
        }
    }

    pub fn book(&self) -> &TimestampBook {
        &self.book
    }

    pub fn data_frames_sent(&self) -> u64 {
        self.frames
    }

    /// Press the stop button. Returns `false` if a stop was already pending.
    pub fn request_stop(&mut self) -> bool {
        if self.state == StopState::Running {
            self.state = StopState::Requested;
            true
        } else {
            false
        }
    }

    /// Request a stop and return the remaining frames: the final measurement
    /// followed by the stop marker.
    pub fn stop_sequence(&mut self) -> Result<Vec<RawFrame>, CaptureError> {
        self.request_stop();
        let mut out = Vec::new();
        while let Some(f) = self.next_frame()? {
            out.push(f);
        }
        Ok(out)
    }

    pub fn unix_us(&self, sample: &MeterSample) -> Result<u64, CaptureError> {
        let ns = sample.mcu_time.as_nanos();
        let us = self.epoch_unix_us as i128 + ns.div_euclid(1000) as i128;
        u64::try_from(us).map_err(|_| CaptureError::BeforeUnixEpoch(ns))
    }

    fn data_frame(&mut self, sample: &MeterSample) -> Result<RawFrame, CaptureError> {
        let unix_us = self.unix_us(sample)?;
        let tstamp = self.book.stamp(unix_us, self.frames)?;
        self.frames += 1;
        Ok(encode_frame(&DataFrame {
            inst: sample.inst,
            rms: sample.rms,
            tstamp,
        }))
    }

    pub fn next_frame(&mut self) -> Result<Option<RawFrame>, CaptureError> {
        loop {
            match self.state {
                StopState::Running => match self.capture.next() {
                    None => self.state = StopState::Requested,
                    Some(sample) => {
                        let sample = sample?;
                        let emit = match self.policy {
                            EmissionPolicy::PerRmsCycle => sample.rms_updated,
                            EmissionPolicy::PerSample => true,
                        };
                        if emit {
                            return self.data_frame(&sample).map(Some);
                        }
                    }
                },
                StopState::Requested => {
                    let sample = self.capture.take_sample()?;
                    let frame = self.data_frame(&sample)?;
                    self.state = StopState::FinalSent;
                    return Ok(Some(frame));
                }
                StopState::FinalSent => {
                    self.state = StopState::Done;
                    return Ok(Some(stop_marker()));
                }
                StopState::Done => return Ok(None),
            }
        }
    }
}

impl Iterator for MeterTransmitter {
    type Item = Result<RawFrame, CaptureError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_frame().transpose()
    }
}

/// Presents a frame iterator as a byte stream, like a serial port.
pub struct FrameReader<I> {
    frames: I,
    buf: RawFrame,
    pos: usize,
}

impl<I> FrameReader<I> {
    pub fn new(frames: I) -> Self {
        Self {
            frames,
            buf: [0; FRAME_LEN],
            pos: FRAME_LEN,
        }
    }
}

impl<I> Read for FrameReader<I>
where
    I: Iterator<Item = Result<RawFrame, CaptureError>>,
{
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if self.pos == FRAME_LEN {
            match self.frames.next() {
                None => return Ok(0),
                Some(Err(e)) => return Err(io::Error::other(e)),
                Some(Ok(f)) => {
                    self.buf = f;
                    self.pos = 0;
                }
            }
        }
        let n = out.len().min(FRAME_LEN - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

// ---------------------------------------------------------------------------
// Server side

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReceiveStats {
    pub accepted: u64,
    pub rejected: u64,
    pub stopped: bool,
    /// Bytes of an incomplete frame left when the stream ended.
    pub trailing_bytes: usize,
}

/// Read as many bytes as possible into `buf`, up to EOF.
fn read_full<R: Read>(source: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Receiver stage. Forwards data frames in arrival order until the stop
/// marker or end of stream. Dropping `tx` on return signals the writer.
pub fn receive<R: Read>(
    mut source: R,
    tx: SyncSender<RawFrame>,
) -> Result<ReceiveStats, CaptureError> {
    let mut stats = ReceiveStats::default();
    let mut buf = [0u8; FRAME_LEN];
    loop {
        let n = read_full(&mut source, &mut buf)?;
        if n < FRAME_LEN {
            stats.trailing_bytes = n;
            return Ok(stats);
        }
        match decode_frame(&buf) {
            Ok(Frame::Data(_)) => {
                if tx.send(buf).is_err() {
                    // writer has failed; its error is reported by the pipeline
                    return Ok(stats);
                }
                stats.accepted += 1;
            }
            Ok(Frame::Stop) => {
                stats.stopped = true;
                return Ok(stats);
            }
            Err(_) => stats.rejected += 1,
        }
    }
}

/// Writer stage. Appends frames until the receiver hangs up, then flushes.
pub fn write_frames<W: Write>(rx: Receiver<RawFrame>, mut sink: W) -> Result<u64, CaptureError> {
    let mut frames = 0u64;
    for frame in rx {
        sink.write_all(&frame)
            .map_err(|source| CaptureError::Storage { frames, source })?;
        frames += 1;
    }
    sink.flush()
        .map_err(|source| CaptureError::Storage { frames, source })?;
    Ok(frames)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineReport {
    pub received: ReceiveStats,
    pub written: u64,
}

/// Run receiver and writer concurrently over a bounded queue of `capacity`
/// frames.
pub fn run_pipeline<R, W>(
    source: R,
    sink: W,
    capacity: usize,
) -> Result<PipelineReport, CaptureError>
where
    R: Read + Send,
    W: Write + Send,
{
    if capacity == 0 {
        return Err(CaptureError::Capacity);
    }
    let (tx, rx) = mpsc::sync_channel(capacity);
    let (received, written) = thread::scope(|s| {
        let writer = s.spawn(move || write_frames(rx, sink));
        let receiver = s.spawn(move || receive(source, tx));
        (receiver.join(), writer.join())
    });
    let written = written.map_err(|_| CaptureError::StagePanic)??;
    let received = received.map_err(|_| CaptureError::StagePanic)??;
    Ok(PipelineReport { received, written })
}

/// Capture a byte stream into `bin_path`. On a storage failure the file is
/// cut back to the last whole frame before the error is returned.
pub fn capture_to_file<R: Read + Send>(
    source: R,
    bin_path: &Path,
    capacity: usize,
) -> Result<PipelineReport, CaptureError> {
    let file = File::create(bin_path)?;
    let result = run_pipeline(source, BufWriter::new(file), capacity);
    if let Err(CaptureError::Storage { .. }) = &result {
        // best effort; the storage error is the one worth reporting
        let _ = truncate_to_frame_boundary(bin_path);
    }
    result
}

/// Drop any partial trailing frame. Returns the new length.
pub fn truncate_to_frame_boundary(path: &Path) -> io::Result<u64> {
    let file = OpenOptions::new().write(true).open(path)?;
    let len = file.metadata()?.len();
    let whole = len - len % FRAME_LEN as u64;
    if whole != len {
        file.set_len(whole)?;
    }
    file.sync_all()?;
    Ok(whole)
}

// ---------------------------------------------------------------------------
// Parser

/// One decoded frame in readable units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptureRecord {
    pub unix_us: u64,
    pub inst_v: f64,
    pub rms_v: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedCapture {
    pub records: Vec<CaptureRecord>,
    /// Non-fatal findings, such as timestamps going backwards.
    pub warnings: Vec<String>,
}

/// Decode a raw capture frame by frame.
pub fn parse(raw: &[u8], meta: &CaptureMetadata) -> Result<ParsedCapture, CaptureError> {
    let trailing = raw.len() % FRAME_LEN;
    if trailing != 0 {
        return Err(CaptureError::TrailingBytes {
            len: raw.len(),
            trailing,
        });
    }
    let front = meta.front_end();
    let mut out = ParsedCapture {
        records: Vec::with_capacity(raw.len() / FRAME_LEN),
        warnings: Vec::new(),
    };
    let mut prev: Option<u64> = None;
    for (i, chunk) in raw.chunks_exact(FRAME_LEN).enumerate() {
        let index = i as u64;
        let frame = match decode_frame(chunk) {
            Ok(Frame::Data(d)) => d,
            Ok(Frame::Stop) => return Err(CaptureError::UnexpectedStop { index }),
            Err(source) => return Err(CaptureError::Frame { index, source }),
        };
        let unix_us = decode_timestamp(frame.tstamp, meta.base_for(index));
        if let Some(p) = prev.filter(|&p| unix_us < p) {
            out.warnings.push(format!(
                "frame {index}: timestamp {unix_us} us precedes previous {p} us"
            ));
        }
        prev = Some(unix_us);
        out.records.push(CaptureRecord {
            unix_us,
            inst_v: decode_instantaneous(frame.inst, &front),
            rms_v: decode_voltage(frame.rms, &front),
        });
    }
    Ok(out)
}

pub fn parse_file(raw_path: &Path, meta_path: &Path) -> Result<ParsedCapture, CaptureError> {
    let meta = CaptureMetadata::read(meta_path)?;
    parse(&fs::read(raw_path)?, &meta)
}

/// CSV with header `unix_us,inst_v,rms_v`, volts to 6 decimals.
pub fn write_csv<W: Write>(records: &[CaptureRecord], sink: W) -> Result<(), CaptureError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.unix_us.to_string(),
            format!("{:.6}", r.inst_v),
            format!("{:.6}", r.rms_v),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(source: R) -> Result<Vec<CaptureRecord>, CaptureError> {
    let mut rdr = csv::Reader::from_reader(source);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(CaptureError::Metadata(format!(
            "unexpected CSV header `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let field = |k: usize| {
            row.get(k).ok_or_else(|| {
                CaptureError::Metadata(format!(
                    "CSV row {}: missing column {}",
                    i + 1,
                    CSV_HEADER[k]
                ))
            })
        };
        let bad =
            |k: usize| CaptureError::Metadata(format!("CSV row {}: bad {}", i + 1, CSV_HEADER[k]));
        out.push(CaptureRecord {
            unix_us: field(0)?.parse().map_err(|_| bad(0))?,
            inst_v: field(1)?.parse().map_err(|_| bad(1))?,
            rms_v: field(2)?.parse().map_err(|_| bad(2))?,
        });
    }
    Ok(out)
}
