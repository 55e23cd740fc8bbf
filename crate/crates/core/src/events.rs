//! Event stream model, the EVS1 binary codec, and constant-time windowing.
//!
//! EVS1 layout (all integers little-endian):
//!
//! | offset | size | field                     |
//! |--------|------|---------------------------|
//! | 0      | 4    | magic `"EVS1"`            |
//! | 4      | 4    | `u32` version (= 1)       |
//! | 8      | 2    | `u16` width               |
//! | 10     | 2    | `u16` height              |
//! | 12     | 8    | `u64` event count N       |
//! | 20     | 16·N | records                   |
//!
//! Each record is `u64 t`, `u16 x`, `u16 y`, `u8 p`, then three zero pad bytes.

use thiserror::Error;

pub const EVS1_MAGIC: &[u8; 4] = b"EVS1";
pub const EVS1_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;
pub const RECORD_LEN: usize = 16;

/// Default window length in microseconds.
pub const DEFAULT_DT_US: u64 = 50_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("BadMagic: expected \"EVS1\", found {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("UnsupportedVersion: {0}")]
    UnsupportedVersion(u32),
    #[error("TruncatedFile: expected {expected} bytes, found {actual}")]
    TruncatedFile { expected: u64, actual: u64 },
    #[error("TrailingBytes: expected {expected} bytes, found {actual}")]
    TrailingBytes { expected: u64, actual: u64 },
    #[error("OutOfBoundsEvent: record {index} at ({x}, {y}) outside {width}x{height}")]
    OutOfBoundsEvent {
        index: usize,
        x: u16,
        y: u16,
        width: u16,
        height: u16,
    },
    #[error("NonMonotonicTimestamp: record {index} has t={t} after t={prev}")]
    NonMonotonicTimestamp { index: usize, t: u64, prev: u64 },
    #[error("BadPolarity: record {index} has polarity {value}")]
    BadPolarity { index: usize, value: u8 },
    #[error("ZeroWindow: window length must be positive")]
    ZeroWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    /// Microseconds since recording start.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    /// 0 or 1.
    pub p: u8,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: u8) -> Self {
        Self { t, x, y, p }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EventStream {
    pub width: u16,
    pub height: u16,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn new(width: u16, height: u16, events: Vec<Event>) -> Result<Self, CodecError> {
        let stream = Self {
            width,
            height,
            events,
        };
        stream.validate()?;
        Ok(stream)
    }

    pub fn empty(width: u16, height: u16) -> Self {
        Self {
            width,
            height,
            events: Vec::new(),
        }
    }

    /// Checks bounds, polarity and timestamp order; reports the first offending record.
    pub fn validate(&self) -> Result<(), CodecError> {
        let mut prev = 0u64;
        for (index, ev) in self.events.iter().enumerate() {
            check_event(index, ev, self.width, self.height, prev)?;
            prev = ev.t;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Number of frames needed to cover every event: `ceil((t_max + 1) / dt)`.
    pub fn frame_count(&self, dt_us: u64) -> Result<usize, CodecError> {
        if dt_us == 0 {
            return Err(CodecError::ZeroWindow);
        }
        Ok(match self.events.last() {
            None => 0,
            Some(last) => (last.t / dt_us + 1) as usize,
        })
    }
}

#[inline]
fn check_event(index: usize, ev: &Event, width: u16, height: u16, prev: u64) -> Result<(), CodecError> {
    if ev.p > 1 {
        return Err(CodecError::BadPolarity { index, value: ev.p });
    }
    if ev.x >= width || ev.y >= height {
        return Err(CodecError::OutOfBoundsEvent {
            index,
            x: ev.x,
            y: ev.y,
            width,
            height,
        });
    }
    if ev.t < prev {
        return Err(CodecError::NonMonotonicTimestamp {
            index,
            t: ev.t,
            prev,
        });
    }
    Ok(())
}

/// Serializes a stream to EVS1 bytes. The stream is assumed valid.
pub fn encode_event_file(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.events.len());
    out.extend_from_slice(EVS1_MAGIC);
    out.extend_from_slice(&EVS1_VERSION.to_le_bytes());
    out.extend_from_slice(&stream.width.to_le_bytes());
    out.extend_from_slice(&stream.height.to_le_bytes());
    out.extend_from_slice(&(stream.events.len() as u64).to_le_bytes());
    for ev in &stream.events {
        let mut rec = [0u8; RECORD_LEN];
        rec[0..8].copy_from_slice(&ev.t.to_le_bytes());
        rec[8..10].copy_from_slice(&ev.x.to_le_bytes());
        rec[10..12].copy_from_slice(&ev.y.to_le_bytes());
        rec[12] = ev.p;
        out.extend_from_slice(&rec);
    }
    out
}

/// Parses and validates an EVS1 file.
///
/// Nonzero pad bytes are tolerated and logged once with the count of affected records.
pub fn decode_event_file(bytes: &[u8]) -> Result<EventStream, CodecError> {
    if bytes.len() < 4 || &bytes[0..4] != EVS1_MAGIC {
        return Err(CodecError::BadMagic {
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(CodecError::TruncatedFile {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != EVS1_VERSION {
        return Err(CodecError::UnsupportedVersion(version));
    }
    let width = u16::from_le_bytes(bytes[8..10].try_into().unwrap());
    let height = u16::from_le_bytes(bytes[10..12].try_into().unwrap());
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());

    let body = &bytes[HEADER_LEN..];
    let expected = (HEADER_LEN as u128) + (RECORD_LEN as u128) * (count as u128);
    let actual = bytes.len() as u128;
    if actual < expected {
        return Err(CodecError::TruncatedFile {
            expected: expected.min(u64::MAX as u128) as u64,
            actual: actual as u64,
        });
    }
    if actual > expected {
        return Err(CodecError::TrailingBytes {
            expected: expected as u64,
            actual: actual as u64,
        });
    }

    let mut events = Vec::with_capacity(count as usize);
    let mut prev = 0u64;
    let mut dirty_pad = 0usize;
    for (index, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let ev = Event {
            t: u64::from_le_bytes(rec[0..8].try_into().unwrap()),
            x: u16::from_le_bytes(rec[8..10].try_into().unwrap()),
            y: u16::from_le_bytes(rec[10..12].try_into().unwrap()),
            p: rec[12],
        };
        check_event(index, &ev, width, height, prev)?;
        if rec[13..16] != [0, 0, 0] {
            dirty_pad += 1;
        }
        prev = ev.t;
        events.push(ev);
    }
    if dirty_pad > 0 {
        log::warn!("EVS1: {dirty_pad} record(s) carry nonzero pad bytes");
    }
    Ok(EventStream {
        width,
        height,
        events,
    })
}

/// One constant-duration slice `[t_start, t_end)` of a stream, indexed from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventWindow<'a> {
    pub index: usize,
    pub t_start: u64,
    pub t_end: u64,
    pub events: &'a [Event],
}

impl<'a> EventWindow<'a> {
    pub fn empty(index: usize, dt_us: u64) -> Self {
        Self {
            index,
            t_start: (index as u64 - 1) * dt_us,
            t_end: index as u64 * dt_us,
            events: &[],
        }
    }

    pub fn duration(&self) -> u64 {
        self.t_end - self.t_start
    }
}

/// Iterator over the windows of a stream; see [`window_iter`].
#[derive(Debug, Clone)]
pub struct WindowIter<'a> {
    events: &'a [Event],
    dt_us: u64,
    next: usize,
    total: usize,
}

impl<'a> Iterator for WindowIter<'a> {
    type Item = EventWindow<'a>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next > self.total {
            return None;
        }
        let index = self.next;
        self.next += 1;
        let t_start = (index as u64 - 1) * self.dt_us;
        let t_end = index as u64 * self.dt_us;
        let split = self.events.partition_point(|e| e.t < t_end);
        let (head, tail) = self.events.split_at(split);
        self.events = tail;
        Some(EventWindow {
            index,
            t_start,
            t_end,
            events: head,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.total + 1).saturating_sub(self.next);
        (left, Some(left))
    }
}

impl ExactSizeIterator for WindowIter<'_> {}

/// Slices a stream into contiguous half-open windows of `dt_us`, including empty ones.
///
/// Yields `ceil((t_max + 1) / dt)` windows, or none for an empty stream.
pub fn window_iter(stream: &EventStream, dt_us: u64) -> Result<WindowIter<'_>, CodecError> {
    window_iter_min(stream, dt_us, 0)
}

/// Like [`window_iter`] but yields at least `min_frames` windows, padding with empty ones.
pub fn window_iter_min(
    stream: &EventStream,
    dt_us: u64,
    min_frames: usize,
) -> Result<WindowIter<'_>, CodecError> {
    let total = stream.frame_count(dt_us)?.max(min_frames);
    Ok(WindowIter {
        events: &stream.events,
        dt_us,
        next: 1,
        total,
    })
}
