//! Bounding-box labels and the per-frame label CSV.
//!
//! Header: `frame,ts_us,x,y,w,h,class_id,track_id,confidence,visibility`.
//! Input files may omit `confidence` (defaults to 1.0) and `visibility`;
//! output always carries every column.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Deserialize;
use thiserror::Error;

pub const CSV_HEADER: &str = "frame,ts_us,x,y,w,h,class_id,track_id,confidence,visibility";

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("malformed label CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("FrameMisalignment: {0}")]
    FrameMisalignment(String),
    #[error("bad value in label row {row}: {msg}")]
    BadValue { row: usize, msg: String },
}

/// A box with top-left corner `(x, y)`; used for ground truth, detections and tracker output.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub class_id: u32,
    pub track_id: u64,
    pub confidence: f64,
    pub visibility: Option<f64>,
}

impl LabeledBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64, class_id: u32, track_id: u64) -> Self {
        Self {
            x,
            y,
            w,
            h,
            class_id,
            track_id,
            confidence: 1.0,
            visibility: None,
        }
    }

    pub fn with_visibility(mut self, v: f64) -> Self {
        self.visibility = Some(v);
        self
    }

    pub fn with_confidence(mut self, c: f64) -> Self {
        self.confidence = c;
        self
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Clips to `[0, width] × [0, height]`; `None` if nothing of positive area remains.
    pub fn clipped(&self, width: f64, height: f64) -> Option<LabeledBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = (self.x + self.w).min(width);
        let y1 = (self.y + self.h).min(height);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(LabeledBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
            ..self.clone()
        })
    }
}

/// Integer pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl PixelRect {
    /// Rasterizes edges by rounding half away from zero.
    pub fn from_box(b: &LabeledBox) -> Self {
        Self {
            x0: b.x.round() as i64,
            y0: b.y.round() as i64,
            x1: (b.x + b.w).round() as i64,
            y1: (b.y + b.h).round() as i64,
        }
    }

    pub fn width(&self) -> i64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> i64 {
        self.y1 - self.y0
    }

    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }

    pub fn clip(&self, width: usize, height: usize) -> PixelRect {
        PixelRect {
            x0: self.x0.clamp(0, width as i64),
            y0: self.y0.clamp(0, height as i64),
            x1: self.x1.clamp(0, width as i64),
            y1: self.y1.clamp(0, height as i64),
        }
    }

    pub fn intersect(&self, other: &PixelRect) -> PixelRect {
        PixelRect {
            x0: self.x0.max(other.x0),
            y0: self.y0.max(other.y0),
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
        }
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Labels grouped by 1-based frame index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelTable {
    pub frames: BTreeMap<usize, Vec<LabeledBox>>,
}

impl LabelTable {
    pub fn from_dense(frames: &[Vec<LabeledBox>]) -> Self {
        Self {
            frames: frames
                .iter()
                .enumerate()
                .filter(|(_, b)| !b.is_empty())
                .map(|(i, b)| (i + 1, b.clone()))
                .collect(),
        }
    }

    /// Highest frame index present, 0 when empty.
    pub fn last_frame(&self) -> usize {
        self.frames.keys().next_back().copied().unwrap_or(0)
    }

    /// Frames `1..=n` as a dense vector; frames beyond `n` are discarded.
    pub fn to_dense(&self, n: usize) -> Vec<Vec<LabeledBox>> {
        (1..=n)
            .map(|i| self.frames.get(&i).cloned().unwrap_or_default())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &LabeledBox)> {
        self.frames.iter().flat_map(|(&f, v)| v.iter().map(move |b| (f, b)))
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    frame: i64,
    ts_us: i64,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    class_id: u32,
    track_id: u64,
    #[serde(default)]
    confidence: Option<f64>,
    #[serde(default)]
    visibility: Option<f64>,
}

/// Parses a label CSV. With `dt_us` set, every `ts_us` must equal `(frame - 1) * dt_us`.
pub fn read_labels(text: &str, dt_us: Option<u64>) -> Result<LabelTable, LabelError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut table = LabelTable::default();
    for (i, rec) in rdr.deserialize::<Row>().enumerate() {
        let row = rec?;
        let line = i + 2;
        if row.frame < 1 {
            return Err(LabelError::FrameMisalignment(format!(
                "row {line}: frame {} is not 1-based",
                row.frame
            )));
        }
        if let Some(dt) = dt_us {
            let expected = (row.frame as u64 - 1) * dt;
            if row.ts_us < 0 || row.ts_us as u64 != expected {
                return Err(LabelError::FrameMisalignment(format!(
                    "row {line}: ts_us {} != (frame-1)*{dt} = {expected}",
                    row.ts_us
                )));
            }
        }
        for (name, v) in [("x", row.x), ("y", row.y), ("w", row.w), ("h", row.h)] {
            if !v.is_finite() {
                return Err(LabelError::BadValue {
                    row: line,
                    msg: format!("{name} is not finite"),
                });
            }
        }
        let confidence = row.confidence.unwrap_or(1.0);
        if !(0.0..=1.0).contains(&confidence) {
            return Err(LabelError::BadValue {
                row: line,
                msg: format!("confidence {confidence} outside [0, 1]"),
            });
        }
        table.frames.entry(row.frame as usize).or_default().push(LabeledBox {
            x: row.x,
            y: row.y,
            w: row.w,
            h: row.h,
            class_id: row.class_id,
            track_id: row.track_id,
            confidence,
            visibility: row.visibility,
        });
    }
    Ok(table)
}

/// Serializes a table in frame order. Missing visibility is written as `1.0`.
pub fn write_labels(table: &LabelTable, dt_us: u64) -> String {
    let mut out = String::with_capacity(64 * (table.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (frame, b) in table.iter() {
        let _ = writeln!(
            out,
            "{},{},{:?},{:?},{:?},{:?},{},{},{:?},{:?}",
            frame,
            (frame as u64 - 1) * dt_us,
            b.x,
            b.y,
            b.w,
            b.h,
            b.class_id,
            b.track_id,
            b.confidence,
            b.visibility.unwrap_or(1.0)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_and_defaults() {
        let text = "frame,ts_us,x,y,w,h,class_id,track_id\n2,50000,1.5,2,3,4,0,7\n1,0,0,0,5,5,1,3\n";
        let t = read_labels(text, Some(50_000)).unwrap();
        assert_eq!(t.last_frame(), 2);
        let b = &t.frames[&2][0];
        assert_eq!((b.confidence, b.visibility), (1.0, None));
        let out = write_labels(&t, 50_000);
        assert_eq!(
            out,
            "frame,ts_us,x,y,w,h,class_id,track_id,confidence,visibility\n\
             1,0,0.0,0.0,5.0,5.0,1,3,1.0,1.0\n\
             2,50000,1.5,2.0,3.0,4.0,0,7,1.0,1.0\n"
        );
        let again = read_labels(&out, Some(50_000)).unwrap();
        assert_eq!(again.frames[&1][0].visibility, Some(1.0));
    }

    #[test]
    fn misaligned_timestamp() {
        let text = "frame,ts_us,x,y,w,h,class_id,track_id\n2,40000,0,0,1,1,0,1\n";
        assert!(matches!(
            read_labels(text, Some(50_000)),
            Err(LabelError::FrameMisalignment(_))
        ));
        assert!(read_labels(text, None).is_ok());
        let zero = "frame,ts_us,x,y,w,h,class_id,track_id\n0,0,0,0,1,1,0,1\n";
        assert!(matches!(read_labels(zero, None), Err(LabelError::FrameMisalignment(_))));
    }

    #[test]
    fn empty_file() {
        let t = read_labels(CSV_HEADER, None).unwrap();
        assert!(t.is_empty());
        assert_eq!(write_labels(&t, 50_000), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn rasterize_rounds_half_away() {
        let b = LabeledBox::new(0.5, 1.49, 2.0, 2.0, 0, 0);
        assert_eq!(PixelRect::from_box(&b), PixelRect { x0: 1, y0: 1, x1: 3, y1: 3 });
        let clipped = LabeledBox::new(-2.0, 5.0, 4.0, 10.0, 0, 0).clipped(8.0, 8.0).unwrap();
        assert_eq!((clipped.x, clipped.y, clipped.w, clipped.h), (0.0, 5.0, 2.0, 3.0));
        assert!(LabeledBox::new(9.0, 0.0, 1.0, 1.0, 0, 0).clipped(8.0, 8.0).is_none());
    }
}
