//! Handcrafted dense representations of one event window.
//!
//! All outputs are at full sensor resolution with polarity-0 channels first.

use thiserror::Error;

use crate::events::{Event, EventWindow};
use crate::tensor::FrameTensor;

/// Default number of temporal bins for [`event_volume`].
pub const DEFAULT_BINS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReprError {
    #[error("DimensionMismatch: event at ({x}, {y}) outside {width}x{height}")]
    DimensionMismatch {
        x: u16,
        y: u16,
        width: usize,
        height: usize,
    },
    #[error("BadBins: event volume needs at least one bin")]
    BadBins,
    #[error("time surface decay constant must be positive")]
    BadTau,
}

/// Which dense representation to build.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Representation {
    Histogram,
    Timestamp,
    TimeSurface { tau_us: f64 },
    Volume { bins: usize },
}

impl Representation {
    pub fn build(&self, window: &EventWindow<'_>, height: usize, width: usize) -> Result<FrameTensor, ReprError> {
        match *self {
            Representation::Histogram => event_histogram(window, height, width),
            Representation::Timestamp => timestamp_map(window, height, width),
            Representation::TimeSurface { tau_us } => time_surface(window, height, width, tau_us),
            Representation::Volume { bins } => event_volume(window, bins, height, width),
        }
    }
}

/// Binary `height × width` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitGrid {
    pub height: usize,
    pub width: usize,
    bits: Vec<bool>,
}

/// Per-pixel event presence for one window.
pub type OccupancyMask = BitGrid;

impl BitGrid {
    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            bits: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x));
            }
        }
        Self { height, width, bits }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Copies the sub-grid `[y0, y0+h) × [x0, x0+w)`; the region must lie inside the grid.
    pub fn slice(&self, y0: usize, x0: usize, h: usize, w: usize) -> BitGrid {
        assert!(y0 + h <= self.height && x0 + w <= self.width, "slice out of range");
        let mut bits = Vec::with_capacity(h * w);
        for y in y0..y0 + h {
            let row = y * self.width;
            bits.extend_from_slice(&self.bits[row + x0..row + x0 + w]);
        }
        BitGrid { height: h, width: w, bits }
    }
}

fn check_bounds(events: &[Event], height: usize, width: usize) -> Result<(), ReprError> {
    match events
        .iter()
        .find(|e| e.x as usize >= width || e.y as usize >= height)
    {
        Some(e) => Err(ReprError::DimensionMismatch {
            x: e.x,
            y: e.y,
            width,
            height,
        }),
        None => Ok(()),
    }
}

/// Per-polarity event counts.
pub fn event_histogram(window: &EventWindow<'_>, height: usize, width: usize) -> Result<FrameTensor, ReprError> {
    check_bounds(window.events, height, width)?;
    let mut t = FrameTensor::zeros(2, height, width);
    for e in window.events {
        let i = t.index(e.p as usize, e.y as usize, e.x as usize);
        t.data[i] += 1.0;
    }
    Ok(t)
}

/// Latest event time per pixel and polarity, as a fraction of the window elapsed.
pub fn timestamp_map(window: &EventWindow<'_>, height: usize, width: usize) -> Result<FrameTensor, ReprError> {
    check_bounds(window.events, height, width)?;
    let dt = window.duration() as f64;
    let mut t = FrameTensor::zeros(2, height, width);
    // events are time-ordered, so the last write wins
    for e in window.events {
        let v = (e.t - window.t_start) as f64 / dt;
        t.set(e.p as usize, e.y as usize, e.x as usize, v as f32);
    }
    Ok(t)
}

/// Exponentially decayed age of the latest event per pixel and polarity, referenced to `t_end`.
pub fn time_surface(
    window: &EventWindow<'_>,
    height: usize,
    width: usize,
    tau_us: f64,
) -> Result<FrameTensor, ReprError> {
    if !(tau_us > 0.0 && tau_us.is_finite()) {
        return Err(ReprError::BadTau);
    }
    check_bounds(window.events, height, width)?;
    let mut t = FrameTensor::zeros(2, height, width);
    for e in window.events {
        let age = (window.t_end - e.t) as f64;
        t.set(e.p as usize, e.y as usize, e.x as usize, (-age / tau_us).exp() as f32);
    }
    Ok(t)
}

/// Voxel grid with linear temporal interpolation between neighbouring bins.
///
/// Normalized time is `t* = (t - t_start) * (B - 1) / dt`. An event adds `1 - frac(t*)`
/// to bin `floor(t*)` and `frac(t*)` to the next bin of its polarity group. Channels
/// `0..B` hold polarity 0 and `B..2B` polarity 1. With `B = 1` this is the histogram.
pub fn event_volume(
    window: &EventWindow<'_>,
    bins: usize,
    height: usize,
    width: usize,
) -> Result<FrameTensor, ReprError> {
    if bins == 0 {
        return Err(ReprError::BadBins);
    }
    check_bounds(window.events, height, width)?;
    let dt = window.duration() as f64;
    let scale = (bins - 1) as f64 / dt;
    let mut t = FrameTensor::zeros(2 * bins, height, width);
    for e in window.events {
        let ts = (e.t - window.t_start) as f64 * scale;
        let lower = ts.floor();
        let frac = ts - lower;
        let bin = lower as usize;
        let group = e.p as usize * bins;
        let (y, x) = (e.y as usize, e.x as usize);
        let i = t.index(group + bin, y, x);
        t.data[i] += (1.0 - frac) as f32;
        if frac > 0.0 && bin + 1 < bins {
            let j = t.index(group + bin + 1, y, x);
            t.data[j] += frac as f32;
        }
    }
    Ok(t)
}

/// Pixels that saw at least one event of either polarity.
pub fn occupancy_mask(window: &EventWindow<'_>, height: usize, width: usize) -> Result<OccupancyMask, ReprError> {
    check_bounds(window.events, height, width)?;
    let mut m = BitGrid::filled(height, width, false);
    for e in window.events {
        m.set(e.y as usize, e.x as usize, true);
    }
    Ok(m)
}

/// Occupancy recovered from a precomputed feature tensor: any nonzero channel.
///
/// Exact for histograms and event volumes. Timestamp maps lose events sitting at
/// `t_start`, so prefer raw events for those.
pub fn occupancy_from_tensor(features: &FrameTensor) -> OccupancyMask {
    let plane = features.height * features.width;
    let mut bits = vec![false; plane];
    for c in 0..features.channels {
        for (b, &v) in bits.iter_mut().zip(&features.data[c * plane..(c + 1) * plane]) {
            *b |= v != 0.0;
        }
    }
    BitGrid {
        height: features.height,
        width: features.width,
        bits,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(events: &[Event]) -> EventWindow<'_> {
        EventWindow {
            index: 1,
            t_start: 0,
            t_end: 50_000,
            events,
        }
    }

    #[test]
    fn histogram_counts() {
        let ev = [Event::new(1, 3, 4, 1), Event::new(2, 3, 4, 1)];
        let h = event_histogram(&window(&ev), 8, 8).unwrap();
        assert_eq!(h.get(1, 4, 3), 2.0);
        assert_eq!(h.sum(), 2.0);
        let empty = event_histogram(&window(&[]), 8, 8).unwrap();
        assert_eq!(empty.sum(), 0.0);
    }

    #[test]
    fn out_of_bounds_is_dimension_mismatch() {
        let ev = [Event::new(1, 8, 0, 1)];
        assert!(matches!(
            event_histogram(&window(&ev), 8, 8),
            Err(ReprError::DimensionMismatch { x: 8, .. })
        ));
        assert!(occupancy_mask(&window(&ev), 8, 8).is_err());
    }

    #[test]
    fn timestamp_keeps_latest() {
        let w = EventWindow {
            index: 3,
            t_start: 100_000,
            t_end: 150_000,
            events: &[Event::new(100_000, 0, 0, 0), Event::new(110_000, 1, 1, 1), Event::new(140_000, 1, 1, 1)],
        };
        let m = timestamp_map(&w, 2, 2).unwrap();
        assert_eq!(m.get(0, 0, 0), 0.0);
        assert_eq!(m.get(1, 1, 1), 0.8);
    }

    #[test]
    fn time_surface_values() {
        let tau = 50_000.0;
        let ev = [Event::new(49_999, 0, 0, 1), Event::new(0, 1, 0, 0)];
        let s = time_surface(&window(&ev), 1, 2, tau).unwrap();
        assert_eq!(s.get(1, 0, 0), (-1.0f64 / tau).exp() as f32);
        assert_eq!(s.get(0, 0, 1), (-1.0f64).exp() as f32);
        assert!((s.get(0, 0, 1) - 0.3679).abs() < 1e-4);
        assert!(time_surface(&window(&ev), 1, 2, 0.0).is_err());
    }

    #[test]
    fn volume_interpolates() {
        // B = 5 -> t* = t * 4 / 50000, so t = 28125 gives t* = 2.25
        let ev = [Event::new(28_125, 0, 0, 1)];
        let v = event_volume(&window(&ev), 5, 1, 1).unwrap();
        assert_eq!(v.get(5 + 2, 0, 0), 0.75);
        assert_eq!(v.get(5 + 3, 0, 0), 0.25);
        assert_eq!(v.sum(), 1.0);

        let ev = [Event::new(25_000, 0, 0, 0)];
        let v = event_volume(&window(&ev), 5, 1, 1).unwrap();
        assert_eq!(v.get(2, 0, 0), 1.0);
        assert_eq!(event_volume(&window(&ev), 0, 1, 1), Err(ReprError::BadBins));
    }

    #[test]
    fn single_bin_volume_is_histogram() {
        let ev: Vec<_> = (0..50).map(|i| Event::new(i * 997, (i % 4) as u16, (i % 3) as u16, (i % 2) as u8)).collect();
        let w = window(&ev);
        assert_eq!(event_volume(&w, 1, 3, 4).unwrap(), event_histogram(&w, 3, 4).unwrap());
    }

    #[test]
    fn occupancy_matches_histogram() {
        let ev = [Event::new(0, 1, 1, 0); 5];
        let m = occupancy_mask(&window(&ev), 3, 3).unwrap();
        assert_eq!(m.count_ones(), 1);
        assert!(m.get(1, 1));
        let h = event_histogram(&window(&ev), 3, 3).unwrap();
        assert_eq!(occupancy_from_tensor(&h), m);
        assert_eq!(occupancy_mask(&window(&[]), 3, 3).unwrap().count_ones(), 0);
    }

    #[test]
    fn slice_copies_region() {
        let g = BitGrid::from_fn(4, 4, |y, x| y == x);
        let s = g.slice(1, 1, 2, 3);
        assert_eq!((s.height, s.width), (2, 3));
        assert!(s.get(0, 0) && s.get(1, 1) && !s.get(0, 1));
    }
}
