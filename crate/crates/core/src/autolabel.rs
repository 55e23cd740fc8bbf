//! Auto-labeling for still objects.
//!
//! Splits labelled boxes into still (visibility 0.0) and moving (visibility 1.0)
//! from the event occupancy inside each box and the normalized displacement of its
//! center, smooths transitions with a saturating `still_hits` counter, and drops
//! boxes that carry no features at their first occurrence.
//!
//! The per-frame loop follows the published pseudocode literally, including two
//! details that are easy to get wrong:
//!
//! * the "tracked in the previous frame" lookup runs against the previous frame's
//!   *emitted* labels, so a dropped box sends its track back to the
//!   first-occurrence branch;
//! * a still box is only emitted when its track was emitted in both of the two
//!   preceding frames (`track_vis == [i-2, i-1]`).

use std::collections::{BTreeMap, VecDeque};

use rayon::prelude::*;
use thiserror::Error;

use crate::events::{window_iter_min, CodecError, EventStream, EventWindow, DEFAULT_DT_US};
use crate::labels::{LabelTable, LabeledBox, PixelRect};
use crate::repr::{occupancy_mask, BitGrid, OccupancyMask, ReprError};

pub const DEFAULT_D_VALUE: f64 = 0.03;
pub const DEFAULT_O_VALUE: f64 = 0.1;
pub const STILL_HITS_CAP: u8 = 5;
pub const TRACK_VIS_LEN: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutolabelError {
    #[error("FrameMisalignment: {windows} windows but {labels} label frames")]
    FrameMisalignment { windows: usize, labels: usize },
    #[error("DegenerateBox: {w}x{h}")]
    DegenerateBox { w: f64, h: f64 },
    #[error("ShapeMismatch: {a:?} vs {b:?}")]
    ShapeMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("invalid parameter: {0}")]
    BadParams(String),
    #[error(transparent)]
    Repr(#[from] ReprError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutoLabelParams {
    pub dt_us: u64,
    pub d_value: f64,
    pub o_value: f64,
}

impl Default for AutoLabelParams {
    fn default() -> Self {
        Self {
            dt_us: DEFAULT_DT_US,
            d_value: DEFAULT_D_VALUE,
            o_value: DEFAULT_O_VALUE,
        }
    }
}

impl AutoLabelParams {
    pub fn validate(&self) -> Result<(), AutolabelError> {
        if self.dt_us == 0 {
            return Err(AutolabelError::BadParams("dt_us must be positive".into()));
        }
        if !(self.d_value > 0.0 && self.d_value.is_finite()) {
            return Err(AutolabelError::BadParams("d_value must be positive".into()));
        }
        if !(self.o_value > 0.0 && self.o_value.is_finite()) {
            return Err(AutolabelError::BadParams("o_value must be positive".into()));
        }
        Ok(())
    }
}

/// `still_hits` counters and `track_vis` queues carried across frames.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AutoLabelState {
    still_hits: BTreeMap<u64, u8>,
    track_vis: BTreeMap<u64, VecDeque<usize>>,
}

impl AutoLabelState {
    /// Counter for a track, 0 if never touched.
    pub fn still_hits(&self, track_id: u64) -> u8 {
        self.still_hits.get(&track_id).copied().unwrap_or(0)
    }

    pub fn track_vis(&self, track_id: u64) -> Vec<usize> {
        self.track_vis
            .get(&track_id)
            .map(|q| q.iter().copied().collect())
            .unwrap_or_default()
    }

    fn bump(&mut self, track_id: u64) {
        let h = self.still_hits.entry(track_id).or_insert(0);
        *h = (*h + 1).min(STILL_HITS_CAP);
    }

    fn decay(&mut self, track_id: u64) {
        if let Some(h) = self.still_hits.get_mut(&track_id) {
            *h = h.saturating_sub(1);
        }
    }

    fn tracked_through(&self, track_id: u64, frame: usize) -> bool {
        frame >= 3
            && self
                .track_vis
                .get(&track_id)
                .is_some_and(|q| q.len() == 2 && q[0] == frame - 2 && q[1] == frame - 1)
    }

    fn enqueue(&mut self, track_id: u64, frame: usize) {
        let q = self.track_vis.entry(track_id).or_default();
        if q.len() == TRACK_VIS_LEN {
            q.pop_front();
        }
        q.push_back(frame);
    }
}

/// Ones everywhere inside `rects[index]` except where another rect overlaps it.
///
/// Rects are expected to be clipped to the frame already.
pub fn bbox_mask(rects: &[PixelRect], index: usize) -> Result<BitGrid, AutolabelError> {
    let own = rects[index];
    if own.is_empty() {
        return Err(AutolabelError::DegenerateBox {
            w: own.width() as f64,
            h: own.height() as f64,
        });
    }
    let (h, w) = (own.height() as usize, own.width() as usize);
    let mut mask = BitGrid::filled(h, w, true);
    for (k, other) in rects.iter().enumerate() {
        if k == index {
            continue;
        }
        let ov = own.intersect(other);
        if ov.is_empty() {
            continue;
        }
        for y in ov.y0..ov.y1 {
            for x in ov.x0..ov.x1 {
                mask.set((y - own.y0) as usize, (x - own.x0) as usize, false);
            }
        }
    }
    Ok(mask)
}

/// Occupied and background pixel counts over the ones of a box mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OccupancyCounts {
    pub occ_true: usize,
    pub occ_false: usize,
}

impl OccupancyCounts {
    /// `occ_true / (occ_true + occ_false)`, or 0 when the box is fully overlapped.
    pub fn rate(&self) -> f64 {
        let denom = self.occ_true + self.occ_false;
        if denom == 0 {
            0.0
        } else {
            self.occ_true as f64 / denom as f64
        }
    }
}

pub fn occupancy_counts(occ_mask: &BitGrid, bbox_mask: &BitGrid) -> Result<OccupancyCounts, AutolabelError> {
    if occ_mask.height != bbox_mask.height || occ_mask.width != bbox_mask.width {
        return Err(AutolabelError::ShapeMismatch {
            a: (occ_mask.height, occ_mask.width),
            b: (bbox_mask.height, bbox_mask.width),
        });
    }
    let mut counts = OccupancyCounts {
        occ_true: 0,
        occ_false: 0,
    };
    for (&o, &b) in occ_mask.bits().iter().zip(bbox_mask.bits()) {
        if b {
            if o {
                counts.occ_true += 1;
            } else {
                counts.occ_false += 1;
            }
        }
    }
    Ok(counts)
}

pub fn occupancy_rate(occ_mask: &BitGrid, bbox_mask: &BitGrid) -> Result<f64, AutolabelError> {
    occupancy_counts(occ_mask, bbox_mask).map(|c| c.rate())
}

/// Center displacement normalized by the current box size.
pub fn normalized_displacement(
    prev_center: (f64, f64),
    cur_center: (f64, f64),
    w: f64,
    h: f64,
) -> Result<f64, AutolabelError> {
    if !(w > 0.0 && h > 0.0) {
        return Err(AutolabelError::DegenerateBox { w, h });
    }
    let dx = (prev_center.0 - cur_center.0) / w;
    let dy = (prev_center.1 - cur_center.1) / h;
    Ok((dx * dx + dy * dy).sqrt())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AutolabelSummary {
    pub frames: usize,
    pub boxes_in: usize,
    pub boxes_out: usize,
    /// Still boxes at their first occurrence (no emitted predecessor), never emitted.
    pub dropped_featureless: usize,
    /// Still boxes whose track was not emitted in both preceding frames.
    pub dropped_untracked: usize,
    /// Degenerate or fully off-frame boxes.
    pub skipped: usize,
    pub still: usize,
    pub moving: usize,
}

impl AutolabelSummary {
    pub fn dropped(&self) -> usize {
        self.dropped_featureless + self.dropped_untracked
    }
}

/// Frame-by-frame auto-labeler; feed frames in order starting at 1.
#[derive(Debug, Clone)]
pub struct AutoLabeler {
    params: AutoLabelParams,
    state: AutoLabelState,
    prev_emitted: Vec<LabeledBox>,
    frame: usize,
    summary: AutolabelSummary,
}

impl AutoLabeler {
    pub fn new(params: AutoLabelParams) -> Result<Self, AutolabelError> {
        params.validate()?;
        Ok(Self {
            params,
            state: AutoLabelState::default(),
            prev_emitted: Vec::new(),
            frame: 0,
            summary: AutolabelSummary::default(),
        })
    }

    pub fn state(&self) -> &AutoLabelState {
        &self.state
    }

    pub fn summary(&self) -> AutolabelSummary {
        self.summary
    }

    /// Labels the next frame given its occupancy mask and raw boxes.
    pub fn process_frame(&mut self, occupancy: &OccupancyMask, boxes: &[LabeledBox]) -> Vec<LabeledBox> {
        self.frame += 1;
        let i = self.frame;
        let (height, width) = (occupancy.height, occupancy.width);
        self.summary.frames += 1;
        self.summary.boxes_in += boxes.len();

        // Degenerate and fully off-frame boxes take no part in masking.
        let mut kept = Vec::with_capacity(boxes.len());
        let mut rects = Vec::with_capacity(boxes.len());
        for b in boxes {
            let raster = PixelRect::from_box(b);
            let rect = raster.clip(width, height);
            if !(b.w > 0.0 && b.h > 0.0) || raster.is_empty() {
                log::warn!("frame {i}: skipping degenerate box of track {}", b.track_id);
                self.summary.skipped += 1;
            } else if rect.is_empty() {
                log::warn!("frame {i}: skipping off-frame box of track {}", b.track_id);
                self.summary.skipped += 1;
            } else {
                kept.push(b);
                rects.push(rect);
            }
        }

        let mut emitted = Vec::with_capacity(kept.len());
        for (j, b) in kept.iter().enumerate() {
            let r = rects[j];
            let occ = occupancy.slice(r.y0 as usize, r.x0 as usize, r.height() as usize, r.width() as usize);
            let mask = bbox_mask(&rects, j).expect("rects are non-empty");
            let rate = occupancy_rate(&occ, &mask).expect("slice and mask share a shape");
            let track = b.track_id;
            let mut visible = true;
            let mut first_occurrence = false;

            if let Some(prev) = self.prev_emitted.iter().find(|p| p.track_id == track) {
                let disp = normalized_displacement(prev.center(), b.center(), b.w, b.h)
                    .expect("box size checked above");
                if disp < self.params.d_value && rate < self.params.o_value {
                    visible = false;
                    self.state.bump(track);
                } else if self.state.still_hits(track) > 0 {
                    visible = false;
                    self.state.decay(track);
                }
            } else if rate < self.params.o_value {
                visible = false;
                first_occurrence = true;
                self.state.bump(track);
            }

            if visible || self.state.tracked_through(track, i) {
                let mut out = (*b).clone();
                out.visibility = Some(if visible { 1.0 } else { 0.0 });
                emitted.push(out);
                self.state.enqueue(track, i);
                if visible {
                    self.summary.moving += 1;
                } else {
                    self.summary.still += 1;
                }
            } else if first_occurrence {
                self.summary.dropped_featureless += 1;
            } else {
                self.summary.dropped_untracked += 1;
            }
        }
        self.summary.boxes_out += emitted.len();
        self.prev_emitted = emitted.clone();
        emitted
    }
}

/// Output of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Autolabeled {
    pub frames: Vec<Vec<LabeledBox>>,
    pub summary: AutolabelSummary,
}

/// Labels a whole recording from its windows; `labels[i]` belongs to `windows[i]`.
pub fn autolabel_sequence(
    windows: &[EventWindow<'_>],
    labels: &[Vec<LabeledBox>],
    height: usize,
    width: usize,
    params: &AutoLabelParams,
) -> Result<Autolabeled, AutolabelError> {
    if windows.len() != labels.len() {
        return Err(AutolabelError::FrameMisalignment {
            windows: windows.len(),
            labels: labels.len(),
        });
    }
    let masks = windows.iter().map(|w| occupancy_mask(w, height, width));
    autolabel_masks(masks, labels, params)
}

/// Same as [`autolabel_sequence`] with precomputed occupancy masks.
pub fn autolabel_masks<I, E>(
    masks: I,
    labels: &[Vec<LabeledBox>],
    params: &AutoLabelParams,
) -> Result<Autolabeled, AutolabelError>
where
    I: IntoIterator<Item = Result<OccupancyMask, E>>,
    AutolabelError: From<E>,
{
    let mut labeler = AutoLabeler::new(*params)?;
    let mut frames = Vec::with_capacity(labels.len());
    let mut n = 0;
    for (mask, boxes) in masks.into_iter().zip(labels) {
        frames.push(labeler.process_frame(&mask?, boxes));
        n += 1;
    }
    if n != labels.len() {
        return Err(AutolabelError::FrameMisalignment {
            windows: n,
            labels: labels.len(),
        });
    }
    Ok(Autolabeled {
        frames,
        summary: labeler.summary(),
    })
}

/// Labels one recording given its raw stream; windows are padded to cover every label frame.
pub fn autolabel_recording(
    stream: &EventStream,
    labels: &LabelTable,
    params: &AutoLabelParams,
) -> Result<Autolabeled, AutolabelError> {
    params.validate()?;
    let windows: Vec<_> = window_iter_min(stream, params.dt_us, labels.last_frame())?.collect();
    let dense = labels.to_dense(windows.len());
    autolabel_sequence(&windows, &dense, stream.height as usize, stream.width as usize, params)
}

/// Labels independent recordings on `jobs` worker threads; output order follows input order.
pub fn autolabel_batch(
    recordings: &[(EventStream, LabelTable)],
    params: &AutoLabelParams,
    jobs: usize,
) -> Vec<Result<Autolabeled, AutolabelError>> {
    let run = || {
        recordings
            .par_iter()
            .map(|(s, l)| autolabel_recording(s, l, params))
            .collect()
    };
    match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(pool) => pool.install(run),
        Err(_) => recordings.iter().map(|(s, l)| autolabel_recording(s, l, params)).collect(),
    }
}
