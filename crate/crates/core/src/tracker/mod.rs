//! Explicit-memory tracking with object permanence.
//!
//! Tracks whose last matched detection had low visibility are treated as still
//! (pseudo-occluded): while unmatched they are emitted every frame at their last
//! box, for as long as the stream lasts. Tracks last seen moving are hidden as
//! soon as they miss and dropped after `max_age_move` consecutive misses.

mod decode;

pub use decode::{decode_detections, DecodeError, Detection, HeadMaps, DEFAULT_STRIDE, DEFAULT_TOP_K};

use thiserror::Error;

use crate::labels::LabeledBox;

pub const DEFAULT_V_THRESH: f64 = 0.5;
pub const DEFAULT_MAX_AGE_MOVE: u32 = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TrackError {
    #[error("OutOfOrderFrame: frame {got} after frame {last}")]
    OutOfOrderFrame { got: usize, last: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerParams {
    pub v_thresh: f64,
    pub max_age_move: u32,
    /// Keep still tracks alive through misses. Off makes every track behave as moving.
    pub permanence: bool,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            v_thresh: DEFAULT_V_THRESH,
            max_age_move: DEFAULT_MAX_AGE_MOVE,
            permanence: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u64,
    pub class_id: u32,
    pub last_box: LabeledBox,
    pub last_score: f64,
    pub still: bool,
    pub misses: u32,
    pub age: u32,
}

impl Track {
    pub fn center(&self) -> (f64, f64) {
        self.last_box.center()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Association {
    /// `(track index, detection index)` pairs.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Greedy center association.
///
/// Detections are visited by descending score (stable). Each one predicts its
/// previous center as `center + displacement` and takes the nearest unclaimed
/// same-class track whose last center lies strictly within `sqrt(w * h)`.
pub fn associate(tracks: &[Track], detections: &[Detection]) -> Association {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score));
    let mut claimed = vec![false; tracks.len()];
    let mut out = Association::default();
    for di in order {
        let d = &detections[di];
        let q = (d.center.0 + d.displacement.0, d.center.1 + d.displacement.1);
        let gate = (d.w * d.h).max(0.0).sqrt();
        let mut best: Option<(usize, f64)> = None;
        for (ti, t) in tracks.iter().enumerate() {
            if claimed[ti] || t.class_id != d.class_id {
                continue;
            }
            let c = t.center();
            let dist = ((c.0 - q.0).powi(2) + (c.1 - q.1).powi(2)).sqrt();
            if dist < gate && best.is_none_or(|(_, bd)| dist < bd) {
                best = Some((ti, dist));
            }
        }
        match best {
            Some((ti, _)) => {
                claimed[ti] = true;
                out.matches.push((ti, di));
            }
            None => out.unmatched_detections.push(di),
        }
    }
    out.unmatched_tracks = (0..tracks.len()).filter(|&i| !claimed[i]).collect();
    out.matches.sort_unstable();
    out.unmatched_detections.sort_unstable();
    out
}

/// Sequential per-recording tracker state.
#[derive(Debug, Clone)]
pub struct Tracker {
    params: TrackerParams,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: usize,
}

impl Tracker {
    pub fn new(params: TrackerParams) -> Self {
        Self {
            params,
            tracks: Vec::new(),
            next_id: 1,
            last_frame: 0,
        }
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn params(&self) -> &TrackerParams {
        &self.params
    }

    /// Advances to `frame` and returns the boxes to report for it, ordered by track id.
    pub fn step(&mut self, frame: usize, detections: &[Detection]) -> Result<Vec<LabeledBox>, TrackError> {
        if frame <= self.last_frame {
            return Err(TrackError::OutOfOrderFrame {
                got: frame,
                last: self.last_frame,
            });
        }
        self.last_frame = frame;

        let assoc = associate(&self.tracks, detections);
        let mut emitted = Vec::new();

        for &(ti, di) in &assoc.matches {
            let d = &detections[di];
            let t = &mut self.tracks[ti];
            t.last_box = d.to_box(t.track_id);
            t.last_score = d.score;
            t.still = d.visibility < self.params.v_thresh;
            t.misses = 0;
            t.age += 1;
            emitted.push(report(t));
        }

        let mut dropped = vec![false; self.tracks.len()];
        for &ti in &assoc.unmatched_tracks {
            let t = &mut self.tracks[ti];
            t.misses += 1;
            t.age += 1;
            if t.still && self.params.permanence {
                emitted.push(report(t));
            } else if t.misses >= self.params.max_age_move {
                dropped[ti] = true;
            }
        }
        let mut idx = 0;
        self.tracks.retain(|_| {
            idx += 1;
            !dropped[idx - 1]
        });

        for &di in &assoc.unmatched_detections {
            let d = &detections[di];
            let track = Track {
                track_id: self.next_id,
                class_id: d.class_id,
                last_box: d.to_box(self.next_id),
                last_score: d.score,
                still: d.visibility < self.params.v_thresh,
                misses: 0,
                age: 1,
            };
            self.next_id += 1;
            emitted.push(report(&track));
            self.tracks.push(track);
        }

        emitted.sort_by_key(|b| b.track_id);
        Ok(emitted)
    }
}

fn report(t: &Track) -> LabeledBox {
    LabeledBox {
        confidence: t.last_score,
        visibility: Some(if t.still { 0.0 } else { 1.0 }),
        ..t.last_box.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(cx: f64, cy: f64, disp: (f64, f64), score: f64, vis: f64) -> Detection {
        Detection {
            center: (cx, cy),
            w: 20.0,
            h: 20.0,
            class_id: 0,
            score,
            displacement: disp,
            visibility: vis,
        }
    }

    fn track_at(cx: f64, cy: f64, id: u64) -> Track {
        Track {
            track_id: id,
            class_id: 0,
            last_box: LabeledBox::new(cx - 10.0, cy - 10.0, 20.0, 20.0, 0, id),
            last_score: 1.0,
            still: false,
            misses: 0,
            age: 1,
        }
    }

    #[test]
    fn displacement_predicts_previous_center() {
        let tracks = [track_at(100.0, 100.0, 1)];
        let a = associate(&tracks, &[det(104.0, 103.0, (-4.0, -3.0), 0.9, 1.0)]);
        assert_eq!(a.matches, vec![(0, 0)]);
        let a = associate(&tracks, &[det(300.0, 300.0, (0.0, 0.0), 0.9, 1.0)]);
        assert_eq!(a.unmatched_detections, vec![0]);
        assert_eq!(a.unmatched_tracks, vec![0]);
    }

    #[test]
    fn higher_score_claims_track() {
        let tracks = [track_at(100.0, 100.0, 1)];
        let dets = [det(101.0, 100.0, (0.0, 0.0), 0.6, 1.0), det(102.0, 100.0, (0.0, 0.0), 0.9, 1.0)];
        let a = associate(&tracks, &dets);
        assert_eq!(a.matches, vec![(0, 1)]);
        assert_eq!(a.unmatched_detections, vec![0]);
    }

    #[test]
    fn class_must_agree() {
        let tracks = [track_at(100.0, 100.0, 1)];
        let mut d = det(100.0, 100.0, (0.0, 0.0), 0.9, 1.0);
        d.class_id = 1;
        assert!(associate(&tracks, &[d]).matches.is_empty());
    }

    #[test]
    fn spawns_distinct_ids() {
        let mut t = Tracker::new(TrackerParams::default());
        let out = t
            .step(
                1,
                &[
                    det(10.0, 10.0, (0.0, 0.0), 0.9, 1.0),
                    det(100.0, 10.0, (0.0, 0.0), 0.8, 1.0),
                    det(200.0, 10.0, (0.0, 0.0), 0.7, 1.0),
                ],
            )
            .unwrap();
        let ids: Vec<_> = out.iter().map(|b| b.track_id).collect();
        assert_eq!(ids, vec![1, 2, 3]);
    }

    #[test]
    fn still_track_is_retained() {
        let mut t = Tracker::new(TrackerParams::default());
        t.step(1, &[det(50.0, 50.0, (0.0, 0.0), 0.9, 0.1)]).unwrap();
        let first = t.tracks()[0].last_box.clone();
        for f in 2..=601 {
            let out = t.step(f, &[]).unwrap();
            assert_eq!(out.len(), 1);
            assert_eq!(out[0].x.to_bits(), first.x.to_bits());
            assert_eq!(out[0].visibility, Some(0.0));
        }
    }

    #[test]
    fn moving_track_is_discarded_after_max_age() {
        let mut t = Tracker::new(TrackerParams::default());
        t.step(1, &[det(50.0, 50.0, (0.0, 0.0), 0.9, 0.9)]).unwrap();
        for f in 2..=6 {
            assert!(t.step(f, &[]).unwrap().is_empty());
            assert_eq!(t.tracks().len(), if f < 6 { 1 } else { 0 });
        }
    }

    #[test]
    fn permanence_off_drops_still_tracks() {
        let mut t = Tracker::new(TrackerParams {
            permanence: false,
            ..Default::default()
        });
        t.step(1, &[det(50.0, 50.0, (0.0, 0.0), 0.9, 0.0)]).unwrap();
        for f in 2..=6 {
            assert!(t.step(f, &[]).unwrap().is_empty());
        }
        assert!(t.tracks().is_empty());
    }

    #[test]
    fn ids_never_resurrect() {
        let mut t = Tracker::new(TrackerParams::default());
        t.step(1, &[det(50.0, 50.0, (0.0, 0.0), 0.9, 1.0)]).unwrap();
        for f in 2..=6 {
            t.step(f, &[]).unwrap();
        }
        let out = t.step(7, &[det(50.0, 50.0, (0.0, 0.0), 0.9, 1.0)]).unwrap();
        assert_eq!(out[0].track_id, 2);
    }

    #[test]
    fn out_of_order_frame() {
        let mut t = Tracker::new(TrackerParams::default());
        t.step(3, &[]).unwrap();
        assert_eq!(t.step(3, &[]), Err(TrackError::OutOfOrderFrame { got: 3, last: 3 }));
    }
}
