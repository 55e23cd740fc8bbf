//! Synthetic event scenes with analytic ground truth.
//!
//! Rectangles follow piecewise-constant velocities. While an object moves, every
//! pixel on the one-pixel ring of its box emits a Poisson number of events per
//! frame (polarity 1 on the half facing the motion, 0 on the trailing half). A
//! still object emits nothing, so its ground-truth visibility is 0.0 exactly when
//! its velocity is zero.
//!
//! Randomness comes from ChaCha8 seeded with the scene seed; object `track_id`
//! draws from stream `track_id + 1` and background noise from stream 0, so adding
//! an object leaves every other object's events unchanged.

mod headmaps;
mod spec;

pub use headmaps::{detectable_boxes, render_head_maps, scene_head_maps, HeadMapPolicy};
pub use spec::{MotionSegment, ObjectSpec, SceneSpec, SynthError};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::events::{Event, EventStream};
use crate::labels::{LabelTable, LabeledBox, PixelRect};

/// Events, labels and per-object emission counts for one generated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneOutput {
    pub stream: EventStream,
    pub labels: LabelTable,
    /// Object events (noise excluded) per track, indexed by frame - 1.
    pub object_events: BTreeMap<u64, Vec<u32>>,
    pub frames: usize,
    pub dt_us: u64,
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

/// Ground-truth box of an object at time `t`, clipped to the sensor; `None` when off-frame.
pub fn box_at(spec: &SceneSpec, obj: &ObjectSpec, t: u64) -> Option<LabeledBox> {
    let (x, y) = obj.position_at(t);
    let (_, _, w, h) = obj.initial_box;
    let moving = obj.segment_at(t).is_moving();
    LabeledBox::new(x, y, w, h, obj.class_id, obj.track_id)
        .with_visibility(if moving { 1.0 } else { 0.0 })
        .clipped(spec.width as f64, spec.height as f64)
}

fn ring(rect: &PixelRect) -> Vec<(i64, i64)> {
    let mut px = Vec::new();
    if rect.is_empty() {
        return px;
    }
    for x in rect.x0..rect.x1 {
        px.push((x, rect.y0));
        if rect.y1 - 1 > rect.y0 {
            px.push((x, rect.y1 - 1));
        }
    }
    for y in rect.y0 + 1..rect.y1 - 1 {
        px.push((rect.x0, y));
        if rect.x1 - 1 > rect.x0 {
            px.push((rect.x1 - 1, y));
        }
    }
    px
}

/// Moving sub-intervals of `[t0, t1)` as `(start, end, vx, vy)`.
fn moving_spans(obj: &ObjectSpec, t0: u64, t1: u64) -> Vec<(u64, u64, f64, f64)> {
    obj.segments
        .iter()
        .filter(|s| s.is_moving())
        .filter_map(|s| {
            let a = s.t_start.max(t0);
            let b = s.t_end.min(t1);
            (a < b).then_some((a, b, s.vx, s.vy))
        })
        .collect()
}

pub fn generate(spec: &SceneSpec) -> Result<SceneOutput, SynthError> {
    spec.validate()?;
    let frames = spec.frame_count();
    let (width, height) = (spec.width as i64, spec.height as i64);
    let dt = spec.dt_us;
    let rate = spec.events_per_edge_pixel_per_frame;

    let mut labels = LabelTable::default();
    let mut events = Vec::new();
    let mut object_events: BTreeMap<u64, Vec<u32>> =
        spec.objects.iter().map(|o| (o.track_id, vec![0; frames])).collect();
    let mut rngs: Vec<ChaCha8Rng> = spec
        .objects
        .iter()
        .map(|o| {
            let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
            r.set_stream(o.track_id.wrapping_add(1));
            r
        })
        .collect();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    noise_rng.set_stream(0);

    for i in 1..=frames {
        let t0 = (i as u64 - 1) * dt;
        let t1 = (i as u64 * dt).min(spec.duration_us);
        let rects: Vec<PixelRect> = spec
            .objects
            .iter()
            .map(|o| {
                let (x, y) = o.position_at(t0);
                let (_, _, w, h) = o.initial_box;
                PixelRect::from_box(&LabeledBox::new(x, y, w, h, 0, 0))
            })
            .collect();

        for (k, obj) in spec.objects.iter().enumerate() {
            if let Some(b) = box_at(spec, obj, t0) {
                labels.frames.entry(i).or_default().push(b);
            }
            let spans = moving_spans(obj, t0, t1);
            let active: u64 = spans.iter().map(|s| s.1 - s.0).sum();
            if active == 0 {
                continue;
            }
            let rect = rects[k];
            let (cx, cy) = ((rect.x0 + rect.x1) as f64 / 2.0, (rect.y0 + rect.y1) as f64 / 2.0);
            let mean = rate * active as f64 / dt as f64;
            let rng = &mut rngs[k];
            let mut emitted = 0u32;
            for (px, py) in ring(&rect) {
                if px < 0 || py < 0 || px >= width || py >= height {
                    continue;
                }
                if rects[k + 1..].iter().any(|r| r.contains(px, py)) {
                    continue;
                }
                for _ in 0..poisson(rng, mean) {
                    let mut offset = rng.random_range(0..active);
                    let &(a, _, vx, vy) = spans
                        .iter()
                        .find(|s| {
                            let len = s.1 - s.0;
                            if offset < len {
                                true
                            } else {
                                offset -= len;
                                false
                            }
                        })
                        .expect("offset is below the total span");
                    let lead = (px as f64 + 0.5 - cx) * vx + (py as f64 + 0.5 - cy) * vy;
                    events.push(Event::new(a + offset, px as u16, py as u16, (lead >= 0.0) as u8));
                    emitted += 1;
                }
            }
            object_events.get_mut(&obj.track_id).expect("seeded above")[i - 1] = emitted;
        }

        let noise = poisson(&mut noise_rng, spec.noise_rate * (t1 - t0) as f64 / dt as f64);
        for _ in 0..noise {
            let t = noise_rng.random_range(t0..t1);
            let x = noise_rng.random_range(0..spec.width);
            let y = noise_rng.random_range(0..spec.height);
            let p = noise_rng.random_range(0..2u8);
            events.push(Event::new(t, x, y, p));
        }
    }

    events.sort_by_key(|e| (e.t, e.y, e.x, e.p));
    Ok(SceneOutput {
        stream: EventStream {
            width: spec.width,
            height: spec.height,
            events,
        },
        labels,
        object_events,
        frames,
        dt_us: dt,
    })
}

/// Layout for [`occlusion_scenario`]. Distances are in pixels per frame so the
/// geometry does not depend on `dt_us`.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionParams {
    pub width: u16,
    pub height: u16,
    pub dt_us: u64,
    pub frames: usize,
    /// Still variant: frames the occludee drives before parking (0 = parked from the start).
    pub approach_frames: usize,
    /// First frame in which the occluder moves.
    pub cross_start_frame: usize,
    /// The occludee keeps moving and is hidden behind a wider occluder instead of parking.
    pub occludee_moving: bool,
    pub events_per_edge_pixel_per_frame: f64,
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for OcclusionParams {
    fn default() -> Self {
        Self {
            width: 640,
            height: 360,
            dt_us: crate::events::DEFAULT_DT_US,
            frames: 200,
            approach_frames: 4,
            cross_start_frame: 60,
            occludee_moving: false,
            events_per_edge_pixel_per_frame: 4.0,
            noise_rate: 0.0,
            seed: 1,
        }
    }
}

/// A moving occluder (track 2) crosses right-to-left in front of an occludee
/// (track 1) and leaves the frame.
///
/// Still variant: the occludee drives 2 px/frame for `approach_frames`, then parks
/// at `(100, 160)` with size 48×32; the 64×48 occluder drives 8 px/frame.
/// Moving variant: the 32×24 occludee drives 2 px/frame throughout from `(40, 164)`;
/// the 128×48 occluder drives 6 px/frame and covers it fully for 12 frames.
pub fn occlusion_scenario(p: &OcclusionParams) -> SceneSpec {
    let dt = p.dt_us;
    let duration = p.frames as u64 * dt;
    let speed = |px_per_frame: f64| px_per_frame * 1e6 / dt as f64;
    let at = |frame: usize| ((frame as u64).saturating_sub(1) * dt).min(duration);
    let segments_then = |pairs: &[(u64, f64)]| {
        // (end time, vx) pairs -> contiguous horizontal segments
        let mut out = Vec::new();
        let mut start = 0;
        for &(end, vx) in pairs {
            let end = end.min(duration);
            if end > start {
                out.push(MotionSegment {
                    t_start: start,
                    t_end: end,
                    vx,
                    vy: 0.0,
                });
                start = end;
            }
        }
        out
    };

    let (occludee, occluder_w, occluder_speed) = if p.occludee_moving {
        let o = ObjectSpec {
            class_id: 0,
            track_id: 1,
            initial_box: (40.0, 164.0, 32.0, 24.0),
            segments: segments_then(&[(duration, speed(2.0))]),
        };
        (o, 128.0, 6.0)
    } else {
        let park = at(p.approach_frames + 1);
        let x0 = 100.0 - 2.0 * p.approach_frames as f64;
        let o = ObjectSpec {
            class_id: 0,
            track_id: 1,
            initial_box: (x0, 160.0, 48.0, 32.0),
            segments: segments_then(&[(park, speed(2.0)), (duration, 0.0)]),
        };
        (o, 64.0, 8.0)
    };

    let enter = at(p.cross_start_frame);
    let travel_frames = ((p.width as f64 + occluder_w) / occluder_speed).ceil() as usize;
    let leave = at(p.cross_start_frame + travel_frames);
    let occluder = ObjectSpec {
        class_id: 0,
        track_id: 2,
        initial_box: (p.width as f64, 152.0, occluder_w, 48.0),
        segments: segments_then(&[(enter, 0.0), (leave, speed(-occluder_speed)), (duration, 0.0)]),
    };

    SceneSpec {
        width: p.width,
        height: p.height,
        duration_us: duration,
        dt_us: dt,
        events_per_edge_pixel_per_frame: p.events_per_edge_pixel_per_frame,
        noise_rate: p.noise_rate,
        seed: p.seed,
        objects: vec![occludee, occluder],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_object(segments: Vec<MotionSegment>, duration: u64) -> SceneSpec {
        SceneSpec {
            width: 64,
            height: 48,
            duration_us: duration,
            dt_us: 50_000,
            events_per_edge_pixel_per_frame: 3.0,
            noise_rate: 0.0,
            seed: 11,
            objects: vec![ObjectSpec {
                class_id: 0,
                track_id: 1,
                initial_box: (10.0, 10.0, 12.0, 10.0),
                segments,
            }],
        }
    }

    fn seg(t_start: u64, t_end: u64, vx: f64) -> MotionSegment {
        MotionSegment {
            t_start,
            t_end,
            vx,
            vy: 0.0,
        }
    }

    #[test]
    fn static_object_emits_nothing() {
        let out = generate(&one_object(vec![seg(0, 500_000, 0.0)], 500_000)).unwrap();
        assert!(out.stream.is_empty());
        assert_eq!(out.labels.len(), 10);
        assert!(out.labels.iter().all(|(_, b)| b.visibility == Some(0.0)));
    }

    #[test]
    fn events_only_while_moving() {
        let out = generate(&one_object(vec![seg(0, 50_000, 40.0), seg(50_000, 300_000, 0.0)], 300_000)).unwrap();
        assert!(!out.stream.is_empty());
        assert!(out.stream.events.iter().all(|e| e.t < 50_000));
        assert_eq!(out.object_events[&1][0] as usize, out.stream.len());
        let vis: Vec<_> = out.labels.iter().map(|(_, b)| b.visibility.unwrap()).collect();
        assert_eq!(vis, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn events_stay_inside_the_label_box() {
        let out = generate(&one_object(vec![seg(0, 500_000, 60.0)], 500_000)).unwrap();
        for e in &out.stream.events {
            let frame = (e.t / 50_000 + 1) as usize;
            let b = &out.labels.frames[&frame][0];
            let r = PixelRect::from_box(b);
            assert!(r.contains(e.x as i64, e.y as i64), "{e:?} outside {r:?}");
        }
        // leading edge (right side for +x motion) carries polarity 1
        let right = out.stream.events.iter().filter(|e| e.p == 1).all(|e| {
            let frame = (e.t / 50_000 + 1) as usize;
            let b = &out.labels.frames[&frame][0];
            e.x as f64 + 0.5 >= b.x + b.w / 2.0
        });
        assert!(right);
    }

    #[test]
    fn deterministic_and_substreams_independent() {
        let spec = one_object(vec![seg(0, 400_000, 40.0)], 400_000);
        let a = generate(&spec).unwrap();
        assert_eq!(a, generate(&spec).unwrap());

        let mut more = spec.clone();
        more.objects.insert(
            0,
            ObjectSpec {
                class_id: 1,
                track_id: 5,
                initial_box: (40.0, 30.0, 8.0, 8.0),
                segments: vec![seg(0, 400_000, -20.0)],
            },
        );
        let b = generate(&more).unwrap();
        let only_first: Vec<_> = b
            .stream
            .events
            .iter()
            .filter(|e| e.y < 25)
            .copied()
            .collect();
        assert_eq!(only_first, a.stream.events);
    }

    #[test]
    fn occluder_suppresses_hidden_pixels() {
        let p = OcclusionParams {
            occludee_moving: true,
            frames: 120,
            cross_start_frame: 1,
            ..Default::default()
        };
        let spec = occlusion_scenario(&p);
        let out = generate(&spec).unwrap();
        let hidden = &out.object_events[&1];
        let covered: Vec<usize> = (0..out.frames).filter(|&f| hidden[f] == 0).collect();
        assert!(covered.len() >= 10, "occludee hidden in {} frames", covered.len());
        // GT keeps labelling the hidden object as moving
        for f in covered {
            let b = out.labels.frames[&(f + 1)].iter().find(|b| b.track_id == 1).unwrap();
            assert_eq!(b.visibility, Some(1.0));
        }
    }

    #[test]
    fn parked_occludee_stays_still() {
        let p = OcclusionParams {
            approach_frames: 0,
            ..Default::default()
        };
        let out = generate(&occlusion_scenario(&p)).unwrap();
        assert!(out.object_events[&1].iter().all(|&n| n == 0));
        for (_, b) in out.labels.iter().filter(|(_, b)| b.track_id == 1) {
            assert_eq!(b.visibility, Some(0.0));
        }
        // the occluder passes and leaves
        let last = out.labels.frames[&out.frames].iter().filter(|b| b.track_id == 2).count();
        assert_eq!(last, 0);
        assert!(out.object_events[&2].iter().any(|&n| n > 0));
    }
}
