//! Scene description and its `key = value` text form.
//!
//! ```text
//! # comments start with '#'
//! width = 320
//! height = 240
//! duration_us = 4000000
//! dt_us = 50000
//! events_per_edge_pixel_per_frame = 4
//! noise_rate = 10
//! seed = 7
//!
//! [object]
//! class_id = 0
//! track_id = 1
//! box = 10, 20, 16, 16          # x, y, w, h at t = 0
//! segment = 0, 1000000, 40, 0   # t_start, t_end (us), vx, vy (px/s)
//! segment = 1000000, 4000000, 0, 0
//! ```
//!
//! Objects listed later are closer to the camera and hide earlier ones.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::events::DEFAULT_DT_US;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SynthError {
    #[error("SpecValidation: {path}: {msg}")]
    SpecValidation { path: String, msg: String },
}

fn invalid(path: impl Into<String>, msg: impl Into<String>) -> SynthError {
    SynthError::SpecValidation {
        path: path.into(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionSegment {
    pub t_start: u64,
    pub t_end: u64,
    /// Pixels per second.
    pub vx: f64,
    pub vy: f64,
}

impl MotionSegment {
    pub fn is_moving(&self) -> bool {
        self.vx != 0.0 || self.vy != 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub class_id: u32,
    pub track_id: u64,
    /// `(x, y, w, h)` at t = 0.
    pub initial_box: (f64, f64, f64, f64),
    pub segments: Vec<MotionSegment>,
}

impl ObjectSpec {
    /// Segment active at `t`; the last segment also owns `t == duration`.
    pub fn segment_at(&self, t: u64) -> &MotionSegment {
        self.segments
            .iter()
            .find(|s| s.t_start <= t && t < s.t_end)
            .unwrap_or_else(|| self.segments.last().expect("validated spec has segments"))
    }

    /// Top-left corner at time `t`.
    pub fn position_at(&self, t: u64) -> (f64, f64) {
        let (mut x, mut y) = (self.initial_box.0, self.initial_box.1);
        for s in &self.segments {
            if s.t_start >= t {
                break;
            }
            let span = (t.min(s.t_end) - s.t_start) as f64;
            x += s.vx * span / 1e6;
            y += s.vy * span / 1e6;
        }
        (x, y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: u16,
    pub height: u16,
    pub duration_us: u64,
    pub dt_us: u64,
    pub events_per_edge_pixel_per_frame: f64,
    pub noise_rate: f64,
    pub seed: u64,
    pub objects: Vec<ObjectSpec>,
}

impl SceneSpec {
    pub fn frame_count(&self) -> usize {
        self.duration_us.div_ceil(self.dt_us) as usize
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.width == 0 {
            return Err(invalid("width", "must be positive"));
        }
        if self.height == 0 {
            return Err(invalid("height", "must be positive"));
        }
        if self.duration_us == 0 {
            return Err(invalid("duration_us", "must be positive"));
        }
        if self.dt_us == 0 {
            return Err(invalid("dt_us", "must be positive"));
        }
        let rate = self.events_per_edge_pixel_per_frame;
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(invalid("events_per_edge_pixel_per_frame", "must be finite and non-negative"));
        }
        if !(self.noise_rate >= 0.0 && self.noise_rate.is_finite()) {
            return Err(invalid("noise_rate", "must be finite and non-negative"));
        }
        let mut ids = std::collections::BTreeSet::new();
        for (k, o) in self.objects.iter().enumerate() {
            let p = format!("object[{k}]");
            if !ids.insert(o.track_id) {
                return Err(invalid(format!("{p}.track_id"), format!("duplicate track id {}", o.track_id)));
            }
            let (x, y, w, h) = o.initial_box;
            if ![x, y, w, h].iter().all(|v| v.is_finite()) || w <= 0.0 || h <= 0.0 {
                return Err(invalid(format!("{p}.box"), "needs finite coordinates and positive size"));
            }
            if o.segments.is_empty() {
                return Err(invalid(format!("{p}.segment"), "at least one segment is required"));
            }
            let mut expected_start = 0;
            for (j, s) in o.segments.iter().enumerate() {
                let sp = format!("{p}.segment[{j}]");
                if s.t_start != expected_start {
                    return Err(invalid(
                        format!("{sp}.t_start"),
                        format!("expected {expected_start}, segments must be contiguous from 0"),
                    ));
                }
                if s.t_end <= s.t_start {
                    return Err(invalid(format!("{sp}.t_end"), "must exceed t_start"));
                }
                if !(s.vx.is_finite() && s.vy.is_finite()) {
                    return Err(invalid(format!("{sp}.velocity"), "must be finite"));
                }
                expected_start = s.t_end;
            }
            if expected_start != self.duration_us {
                return Err(invalid(
                    format!("{p}.segment[{}].t_end", o.segments.len() - 1),
                    format!("segments end at {expected_start}, duration is {}", self.duration_us),
                ));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let mut spec = SceneSpec {
            width: 0,
            height: 0,
            duration_us: 0,
            dt_us: DEFAULT_DT_US,
            events_per_edge_pixel_per_frame: 4.0,
            noise_rate: 0.0,
            seed: 0,
            objects: Vec::new(),
        };
        let mut current: Option<PartialObject> = None;
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line == "[object]" {
                if let Some(o) = current.take() {
                    spec.objects.push(o.finish(spec.objects.len())?);
                }
                current = Some(PartialObject::default());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(invalid(format!("line {line_no}"), format!("expected `key = value`, got {line:?}")));
            };
            let (key, value) = (key.trim(), value.trim());
            let path = match &current {
                Some(_) => format!("object[{}].{key}", spec.objects.len()),
                None => key.to_string(),
            };
            match (&mut current, key) {
                (None, "width") => spec.width = num(&path, value)?,
                (None, "height") => spec.height = num(&path, value)?,
                (None, "duration_us") => spec.duration_us = num(&path, value)?,
                (None, "dt_us") => spec.dt_us = num(&path, value)?,
                (None, "events_per_edge_pixel_per_frame") => spec.events_per_edge_pixel_per_frame = num(&path, value)?,
                (None, "noise_rate") => spec.noise_rate = num(&path, value)?,
                (None, "seed") => spec.seed = num(&path, value)?,
                (Some(o), "class_id") => o.class_id = Some(num(&path, value)?),
                (Some(o), "track_id") => o.track_id = Some(num(&path, value)?),
                (Some(o), "box") => {
                    let v: Vec<f64> = list(&path, value, 4)?;
                    o.initial_box = Some((v[0], v[1], v[2], v[3]));
                }
                (Some(o), "segment") => {
                    let v: Vec<f64> = list(&path, value, 4)?;
                    let t = |x: f64, what: &str| {
                        if x >= 0.0 && x.fract() == 0.0 {
                            Ok(x as u64)
                        } else {
                            Err(invalid(&path, format!("{what} must be a non-negative integer")))
                        }
                    };
                    o.segments.push(MotionSegment {
                        t_start: t(v[0], "t_start")?,
                        t_end: t(v[1], "t_end")?,
                        vx: v[2],
                        vy: v[3],
                    });
                }
                _ => return Err(invalid(path, "unknown key")),
            }
        }
        if let Some(o) = current.take() {
            spec.objects.push(o.finish(spec.objects.len())?);
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Canonical text form; `parse(to_text(s)) == s`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "width = {}", self.width);
        let _ = writeln!(out, "height = {}", self.height);
        let _ = writeln!(out, "duration_us = {}", self.duration_us);
        let _ = writeln!(out, "dt_us = {}", self.dt_us);
        let _ = writeln!(out, "events_per_edge_pixel_per_frame = {:?}", self.events_per_edge_pixel_per_frame);
        let _ = writeln!(out, "noise_rate = {:?}", self.noise_rate);
        let _ = writeln!(out, "seed = {}", self.seed);
        for o in &self.objects {
            let (x, y, w, h) = o.initial_box;
            let _ = writeln!(out, "\n[object]");
            let _ = writeln!(out, "class_id = {}", o.class_id);
            let _ = writeln!(out, "track_id = {}", o.track_id);
            let _ = writeln!(out, "box = {x:?}, {y:?}, {w:?}, {h:?}");
            for s in &o.segments {
                let _ = writeln!(out, "segment = {}, {}, {:?}, {:?}", s.t_start, s.t_end, s.vx, s.vy);
            }
        }
        out
    }
}

#[derive(Default)]
struct PartialObject {
    class_id: Option<u32>,
    track_id: Option<u64>,
    initial_box: Option<(f64, f64, f64, f64)>,
    segments: Vec<MotionSegment>,
}

impl PartialObject {
    fn finish(self, k: usize) -> Result<ObjectSpec, SynthError> {
        let missing = |f: &str| invalid(format!("object[{k}].{f}"), "missing");
        Ok(ObjectSpec {
            class_id: self.class_id.ok_or_else(|| missing("class_id"))?,
            track_id: self.track_id.ok_or_else(|| missing("track_id"))?,
            initial_box: self.initial_box.ok_or_else(|| missing("box"))?,
            segments: self.segments,
        })
    }
}

fn num<T: FromStr>(path: &str, value: &str) -> Result<T, SynthError> {
    value
        .parse()
        .map_err(|_| invalid(path, format!("cannot parse {value:?}")))
}

fn list(path: &str, value: &str, n: usize) -> Result<Vec<f64>, SynthError> {
    let v = value
        .split(',')
        .map(|s| num::<f64>(path, s.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    if v.len() != n {
        return Err(invalid(path, format!("expected {n} comma-separated numbers, got {}", v.len())));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCENE: &str = "\
width = 64
height = 48
duration_us = 200000
seed = 3

[object]
class_id = 2
track_id = 9
box = 4, 5, 10, 8
segment = 0, 100000, 40, 0   # moving
segment = 100000, 200000, 0, 0
";

    #[test]
    fn parse_and_round_trip() {
        let s = SceneSpec::parse(SCENE).unwrap();
        assert_eq!(s.dt_us, 50_000);
        assert_eq!(s.frame_count(), 4);
        assert_eq!(s.objects[0].segments.len(), 2);
        assert_eq!(SceneSpec::parse(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn motion_integration() {
        let s = SceneSpec::parse(SCENE).unwrap();
        let o = &s.objects[0];
        assert_eq!(o.position_at(0), (4.0, 5.0));
        assert_eq!(o.position_at(50_000), (6.0, 5.0));
        assert_eq!(o.position_at(150_000), (8.0, 5.0));
        assert!(o.segment_at(99_999).is_moving());
        assert!(!o.segment_at(200_000).is_moving());
    }

    #[test]
    fn validation_names_the_field() {
        let gap = SCENE.replace("segment = 100000, 200000", "segment = 100001, 200000");
        match SceneSpec::parse(&gap) {
            Err(SynthError::SpecValidation { path, .. }) => assert_eq!(path, "object[0].segment[1].t_start"),
            other => panic!("unexpected {other:?}"),
        }
        let short = SCENE.replace("200000, 0, 0", "150000, 0, 0");
        assert!(SceneSpec::parse(&short).is_err());
        let unknown = format!("{SCENE}colour = red\n");
        match SceneSpec::parse(&unknown) {
            Err(SynthError::SpecValidation { path, .. }) => assert_eq!(path, "object[0].colour"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(SceneSpec::parse(&SCENE.replace("width = 64", "width = 0")).is_err());
        assert!(SceneSpec::parse(&SCENE.replace("box = 4, 5, 10, 8", "box = 4, 5, 0, 8")).is_err());
    }
}
