use std::collections::BTreeMap;

use crate::labels::LabeledBox;
use crate::tensor::FrameTensor;
use crate::tracker::HeadMaps;

use super::SceneOutput;

/// Which ground-truth boxes a perfect detector would report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMapPolicy {
    /// Every labelled box.
    All,
    /// Boxes whose object emitted events in this frame or the one before; a
    /// stopped object is reported for exactly one frame after its last event.
    Featureful,
}

/// Ground-truth boxes per frame (index = frame - 1) filtered by `policy`.
pub fn detectable_boxes(scene: &SceneOutput, policy: HeadMapPolicy) -> Vec<Vec<LabeledBox>> {
    (1..=scene.frames)
        .map(|i| {
            let boxes = scene.labels.frames.get(&i).cloned().unwrap_or_default();
            match policy {
                HeadMapPolicy::All => boxes,
                HeadMapPolicy::Featureful => boxes
                    .into_iter()
                    .filter(|b| {
                        let counts = &scene.object_events[&b.track_id];
                        counts[i - 1] > 0 || (i >= 2 && counts[i - 2] > 0)
                    })
                    .collect(),
            }
        })
        .collect()
}

/// Renders exact head maps for `boxes`.
///
/// Each box puts a unit Gaussian peak (sigma = max(w, h) / stride / 3) on its
/// center cell and writes exact size, offset, displacement (towards the same
/// track's center in `prev`, zero if absent), visibility and a consistency value
/// `ln(|d| / v)` where that is non-negative, else 0.
pub fn render_head_maps(
    boxes: &[LabeledBox],
    prev: &[LabeledBox],
    width: usize,
    height: usize,
    stride: usize,
    num_classes: usize,
) -> HeadMaps {
    let gw = width.div_ceil(stride);
    let gh = height.div_ceil(stride);
    let r = stride as f64;
    let mut heat = FrameTensor::zeros(num_classes, gh, gw);
    let mut size = FrameTensor::zeros(2, gh, gw);
    let mut offset = FrameTensor::zeros(2, gh, gw);
    let mut displacement = FrameTensor::zeros(2, gh, gw);
    let mut visibility = FrameTensor::zeros(1, gh, gw);
    let mut consistency = FrameTensor::zeros(1, gh, gw);
    let prev_centers: BTreeMap<u64, (f64, f64)> = prev.iter().map(|b| (b.track_id, b.center())).collect();

    for b in boxes {
        let class = b.class_id as usize;
        if class >= num_classes {
            continue;
        }
        let (cx, cy) = b.center();
        let (fx, fy) = (cx / r, cy / r);
        let (gx, gy) = (fx.floor(), fy.floor());
        if gx < 0.0 || gy < 0.0 || gx as usize >= gw || gy as usize >= gh {
            continue;
        }
        let (x, y) = (gx as usize, gy as usize);

        let sigma = b.w.max(b.h) / r / 3.0;
        let radius = (3.0 * sigma).ceil() as i64;
        for yy in (y as i64 - radius).max(0)..=(y as i64 + radius).min(gh as i64 - 1) {
            for xx in (x as i64 - radius).max(0)..=(x as i64 + radius).min(gw as i64 - 1) {
                let d2 = ((xx - x as i64).pow(2) + (yy - y as i64).pow(2)) as f64;
                let v = (-d2 / (2.0 * sigma * sigma)).exp() as f32;
                let (yy, xx) = (yy as usize, xx as usize);
                if v > heat.get(class, yy, xx) {
                    heat.set(class, yy, xx, v);
                }
            }
        }

        let d = prev_centers
            .get(&b.track_id)
            .map(|&(px, py)| (px - cx, py - cy))
            .unwrap_or((0.0, 0.0));
        let v = b.visibility.unwrap_or(1.0);
        let norm = d.0.hypot(d.1);
        let c = if v > 0.0 && norm >= v { (norm / v).ln() } else { 0.0 };

        size.set(0, y, x, b.w as f32);
        size.set(1, y, x, b.h as f32);
        offset.set(0, y, x, (fx - gx) as f32);
        offset.set(1, y, x, (fy - gy) as f32);
        displacement.set(0, y, x, d.0 as f32);
        displacement.set(1, y, x, d.1 as f32);
        visibility.set(0, y, x, v as f32);
        consistency.set(0, y, x, c as f32);
    }

    HeadMaps {
        heat,
        size,
        offset,
        displacement,
        visibility,
        consistency: Some(consistency),
        stride,
    }
}

/// Head maps for every frame of a scene; displacements point at the previous
/// frame's ground truth.
pub fn scene_head_maps(scene: &SceneOutput, policy: HeadMapPolicy, stride: usize, num_classes: usize) -> Vec<HeadMaps> {
    let shown = detectable_boxes(scene, policy);
    let (w, h) = (scene.stream.width as usize, scene.stream.height as usize);
    (1..=scene.frames)
        .map(|i| {
            let prev = if i >= 2 {
                scene.labels.frames.get(&(i - 1)).cloned().unwrap_or_default()
            } else {
                Vec::new()
            };
            render_head_maps(&shown[i - 1], &prev, w, h, stride, num_classes)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracker::decode_detections;

    #[test]
    fn decoding_recovers_boxes() {
        let cur = [
            LabeledBox::new(95.0, 40.0, 12.0, 8.0, 0, 1).with_visibility(1.0),
            LabeledBox::new(10.0, 10.0, 20.0, 20.0, 1, 2).with_visibility(0.0),
        ];
        let prev = [LabeledBox::new(93.0, 40.0, 12.0, 8.0, 0, 1)];
        let maps = render_head_maps(&cur, &prev, 128, 64, 4, 2);
        let mut dets = decode_detections(&maps, 0.4, 100).unwrap();
        dets.sort_by_key(|d| d.class_id);
        assert_eq!(dets.len(), 2);
        assert_eq!(dets[0].to_box(1).x, 95.0);
        assert_eq!(dets[0].center, (101.0, 44.0));
        assert_eq!(dets[0].displacement, (-2.0, 0.0));
        assert_eq!(dets[0].visibility, 1.0);
        assert_eq!((dets[1].w, dets[1].h, dets[1].visibility), (20.0, 20.0, 0.0));
        let c = maps.consistency.as_ref().unwrap();
        assert!((c.get(0, 11, 25) as f64 - 2f64.ln()).abs() < 1e-6);
    }
}
