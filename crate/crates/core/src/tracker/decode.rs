use thiserror::Error;

use crate::labels::LabeledBox;
use crate::tensor::FrameTensor;

/// Output stride of the head maps relative to the input resolution.
pub const DEFAULT_STRIDE: usize = 4;
pub const DEFAULT_TOP_K: usize = 100;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("ShapeMismatch: {map} map is {got:?}, expected {expected:?}")]
    ShapeMismatch {
        map: &'static str,
        got: (usize, usize, usize),
        expected: (usize, usize, usize),
    },
}

/// Per-frame outputs of the detection heads, all on the same `H/R × W/R` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMaps {
    /// Class heatmap, one channel per class.
    pub heat: FrameTensor,
    /// Box width and height in input pixels.
    pub size: FrameTensor,
    /// Sub-cell center offset in grid units.
    pub offset: FrameTensor,
    /// Vector from the current center to the previous-frame center, input pixels.
    pub displacement: FrameTensor,
    pub visibility: FrameTensor,
    /// Consistency map; only used by the training loss, kept for diagnostics.
    pub consistency: Option<FrameTensor>,
    pub stride: usize,
}

impl HeadMaps {
    pub fn validate(&self) -> Result<(), DecodeError> {
        let (h, w) = (self.heat.height, self.heat.width);
        let check = |map: &'static str, t: &FrameTensor, channels: usize| {
            if t.channels != channels || t.height != h || t.width != w {
                Err(DecodeError::ShapeMismatch {
                    map,
                    got: (t.channels, t.height, t.width),
                    expected: (channels, h, w),
                })
            } else {
                Ok(())
            }
        };
        check("S", &self.size, 2)?;
        check("O", &self.offset, 2)?;
        check("D", &self.displacement, 2)?;
        check("V", &self.visibility, 1)?;
        if let Some(c) = &self.consistency {
            check("C", c, 1)?;
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.heat.channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub center: (f64, f64),
    pub w: f64,
    pub h: f64,
    pub class_id: u32,
    pub score: f64,
    /// Points from this frame's center to the previous frame's center.
    pub displacement: (f64, f64),
    pub visibility: f64,
}

impl Detection {
    pub fn to_box(&self, track_id: u64) -> LabeledBox {
        LabeledBox {
            x: self.center.0 - self.w / 2.0,
            y: self.center.1 - self.h / 2.0,
            w: self.w,
            h: self.h,
            class_id: self.class_id,
            track_id,
            confidence: self.score,
            visibility: Some(self.visibility),
        }
    }

    /// Detection from a label row; the label format carries no displacement.
    pub fn from_box(b: &LabeledBox) -> Self {
        Self {
            center: b.center(),
            w: b.w,
            h: b.h,
            class_id: b.class_id,
            score: b.confidence,
            displacement: (0.0, 0.0),
            visibility: b.visibility.unwrap_or(1.0),
        }
    }
}

/// Extracts peaks from the class heatmap.
///
/// A cell is a peak when its score exceeds `conf_thresh` and is no smaller than
/// any of its 8 neighbours, so equal plateau cells all survive. The `top_k`
/// highest scores are kept; ties keep scan order (class, row, column).
pub fn decode_detections(maps: &HeadMaps, conf_thresh: f64, top_k: usize) -> Result<Vec<Detection>, DecodeError> {
    maps.validate()?;
    let heat = &maps.heat;
    let (h, w) = (heat.height, heat.width);
    let r = maps.stride as f64;
    let mut peaks = Vec::new();
    for c in 0..heat.channels {
        for y in 0..h {
            for x in 0..w {
                let v = heat.get(c, y, x);
                if (v as f64) <= conf_thresh {
                    continue;
                }
                let mut is_peak = true;
                'nb: for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        if (ny, nx) != (y, x) && heat.get(c, ny, nx) > v {
                            is_peak = false;
                            break 'nb;
                        }
                    }
                }
                if is_peak {
                    peaks.push((v, c, y, x));
                }
            }
        }
    }
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0));
    peaks.truncate(top_k);
    Ok(peaks
        .into_iter()
        .map(|(v, c, y, x)| Detection {
            center: (
                (x as f64 + maps.offset.get(0, y, x) as f64) * r,
                (y as f64 + maps.offset.get(1, y, x) as f64) * r,
            ),
            w: maps.size.get(0, y, x) as f64,
            h: maps.size.get(1, y, x) as f64,
            class_id: c as u32,
            score: v as f64,
            displacement: (
                maps.displacement.get(0, y, x) as f64,
                maps.displacement.get(1, y, x) as f64,
            ),
            visibility: maps.visibility.get(0, y, x) as f64,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn maps(h: usize, w: usize) -> HeadMaps {
        HeadMaps {
            heat: FrameTensor::zeros(1, h, w),
            size: FrameTensor::zeros(2, h, w),
            offset: FrameTensor::zeros(2, h, w),
            displacement: FrameTensor::zeros(2, h, w),
            visibility: FrameTensor::zeros(1, h, w),
            consistency: None,
            stride: 4,
        }
    }

    #[test]
    fn single_peak_center() {
        let mut m = maps(8, 16);
        m.heat.set(0, 5, 10, 0.9);
        m.offset.set(0, 5, 10, 0.5);
        m.offset.set(1, 5, 10, 0.5);
        m.size.set(0, 5, 10, 12.0);
        m.size.set(1, 5, 10, 8.0);
        m.displacement.set(0, 5, 10, -4.0);
        m.visibility.set(0, 5, 10, 1.0);
        let d = decode_detections(&m, 0.4, 100).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].center, (42.0, 22.0));
        assert_eq!((d[0].w, d[0].h), (12.0, 8.0));
        assert_eq!(d[0].displacement, (-4.0, 0.0));
        assert_eq!(d[0].score, 0.9f32 as f64);
    }

    #[test]
    fn zero_heatmap_and_plateau() {
        let m = maps(4, 4);
        assert!(decode_detections(&m, 0.4, 100).unwrap().is_empty());
        let mut m = maps(4, 4);
        m.heat.set(0, 1, 1, 0.8);
        m.heat.set(0, 1, 2, 0.8);
        assert_eq!(decode_detections(&m, 0.4, 100).unwrap().len(), 2);
        m.heat.set(0, 2, 2, 0.9);
        assert_eq!(decode_detections(&m, 0.4, 100).unwrap().len(), 1);
    }

    #[test]
    fn top_k_and_threshold() {
        let mut m = maps(8, 8);
        m.heat.set(0, 0, 0, 0.5);
        m.heat.set(0, 4, 4, 0.7);
        m.heat.set(0, 7, 7, 0.4);
        let d = decode_detections(&m, 0.4, 1).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].score, 0.7f32 as f64);
    }

    #[test]
    fn shape_mismatch() {
        let mut m = maps(4, 4);
        m.visibility = FrameTensor::zeros(1, 4, 5);
        assert!(matches!(
            decode_detections(&m, 0.4, 10),
            Err(DecodeError::ShapeMismatch { map: "V", .. })
        ));
    }
}
