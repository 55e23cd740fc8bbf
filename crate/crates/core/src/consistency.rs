//! Consistency loss between displacement and visibility at object centers.
//!
//! `L = (1/N) Σ | ‖d_i‖₂ · exp(-relu(c_i)) - v_i |`, averaged over samples taken
//! at the centers of visible objects only.

use serde::Deserialize;
use thiserror::Error;

use crate::labels::LabeledBox;
use crate::tracker::HeadMaps;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("malformed sample CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("non-finite value in sample row {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterSample {
    /// Displacement vector at the center.
    pub d: (f64, f64),
    pub v: f64,
    pub c: f64,
}

impl CenterSample {
    pub fn new(dx: f64, dy: f64, c: f64, v: f64) -> Self {
        Self { d: (dx, dy), v, c }
    }

    fn residual(&self) -> f64 {
        g_norm(self.d) * h_ratio(self.c) - self.v
    }
}

/// Movement magnitude.
pub fn g_norm(d: (f64, f64)) -> f64 {
    d.0.hypot(d.1)
}

/// Learnable proportional ratio, in `(0, 1]`.
pub fn h_ratio(c: f64) -> f64 {
    (-c.max(0.0)).exp()
}

/// Sum over a fixed binary tree so the result does not depend on how work is split.
fn tree_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let (a, b) = values.split_at(n / 2);
            tree_sum(a) + tree_sum(b)
        }
    }
}

/// Mean absolute residual; 0 for an empty sample set.
pub fn consistency_loss(samples: &[CenterSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let terms: Vec<f64> = samples.iter().map(|s| s.residual().abs()).collect();
    tree_sum(&terms) / samples.len() as f64
}

/// Like [`consistency_loss`], for samples that must all come from visible objects.
pub fn consistency_loss_visible(samples: &[CenterSample], v_thresh: f64) -> f64 {
    debug_assert!(
        samples.iter().all(|s| s.v >= v_thresh),
        "consistency loss fed a sample from an invisible object"
    );
    consistency_loss(samples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyGrad {
    pub d: Vec<(f64, f64)>,
    pub c: Vec<f64>,
    pub v: Vec<f64>,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Analytic (sub)gradient of [`consistency_loss`].
///
/// At the kinks (`‖d‖ = 0`, `c = 0`, zero residual) the subgradient is 0.
pub fn consistency_loss_grad(samples: &[CenterSample]) -> ConsistencyGrad {
    let n = samples.len() as f64;
    let mut grad = ConsistencyGrad {
        d: Vec::with_capacity(samples.len()),
        c: Vec::with_capacity(samples.len()),
        v: Vec::with_capacity(samples.len()),
    };
    for s in samples {
        let g = g_norm(s.d);
        let h = h_ratio(s.c);
        let sg = sign(g * h - s.v);
        grad.d.push(if g > 0.0 {
            (sg * h * s.d.0 / g / n, sg * h * s.d.1 / g / n)
        } else {
            (0.0, 0.0)
        });
        grad.c.push(if s.c > 0.0 { -sg * g * h / n } else { 0.0 });
        grad.v.push(-sg / n);
    }
    grad
}

/// Samples `D`, `V` and `C` at the grid cells under the centers of visible boxes.
///
/// Boxes with visibility below `v_thresh`, or centers outside the grid, are skipped.
/// Returns an empty set when the maps carry no consistency channel.
pub fn gather_samples(maps: &HeadMaps, boxes: &[LabeledBox], v_thresh: f64) -> Vec<CenterSample> {
    let Some(cons) = &maps.consistency else {
        return Vec::new();
    };
    let r = maps.stride as f64;
    boxes
        .iter()
        .filter(|b| b.visibility.unwrap_or(1.0) >= v_thresh)
        .filter_map(|b| {
            let (cx, cy) = b.center();
            let (gx, gy) = ((cx / r).floor(), (cy / r).floor());
            if gx < 0.0 || gy < 0.0 || gx as usize >= maps.heat.width || gy as usize >= maps.heat.height {
                return None;
            }
            let (x, y) = (gx as usize, gy as usize);
            let v = maps.visibility.get(0, y, x) as f64;
            if v < v_thresh {
                return None;
            }
            Some(CenterSample {
                d: (
                    maps.displacement.get(0, y, x) as f64,
                    maps.displacement.get(1, y, x) as f64,
                ),
                v,
                c: cons.get(0, y, x) as f64,
            })
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct SampleRow {
    dx: f64,
    dy: f64,
    c: f64,
    v: f64,
}

/// Parses `dx,dy,c,v` rows (header required, column order free).
pub fn read_samples(text: &str) -> Result<Vec<CenterSample>, SampleError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<SampleRow>().enumerate() {
        let r = row?;
        if ![r.dx, r.dy, r.c, r.v].iter().all(|x| x.is_finite()) {
            return Err(SampleError::NonFinite(i + 1));
        }
        out.push(CenterSample::new(r.dx, r.dy, r.c, r.v));
    }
    Ok(out)
}

/// Worst disagreement between the analytic gradient and central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Samples within one step of a kink, where differences are meaningless.
    pub skipped: usize,
}

/// Compares [`consistency_loss_grad`] with central differences of step `eps`
/// in every parameter. Relative error is `|a - n| / max(|a|, |n|)`, 0 when both vanish.
pub fn gradient_check(samples: &[CenterSample], eps: f64) -> GradCheck {
    let grad = consistency_loss_grad(samples);
    let mut check = GradCheck {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        skipped: 0,
    };
    let mut work = samples.to_vec();
    for i in 0..samples.len() {
        if near_kink(&samples[i], eps) {
            check.skipped += 1;
            continue;
        }
        let analytic = [grad.d[i].0, grad.d[i].1, grad.c[i], grad.v[i]];
        for (k, a) in analytic.into_iter().enumerate() {
            let base = param(&samples[i], k);
            set_param(&mut work[i], k, base + eps);
            let up = consistency_loss(&work);
            set_param(&mut work[i], k, base - eps);
            let down = consistency_loss(&work);
            set_param(&mut work[i], k, base);
            let numeric = (up - down) / (2.0 * eps);
            let abs = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            let rel = if scale > 0.0 { abs / scale } else { 0.0 };
            check.max_abs_err = check.max_abs_err.max(abs);
            check.max_rel_err = check.max_rel_err.max(rel);
        }
    }
    check
}

/// A step of `eps` in any parameter moves the residual by at most `eps * max(1, ‖d‖)`.
fn near_kink(s: &CenterSample, eps: f64) -> bool {
    let g = g_norm(s.d);
    s.residual().abs() <= 2.0 * eps * g.max(1.0) || s.c.abs() <= 2.0 * eps || g <= 2.0 * eps
}

fn param(s: &CenterSample, k: usize) -> f64 {
    [s.d.0, s.d.1, s.c, s.v][k]
}

fn set_param(s: &mut CenterSample, k: usize, x: f64) {
    match k {
        0 => s.d.0 = x,
        1 => s.d.1 = x,
        2 => s.c = x,
        _ => s.v = x,
    }
}
