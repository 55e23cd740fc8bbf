//! Detection evaluation: IoU, COCO-style 101-point AP, mAP@0.5 and mAP@[.5:.95],
//! confidence-thresholded match counts, and still/moving ground-truth splits.
//!
//! Detections only match ground truth of the same frame. Matching is greedy by
//! descending confidence (stable on ties): each detection claims the unclaimed
//! same-class ground truth with the highest IoU, if that IoU reaches the threshold.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::labels::{LabelTable, LabeledBox};

pub const DEFAULT_CONF: f64 = 0.4;
pub const DEFAULT_IOU: f64 = 0.5;
pub const RECALL_POINTS: usize = 101;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("DegenerateBox: {w}x{h}")]
    DegenerateBox { w: f64, h: f64 },
    #[error("MissingVisibility: frame {frame}, track {track_id}")]
    MissingVisibility { frame: usize, track_id: u64 },
}

pub fn iou(a: &LabeledBox, b: &LabeledBox) -> Result<f64, EvalError> {
    for bx in [a, b] {
        if !(bx.w > 0.0 && bx.h > 0.0) {
            return Err(EvalError::DegenerateBox { w: bx.w, h: bx.h });
        }
    }
    Ok(iou_unchecked(a, b))
}

fn iou_unchecked(a: &LabeledBox, b: &LabeledBox) -> f64 {
    let iw = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let ih = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / (a.area() + b.area() - inter)
}

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// A detection flattened out of its frame, in input order.
struct Flat<'a> {
    frame: usize,
    b: &'a LabeledBox,
}

fn flatten(table: &LabelTable) -> Vec<Flat<'_>> {
    table.iter().map(|(frame, b)| Flat { frame, b }).collect()
}

/// Indices into `dets` sorted by descending confidence, stable.
fn by_confidence(dets: &[Flat<'_>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].b.confidence.total_cmp(&dets[a].b.confidence));
    order
}

/// Greedy TP flags for one class, in confidence order.
fn match_class(dets: &[Flat<'_>], gts: &[Flat<'_>], iou_thresh: f64) -> Vec<bool> {
    let mut gt_by_frame: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        gt_by_frame.entry(g.frame).or_default().push(i);
    }
    let mut used = vec![false; gts.len()];
    by_confidence(dets)
        .into_iter()
        .map(|di| {
            let d = &dets[di];
            let mut best: Option<(usize, f64)> = None;
            for &gi in gt_by_frame.get(&d.frame).map(Vec::as_slice).unwrap_or(&[]) {
                if used[gi] {
                    continue;
                }
                let v = iou_unchecked(d.b, gts[gi].b);
                if v >= iou_thresh && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((gi, v));
                }
            }
            match best {
                Some((gi, _)) => {
                    used[gi] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// 101-point interpolated AP from TP flags in confidence order.
fn ap_from_flags(tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (k, &t) in tp.iter().enumerate() {
        hits += t as usize;
        precision.push(hits as f64 / (k + 1) as f64);
        recall.push(hits as f64 / num_gt as f64);
    }
    // precision envelope: max over all points at or beyond each recall
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut total = 0.0;
    for i in 0..RECALL_POINTS {
        let r = i as f64 / (RECALL_POINTS - 1) as f64;
        let k = recall.partition_point(|&x| x < r);
        total += precision.get(k).copied().unwrap_or(0.0);
    }
    total / RECALL_POINTS as f64
}

fn split_by_class<'a>(items: &[Flat<'a>]) -> BTreeMap<u32, Vec<Flat<'a>>> {
    let mut out: BTreeMap<u32, Vec<Flat<'a>>> = BTreeMap::new();
    for f in items {
        out.entry(f.b.class_id).or_default().push(Flat { frame: f.frame, b: f.b });
    }
    out
}

/// Per-class AP at one IoU threshold. Classes without ground truth are omitted.
pub fn average_precision(dets: &LabelTable, gts: &LabelTable, iou_thresh: f64) -> BTreeMap<u32, f64> {
    let det_cls = split_by_class(&flatten(dets));
    let gt_cls = split_by_class(&flatten(gts));
    gt_cls
        .iter()
        .map(|(&class, g)| {
            let d = det_cls.get(&class).map(Vec::as_slice).unwrap_or(&[]);
            (class, ap_from_flags(&match_class(d, g, iou_thresh), g.len()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub map50: f64,
    pub map: f64,
    pub per_class_ap50: BTreeMap<u32, f64>,
    pub per_class_ap: BTreeMap<u32, f64>,
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len();
    if n == 0 {
        0.0
    } else {
        v.sum::<f64>() / n as f64
    }
}

/// Class-mean AP at IoU 0.5 and averaged over 0.50:0.05:0.95.
pub fn map_eval(dets: &LabelTable, gts: &LabelTable) -> MapResult {
    let per_thresh: Vec<_> = coco_iou_thresholds()
        .into_iter()
        .map(|t| average_precision(dets, gts, t))
        .collect();
    let per_class_ap50 = per_thresh[0].clone();
    let per_class_ap: BTreeMap<u32, f64> = per_class_ap50
        .keys()
        .map(|&c| (c, mean(per_thresh.iter().map(|m| m[&c]))))
        .collect();
    MapResult {
        map50: mean(per_class_ap50.values().copied()),
        map: mean(per_class_ap.values().copied()),
        per_class_ap50,
        per_class_ap,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub gt: usize,
    pub dt: usize,
    pub tp: usize,
    pub fp_wrong_id: usize,
    pub fp_wrong_box: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn fp(&self) -> usize {
        self.fp_wrong_id + self.fp_wrong_box
    }

    pub fn precision(&self) -> f64 {
        if self.dt == 0 {
            0.0
        } else {
            self.tp as f64 / self.dt as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.gt == 0 {
            0.0
        } else {
            self.tp as f64 / self.gt as f64
        }
    }

    fn add(&mut self, o: &Counts) {
        self.gt += o.gt;
        self.dt += o.dt;
        self.tp += o.tp;
        self.fp_wrong_id += o.fp_wrong_id;
        self.fp_wrong_box += o.fp_wrong_box;
        self.fn_ += o.fn_;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchReport {
    pub per_class: BTreeMap<u32, Counts>,
    pub total: Counts,
    pub conf: f64,
    pub iou_thresh: f64,
}

/// Counts at a fixed confidence threshold, with false positives split into
/// wrong-class hits and boxes that hit nothing.
///
/// Detection-side counts (DT, TP, FP) go to the detection's class; GT and FN to
/// the ground truth's class. A TP always has both classes equal.
pub fn fine_grained(dets: &LabelTable, gts: &LabelTable, conf: f64, iou_thresh: f64) -> MatchReport {
    let kept: Vec<Flat<'_>> = flatten(dets).into_iter().filter(|d| d.b.confidence >= conf).collect();
    let all_gt = flatten(gts);
    let det_cls = split_by_class(&kept);
    let gt_cls = split_by_class(&all_gt);

    let mut per_class: BTreeMap<u32, Counts> = BTreeMap::new();
    let classes: BTreeSet<u32> = det_cls.keys().chain(gt_cls.keys()).copied().collect();
    for &class in &classes {
        let d = det_cls.get(&class).map(Vec::as_slice).unwrap_or(&[]);
        let g = gt_cls.get(&class).map(Vec::as_slice).unwrap_or(&[]);
        let flags = match_class(d, g, iou_thresh);
        let tp = flags.iter().filter(|&&t| t).count();
        let order = by_confidence(d);
        let mut wrong_id = 0;
        for (k, &hit) in flags.iter().enumerate() {
            if hit {
                continue;
            }
            let det = &d[order[k]];
            let other_class_hit = all_gt.iter().any(|gt| {
                gt.frame == det.frame && gt.b.class_id != class && iou_unchecked(det.b, gt.b) >= iou_thresh
            });
            wrong_id += other_class_hit as usize;
        }
        per_class.insert(
            class,
            Counts {
                gt: g.len(),
                dt: d.len(),
                tp,
                fp_wrong_id: wrong_id,
                fp_wrong_box: d.len() - tp - wrong_id,
                fn_: g.len() - tp,
            },
        );
    }
    let mut total = Counts::default();
    for c in per_class.values() {
        total.add(c);
    }
    MatchReport {
        per_class,
        total,
        conf,
        iou_thresh,
    }
}

/// Partitions ground truth into (still, moving) by visibility 0.0 / 1.0.
pub fn split_still_moving(gts: &LabelTable) -> Result<(LabelTable, LabelTable), EvalError> {
    let mut still = LabelTable::default();
    let mut moving = LabelTable::default();
    for (frame, b) in gts.iter() {
        let v = b.visibility.ok_or(EvalError::MissingVisibility {
            frame,
            track_id: b.track_id,
        })?;
        let target = if v < 0.5 { &mut still } else { &mut moving };
        target.frames.entry(frame).or_default().push(b.clone());
    }
    Ok((still, moving))
}

/// Removes detections that belong to the complementary ground-truth subset.
///
/// A detection is dropped when its best same-class IoU against `other` reaches
/// `iou_thresh` and beats its best same-class IoU against `subset`. Evaluating
/// the remainder against `subset` then neither credits nor penalizes detections
/// of objects outside the subset.
pub fn restrict_to_subset(dets: &LabelTable, subset: &LabelTable, other: &LabelTable, iou_thresh: f64) -> LabelTable {
    let best = |t: &LabelTable, frame: usize, b: &LabeledBox| {
        t.frames
            .get(&frame)
            .into_iter()
            .flatten()
            .filter(|g| g.class_id == b.class_id)
            .map(|g| iou_unchecked(b, g))
            .fold(0.0f64, f64::max)
    };
    let mut out = LabelTable::default();
    for (frame, b) in dets.iter() {
        let o = best(other, frame, b);
        if o >= iou_thresh && o > best(subset, frame, b) {
            continue;
        }
        out.frames.entry(frame).or_default().push(b.clone());
    }
    out
}

/// Everything the `eval` command reports for one ground-truth set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub name: String,
    pub map: MapResult,
    pub counts: MatchReport,
}

pub fn evaluate(name: &str, dets: &LabelTable, gts: &LabelTable, conf: f64, iou_thresh: f64) -> EvalReport {
    EvalReport {
        name: name.to_string(),
        map: map_eval(dets, gts),
        counts: fine_grained(dets, gts, conf, iou_thresh),
    }
}

/// Overall report plus still and moving subsets.
pub fn evaluate_split(
    dets: &LabelTable,
    gts: &LabelTable,
    conf: f64,
    iou_thresh: f64,
) -> Result<Vec<EvalReport>, EvalError> {
    let (still, moving) = split_still_moving(gts)?;
    let still_dets = restrict_to_subset(dets, &still, &moving, iou_thresh);
    let moving_dets = restrict_to_subset(dets, &moving, &still, iou_thresh);
    Ok(vec![
        evaluate("all", dets, gts, conf, iou_thresh),
        evaluate("still", &still_dets, &still, conf, iou_thresh),
        evaluate("moving", &moving_dets, &moving, conf, iou_thresh),
    ])
}

fn count_rows(c: &Counts) -> [(&'static str, f64); 8] {
    [
        ("gt", c.gt as f64),
        ("dt", c.dt as f64),
        ("tp", c.tp as f64),
        ("fp_wrong_id", c.fp_wrong_id as f64),
        ("fp_wrong_box", c.fp_wrong_box as f64),
        ("fn", c.fn_ as f64),
        ("precision", c.precision()),
        ("recall", c.recall()),
    ]
}

/// Machine-readable report: `metric,class,value`, metrics prefixed by subset name.
pub fn report_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("metric,class,value\n");
    for r in reports {
        let p = &r.name;
        let _ = writeln!(out, "{p}/mAP@0.5,all,{:.6}", r.map.map50);
        let _ = writeln!(out, "{p}/mAP,all,{:.6}", r.map.map);
        for (c, v) in &r.map.per_class_ap50 {
            let _ = writeln!(out, "{p}/AP@0.5,{c},{v:.6}");
        }
        for (c, v) in &r.map.per_class_ap {
            let _ = writeln!(out, "{p}/AP,{c},{v:.6}");
        }
        for (name, v) in count_rows(&r.counts.total) {
            let _ = writeln!(out, "{p}/{name},all,{v:.6}");
        }
        for (c, counts) in &r.counts.per_class {
            for (name, v) in count_rows(counts) {
                let _ = writeln!(out, "{p}/{name},{c},{v:.6}");
            }
        }
    }
    out
}

/// Aligned plain-text report.
pub fn report_text(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let c = &r.counts;
        let _ = writeln!(
            out,
            "== {} (greedy COCO-style matching, 101-point AP; counts at conf {:.2}, IoU {:.2})",
            r.name, c.conf, c.iou_thresh
        );
        let _ = writeln!(out, "{:<10}{:>10}{:>10}", "", "mAP@0.5", "mAP");
        let _ = writeln!(out, "{:<10}{:>10.4}{:>10.4}", "all", r.map.map50, r.map.map);
        for (cls, v) in &r.map.per_class_ap50 {
            let _ = writeln!(out, "{:<10}{:>10.4}{:>10.4}", format!("class {cls}"), v, r.map.per_class_ap[cls]);
        }
        let _ = writeln!(
            out,
            "{:<10}{:>7}{:>7}{:>7}{:>10}{:>10}{:>7}{:>8}{:>8}",
            "", "GT", "DT", "TP", "FP(id)", "FP(box)", "FN", "prec", "rec"
        );
        let row = |label: String, k: &Counts, out: &mut String| {
            let _ = writeln!(
                out,
                "{:<10}{:>7}{:>7}{:>7}{:>10}{:>10}{:>7}{:>8.3}{:>8.3}",
                label,
                k.gt,
                k.dt,
                k.tp,
                k.fp_wrong_id,
                k.fp_wrong_box,
                k.fn_,
                k.precision(),
                k.recall()
            );
        };
        row("all".into(), &c.total, &mut out);
        for (cls, k) in &c.per_class {
            row(format!("class {cls}"), k, &mut out);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, w: f64, h: f64, class: u32, conf: f64) -> LabeledBox {
        LabeledBox::new(x, y, w, h, class, 0).with_confidence(conf)
    }

    fn table(frame_boxes: Vec<(usize, LabeledBox)>) -> LabelTable {
        let mut t = LabelTable::default();
        for (f, b) in frame_boxes {
            t.frames.entry(f).or_default().push(b);
        }
        t
    }

    #[test]
    fn iou_cases() {
        let a = bx(0.0, 0.0, 2.0, 2.0, 0, 1.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &bx(5.0, 5.0, 1.0, 1.0, 0, 1.0)).unwrap(), 0.0);
        assert_eq!(iou(&a, &bx(1.0, 1.0, 2.0, 2.0, 0, 1.0)).unwrap(), 1.0 / 7.0);
        assert!(iou(&a, &bx(0.0, 0.0, 0.0, 1.0, 0, 1.0)).is_err());
    }

    #[test]
    fn ap_single_and_fp_above_tp() {
        let gt = table(vec![(1, bx(0.0, 0.0, 10.0, 10.0, 0, 1.0))]);
        // IoU = 80 / 120 > 0.5
        let det = table(vec![(1, bx(0.0, 2.0, 10.0, 10.0, 0, 0.7))]);
        assert_eq!(average_precision(&det, &gt, 0.5)[&0], 1.0);

        let det = table(vec![
            (1, bx(50.0, 50.0, 10.0, 10.0, 0, 0.9)),
            (1, bx(0.0, 0.0, 10.0, 10.0, 0, 0.8)),
        ]);
        assert_eq!(average_precision(&det, &gt, 0.5)[&0], 0.5);
    }

    #[test]
    fn ap_edge_cases() {
        let gt = table(vec![(1, bx(0.0, 0.0, 10.0, 10.0, 0, 1.0))]);
        assert_eq!(average_precision(&LabelTable::default(), &gt, 0.5)[&0], 0.0);
        let det_only = table(vec![(1, bx(0.0, 0.0, 10.0, 10.0, 3, 1.0))]);
        assert!(average_precision(&det_only, &LabelTable::default(), 0.5).is_empty());
        // a detection in another frame does not match
        let other_frame = table(vec![(2, bx(0.0, 0.0, 10.0, 10.0, 0, 1.0))]);
        assert_eq!(average_precision(&other_frame, &gt, 0.5)[&0], 0.0);
    }

    #[test]
    fn map_perfect_and_shifted() {
        let gt = table(vec![
            (1, bx(0.0, 0.0, 10.0, 10.0, 0, 1.0)),
            (2, bx(20.0, 0.0, 10.0, 12.0, 1, 1.0)),
        ]);
        let m = map_eval(&gt, &gt);
        assert_eq!((m.map50, m.map), (1.0, 1.0));
        let mut shifted = gt.clone();
        for v in shifted.frames.values_mut() {
            for b in v {
                b.x += 100.0;
            }
        }
        let m = map_eval(&shifted, &gt);
        assert_eq!((m.map50, m.map), (0.0, 0.0));
    }

    #[test]
    fn fine_grained_categories() {
        let gt = table(vec![(1, bx(0.0, 0.0, 10.0, 10.0, 0, 1.0))]);
        let wrong_class = table(vec![(1, bx(0.0, 0.0, 10.0, 10.0, 1, 0.9))]);
        let r = fine_grained(&wrong_class, &gt, 0.4, 0.5);
        assert_eq!(r.total.fp_wrong_id, 1);
        assert_eq!(r.total.fn_, 1);

        let nowhere = table(vec![(1, bx(50.0, 50.0, 10.0, 10.0, 0, 0.9))]);
        assert_eq!(fine_grained(&nowhere, &gt, 0.4, 0.5).total.fp_wrong_box, 1);

        let r = fine_grained(&LabelTable::default(), &gt, 0.4, 0.5);
        assert_eq!((r.total.fn_, r.total.gt), (1, 1));

        let low = table(vec![(1, bx(0.0, 0.0, 10.0, 10.0, 0, 0.3))]);
        assert_eq!(fine_grained(&low, &gt, 0.4, 0.5).total.dt, 0);
    }

    #[test]
    fn split_partitions() {
        let gt = table(vec![
            (1, bx(0.0, 0.0, 10.0, 10.0, 0, 1.0).with_visibility(0.0)),
            (1, bx(20.0, 0.0, 10.0, 10.0, 0, 1.0).with_visibility(1.0)),
            (2, bx(20.0, 0.0, 10.0, 10.0, 0, 1.0).with_visibility(1.0)),
        ]);
        let (s, m) = split_still_moving(&gt).unwrap();
        assert_eq!((s.len(), m.len()), (1, 2));
        let missing = table(vec![(1, bx(0.0, 0.0, 10.0, 10.0, 0, 1.0))]);
        assert!(matches!(split_still_moving(&missing), Err(EvalError::MissingVisibility { .. })));
    }

    #[test]
    fn subset_restriction_and_reports() {
        let gt = table(vec![
            (1, bx(0.0, 0.0, 10.0, 10.0, 0, 1.0).with_visibility(0.0)),
            (1, bx(40.0, 0.0, 10.0, 10.0, 0, 1.0).with_visibility(1.0)),
        ]);
        let reports = evaluate_split(&gt, &gt, 0.4, 0.5).unwrap();
        assert_eq!(reports.len(), 3);
        for r in &reports {
            assert_eq!(r.map.map50, 1.0, "{}", r.name);
            assert_eq!(r.counts.total.fp(), 0);
        }
        let csv = report_csv(&reports);
        assert!(csv.starts_with("metric,class,value\nall/mAP@0.5,all,1.000000\n"));
        assert!(csv.contains("still/tp,all,1.000000"));
        assert!(report_text(&reports).contains("== moving"));
    }
}
