//! Detection metrics for yaw-only 3D boxes.
//!
//! Boxes handed to this module are expressed in a sensor frame: origin at the
//! camera center, x forward (horizontal), y left, z up. The depth of a box is
//! the forward coordinate of its center, and the line of sight is the ray from
//! the origin through the center.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxfit::OrientedBox3D;

const AREA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("box has a non-positive size")]
    InvalidBox,
    #[error("depth must be positive")]
    NonPositiveDepth,
    #[error("no depth pairs")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthBucket {
    pub min: f64,
    /// `None` means unbounded.
    pub max: Option<f64>,
}

impl DepthBucket {
    pub fn contains(&self, depth: f64) -> bool {
        depth >= self.min && self.max.is_none_or(|m| depth < m)
    }

    pub fn label(&self) -> String {
        match self.max {
            Some(m) => format!("{}-{}", self.min, m),
            None => format!("{}-inf", self.min),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub let_iou_threshold: f64,
    /// Longitudinal tolerance as a fraction of the ground-truth range.
    pub let_longitudinal_tolerance: f64,
    pub depth_buckets: Vec<DepthBucket>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: vec![0.05, 0.5],
            let_iou_threshold: 0.5,
            let_longitudinal_tolerance: 0.10,
            depth_buckets: vec![
                DepthBucket { min: 0.0, max: Some(30.0) },
                DepthBucket { min: 30.0, max: Some(50.0) },
                DepthBucket { min: 50.0, max: None },
            ],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), String> {
        let thresholds_ok = |t: f64| t > 0.0 && t <= 1.0;
        if !self.iou_thresholds.iter().copied().all(thresholds_ok) || !thresholds_ok(self.let_iou_threshold) {
            return Err("IoU thresholds must lie in (0, 1]".into());
        }
        if !(self.let_longitudinal_tolerance > 0.0) {
            return Err("LET tolerance must be positive".into());
        }
        for pair in self.depth_buckets.windows(2) {
            match pair[0].max {
                Some(m) if m <= pair[1].min => {}
                _ => return Err("depth buckets must be disjoint and ordered".into()),
            }
        }
        if self.depth_buckets.iter().any(|b| b.max.is_some_and(|m| m <= b.min)) {
            return Err("empty depth bucket".into());
        }
        Ok(())
    }
}

/// A box taking part in evaluation. Matching only pairs boxes with the same
/// `group` (one group per frame).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalBox {
    pub group: u64,
    pub bbox: OrientedBox3D,
}

impl EvalBox {
    pub fn depth(&self) -> f64 {
        self.bbox.center.x
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub pred_index: usize,
    pub gt_index: usize,
    pub iou: f64,
    pub heading_similarity: f64,
}

fn check(b: &OrientedBox3D) -> Result<(), EvalError> {
    if b.l > 0.0 && b.w > 0.0 && b.h > 0.0 && b.l.is_finite() && b.w.is_finite() && b.h.is_finite() {
        Ok(())
    } else {
        Err(EvalError::InvalidBox)
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn line_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let (cp, cq) = (cross(a, b, p), cross(a, b, q));
    let t = cp / (cp - cq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Sutherland-Hodgman clip of `subject` by the convex counter-clockwise `clip`.
pub fn clip_polygon(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (cur_in, prev_in) = (cross(a, b, cur) >= 0.0, cross(a, b, prev) >= 0.0);
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

fn shoelace(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    0.5 * (0..n).map(|i| poly[i][0] * poly[(i + 1) % n][1] - poly[(i + 1) % n][0] * poly[i][1]).sum::<f64>()
}

pub fn bev_intersection_area(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    let area = shoelace(&clip_polygon(&a.bev_corners(), &b.bev_corners()));
    if area < AREA_EPS { 0.0 } else { area }
}

/// 3D IoU of two yaw-only boxes.
pub fn iou3d_yaw(a: &OrientedBox3D, b: &OrientedBox3D) -> Result<f64, EvalError> {
    check(a)?;
    check(b)?;
    let (a0, a1) = a.z_range();
    let (b0, b1) = b.z_range();
    let dz = (a1.min(b1) - a0.max(b0)).max(0.0);
    if dz == 0.0 {
        return Ok(0.0);
    }
    let inter = bev_intersection_area(a, b) * dz;
    let union = a.volume() + b.volume() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LetIou {
    pub iou: f64,
    /// `1 - |longitudinal error| / (tolerance * gt range)`, clamped to [0, 1].
    pub affinity: f64,
    pub longitudinal_error: f64,
}

/// IoU after sliding the prediction along its own line of sight to the point
/// closest to the ground-truth center.
pub fn let_iou(pred: &OrientedBox3D, gt: &OrientedBox3D, cfg: &EvalConfig) -> Result<LetIou, EvalError> {
    check(pred)?;
    check(gt)?;
    let g = gt.center.coords;
    let p = pred.center.coords;
    let range = g.norm();
    let along_gt = g / range;
    let longitudinal_error = (p - g).dot(&along_gt);
    let affinity = (1.0 - longitudinal_error.abs() / (cfg.let_longitudinal_tolerance * range)).clamp(0.0, 1.0);

    let p2 = p.norm_squared();
    let aligned_center = if p2 > 0.0 { p * (p.dot(&g) / p2) } else { p };
    let mut aligned = pred.clone();
    aligned.center = nalgebra::Point3::from(aligned_center);
    let iou = iou3d_yaw(&aligned, gt)?;
    Ok(LetIou { iou, affinity, longitudinal_error })
}

/// Heading agreement in [0, 1]. With `flip_tolerant`, a prediction facing the
/// opposite way counts as correct.
pub fn heading_similarity(pred_yaw: f64, gt_yaw: f64, flip_tolerant: bool) -> f64 {
    let d = (pred_yaw - gt_yaw).rem_euclid(2.0 * PI);
    let mut err = d.min(2.0 * PI - d);
    if flip_tolerant {
        err = err.min((err - PI).abs());
        (1.0 - err / (PI / 2.0)).clamp(0.0, 1.0)
    } else {
        (1.0 - err / PI).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    Iou,
    Let,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Weighting {
    None,
    Heading { flip_tolerant: bool },
    Longitudinal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApResult {
    pub ap: f64,
    /// False when there are neither predictions nor ground truths.
    pub defined: bool,
    pub n_gt: usize,
    pub n_pred: usize,
    /// (recall, precision) after each prediction in ranking order.
    pub curve: Vec<(f64, f64)>,
}

impl ApResult {
    pub fn value(&self) -> Option<f64> {
        self.defined.then_some(self.ap)
    }
}

struct Matched {
    /// Per prediction in ranking order: index and, for true positives, the match.
    ranked: Vec<(usize, Option<MatchResult>, f64)>,
}

fn ranking(preds: &[EvalBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].bbox.score.total_cmp(&preds[a].bbox.score).then(a.cmp(&b)));
    order
}

/// Greedy matching in descending score order. Each prediction takes the
/// unmatched ground truth of its group with the highest criterion value, if
/// that value reaches `threshold`. LET matches also need a positive
/// longitudinal affinity.
fn greedy_match(
    preds: &[EvalBox],
    gts: &[EvalBox],
    criterion: Criterion,
    threshold: f64,
    cfg: &EvalConfig,
) -> Matched {
    let mut by_group: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_group.entry(g.group).or_default().push(i);
    }
    let mut taken = vec![false; gts.len()];
    let mut ranked = Vec::with_capacity(preds.len());
    for pi in ranking(preds) {
        let pred = &preds[pi];
        let mut best: Option<(usize, f64, f64)> = None;
        if pred.bbox.has_3d {
            for &gi in by_group.get(&pred.group).map(Vec::as_slice).unwrap_or(&[]) {
                if taken[gi] {
                    continue;
                }
                let (value, affinity) = match criterion {
                    Criterion::Iou => (iou3d_yaw(&pred.bbox, &gts[gi].bbox).unwrap_or(0.0), 1.0),
                    Criterion::Let => match let_iou(&pred.bbox, &gts[gi].bbox, cfg) {
                        Ok(l) if l.affinity > 0.0 => (l.iou, l.affinity),
                        _ => (0.0, 0.0),
                    },
                };
                if value >= threshold && best.is_none_or(|b| value > b.1) {
                    best = Some((gi, value, affinity));
                }
            }
        }
        match best {
            Some((gi, iou, affinity)) => {
                taken[gi] = true;
                let heading = heading_similarity(pred.bbox.yaw, gts[gi].bbox.yaw, false);
                ranked.push((pi, Some(MatchResult { pred_index: pi, gt_index: gi, iou, heading_similarity: heading }), affinity));
            }
            None => ranked.push((pi, None, 0.0)),
        }
    }
    Matched { ranked }
}

/// Matches as computed by the greedy matcher, in ranking order.
pub fn match_predictions(
    preds: &[EvalBox],
    gts: &[EvalBox],
    criterion: Criterion,
    threshold: f64,
    cfg: &EvalConfig,
) -> Vec<MatchResult> {
    greedy_match(preds, gts, criterion, threshold, cfg).ranked.into_iter().filter_map(|r| r.1).collect()
}

/// All-points interpolated average precision. Heading and longitudinal
/// weightings scale each true positive's contribution to both precision and
/// recall.
pub fn average_precision(
    preds: &[EvalBox],
    gts: &[EvalBox],
    criterion: Criterion,
    threshold: f64,
    weighting: Weighting,
    cfg: &EvalConfig,
) -> ApResult {
    let n_gt = gts.len();
    let n_pred = preds.len();
    if n_gt == 0 && n_pred == 0 {
        return ApResult { ap: 1.0, defined: false, n_gt, n_pred, curve: Vec::new() };
    }
    if n_gt == 0 {
        return ApResult { ap: 0.0, defined: true, n_gt, n_pred, curve: Vec::new() };
    }
    let matched = greedy_match(preds, gts, criterion, threshold, cfg);
    let mut cum = 0.0;
    let mut curve = Vec::with_capacity(n_pred);
    for (rank, (pi, m, affinity)) in matched.ranked.iter().enumerate() {
        if let Some(m) = m {
            cum += match weighting {
                Weighting::None => 1.0,
                Weighting::Heading { flip_tolerant } => {
                    heading_similarity(preds[*pi].bbox.yaw, gts[m.gt_index].bbox.yaw, flip_tolerant)
                }
                Weighting::Longitudinal => *affinity,
            };
        }
        curve.push((cum / n_gt as f64, cum / (rank + 1) as f64));
    }
    // precision envelope from the right
    let mut envelope: Vec<f64> = curve.iter().map(|c| c.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, (recall, _)) in curve.iter().enumerate() {
        ap += (recall - prev_recall) * envelope[i];
        prev_recall = *recall;
    }
    ApResult { ap, defined: true, n_gt, n_pred, curve }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub delta_1: f64,
    pub delta_2: f64,
    pub delta_3: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
}

/// Object-level depth statistics over `(predicted, ground truth)` pairs.
/// Threshold accuracies use strict `<`.
pub fn depth_metrics(pairs: &[(f64, f64)]) -> Result<DepthMetrics, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    if pairs.iter().any(|(p, g)| !(*p > 0.0 && *g > 0.0)) {
        return Err(EvalError::NonPositiveDepth);
    }
    let n = pairs.len() as f64;
    let mut hits = [0usize; 3];
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log) = (0.0, 0.0, 0.0, 0.0);
    for &(pred, gt) in pairs {
        let ratio = (pred / gt).max(gt / pred);
        for (k, h) in hits.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *h += 1;
            }
        }
        let diff = pred - gt;
        abs_rel += diff.abs() / gt;
        sq_rel += diff * diff / gt;
        sq += diff * diff;
        let dl = pred.ln() - gt.ln();
        sq_log += dl * dl;
    }
    Ok(DepthMetrics {
        delta_1: hits[0] as f64 / n,
        delta_2: hits[1] as f64 / n,
        delta_3: hits[2] as f64 / n,
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (sq / n).sqrt(),
        rmse_log: (sq_log / n).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IouRow {
    pub threshold: f64,
    pub ap: Option<f64>,
    pub aph: Option<f64>,
    pub aph_flip_tolerant: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LetRow {
    pub threshold: f64,
    pub ap: Option<f64>,
    pub aph: Option<f64>,
    pub apl: Option<f64>,
}

/// The full AP family for one prediction/ground-truth set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricTable {
    pub n_gt: usize,
    pub n_pred: usize,
    pub iou: Vec<IouRow>,
    #[serde(rename = "let")]
    pub let_metrics: LetRow,
}

pub fn metric_table(preds: &[EvalBox], gts: &[EvalBox], cfg: &EvalConfig) -> MetricTable {
    let ap = |c, t, w| average_precision(preds, gts, c, t, w, cfg).value();
    let iou = cfg
        .iou_thresholds
        .iter()
        .map(|&t| IouRow {
            threshold: t,
            ap: ap(Criterion::Iou, t, Weighting::None),
            aph: ap(Criterion::Iou, t, Weighting::Heading { flip_tolerant: false }),
            aph_flip_tolerant: ap(Criterion::Iou, t, Weighting::Heading { flip_tolerant: true }),
        })
        .collect();
    let t = cfg.let_iou_threshold;
    MetricTable {
        n_gt: gts.len(),
        n_pred: preds.len(),
        iou,
        let_metrics: LetRow {
            threshold: t,
            ap: ap(Criterion::Let, t, Weighting::None),
            aph: ap(Criterion::Let, t, Weighting::Heading { flip_tolerant: false }),
            apl: ap(Criterion::Let, t, Weighting::Longitudinal),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketRow {
    pub range: String,
    pub min: f64,
    pub max: Option<f64>,
    pub metrics: MetricTable,
}

/// Metrics per depth bucket. Ground truths go to the bucket of their own
/// depth; a prediction follows the ground truth it matches at the loosest IoU
/// threshold, and unmatched predictions go by their own depth.
pub fn bucket_report(preds: &[EvalBox], gts: &[EvalBox], cfg: &EvalConfig) -> Vec<BucketRow> {
    let loosest = cfg.iou_thresholds.iter().copied().fold(f64::INFINITY, f64::min);
    let loosest = if loosest.is_finite() { loosest } else { cfg.let_iou_threshold };
    let mut pred_depth: Vec<f64> = preds.iter().map(EvalBox::depth).collect();
    for m in match_predictions(preds, gts, Criterion::Iou, loosest, cfg) {
        pred_depth[m.pred_index] = gts[m.gt_index].depth();
    }
    cfg.depth_buckets
        .iter()
        .map(|bucket| {
            let bp: Vec<EvalBox> =
                preds.iter().zip(&pred_depth).filter(|(_, d)| bucket.contains(**d)).map(|(p, _)| p.clone()).collect();
            let bg: Vec<EvalBox> = gts.iter().filter(|g| bucket.contains(g.depth())).cloned().collect();
            BucketRow { range: bucket.label(), min: bucket.min, max: bucket.max, metrics: metric_table(&bp, &bg, cfg) }
        })
        .collect()
}
