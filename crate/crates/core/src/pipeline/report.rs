//! Evaluation of a label set against simulator truth.
//!
//! Every frame is scored separately: the ground truths are the objects with a
//! 2D box in that frame, the predictions are the 3D labels of those tracks,
//! and both are moved into a level sensor frame at the camera (x forward,
//! y left, z up) before matching.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::Serialize;

use crate::boxfit::OrientedBox3D;
use crate::evalmetrics::{
    average_precision, bucket_report, depth_metrics, metric_table, BucketRow, Criterion, DepthMetrics, EvalBox,
    EvalConfig, MetricTable, Weighting,
};
use crate::geom::{CameraFrame, Point3};

use super::labels::LabelSet;
use super::scene::SceneBundle;
use super::PipelineError;

/// `b` in the level sensor frame of `frame`.
pub fn sensor_box(frame: &CameraFrame, b: &OrientedBox3D) -> OrientedBox3D {
    let axis = frame.pose.optical_axis();
    let forward = Vector3::new(axis.x, axis.y, 0.0).try_normalize(1e-12).unwrap_or_else(Vector3::x);
    let left = Vector3::new(-forward.y, forward.x, 0.0);
    let d = b.center - frame.pose.center();
    let mut out = b.clone();
    out.center = Point3::new(d.dot(&forward), d.dot(&left), d.z);
    out.yaw = b.yaw - forward.y.atan2(forward.x);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthSplit {
    /// Objects whose track carries a 3D label.
    pub with_label_objects: usize,
    /// Per-frame instances of those objects with a positive predicted depth.
    pub with_label_instances: usize,
    pub with_label: Option<DepthMetrics>,
    /// Objects without a 3D label; they have no predicted depth to score.
    pub without_label_objects: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub n_frames: usize,
    pub n_objects: usize,
    pub n_labels_3d: usize,
    pub n_labels_2d_only: usize,
    pub overall: MetricTable,
    pub buckets: Vec<BucketRow>,
    pub depth: DepthSplit,
}

/// Per-frame prediction and ground-truth instances. Each track contributes
/// its most recent label.
pub fn eval_instances(labels: &LabelSet, scene: &SceneBundle) -> Result<(Vec<EvalBox>, Vec<EvalBox>), PipelineError> {
    let truth = scene.truth.as_ref().ok_or(PipelineError::MissingTruth)?;
    let latest = labels.latest();
    let mut visible: BTreeMap<u32, BTreeSet<u64>> = BTreeMap::new();
    for b in &scene.tracks2d {
        visible.entry(b.frame_id).or_default().insert(b.track_id);
    }
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for (fid, tracks) in &visible {
        let frame = scene.frames.get(*fid).ok_or_else(|| PipelineError::Input(format!("unknown frame {fid}")))?;
        for track in tracks {
            if let Some(gt) = truth.object(*track).and_then(|o| o.box_at(*fid)) {
                gts.push(EvalBox { group: u64::from(*fid), bbox: sensor_box(frame, &gt) });
            }
            if let Some(label) = latest.get(track).filter(|l| l.bbox.has_3d) {
                preds.push(EvalBox { group: u64::from(*fid), bbox: sensor_box(frame, &label.bbox) });
            }
        }
    }
    Ok((preds, gts))
}

fn depth_split(labels: &LabelSet, scene: &SceneBundle) -> Result<DepthSplit, PipelineError> {
    let truth = scene.truth.as_ref().ok_or(PipelineError::MissingTruth)?;
    let latest = labels.latest();
    let tracks = scene.track_ids();
    let mut with_objects = BTreeSet::new();
    let mut without = 0;
    for o in truth.objects.iter().filter(|o| tracks.contains(&o.track_id)) {
        if latest.get(&o.track_id).is_some_and(|l| l.bbox.has_3d) {
            with_objects.insert(o.track_id);
        } else {
            without += 1;
        }
    }
    let mut pairs = Vec::new();
    for b in &scene.tracks2d {
        if !with_objects.contains(&b.track_id) {
            continue;
        }
        let (Some(frame), Some(gt)) = (scene.frames.get(b.frame_id), truth.object(b.track_id).and_then(|o| o.box_at(b.frame_id)))
        else {
            continue;
        };
        let pred = sensor_box(frame, &latest[&b.track_id].bbox).center.x;
        let gt = sensor_box(frame, &gt).center.x;
        if pred > 0.0 && gt > 0.0 {
            pairs.push((pred, gt));
        }
    }
    Ok(DepthSplit {
        with_label_objects: with_objects.len(),
        with_label_instances: pairs.len(),
        with_label: depth_metrics(&pairs).ok(),
        without_label_objects: without,
    })
}

pub fn evaluate(labels: &LabelSet, scene: &SceneBundle, cfg: &EvalConfig) -> Result<Report, PipelineError> {
    let (preds, gts) = eval_instances(labels, scene)?;
    let latest = labels.latest();
    Ok(Report {
        n_frames: scene.frames.len(),
        n_objects: scene.truth.as_ref().map_or(0, |t| t.objects.len()),
        n_labels_3d: latest.values().filter(|l| l.bbox.has_3d).count(),
        n_labels_2d_only: latest.values().filter(|l| !l.bbox.has_3d).count(),
        overall: metric_table(&preds, &gts, cfg),
        buckets: bucket_report(&preds, &gts, cfg),
        depth: depth_split(labels, scene)?,
    })
}

/// Precision-recall curves of every metric in the overall table, one row per
/// ranked prediction.
pub fn pr_curves_csv(labels: &LabelSet, scene: &SceneBundle, cfg: &EvalConfig) -> Result<String, PipelineError> {
    let (preds, gts) = eval_instances(labels, scene)?;
    let mut runs: Vec<(&str, f64, &str, Criterion, Weighting)> = Vec::new();
    for &t in &cfg.iou_thresholds {
        runs.push(("iou", t, "none", Criterion::Iou, Weighting::None));
        runs.push(("iou", t, "heading", Criterion::Iou, Weighting::Heading { flip_tolerant: false }));
        runs.push(("iou", t, "heading_flip", Criterion::Iou, Weighting::Heading { flip_tolerant: true }));
    }
    let t = cfg.let_iou_threshold;
    runs.push(("let", t, "none", Criterion::Let, Weighting::None));
    runs.push(("let", t, "heading", Criterion::Let, Weighting::Heading { flip_tolerant: false }));
    runs.push(("let", t, "longitudinal", Criterion::Let, Weighting::Longitudinal));
    let mut out = String::from("criterion,threshold,weighting,rank,recall,precision\n");
    for (name, threshold, weighting, criterion, w) in runs {
        let r = average_precision(&preds, &gts, criterion, threshold, w, cfg);
        for (rank, (recall, precision)) in r.curve.iter().enumerate() {
            let _ = writeln!(out, "{name},{threshold},{weighting},{},{recall:.17e},{precision:.17e}", rank + 1);
        }
    }
    Ok(out)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

fn table_rows(name: &str, t: &MetricTable, out: &mut String) {
    for row in &t.iou {
        let _ = writeln!(
            out,
            "{name:<10} {:>8} {:>8} {:>8} {:>8} {:>8}  {:>6} {:>6}",
            format!("IoU{}", row.threshold),
            cell(row.ap),
            cell(row.aph),
            cell(row.aph_flip_tolerant),
            "",
            t.n_gt,
            t.n_pred
        );
    }
    let l = &t.let_metrics;
    let _ = writeln!(
        out,
        "{name:<10} {:>8} {:>8} {:>8} {:>8} {:>8}  {:>6} {:>6}",
        format!("LET{}", l.threshold),
        cell(l.ap),
        cell(l.aph),
        "",
        cell(l.apl),
        t.n_gt,
        t.n_pred
    );
}

/// Aligned plain-text rendering of a report.
pub fn render_text(r: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "frames {}  objects {}  labels: 3d {}  2d-only {}",
        r.n_frames, r.n_objects, r.n_labels_3d, r.n_labels_2d_only
    );
    let _ = writeln!(
        out,
        "{:<10} {:>8} {:>8} {:>8} {:>8} {:>8}  {:>6} {:>6}",
        "range", "metric", "AP", "APH", "APH-flip", "APL", "n_gt", "n_pred"
    );
    table_rows("all", &r.overall, &mut out);
    for b in &r.buckets {
        table_rows(&b.range, &b.metrics, &mut out);
    }
    let d = &r.depth;
    let _ = writeln!(
        out,
        "depth: objects with label {} ({} instances), without label {}",
        d.with_label_objects, d.with_label_instances, d.without_label_objects
    );
    if let Some(m) = &d.with_label {
        let _ = writeln!(
            out,
            "{:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "d<1.25", "d<1.25^2", "d<1.25^3", "AbsRel", "SqRel", "RMSE", "RMSElog"
        );
        let _ = writeln!(
            out,
            "{:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            m.delta_1, m.delta_2, m.delta_3, m.abs_rel, m.sq_rel, m.rmse, m.rmse_log
        );
    }
    out
}
