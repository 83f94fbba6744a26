//! The Global-BA stage chained end to end.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::boxfit::{completeness_filter, fit_box7, FitConfig, OrientedBox3D};
use crate::cluster::{double_cluster, ObjectCluster};
use crate::exec;
use crate::triangulate::{parallax_gate, reconstruct, Reconstruction};

use super::config::PipelineConfig;
use super::labels::{select_by_depth, GenerationTag, Label, LabelSet};
use super::scene::SceneBundle;

/// Hook for a learned box refinement. Receives the geometric fit and the
/// cluster it came from.
pub trait BoxRefiner: Sync {
    fn refine(&self, fitted: OrientedBox3D, cluster: &ObjectCluster) -> OrientedBox3D;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRefiner;

impl BoxRefiner for IdentityRefiner {
    fn refine(&self, fitted: OrientedBox3D, _cluster: &ObjectCluster) -> OrientedBox3D {
        fitted
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// The camera baseline was too small; every label is 2D-only.
    GateSkipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub n_tracks: usize,
    pub n_observed_points: usize,
    pub n_reconstructed_points: usize,
    pub n_dropped_points: usize,
    pub n_matched_clusters: usize,
    pub n_fit_failures: usize,
    pub n_labels_3d: usize,
    pub n_complete: usize,
}

#[derive(Debug, Clone)]
pub struct GlobalBaOutput {
    pub status: RunStatus,
    pub labels: LabelSet,
    pub reconstruction: Reconstruction,
    pub clusters: BTreeMap<u64, ObjectCluster>,
    pub diagnostics: Diagnostics,
}

/// One label per track: a fitted box for tracks with a cluster, 2D-only
/// otherwise. No depth selection is applied.
pub fn fit_labels(
    scene: &SceneBundle,
    clusters: &BTreeMap<u64, ObjectCluster>,
    cfg: &FitConfig,
    refiner: &dyn BoxRefiner,
) -> (LabelSet, usize) {
    let classes = scene.track_classes();
    let tracks: Vec<(u64, String)> = classes.into_iter().collect();
    let fitted: Vec<(Label, bool)> = exec::map(&tracks, |(track, class)| {
        let two_d = || OrientedBox3D::two_d_only(*track, class);
        let (bbox, failed) = match clusters.get(track) {
            Some(cluster) => match fit_box7(cluster, cfg) {
                Ok(b) => {
                    let mut b = refiner.refine(b, cluster);
                    b.class_label = class.clone();
                    (b, false)
                }
                Err(_) => (two_d(), true),
            },
            None => (two_d(), false),
        };
        let complete = completeness_filter(&bbox, cfg);
        (Label { track_id: *track, tag: GenerationTag::PseudoInitial, bbox, complete }, failed)
    });
    let failures = fitted.iter().filter(|f| f.1).count();
    let labels = LabelSet::from_labels(fitted.into_iter().map(|f| f.0)).expect("one label per track");
    (labels, failures)
}

pub fn all_two_d(scene: &SceneBundle) -> LabelSet {
    LabelSet::from_labels(scene.track_classes().into_iter().map(|(track, class)| Label {
        track_id: track,
        tag: GenerationTag::PseudoInitial,
        bbox: OrientedBox3D::two_d_only(track, &class),
        complete: false,
    }))
    .expect("one label per track")
}

pub fn run_global_ba(scene: &SceneBundle, cfg: &PipelineConfig) -> GlobalBaOutput {
    run_global_ba_with(scene, cfg, &IdentityRefiner)
}

/// Parallax gate, triangulation and refinement, DoubleCluster, box fitting
/// and depth selection. Emits exactly one label per 2D track.
pub fn run_global_ba_with(scene: &SceneBundle, cfg: &PipelineConfig, refiner: &dyn BoxRefiner) -> GlobalBaOutput {
    let mut diagnostics = Diagnostics {
        n_tracks: scene.track_ids().len(),
        n_observed_points: scene.obs_tracks.len(),
        n_reconstructed_points: 0,
        n_dropped_points: 0,
        n_matched_clusters: 0,
        n_fit_failures: 0,
        n_labels_3d: 0,
        n_complete: 0,
    };
    if !parallax_gate(&scene.frames, &cfg.ba) {
        return GlobalBaOutput {
            status: RunStatus::GateSkipped,
            labels: all_two_d(scene),
            reconstruction: Reconstruction::default(),
            clusters: BTreeMap::new(),
            diagnostics,
        };
    }
    let reconstruction = reconstruct(&scene.obs_tracks, &scene.frames, &cfg.ba);
    let clusters = double_cluster(&reconstruction.points, &scene.frames, &scene.tracks2d, &cfg.cluster);
    let (fitted, failures) = fit_labels(scene, &clusters, &cfg.fit, refiner);
    let labels = select_by_depth(&fitted, cfg.select.initial_range, &scene.frames, &scene.tracks2d);

    diagnostics.n_reconstructed_points = reconstruction.points.len();
    diagnostics.n_dropped_points = reconstruction.dropped.len();
    diagnostics.n_matched_clusters = clusters.len();
    diagnostics.n_fit_failures = failures;
    diagnostics.n_labels_3d = labels.iter().filter(|l| l.bbox.has_3d).count();
    diagnostics.n_complete = labels.iter().filter(|l| l.bbox.has_3d && l.complete).count();
    GlobalBaOutput { status: RunStatus::Completed, labels, reconstruction, clusters, diagnostics }
}
