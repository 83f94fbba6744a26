use std::collections::{BTreeMap, BTreeSet, HashSet};

use crate::boxfit::OrientedBox3D;
use crate::cluster::TrackedBox2D;
use crate::geom::{FrameSet, Point3};
use crate::triangulate::ObservationTrack;

use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthState {
    pub frame_id: u32,
    pub center: Point3,
    pub yaw: f64,
}

/// Ground-truth object. Static objects carry a single state that holds for
/// every frame; moving objects carry one state per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthObject {
    pub track_id: u64,
    pub class_label: String,
    pub moving: bool,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub states: Vec<TruthState>,
}

impl TruthObject {
    pub fn box_at(&self, frame_id: u32) -> Option<OrientedBox3D> {
        let state = if self.moving {
            self.states.iter().find(|s| s.frame_id == frame_id)?
        } else {
            self.states.first()?
        };
        let mut b = OrientedBox3D::new(state.center, self.l, self.w, self.h, state.yaw);
        b.track_id = Some(self.track_id);
        b.class_label = self.class_label.clone();
        Some(b)
    }
}

/// True position of an observed point. `object_id` is `None` for background
/// points; for moving objects `position` is the location at the first frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthPoint {
    pub point_id: u64,
    pub object_id: Option<u64>,
    pub position: Point3,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Truth {
    pub objects: Vec<TruthObject>,
    pub points: Vec<TruthPoint>,
}

impl Truth {
    pub fn object(&self, track_id: u64) -> Option<&TruthObject> {
        self.objects.iter().find(|o| o.track_id == track_id)
    }

    pub fn attribution(&self) -> BTreeMap<u64, Option<u64>> {
        self.points.iter().map(|p| (p.point_id, p.object_id)).collect()
    }
}

/// Everything a run consumes: cameras, 2D tracks, keypoint tracks and
/// optionally the simulator's ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub frames: FrameSet,
    pub tracks2d: Vec<TrackedBox2D>,
    pub obs_tracks: Vec<ObservationTrack>,
    pub truth: Option<Truth>,
}

impl SceneBundle {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Input(m));
        let mut seen_boxes = HashSet::new();
        for b in &self.tracks2d {
            if self.frames.get(b.frame_id).is_none() {
                return bad(format!("box of track {} refers to unknown frame {}", b.track_id, b.frame_id));
            }
            if !seen_boxes.insert((b.track_id, b.frame_id)) {
                return bad(format!("track {} has two boxes in frame {}", b.track_id, b.frame_id));
            }
        }
        let mut seen_points = HashSet::new();
        for t in &self.obs_tracks {
            if !seen_points.insert(t.point_id) {
                return bad(format!("point {} appears in two tracks", t.point_id));
            }
            let mut frames_seen = HashSet::new();
            for (fid, px) in &t.observations {
                if self.frames.get(*fid).is_none() {
                    return bad(format!("point {} observed in unknown frame {fid}", t.point_id));
                }
                if !frames_seen.insert(*fid) {
                    return bad(format!("point {} observed twice in frame {fid}", t.point_id));
                }
                if !(px.u.is_finite() && px.v.is_finite()) {
                    return bad(format!("point {} has a non-finite observation", t.point_id));
                }
            }
        }
        if let Some(truth) = &self.truth {
            let covered: HashSet<u64> = truth.points.iter().map(|p| p.point_id).collect();
            if let Some(t) = self.obs_tracks.iter().find(|t| !covered.contains(&t.point_id)) {
                return bad(format!("truth does not attribute point {}", t.point_id));
            }
        }
        Ok(())
    }

    /// Distinct 2D track ids, ascending.
    pub fn track_ids(&self) -> BTreeSet<u64> {
        self.tracks2d.iter().map(|b| b.track_id).collect()
    }

    /// Class of each track: its most frequent box label, ties to the
    /// lexicographically smallest.
    pub fn track_classes(&self) -> BTreeMap<u64, String> {
        let mut counts: BTreeMap<u64, BTreeMap<&str, usize>> = BTreeMap::new();
        for b in &self.tracks2d {
            *counts.entry(b.track_id).or_default().entry(b.class_label.as_str()).or_default() += 1;
        }
        counts
            .into_iter()
            .map(|(id, c)| {
                let best = c.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(k, _)| k.to_string());
                (id, best.unwrap_or_default())
            })
            .collect()
    }
}
