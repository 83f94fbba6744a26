//! Two-stage object clustering of reconstructed points.
//!
//! Local clustering keeps, per 2D box and frame, the largest connected
//! component of the points that project into the box. Global clustering runs
//! connected components again over the union of those local picks, drops
//! small components, and each surviving component is assigned to the track
//! whose boxes contain the most of its reprojected points.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::exec;
use crate::geom::{pixel_in_box, Box2D, CameraFrame, FrameSet, Point3, MIN_DEPTH};
use crate::triangulate::WorldPoint;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedBox2D {
    pub track_id: u64,
    pub frame_id: u32,
    pub bbox: Box2D,
    pub class_label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterSource {
    Lpc,
    Gpc,
}

/// A set of world points attributed to one object. `point_ids` is sorted and
/// `points[i]` is the position of `point_ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectCluster {
    pub point_ids: Vec<u64>,
    pub points: Vec<Point3>,
    pub source: ClusterSource,
    pub matched_track_id: Option<u64>,
    /// Mean reprojection RMS of the member points, in pixels.
    pub mean_residual_px: f64,
}

impl ObjectCluster {
    pub fn empty(source: ClusterSource) -> Self {
        Self { point_ids: Vec::new(), points: Vec::new(), source, matched_track_id: None, mean_residual_px: 0.0 }
    }

    fn from_members(mut members: Vec<(u64, Point3)>, source: ClusterSource) -> Self {
        members.sort_by_key(|m| m.0);
        members.dedup_by_key(|m| m.0);
        let (point_ids, points) = members.into_iter().unzip();
        Self { point_ids, points, source, matched_track_id: None, mean_residual_px: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.point_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_ids.is_empty()
    }

    pub fn members(&self) -> impl Iterator<Item = (u64, &Point3)> {
        self.point_ids.iter().copied().zip(self.points.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    /// Local (per-frame) connectivity distance, meters.
    pub delta1: f64,
    /// Global connectivity distance, meters.
    pub delta2: f64,
    /// Minimum global cluster size.
    pub theta: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { delta1: 0.5, delta2: 0.7, theta: 100 }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.delta1 > 0.0 && self.delta2 > 0.0) {
            return Err("delta1 and delta2 must be positive".into());
        }
        if self.theta < 1 {
            return Err("theta must be >= 1".into());
        }
        Ok(())
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

type Cell = (i64, i64, i64);

/// Partition of `points` into eps-connected components: two points share a
/// component iff a chain of points with consecutive distances `<= eps` links
/// them. Ids are sorted within each component; components are ordered by
/// their smallest id.
pub fn connected_components(points: &[(u64, Point3)], eps: f64) -> Vec<Vec<u64>> {
    assert!(eps > 0.0, "eps must be positive");
    if points.is_empty() {
        return Vec::new();
    }
    // slightly oversized cells keep every eps-neighbor within the 27-cell stencil
    let inv_cell = 1.0 / (eps * (1.0 + 1e-9));
    let cell_of = |p: &Point3| -> Cell {
        (
            (p.x * inv_cell).floor() as i64,
            (p.y * inv_cell).floor() as i64,
            (p.z * inv_cell).floor() as i64,
        )
    };
    let mut grid: HashMap<Cell, Vec<usize>> = HashMap::with_capacity(points.len());
    for (i, (_, p)) in points.iter().enumerate() {
        grid.entry(cell_of(p)).or_default().push(i);
    }

    let eps2 = eps * eps;
    let mut uf = UnionFind::new(points.len());
    for (i, (_, p)) in points.iter().enumerate() {
        let (cx, cy, cz) = cell_of(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = grid.get(&(cx + dx, cy + dy, cz + dz)) else {
                        continue;
                    };
                    for &j in bucket {
                        if j > i && (points[j].1 - p).norm_squared() <= eps2 {
                            uf.union(i, j);
                        }
                    }
                }
            }
        }
    }

    let mut groups: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    for i in 0..points.len() {
        let root = uf.find(i);
        groups.entry(root).or_default().push(points[i].0);
    }
    let mut out: Vec<Vec<u64>> = groups
        .into_values()
        .map(|mut ids| {
            ids.sort_unstable();
            ids
        })
        .collect();
    out.sort_by_key(|ids| ids[0]);
    out
}

/// Local clustering for one box in one frame: the largest component (at
/// `delta1`) among the points that project inside the box with positive
/// depth. Ties go to the smaller mean depth, then to the smaller first id.
pub fn lpc(world_points: &[WorldPoint], frame: &CameraFrame, tbox: &TrackedBox2D, cfg: &ClusterConfig) -> ObjectCluster {
    let mut inside: Vec<(u64, Point3)> = Vec::new();
    let mut depth: HashMap<u64, f64> = HashMap::new();
    let mut residual: HashMap<u64, f64> = HashMap::new();
    for wp in world_points {
        let z = frame.depth_of(&wp.position);
        if z <= MIN_DEPTH {
            continue;
        }
        match frame.project(&wp.position) {
            Ok(px) if pixel_in_box(px, &tbox.bbox) => {
                inside.push((wp.point_id, wp.position));
                depth.insert(wp.point_id, z);
                residual.insert(wp.point_id, wp.residual_rms);
            }
            _ => {}
        }
    }
    if inside.is_empty() {
        return ObjectCluster::empty(ClusterSource::Lpc);
    }
    let components = connected_components(&inside, cfg.delta1);
    let mean_depth = |ids: &[u64]| ids.iter().map(|id| depth[id]).sum::<f64>() / ids.len() as f64;
    let best = components
        .iter()
        .min_by(|a, b| {
            b.len()
                .cmp(&a.len())
                .then_with(|| mean_depth(a).total_cmp(&mean_depth(b)))
                .then_with(|| a[0].cmp(&b[0]))
        })
        .expect("non-empty input yields a component");
    let positions: HashMap<u64, Point3> = inside.into_iter().collect();
    let mut cluster =
        ObjectCluster::from_members(best.iter().map(|id| (*id, positions[id])).collect(), ClusterSource::Lpc);
    cluster.mean_residual_px = best.iter().map(|id| residual[id]).sum::<f64>() / best.len() as f64;
    cluster
}

/// Global clustering at `delta2`; components smaller than `theta` are discarded.
pub fn gpc(union_points: &[(u64, Point3)], cfg: &ClusterConfig) -> Vec<ObjectCluster> {
    let positions: HashMap<u64, Point3> = union_points.iter().copied().collect();
    connected_components(union_points, cfg.delta2)
        .into_iter()
        .filter(|ids| ids.len() >= cfg.theta)
        .map(|ids| ObjectCluster::from_members(ids.iter().map(|id| (*id, positions[id])).collect(), ClusterSource::Gpc))
        .collect()
}

/// Per-track count of a cluster's reprojected points falling inside that
/// track's boxes, summed over frames.
pub fn in_box_counts(cluster: &ObjectCluster, boxes: &[TrackedBox2D], frames: &FrameSet) -> BTreeMap<u64, usize> {
    let mut by_frame: BTreeMap<u32, Vec<&TrackedBox2D>> = BTreeMap::new();
    for b in boxes {
        by_frame.entry(b.frame_id).or_default().push(b);
    }
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for (fid, frame_boxes) in &by_frame {
        let Some(frame) = frames.get(*fid) else { continue };
        for p in &cluster.points {
            let Ok(px) = frame.project(p) else { continue };
            for b in frame_boxes {
                if pixel_in_box(px, &b.bbox) {
                    *counts.entry(b.track_id).or_default() += 1;
                }
            }
        }
    }
    counts
}

/// Assigns each cluster to the track with the strictly largest in-box count
/// (ties to the smaller track id). A track keeps at most one cluster: the one
/// with the higher count, ties to the earlier cluster. Losers and clusters
/// with no in-box points stay unmatched.
pub fn match_clusters(clusters: Vec<ObjectCluster>, boxes: &[TrackedBox2D], frames: &FrameSet) -> Vec<ObjectCluster> {
    let best: Vec<Option<(u64, usize)>> = exec::map(&clusters, |c| {
        let counts = in_box_counts(c, boxes, frames);
        counts
            .into_iter()
            .filter(|(_, n)| *n > 0)
            .min_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)))
    });
    let mut winner: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for (idx, claim) in best.iter().enumerate() {
        if let Some((track, count)) = *claim {
            let entry = winner.entry(track).or_insert((idx, count));
            if count > entry.1 {
                *entry = (idx, count);
            }
        }
    }
    let mut out = clusters;
    for c in out.iter_mut() {
        c.matched_track_id = None;
    }
    for (track, (idx, _)) in winner {
        out[idx].matched_track_id = Some(track);
    }
    out
}

/// Full two-stage clustering. Tracks without a surviving cluster are absent
/// from the returned map.
pub fn double_cluster(
    world_points: &[WorldPoint],
    frames: &FrameSet,
    boxes: &[TrackedBox2D],
    cfg: &ClusterConfig,
) -> BTreeMap<u64, ObjectCluster> {
    let local: Vec<ObjectCluster> = exec::map(boxes, |b| match frames.get(b.frame_id) {
        Some(frame) => lpc(world_points, frame, b, cfg),
        None => ObjectCluster::empty(ClusterSource::Lpc),
    });
    let mut union: BTreeMap<u64, Point3> = BTreeMap::new();
    for c in &local {
        for (id, p) in c.members() {
            union.insert(id, *p);
        }
    }
    let union: Vec<(u64, Point3)> = union.into_iter().collect();
    let matched = match_clusters(gpc(&union, cfg), boxes, frames);

    let residual: HashMap<u64, f64> = world_points.iter().map(|w| (w.point_id, w.residual_rms)).collect();
    matched
        .into_iter()
        .filter_map(|mut c| {
            let track = c.matched_track_id?;
            c.mean_residual_px =
                c.point_ids.iter().map(|id| residual.get(id).copied().unwrap_or(0.0)).sum::<f64>() / c.len() as f64;
            Some((track, c))
        })
        .collect()
}
