//! Oriented box fitting for object clusters.
//!
//! The footprint is fitted in the world x-y plane (z up). For a candidate yaw
//! the rectangle is the tightest one aligned with that yaw, so only the yaw is
//! searched: it minimizes the summed distance from each point to its nearest
//! rectangle edge. The minimum-area rectangle is kept as a baseline.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::ObjectCluster;
use crate::geom::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FitError {
    #[error("cluster is degenerate (fewer than 3 points or collinear in bird's-eye view)")]
    DegenerateCluster,
}

/// 7-DoF box in the world frame: center, size along (l: heading, w: lateral,
/// h: vertical) and yaw about +z.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedBox3D {
    pub center: Point3,
    pub w: f64,
    pub h: f64,
    pub l: f64,
    pub yaw: f64,
    pub score: f64,
    pub track_id: Option<u64>,
    pub class_label: String,
    /// False for 2D-only labels whose geometry must be ignored.
    pub has_3d: bool,
}

impl OrientedBox3D {
    pub fn new(center: Point3, l: f64, w: f64, h: f64, yaw: f64) -> Self {
        Self { center, w, h, l, yaw, score: 1.0, track_id: None, class_label: String::new(), has_3d: true }
    }

    /// Placeholder for a track whose 3D geometry is unavailable.
    pub fn two_d_only(track_id: u64, class_label: &str) -> Self {
        Self {
            center: Point3::origin(),
            w: 0.0,
            h: 0.0,
            l: 0.0,
            yaw: 0.0,
            score: 0.0,
            track_id: Some(track_id),
            class_label: class_label.to_string(),
            has_3d: false,
        }
    }

    pub fn volume(&self) -> f64 {
        self.w * self.h * self.l
    }

    pub fn z_range(&self) -> (f64, f64) {
        (self.center.z - 0.5 * self.h, self.center.z + 0.5 * self.h)
    }

    /// Footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (0.5 * self.l, 0.5 * self.w);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(a, b)| {
            [self.center.x + a * c - b * s, self.center.y + a * s + b * c]
        })
    }

    pub fn corners(&self) -> [Point3; 8] {
        let bev = self.bev_corners();
        let (z0, z1) = self.z_range();
        let mut out = [Point3::origin(); 8];
        for (i, c) in bev.iter().enumerate() {
            out[i] = Point3::new(c[0], c[1], z0);
            out[i + 4] = Point3::new(c[0], c[1], z1);
        }
        out
    }

    /// Point in box-local coordinates (x along l, y along w, z up).
    pub fn to_local(&self, p: &Point3) -> Point3 {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (p.x - self.center.x, p.y - self.center.y);
        Point3::new(c * dx + s * dy, -s * dx + c * dy, p.z - self.center.z)
    }

    pub fn contains(&self, p: &Point3) -> bool {
        let q = self.to_local(p);
        q.x.abs() <= 0.5 * self.l && q.y.abs() <= 0.5 * self.w && q.z.abs() <= 0.5 * self.h
    }
}

/// Rectangle in bird's-eye view: extents along the axes
/// `u = (cos yaw, sin yaw)` and `v = (-sin yaw, cos yaw)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevRectangle {
    pub yaw: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl BevRectangle {
    pub fn area(&self) -> f64 {
        (self.u_max - self.u_min) * (self.v_max - self.v_min)
    }

    pub fn center(&self) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        let (u, v) = (0.5 * (self.u_min + self.u_max), 0.5 * (self.v_min + self.v_max));
        [u * c - v * s, u * s + v * c]
    }

    pub fn to_uv(&self, p: [f64; 2]) -> [f64; 2] {
        uv(self.yaw, p)
    }
}

fn uv(yaw: f64, p: [f64; 2]) -> [f64; 2] {
    let (s, c) = yaw.sin_cos();
    [c * p[0] + s * p[1], -s * p[0] + c * p[1]]
}

/// Tightest rectangle aligned with `yaw` enclosing all points.
pub fn tight_rect(points: &[[f64; 2]], yaw: f64) -> BevRectangle {
    let mut r = BevRectangle { yaw, u_min: f64::INFINITY, u_max: f64::NEG_INFINITY, v_min: f64::INFINITY, v_max: f64::NEG_INFINITY };
    for p in points {
        let [u, v] = uv(yaw, *p);
        r.u_min = r.u_min.min(u);
        r.u_max = r.u_max.max(u);
        r.v_min = r.v_min.min(v);
        r.v_max = r.v_max.max(v);
    }
    r
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 { (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let q = [a[0] + t * d[0] - p[0], a[1] + t * d[1] - p[1]];
    (q[0] * q[0] + q[1] * q[1]).sqrt()
}

/// Sum over points of the distance to the nearest edge segment of `rect`.
pub fn edge_distance_cost(points: &[[f64; 2]], rect: &BevRectangle) -> f64 {
    let corners = [
        [rect.u_min, rect.v_min],
        [rect.u_max, rect.v_min],
        [rect.u_max, rect.v_max],
        [rect.u_min, rect.v_max],
    ];
    points
        .iter()
        .map(|p| {
            let q = rect.to_uv(*p);
            (0..4)
                .map(|i| segment_distance(q, corners[i], corners[(i + 1) % 4]))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// Edge-distance objective with tight extents at `yaw`.
pub fn orientation_cost(points: &[[f64; 2]], yaw: f64) -> f64 {
    edge_distance_cost(points, &tight_rect(points, yaw))
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull (monotone chain), counter-clockwise, without collinear vertices.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], *p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    0.5 * (0..n).map(|i| poly[i][0] * poly[(i + 1) % n][1] - poly[(i + 1) % n][0] * poly[i][1]).sum::<f64>()
}

fn checked_hull(points: &[[f64; 2]]) -> Result<Vec<[f64; 2]>, FitError> {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return Err(FitError::DegenerateCluster);
    }
    let scale = hull.iter().map(|p| p[0].abs().max(p[1].abs())).fold(1.0, f64::max);
    if polygon_area(&hull) <= 1e-12 * scale * scale {
        return Err(FitError::DegenerateCluster);
    }
    Ok(hull)
}

/// Wraps an angle into `[0, period)`.
pub fn wrap_angle(a: f64, period: f64) -> f64 {
    let r = a.rem_euclid(period);
    if r >= period { 0.0 } else { r }
}

fn hull_edge_yaws(hull: &[[f64; 2]]) -> Vec<f64> {
    (0..hull.len())
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
            wrap_angle((b[1] - a[1]).atan2(b[0] - a[0]), PI)
        })
        .collect()
}

/// Minimum-area enclosing rectangle. One side of the optimum is collinear
/// with a hull edge, so every hull-edge orientation is tried.
pub fn fit_min_area_rect(bev_points: &[[f64; 2]]) -> Result<BevRectangle, FitError> {
    let hull = checked_hull(bev_points)?;
    let best = hull_edge_yaws(&hull)
        .into_iter()
        .map(|yaw| tight_rect(&hull, yaw))
        .min_by(|a, b| a.area().total_cmp(&b.area()))
        .ok_or(FitError::DegenerateCluster)?;
    Ok(tight_rect(bev_points, best.yaw))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Orientation grid step, radians.
    pub coarse_step: f64,
    /// Golden-section stopping width, radians.
    pub refine_tolerance: f64,
    /// Completeness bounds on the fitted length, meters.
    pub sigma0: f64,
    pub sigma1: f64,
    /// Fraction of points a cut-off may remove, as (min, max).
    pub cutoff_fraction_range: (f64, f64),
    /// Cluster size at which the point-count factor of the score saturates.
    pub score_reference_points: usize,
    /// Residual scale (pixels) of the score's exponential decay.
    pub score_residual_scale_px: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            coarse_step: 0.25f64.to_radians(),
            refine_tolerance: 0.01f64.to_radians(),
            sigma0: 3.0,
            sigma1: 10.0,
            cutoff_fraction_range: (0.1, 0.4),
            score_reference_points: 100,
            score_residual_scale_px: 3.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.coarse_step > 0.0 && self.coarse_step <= PI / 36.0) {
            return Err("coarse_step must lie in (0, pi/36]".into());
        }
        if !(self.refine_tolerance > 0.0) {
            return Err("refine_tolerance must be positive".into());
        }
        if !(self.sigma0 > 0.0 && self.sigma0 < self.sigma1) {
            return Err("need 0 < sigma0 < sigma1".into());
        }
        let (lo, hi) = self.cutoff_fraction_range;
        if !(0.0 <= lo && lo <= hi && hi < 1.0) {
            return Err("cutoff_fraction_range must satisfy 0 <= min <= max < 1".into());
        }
        if self.score_reference_points == 0 || !(self.score_residual_scale_px > 0.0) {
            return Err("score parameters must be positive".into());
        }
        Ok(())
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd { (c, fc) } else { (d, fd) }
}

/// Edge-distance orientation fit. Coarse grid over `[0, pi)`, golden-section
/// refinement inside the best grid cell, and the hull-edge orientations as
/// extra candidates; the lowest objective wins.
pub fn fit_orientation_edge(bev_points: &[[f64; 2]], cfg: &FitConfig) -> Result<BevRectangle, FitError> {
    let hull = checked_hull(bev_points)?;
    let cost = |yaw: f64| orientation_cost(bev_points, yaw);

    let steps = (PI / cfg.coarse_step).ceil() as usize;
    let step = PI / steps as f64;
    let (mut best_yaw, mut best_cost) = (0.0, f64::INFINITY);
    for i in 0..steps {
        let yaw = i as f64 * step;
        let c = cost(yaw);
        if c < best_cost {
            best_yaw = yaw;
            best_cost = c;
        }
    }
    let (refined, refined_cost) = golden_section(cost, best_yaw - step, best_yaw + step, cfg.refine_tolerance);
    let mut candidates = vec![(best_yaw, best_cost), (refined, refined_cost)];
    candidates.extend(hull_edge_yaws(&hull).into_iter().map(|y| (y, cost(y))));
    let (yaw, _) = candidates
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("candidate list is non-empty");
    Ok(tight_rect(bev_points, wrap_angle(yaw, PI)))
}

/// Pseudo-label confidence from cluster support and reconstruction quality.
pub fn pseudo_label_score(n_points: usize, mean_residual_px: f64, cfg: &FitConfig) -> f64 {
    let support = (n_points as f64 / cfg.score_reference_points as f64).min(1.0);
    (support * (-mean_residual_px / cfg.score_residual_scale_px).exp()).clamp(0.0, 1.0)
}

/// Converts a footprint plus vertical extent into a 7-DoF box with the yaw
/// along the longer side, wrapped into `[0, pi)`.
pub fn box_from_rect(rect: &BevRectangle, z_min: f64, z_max: f64) -> OrientedBox3D {
    let (du, dv) = (rect.u_max - rect.u_min, rect.v_max - rect.v_min);
    let (l, w, yaw) = if du >= dv { (du, dv, rect.yaw) } else { (dv, du, rect.yaw + FRAC_PI_2) };
    let [cx, cy] = rect.center();
    OrientedBox3D::new(Point3::new(cx, cy, 0.5 * (z_min + z_max)), l, w, z_max - z_min, wrap_angle(yaw, PI))
}

pub fn fit_box7(cluster: &ObjectCluster, cfg: &FitConfig) -> Result<OrientedBox3D, FitError> {
    if cluster.len() < 3 {
        return Err(FitError::DegenerateCluster);
    }
    let bev: Vec<[f64; 2]> = cluster.points.iter().map(|p| [p.x, p.y]).collect();
    let rect = fit_orientation_edge(&bev, cfg)?;
    let (z_min, z_max) = cluster
        .points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)));
    if !(z_max > z_min) || !(rect.area() > 0.0) {
        return Err(FitError::DegenerateCluster);
    }
    let mut b = box_from_rect(&rect, z_min, z_max);
    b.score = pseudo_label_score(cluster.len(), cluster.mean_residual_px, cfg);
    b.track_id = cluster.matched_track_id;
    Ok(b)
}

/// A fitted box counts as a complete object when its length lies in
/// `[sigma0, sigma1]`.
pub fn completeness_filter(b: &OrientedBox3D, cfg: &FitConfig) -> bool {
    b.has_3d && cfg.sigma0 <= b.l && b.l <= cfg.sigma1
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutoffResult {
    pub cluster: ObjectCluster,
    /// False when no valid cut was found and the input came back unchanged.
    pub applied: bool,
    pub removed: usize,
}

const CUTOFF_ATTEMPTS: usize = 16;

/// Removes every point on one side of a random vertical plane, targeting a
/// removed fraction drawn from `cfg.cutoff_fraction_range`. Deterministic in
/// `seed`.
pub fn cutoff_augment(cluster: &ObjectCluster, seed: u64, cfg: &FitConfig) -> CutoffResult {
    let n = cluster.len();
    let unchanged = CutoffResult { cluster: cluster.clone(), applied: false, removed: 0 };
    if n == 0 {
        return unchanged;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = cfg.cutoff_fraction_range;
    for _ in 0..CUTOFF_ATTEMPTS {
        let fraction = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let angle = rng.random_range(0.0..2.0 * PI);
        let k = (fraction * n as f64).round() as usize;
        if k == 0 {
            return CutoffResult { cluster: cluster.clone(), applied: true, removed: 0 };
        }
        if k >= n {
            continue;
        }
        let (s, c) = angle.sin_cos();
        let mut order: Vec<(f64, usize)> =
            cluster.points.iter().enumerate().map(|(i, p)| (p.x * c + p.y * s, i)).collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        // the plane must separate the k farthest points strictly
        if order[k - 1].0 <= order[k].0 {
            continue;
        }
        let mut keep: Vec<usize> = order[k..].iter().map(|o| o.1).collect();
        keep.sort_unstable();
        let mut out = ObjectCluster {
            point_ids: keep.iter().map(|&i| cluster.point_ids[i]).collect(),
            points: keep.iter().map(|&i| cluster.points[i]).collect(),
            ..cluster.clone()
        };
        out.matched_track_id = cluster.matched_track_id;
        return CutoffResult { cluster: out, applied: true, removed: k };
    }
    unchanged
}
