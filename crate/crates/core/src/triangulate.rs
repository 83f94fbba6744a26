//! Point reconstruction from correspondence tracks.
//!
//! Poses are given, so minimizing the reprojection error over all points
//! separates into one 3-parameter problem per point. Each point is
//! initialized by linear (DLT) triangulation and refined with a damped
//! Gauss-Newton (Levenberg-Marquardt) loop.

use std::collections::HashMap;

use nalgebra::{DMatrix, Matrix2x3, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;
use crate::geom::{CameraFrame, FrameSet, Pixel, Point3, MIN_DEPTH};

/// Rays closer than this angle (radians) are treated as parallel.
const PARALLEL_RAY_TOL: f64 = 1e-8;
/// Damping growth retries on a singular normal matrix before giving up on a point.
const MAX_SINGULAR_RETRIES: usize = 8;
const MAX_DAMPING: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum TriangulationError {
    #[error("fewer than two usable observations")]
    InsufficientViews,
    #[error("viewing rays are parallel")]
    DegenerateGeometry,
    #[error("point lies behind the observing cameras")]
    CheiralityFailure,
}

/// Why a point left the reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropReason {
    Triangulation(TriangulationError),
    SingularNormalEquations,
    BehindCamera,
    ResidualTooLarge,
    TooFewViews,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTrack {
    pub point_id: u64,
    pub observations: Vec<(u32, Pixel)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldPoint {
    pub point_id: u64,
    pub position: Point3,
    pub residual_rms: f64,
    pub n_views: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaConfig {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub cost_tolerance: f64,
    pub initial_damping: f64,
    pub damping_scale: f64,
    pub min_views: usize,
    pub max_residual_px: f64,
    pub parallax_min_baseline_m: f64,
}

impl Default for BaConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            cost_tolerance: 1e-10,
            initial_damping: 1e-3,
            damping_scale: 10.0,
            min_views: 2,
            max_residual_px: 3.0,
            parallax_min_baseline_m: 0.5,
        }
    }
}

impl BaConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_iterations < 1 {
            return Err("max_iterations must be >= 1".into());
        }
        if !(self.cost_tolerance > 0.0 && self.initial_damping > 0.0 && self.damping_scale > 1.0) {
            return Err("tolerances and damping must be positive (damping_scale > 1)".into());
        }
        if self.min_views < 2 {
            return Err("min_views must be >= 2".into());
        }
        if !(self.max_residual_px > 0.0 && self.parallax_min_baseline_m >= 0.0) {
            return Err("max_residual_px must be positive and the baseline non-negative".into());
        }
        Ok(())
    }
}

/// Observations of one track paired with their frames. Unknown frame ids
/// are skipped, and only the first observation per frame is kept.
pub fn resolve_observations<'a>(track: &ObservationTrack, frames: &'a FrameSet) -> Vec<(&'a CameraFrame, Pixel)> {
    let mut out: Vec<(&CameraFrame, Pixel)> = Vec::with_capacity(track.observations.len());
    for &(fid, px) in &track.observations {
        if out.iter().any(|(f, _)| f.frame_id == fid) {
            continue;
        }
        if let Some(f) = frames.get(fid) {
            out.push((f, px));
        }
    }
    out
}

fn world_ray(frame: &CameraFrame, px: Pixel) -> Vector3<f64> {
    let (xn, yn) = frame.intrinsics.normalize(px);
    (frame.pose.rotation().transpose() * Vector3::new(xn, yn, 1.0)).normalize()
}

fn max_ray_angle(obs: &[(&CameraFrame, Pixel)]) -> f64 {
    let rays: Vec<_> = obs.iter().map(|(f, px)| world_ray(f, *px)).collect();
    let mut best = 0.0f64;
    for i in 0..rays.len() {
        for j in i + 1..rays.len() {
            let angle = rays[i].cross(&rays[j]).norm().atan2(rays[i].dot(&rays[j]));
            best = best.max(angle);
        }
    }
    best
}

/// Linear triangulation in normalized image coordinates.
pub fn triangulate_dlt(track: &ObservationTrack, frames: &FrameSet) -> Result<Point3, TriangulationError> {
    let obs = resolve_observations(track, frames);
    dlt_from_observations(&obs)
}

fn dlt_from_observations(obs: &[(&CameraFrame, Pixel)]) -> Result<Point3, TriangulationError> {
    if obs.len() < 2 {
        return Err(TriangulationError::InsufficientViews);
    }
    if max_ray_angle(obs) < PARALLEL_RAY_TOL {
        return Err(TriangulationError::DegenerateGeometry);
    }
    let mut a = DMatrix::<f64>::zeros(2 * obs.len(), 4);
    for (i, (frame, px)) in obs.iter().enumerate() {
        let (xn, yn) = frame.intrinsics.normalize(*px);
        let r = frame.pose.rotation();
        let t = frame.pose.translation();
        for c in 0..3 {
            a[(2 * i, c)] = xn * r[(2, c)] - r[(0, c)];
            a[(2 * i + 1, c)] = yn * r[(2, c)] - r[(1, c)];
        }
        a[(2 * i, 3)] = xn * t[2] - t[0];
        a[(2 * i + 1, 3)] = yn * t[2] - t[1];
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(TriangulationError::DegenerateGeometry)?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .ok_or(TriangulationError::DegenerateGeometry)?;
    let h = v_t.row(min_idx);
    if h[3].abs() <= 1e-12 * h.norm() {
        return Err(TriangulationError::DegenerateGeometry);
    }
    let p = Point3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);
    if !p.coords.iter().all(|v| v.is_finite()) {
        return Err(TriangulationError::DegenerateGeometry);
    }
    let in_front = obs.iter().filter(|(f, _)| f.depth_of(&p) > MIN_DEPTH).count();
    if in_front < 2 {
        return Err(TriangulationError::CheiralityFailure);
    }
    Ok(p)
}

/// Reprojection residual `observed - projected` for one observation, or
/// `None` when the point is behind that camera.
pub fn residual(frame: &CameraFrame, observed: Pixel, p: &Point3) -> Option<[f64; 2]> {
    let px = frame.project(p).ok()?;
    Some([observed.u - px.u, observed.v - px.v])
}

/// Analytic Jacobian of [`residual`] with respect to the world point.
pub fn residual_jacobian(frame: &CameraFrame, p: &Point3) -> Option<Matrix2x3<f64>> {
    let c = frame.pose.transform(p);
    if c.z <= MIN_DEPTH {
        return None;
    }
    let k = &frame.intrinsics;
    let iz = 1.0 / c.z;
    let d_proj = Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * c.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * c.y * iz * iz,
    );
    Some(-(d_proj * frame.pose.rotation()))
}

/// `1/2 * sum ||r||^2` over the observations.
pub fn point_cost(obs: &[(&CameraFrame, Pixel)], p: &Point3) -> Option<f64> {
    let mut sum = 0.0;
    for (frame, px) in obs {
        let r = residual(frame, *px, p)?;
        sum += r[0] * r[0] + r[1] * r[1];
    }
    Some(0.5 * sum)
}

/// Result of refining one point, including the cost after every accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSolve {
    pub position: Point3,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost at the start followed by the cost after each accepted step.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
}

impl PointSolve {
    pub fn residual_rms(&self, n_obs: usize) -> f64 {
        (2.0 * self.final_cost / n_obs as f64).sqrt()
    }
}

/// Levenberg-Marquardt refinement of a single point with poses held fixed.
pub fn refine_point(
    initial: Point3,
    obs: &[(&CameraFrame, Pixel)],
    cfg: &BaConfig,
) -> Result<PointSolve, DropReason> {
    let mut p = initial;
    let mut cost = point_cost(obs, &p).ok_or(DropReason::BehindCamera)?;
    let mut history = vec![cost];
    let mut lambda = cfg.initial_damping;
    let mut singular_retries = 0;
    let mut iterations = 0;

    while iterations < cfg.max_iterations && cost > 0.0 {
        iterations += 1;
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for (frame, px) in obs {
            let j = residual_jacobian(frame, &p).ok_or(DropReason::BehindCamera)?;
            let r = residual(frame, *px, &p).ok_or(DropReason::BehindCamera)?;
            let r = nalgebra::Vector2::new(r[0], r[1]);
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let mut damped = jtj;
        for i in 0..3 {
            damped[(i, i)] += lambda * jtj[(i, i)];
        }
        // minimize ||r + J delta||^2
        let Some(chol) = damped.cholesky() else {
            singular_retries += 1;
            if singular_retries > MAX_SINGULAR_RETRIES {
                return Err(DropReason::SingularNormalEquations);
            }
            lambda *= cfg.damping_scale;
            continue;
        };
        let delta = chol.solve(&(-jtr));
        let candidate = Point3::from(p.coords + delta);
        match point_cost(obs, &candidate) {
            Some(c) if c < cost => {
                let rel = (cost - c) / cost;
                p = candidate;
                cost = c;
                history.push(c);
                lambda = (lambda / cfg.damping_scale).max(1e-15);
                if rel < cfg.cost_tolerance {
                    break;
                }
            }
            _ => {
                lambda *= cfg.damping_scale;
                if lambda > MAX_DAMPING {
                    break;
                }
            }
        }
    }

    Ok(PointSolve {
        position: p,
        initial_cost: history[0],
        final_cost: cost,
        cost_history: history,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroppedPoint {
    pub point_id: u64,
    pub reason: DropReason,
}

/// Kept and dropped points, both ordered by point id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Reconstruction {
    pub points: Vec<WorldPoint>,
    pub dropped: Vec<DroppedPoint>,
}

fn finish(
    point_id: u64,
    obs: &[(&CameraFrame, Pixel)],
    solved: Result<PointSolve, DropReason>,
    cfg: &BaConfig,
) -> Result<WorldPoint, DroppedPoint> {
    let drop = |reason| DroppedPoint { point_id, reason };
    let solve = solved.map_err(drop)?;
    let rms = solve.residual_rms(obs.len());
    if !(rms <= cfg.max_residual_px) {
        return Err(drop(DropReason::ResidualTooLarge));
    }
    Ok(WorldPoint { point_id, position: solve.position, residual_rms: rms, n_views: obs.len() })
}

fn collect(results: Vec<Result<WorldPoint, DroppedPoint>>) -> Reconstruction {
    let mut out = Reconstruction::default();
    for r in results {
        match r {
            Ok(p) => out.points.push(p),
            Err(d) => out.dropped.push(d),
        }
    }
    out.points.sort_by_key(|p| p.point_id);
    out.dropped.sort_by_key(|d| d.point_id);
    out
}

/// Refines already-initialized points against their tracks. Points whose
/// final RMS residual exceeds `cfg.max_residual_px` are dropped.
pub fn refine_points(
    points: &[WorldPoint],
    tracks: &[ObservationTrack],
    frames: &FrameSet,
    cfg: &BaConfig,
) -> Reconstruction {
    let by_id: HashMap<u64, &ObservationTrack> = tracks.iter().map(|t| (t.point_id, t)).collect();
    let results = exec::map(points, |wp| {
        let drop = |reason| DroppedPoint { point_id: wp.point_id, reason };
        let track = by_id.get(&wp.point_id).ok_or(drop(DropReason::TooFewViews))?;
        let obs = resolve_observations(track, frames);
        if obs.len() < cfg.min_views {
            return Err(drop(DropReason::TooFewViews));
        }
        finish(wp.point_id, &obs, refine_point(wp.position, &obs, cfg), cfg)
    });
    collect(results)
}

/// DLT initialization followed by refinement for every track.
pub fn reconstruct(tracks: &[ObservationTrack], frames: &FrameSet, cfg: &BaConfig) -> Reconstruction {
    let results = exec::map(tracks, |track| {
        let drop = |reason| DroppedPoint { point_id: track.point_id, reason };
        let obs = resolve_observations(track, frames);
        if obs.len() < cfg.min_views {
            return Err(drop(DropReason::TooFewViews));
        }
        let init = dlt_from_observations(&obs).map_err(|e| drop(DropReason::Triangulation(e)))?;
        finish(track.point_id, &obs, refine_point(init, &obs, cfg), cfg)
    });
    collect(results)
}

/// False when the camera barely moves: the largest pairwise distance between
/// camera centers is below `cfg.parallax_min_baseline_m`.
pub fn parallax_gate(frames: &FrameSet, cfg: &BaConfig) -> bool {
    let centers: Vec<Point3> = frames.iter().map(|f| f.pose.center()).collect();
    let mut max_baseline = 0.0f64;
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            max_baseline = max_baseline.max((centers[i] - centers[j]).norm());
        }
    }
    !(max_baseline < cfg.parallax_min_baseline_m)
}
