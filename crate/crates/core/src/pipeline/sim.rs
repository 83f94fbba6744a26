//! Synthetic driving scenes with exact ground truth.
//!
//! A camera drives along a (possibly curved) path at constant height looking
//! along the path heading. Boxes stand on the ground plane z = 0; static ones
//! are scattered beside the path, moving ones translate with constant velocity.
//! Keypoints are sampled on box surfaces plus a sparse ground grid, and each
//! point is observed in every frame where it faces the camera, lies inside the
//! image and (optionally) is not hidden behind another box.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::boxfit::OrientedBox3D;
use crate::cluster::TrackedBox2D;
use crate::exec;
use crate::geom::{Box2D, CameraFrame, CameraIntrinsics, FrameSet, Pixel, Point3, Pose};
use crate::triangulate::ObservationTrack;

use super::scene::{SceneBundle, Truth, TruthObject, TruthPoint, TruthState};
use super::PipelineError;

const MIN_OBS_DEPTH: f64 = 1.0;
const MAX_PLACEMENT_TRIES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub n_objects: usize,
    pub n_frames: usize,
    /// Fraction of objects that move.
    pub moving_fraction: f64,
    /// Speed range of moving objects, meters per frame.
    pub moving_speed: (f64, f64),
    /// Camera speed, meters per frame.
    pub camera_speed: f64,
    /// Heading change per meter of path.
    pub path_curvature: f64,
    pub camera_height: f64,
    pub focal_px: f64,
    pub image_width: u32,
    pub image_height: u32,
    /// Mean (l, w, h) of objects, meters.
    pub size_mean: [f64; 3],
    pub size_sigma: [f64; 3],
    /// Surface sampling pitch, meters.
    pub point_spacing: f64,
    /// In-face jitter of interior surface samples, meters.
    pub point_jitter: f64,
    /// Gaussian pixel noise, standard deviation in pixels.
    pub pixel_noise: f64,
    pub occlusion: bool,
    /// Minimum gap between static footprints, meters.
    pub min_separation: f64,
    /// Lateral distance range of static object centers from the path.
    pub lateral_range: (f64, f64),
    /// Pitch of the ground keypoint grid; 0 disables ground points.
    pub ground_spacing: f64,
    pub class_label: String,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_objects: 15,
            n_frames: 50,
            moving_fraction: 0.0,
            moving_speed: (1.0, 2.0),
            camera_speed: 1.0,
            path_curvature: 0.0,
            camera_height: 2.0,
            focal_px: 1000.0,
            image_width: 1920,
            image_height: 1280,
            size_mean: [4.5, 1.9, 1.6],
            size_sigma: [0.4, 0.1, 0.1],
            point_spacing: 0.3,
            point_jitter: 0.05,
            pixel_noise: 0.5,
            occlusion: true,
            min_separation: 2.0,
            lateral_range: (5.0, 15.0),
            ground_spacing: 1.5,
            class_label: "vehicle".into(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_objects < 1 || self.n_frames < 1 {
            return Err("n_objects and n_frames must be >= 1".into());
        }
        if !(self.pixel_noise >= 0.0) {
            return Err("pixel_noise must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.moving_fraction) {
            return Err("moving_fraction must lie in [0, 1]".into());
        }
        let (s0, s1) = self.moving_speed;
        if !(0.0 <= s0 && s0 <= s1) {
            return Err("moving_speed must satisfy 0 <= min <= max".into());
        }
        let (l0, l1) = self.lateral_range;
        if !(0.0 < l0 && l0 <= l1) {
            return Err("lateral_range must satisfy 0 < min <= max".into());
        }
        if !(self.focal_px > 0.0) || self.image_width == 0 || self.image_height == 0 {
            return Err("camera parameters must be positive".into());
        }
        if !(self.point_spacing > 0.0) || !(self.point_jitter >= 0.0) || !(self.ground_spacing >= 0.0) {
            return Err("sampling pitches must be positive".into());
        }
        if !(self.camera_height > 0.0) || !(self.camera_speed >= 0.0) || !self.path_curvature.is_finite() {
            return Err("invalid camera trajectory".into());
        }
        if self.size_mean.iter().any(|v| !(*v > 0.0)) || self.size_sigma.iter().any(|v| !(*v >= 0.0)) {
            return Err("invalid object size distribution".into());
        }
        if !(self.min_separation >= 0.0) {
            return Err("min_separation must be >= 0".into());
        }
        Ok(())
    }

    pub fn n_moving(&self) -> usize {
        (self.moving_fraction * self.n_objects as f64).round() as usize
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        let (w, h) = (self.image_width, self.image_height);
        CameraIntrinsics::new(self.focal_px, self.focal_px, f64::from(w) / 2.0, f64::from(h) / 2.0, w, h)
            .expect("validated intrinsics")
    }

    /// Ground position and heading of the camera path after `s` meters.
    pub fn path(&self, s: f64) -> ([f64; 2], f64) {
        let k = self.path_curvature;
        let heading = k * s;
        let pos = if k.abs() < 1e-12 { [s, 0.0] } else { [heading.sin() / k, (1.0 - heading.cos()) / k] };
        (pos, heading)
    }

    pub fn camera_pose(&self, frame: usize) -> Pose {
        let ([x, y], heading) = self.path(frame as f64 * self.camera_speed);
        let center = Point3::new(x, y, self.camera_height);
        let target = center + Vector3::new(heading.cos(), heading.sin(), 0.0);
        Pose::look_at(center, target).expect("horizontal view direction")
    }
}

/// Minimum distance between two convex polygons (0 when they overlap).
pub fn polygon_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    if polygons_overlap(a, b) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for (p, q) in [(a, b), (b, a)] {
        for v in p {
            for i in 0..q.len() {
                best = best.min(point_segment_distance(*v, q[i], q[(i + 1) % q.len()]));
            }
        }
    }
    best
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
}

// separating axis test over the edge normals of both polygons
fn polygons_overlap(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    for poly in [a, b] {
        for i in 0..poly.len() {
            let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
            let axis = [q[1] - p[1], p[0] - q[0]];
            let range = |s: &[[f64; 2]]| {
                s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    let d = v[0] * axis[0] + v[1] * axis[1];
                    (lo.min(d), hi.max(d))
                })
            };
            let (a0, a1) = range(a);
            let (b0, b1) = range(b);
            if a1 < b0 || b1 < a0 {
                return false;
            }
        }
    }
    true
}

/// A surface sample in object-local coordinates with its outward normal.
#[derive(Debug, Clone, Copy)]
struct SurfaceSample {
    local: Vector3<f64>,
    normal: Vector3<f64>,
}

fn grid(extent: f64, spacing: f64) -> Vec<f64> {
    let n = (extent / spacing).ceil().max(1.0) as usize;
    (0..=n).map(|i| i as f64 * extent / n as f64 - extent / 2.0).collect()
}

/// Samples the four sides and the top of an `l x w x h` box centered at the
/// origin. Shared edges are sampled once; the bottom face is skipped.
fn surface_samples(l: f64, w: f64, h: f64, cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<SurfaceSample> {
    let (xs, ys, zs) = (grid(l, cfg.point_spacing), grid(w, cfg.point_spacing), grid(h, cfg.point_spacing));
    let half = [l / 2.0, w / 2.0, h / 2.0];
    let mut raw: Vec<[f64; 3]> = Vec::new();
    for &sy in &[-half[1], half[1]] {
        for &x in &xs {
            for &z in &zs {
                raw.push([x, sy, z]);
            }
        }
    }
    for &sx in &[-half[0], half[0]] {
        for &y in &ys[1..ys.len() - 1] {
            for &z in &zs {
                raw.push([sx, y, z]);
            }
        }
    }
    for &x in &xs[1..xs.len() - 1] {
        for &y in &ys[1..ys.len() - 1] {
            raw.push([x, y, half[2]]);
        }
    }
    raw.into_iter()
        .map(|mut p| {
            let mut normal = Vector3::zeros();
            let mut on_face = [false; 3];
            for axis in 0..3 {
                if (p[axis].abs() - half[axis]).abs() < 1e-9 && !(axis == 2 && p[2] < 0.0) {
                    normal[axis] = p[axis].signum();
                    on_face[axis] = true;
                }
            }
            // jitter only within the face plane and away from edges
            if cfg.point_jitter > 0.0 && on_face.iter().filter(|f| **f).count() == 1 {
                for axis in 0..3 {
                    if !on_face[axis] && (p[axis].abs() - half[axis]).abs() > 1e-9 {
                        let j = rng.random_range(-cfg.point_jitter..=cfg.point_jitter);
                        p[axis] = (p[axis] + j).clamp(-half[axis] + 1e-6, half[axis] - 1e-6);
                    }
                }
            }
            SurfaceSample { local: Vector3::new(p[0], p[1], p[2]), normal }
        })
        .collect()
}

#[derive(Debug, Clone)]
struct SimObject {
    track_id: u64,
    l: f64,
    w: f64,
    h: f64,
    /// Center and yaw per frame (one entry for static objects).
    states: Vec<(Point3, f64)>,
    moving: bool,
}

impl SimObject {
    fn state(&self, frame: usize) -> (Point3, f64) {
        if self.moving { self.states[frame] } else { self.states[0] }
    }

    fn box_at(&self, frame: usize) -> OrientedBox3D {
        let (c, yaw) = self.state(frame);
        OrientedBox3D::new(c, self.l, self.w, self.h, yaw)
    }

    fn to_world(&self, frame: usize, local: &Vector3<f64>) -> Point3 {
        let (c, yaw) = self.state(frame);
        let (s, co) = yaw.sin_cos();
        Point3::new(c.x + co * local.x - s * local.y, c.y + s * local.x + co * local.y, c.z + local.z)
    }

    fn normal_to_world(&self, frame: usize, n: &Vector3<f64>) -> Vector3<f64> {
        let (_, yaw) = self.state(frame);
        let (s, co) = yaw.sin_cos();
        Vector3::new(co * n.x - s * n.y, s * n.x + co * n.y, n.z)
    }
}

/// True when the open segment from `from` to `to` passes through `b`.
fn segment_hits_box(from: &Point3, to: &Point3, b: &OrientedBox3D) -> bool {
    let p = b.to_local(from);
    let q = b.to_local(to);
    let d = q - p;
    let half = [0.5 * b.l, 0.5 * b.w, 0.5 * b.h];
    let (mut t0, mut t1): (f64, f64) = (1e-9, 1.0 - 1e-9);
    for axis in 0..3 {
        if d[axis].abs() < 1e-15 {
            if p[axis].abs() > half[axis] {
                return false;
            }
            continue;
        }
        let a = (-half[axis] - p[axis]) / d[axis];
        let c = (half[axis] - p[axis]) / d[axis];
        t0 = t0.max(a.min(c));
        t1 = t1.min(a.max(c));
        if t0 > t1 {
            return false;
        }
    }
    true
}

enum Owner {
    Object(usize),
    Ground,
}

struct ScenePoint {
    owner: Owner,
    sample: SurfaceSample,
}

fn sample_size(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        let v = if cfg.size_sigma[i] > 0.0 {
            Normal::new(cfg.size_mean[i], cfg.size_sigma[i]).expect("valid sigma").sample(rng)
        } else {
            cfg.size_mean[i]
        };
        out[i] = v.clamp(0.5 * cfg.size_mean[i], 1.5 * cfg.size_mean[i]);
    }
    out
}

fn place_objects(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<Vec<SimObject>, PipelineError> {
    let n_moving = cfg.n_moving();
    let n_static = cfg.n_objects - n_moving;
    let travel = cfg.n_frames.saturating_sub(1) as f64 * cfg.camera_speed;
    let mut objects: Vec<SimObject> = Vec::with_capacity(cfg.n_objects);
    let mut footprints: Vec<[[f64; 2]; 4]> = Vec::new();
    for i in 0..n_static {
        let [l, w, h] = sample_size(cfg, rng);
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let s = rng.random_range(10.0..travel + 40.0);
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let lateral = side * rng.random_range(cfg.lateral_range.0..=cfg.lateral_range.1);
            let ([px, py], heading) = cfg.path(s);
            let center = Point3::new(px - lateral * heading.sin(), py + lateral * heading.cos(), h / 2.0);
            let turn = if rng.random_bool(0.25) { FRAC_PI_2 } else { 0.0 };
            let yaw = (heading + turn + rng.random_range(-0.5..0.5)).rem_euclid(2.0 * PI);
            let b = OrientedBox3D::new(center, l, w, h, yaw);
            let fp = b.bev_corners();
            if footprints.iter().all(|o| polygon_distance(&fp, o) >= cfg.min_separation) {
                placed = Some((center, yaw, fp));
                break;
            }
        }
        let (center, yaw, fp) = placed
            .ok_or_else(|| PipelineError::Config(format!("could not place {n_static} separated static objects")))?;
        footprints.push(fp);
        objects.push(SimObject { track_id: i as u64 + 1, l, w, h, states: vec![(center, yaw)], moving: false });
    }
    let mid = cfg.n_frames / 2;
    for i in n_static..cfg.n_objects {
        let [l, w, h] = sample_size(cfg, rng);
        let ahead = rng.random_range(12.0..35.0);
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let lateral = side * rng.random_range(3.0..10.0);
        let ([px, py], heading) = cfg.path(mid as f64 * cfg.camera_speed + ahead);
        let mid_center = [px - lateral * heading.sin(), py + lateral * heading.cos()];
        let direction = rng.random_range(0.0..2.0 * PI);
        let speed = rng.random_range(cfg.moving_speed.0..=cfg.moving_speed.1);
        let states = (0..cfg.n_frames)
            .map(|f| {
                let dt = f as f64 - mid as f64;
                let c = Point3::new(
                    mid_center[0] + speed * dt * direction.cos(),
                    mid_center[1] + speed * dt * direction.sin(),
                    h / 2.0,
                );
                (c, direction)
            })
            .collect();
        objects.push(SimObject { track_id: i as u64 + 1, l, w, h, states, moving: true });
    }
    Ok(objects)
}

fn ground_samples(cfg: &SimConfig, objects: &[SimObject]) -> Vec<SurfaceSample> {
    if cfg.ground_spacing <= 0.0 {
        return Vec::new();
    }
    let margin = 1.5;
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for f in 0..cfg.n_frames {
        let ([x, y], _) = cfg.path(f as f64 * cfg.camera_speed);
        xs.push(x);
        ys.push(y);
    }
    let statics: Vec<&SimObject> = objects.iter().filter(|o| !o.moving).collect();
    for o in &statics {
        xs.push(o.states[0].0.x);
        ys.push(o.states[0].0.y);
    }
    let pad = 10.0;
    let (x0, x1) = (xs.iter().copied().fold(f64::INFINITY, f64::min) - pad, xs.iter().copied().fold(f64::NEG_INFINITY, f64::max) + pad);
    let (y0, y1) = (ys.iter().copied().fold(f64::INFINITY, f64::min) - pad, ys.iter().copied().fold(f64::NEG_INFINITY, f64::max) + pad);
    let footprints: Vec<[[f64; 2]; 4]> = statics.iter().map(|o| o.box_at(0).bev_corners()).collect();
    let mut out = Vec::new();
    let (nx, ny) = (((x1 - x0) / cfg.ground_spacing) as usize, ((y1 - y0) / cfg.ground_spacing) as usize);
    for i in 0..=nx {
        for j in 0..=ny {
            let p = [x0 + i as f64 * cfg.ground_spacing, y0 + j as f64 * cfg.ground_spacing];
            if footprints.iter().all(|fp| polygon_distance(&[p], fp) > margin) {
                out.push(SurfaceSample { local: Vector3::new(p[0], p[1], 0.0), normal: Vector3::z() });
            }
        }
    }
    out
}

/// Builds a scene. Deterministic in `cfg` (including `cfg.seed`).
pub fn simulate(cfg: &SimConfig) -> Result<SceneBundle, PipelineError> {
    cfg.validate().map_err(PipelineError::Config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.intrinsics();
    let frames: Vec<CameraFrame> = (0..cfg.n_frames)
        .map(|f| CameraFrame { frame_id: f as u32, intrinsics: k, pose: cfg.camera_pose(f) })
        .collect();
    let objects = place_objects(cfg, &mut rng)?;

    let mut points: Vec<ScenePoint> = Vec::new();
    for (i, o) in objects.iter().enumerate() {
        for sample in surface_samples(o.l, o.w, o.h, cfg, &mut rng) {
            points.push(ScenePoint { owner: Owner::Object(i), sample });
        }
    }
    for sample in ground_samples(cfg, &objects) {
        points.push(ScenePoint { owner: Owner::Ground, sample });
    }

    let boxes_per_frame: Vec<Vec<OrientedBox3D>> =
        (0..cfg.n_frames).map(|f| objects.iter().map(|o| o.box_at(f)).collect()).collect();

    // noiseless visible projections, computed independently per point
    let visible: Vec<Vec<(u32, Pixel)>> = exec::map(&points, |sp| {
        let mut obs = Vec::new();
        for frame in &frames {
            let f = frame.frame_id as usize;
            let (world, normal, own) = match sp.owner {
                Owner::Object(i) => (
                    objects[i].to_world(f, &sp.sample.local),
                    objects[i].normal_to_world(f, &sp.sample.normal),
                    Some(i),
                ),
                Owner::Ground => (Point3::from(sp.sample.local), sp.sample.normal, None),
            };
            let cam = frame.pose.center();
            if (cam - world).dot(&normal) <= 0.0 || frame.depth_of(&world) < MIN_OBS_DEPTH {
                continue;
            }
            let Ok(px) = frame.project(&world) else { continue };
            if !k.contains(px) {
                continue;
            }
            if cfg.occlusion
                && boxes_per_frame[f]
                    .iter()
                    .enumerate()
                    .any(|(j, b)| Some(j) != own && segment_hits_box(&cam, &world, b))
            {
                continue;
            }
            obs.push((frame.frame_id, px));
        }
        obs
    });

    let noise = (cfg.pixel_noise > 0.0).then(|| Normal::new(0.0, cfg.pixel_noise).expect("valid sigma"));
    let mut obs_tracks = Vec::new();
    let mut truth_points = Vec::new();
    let mut next_id = 1u64;
    for (sp, obs) in points.iter().zip(visible) {
        if obs.len() < 2 {
            continue;
        }
        let point_id = next_id;
        next_id += 1;
        let observations = obs
            .into_iter()
            .map(|(fid, px)| match &noise {
                Some(n) => (fid, Pixel::new(px.u + n.sample(&mut rng), px.v + n.sample(&mut rng))),
                None => (fid, px),
            })
            .collect();
        obs_tracks.push(ObservationTrack { point_id, observations });
        let (object_id, position) = match sp.owner {
            Owner::Object(i) => (Some(objects[i].track_id), objects[i].to_world(0, &sp.sample.local)),
            Owner::Ground => (None, Point3::from(sp.sample.local)),
        };
        truth_points.push(TruthPoint { point_id, object_id, position });
    }

    let mut tracks2d = Vec::new();
    for frame in &frames {
        let f = frame.frame_id as usize;
        for o in &objects {
            if let Some(bbox) = image_box(frame, &o.box_at(f)) {
                tracks2d.push(TrackedBox2D {
                    track_id: o.track_id,
                    frame_id: frame.frame_id,
                    bbox,
                    class_label: cfg.class_label.clone(),
                });
            }
        }
    }

    let truth_objects = objects
        .iter()
        .map(|o| TruthObject {
            track_id: o.track_id,
            class_label: cfg.class_label.clone(),
            moving: o.moving,
            l: o.l,
            w: o.w,
            h: o.h,
            states: o
                .states
                .iter()
                .enumerate()
                .map(|(f, (c, yaw))| TruthState { frame_id: f as u32, center: *c, yaw: *yaw })
                .collect(),
        })
        .collect();

    Ok(SceneBundle {
        frames: FrameSet::new(frames).expect("unique frame ids"),
        tracks2d,
        obs_tracks,
        truth: Some(Truth { objects: truth_objects, points: truth_points }),
    })
}

/// Projection of all eight corners, clipped to the image. `None` when a corner
/// is behind the camera or the clipped box is empty.
pub fn image_box(frame: &CameraFrame, b: &OrientedBox3D) -> Option<Box2D> {
    let (mut u0, mut v0, mut u1, mut v1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in b.corners() {
        let px = frame.project(&c).ok()?;
        u0 = u0.min(px.u);
        v0 = v0.min(px.v);
        u1 = u1.max(px.u);
        v1 = v1.max(px.v);
    }
    let k = &frame.intrinsics;
    let (w, h) = (f64::from(k.width), f64::from(k.height));
    Box2D::new(u0.clamp(0.0, w), v0.clamp(0.0, h), u1.clamp(0.0, w), v1.clamp(0.0, h)).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig { n_objects: 4, n_frames: 12, ..SimConfig::default() }
    }

    #[test]
    fn deterministic_by_seed() {
        let a = simulate(&small()).unwrap();
        let b = simulate(&small()).unwrap();
        assert_eq!(a, b);
        let c = simulate(&SimConfig { seed: 9, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bundle_is_consistent() {
        let s = simulate(&small()).unwrap();
        s.validate().unwrap();
        assert_eq!(s.track_ids().len(), 4);
        assert!(s.obs_tracks.iter().all(|t| t.observations.len() >= 2));
    }

    #[test]
    fn noiseless_observations_are_exact_projections() {
        let cfg = SimConfig { pixel_noise: 0.0, ..small() };
        let s = simulate(&cfg).unwrap();
        let truth = s.truth.as_ref().unwrap();
        for (t, p) in s.obs_tracks.iter().zip(&truth.points) {
            for (fid, px) in &t.observations {
                let q = s.frames.get(*fid).unwrap().project(&p.position).unwrap();
                assert!((q.u - px.u).abs() < 1e-9 && (q.v - px.v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn static_objects_are_separated() {
        let cfg = SimConfig { n_objects: 20, ..small() };
        let s = simulate(&cfg).unwrap();
        let fps: Vec<_> = s.truth.unwrap().objects.iter().map(|o| o.box_at(0).unwrap().bev_corners()).collect();
        for i in 0..fps.len() {
            for j in i + 1..fps.len() {
                assert!(polygon_distance(&fps[i], &fps[j]) >= 2.0);
            }
        }
    }

    #[test]
    fn polygon_distance_cases() {
        let sq = |x: f64| [[x, 0.0], [x + 1.0, 0.0], [x + 1.0, 1.0], [x, 1.0]];
        assert_eq!(polygon_distance(&sq(0.0), &sq(0.5)), 0.0);
        assert!((polygon_distance(&sq(0.0), &sq(3.0)) - 2.0).abs() < 1e-12);
        assert!((polygon_distance(&[[2.0, 2.0]], &sq(0.0)) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn segment_box_occlusion() {
        let b = OrientedBox3D::new(Point3::new(5.0, 0.0, 1.0), 2.0, 2.0, 2.0, 0.3);
        assert!(segment_hits_box(&Point3::new(0.0, 0.0, 1.0), &Point3::new(10.0, 0.0, 1.0), &b));
        assert!(!segment_hits_box(&Point3::new(0.0, 3.0, 1.0), &Point3::new(10.0, 3.0, 1.0), &b));
        assert!(!segment_hits_box(&Point3::new(0.0, 0.0, 1.0), &Point3::new(2.0, 0.0, 1.0), &b));
    }

    #[test]
    fn moving_objects_translate() {
        let cfg = SimConfig { moving_fraction: 0.5, ..small() };
        let s = simulate(&cfg).unwrap();
        let truth = s.truth.unwrap();
        let moving: Vec<_> = truth.objects.iter().filter(|o| o.moving).collect();
        assert_eq!(moving.len(), 2);
        for o in moving {
            let a = o.box_at(0).unwrap().center;
            let b = o.box_at(1).unwrap().center;
            assert!((a - b).norm() >= 1.0 - 1e-12);
        }
    }
}
