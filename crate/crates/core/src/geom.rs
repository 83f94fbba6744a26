//! Camera model, pose algebra and the pinhole projection shared by every stage.
//!
//! Conventions: camera frame is +z forward, +x right, +y down. Poses map world
//! coordinates into the camera frame (`x_cam = R * x_world + t`). The world
//! frame itself is right-handed with z up; boxes live in its x-y plane.

use nalgebra::{Matrix3, Rotation3, Vector3};
use thiserror::Error;

pub type Point3 = nalgebra::Point3<f64>;

/// Minimum camera-frame depth accepted by [`project`].
pub const MIN_DEPTH: f64 = 1e-6;

const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not a proper orthonormal matrix")]
    InvalidRotation,
    #[error("invalid 2D box: {0}")]
    InvalidBox(String),
    #[error("duplicate frame id {0}")]
    DuplicateFrame(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeomError> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(GeomError::InvalidIntrinsics(format!("focal lengths ({fx}, {fy})")));
        }
        if !(cx >= 0.0 && cx < f64::from(width) && cy >= 0.0 && cy < f64::from(height)) {
            return Err(GeomError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// Pixel to normalized image coordinates (`K^-1 [u v 1]`).
    pub fn normalize(&self, p: Pixel) -> (f64, f64) {
        ((p.u - self.cx) / self.fx, (p.v - self.cy) / self.fy)
    }

    pub fn contains(&self, p: Pixel) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && p.u <= f64::from(self.width) && p.v <= f64::from(self.height)
    }
}

/// Rigid world-to-camera transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeomError> {
        let gram = rotation.transpose() * rotation;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        if !(ortho_err <= ORTHO_TOL) || !((rotation.determinant() - 1.0).abs() <= ORTHO_TOL) {
            return Err(GeomError::InvalidRotation);
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeomError::InvalidRotation);
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    /// Camera placed at `center` looking at `target`, with image "down"
    /// aligned as closely as possible to world -z.
    pub fn look_at(center: Point3, target: Point3) -> Result<Self, GeomError> {
        let forward = (target - center)
            .try_normalize(1e-12)
            .ok_or(GeomError::InvalidRotation)?;
        let world_down = Vector3::new(0.0, 0.0, -1.0);
        let right = world_down
            .cross(&forward)
            .try_normalize(1e-12)
            .ok_or(GeomError::InvalidRotation)?;
        let down = forward.cross(&right);
        // rows are the camera axes expressed in world coordinates
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * center.coords);
        Ok(Self { rotation, translation })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self.compose(other)` applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Camera center in world coordinates (`-R^T t`).
    pub fn center(&self) -> Point3 {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    /// Unit optical axis in world coordinates.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }
}

/// Rotation about the world z axis.
pub fn rot_z(yaw: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2D {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl Box2D {
    pub fn new(u_min: f64, v_min: f64, u_max: f64, v_max: f64) -> Result<Self, GeomError> {
        if !(u_min < u_max && v_min < v_max) {
            return Err(GeomError::InvalidBox(format!("[{u_min}, {v_min}, {u_max}, {v_max}]")));
        }
        Ok(Self { u_min, v_min, u_max, v_max })
    }

    pub fn area(&self) -> f64 {
        (self.u_max - self.u_min) * (self.v_max - self.v_min)
    }
}

/// Closed-box membership: pixels on the boundary are inside.
pub fn pixel_in_box(p: Pixel, b: &Box2D) -> bool {
    p.u >= b.u_min && p.u <= b.u_max && p.v >= b.v_min && p.v <= b.v_max
}

/// One timestamp of the video: intrinsics plus world-to-camera pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraFrame {
    pub frame_id: u32,
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
}

impl CameraFrame {
    pub fn project(&self, p: &Point3) -> Result<Pixel, GeomError> {
        project(&self.pose, p, &self.intrinsics)
    }

    pub fn depth_of(&self, p: &Point3) -> f64 {
        self.pose.transform(p).z
    }
}

/// Frames indexed by id. Construction sorts by id and rejects duplicates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameSet {
    frames: Vec<CameraFrame>,
}

impl FrameSet {
    pub fn new(mut frames: Vec<CameraFrame>) -> Result<Self, GeomError> {
        frames.sort_by_key(|f| f.frame_id);
        if let Some(w) = frames.windows(2).find(|w| w[0].frame_id == w[1].frame_id) {
            return Err(GeomError::DuplicateFrame(w[0].frame_id));
        }
        Ok(Self { frames })
    }

    pub fn get(&self, frame_id: u32) -> Option<&CameraFrame> {
        self.frames
            .binary_search_by_key(&frame_id, |f| f.frame_id)
            .ok()
            .map(|i| &self.frames[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &CameraFrame> {
        self.frames.iter()
    }

    pub fn as_slice(&self) -> &[CameraFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

pub fn project(pose: &Pose, point: &Point3, k: &CameraIntrinsics) -> Result<Pixel, GeomError> {
    let c = pose.transform(point);
    if c.z <= MIN_DEPTH {
        return Err(GeomError::BehindCamera(c.z));
    }
    Ok(Pixel { u: k.fx * c.x / c.z + k.cx, v: k.fy * c.y / c.z + k.cy })
}

/// Lifts a pixel at camera-frame depth `depth` back into the world.
pub fn backproject(pose: &Pose, pixel: Pixel, depth: f64, k: &CameraIntrinsics) -> Result<Point3, GeomError> {
    if !(depth > 0.0) {
        return Err(GeomError::NonPositiveDepth(depth));
    }
    let (xn, yn) = k.normalize(pixel);
    let cam = Vector3::new(xn * depth, yn * depth, depth);
    Ok(Point3::from(pose.rotation.transpose() * (cam - pose.translation)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;
    use proptest::prelude::*;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 960.0, 640.0, 1920, 1280).unwrap()
    }

    #[test]
    fn principal_ray_hits_principal_point() {
        let p = project(&Pose::identity(), &Point3::new(0.0, 0.0, 5.0), &k()).unwrap();
        assert_eq!(p, Pixel::new(960.0, 640.0));
        let p = project(&Pose::identity(), &Point3::new(1.0, 0.0, 5.0), &k()).unwrap();
        assert_eq!(p, Pixel::new(980.0, 640.0));
    }

    #[test]
    fn translated_pose_matches_homogeneous_pipeline() {
        // independent 4x4 homogeneous route: K_h * T * X_h
        let t = Matrix4::new(
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, -2.0, //
            0.0, 0.0, 0.0, 1.0,
        );
        let kh = Matrix4::new(
            100.0, 0.0, 960.0, 0.0, //
            0.0, 100.0, 640.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        );
        let x = kh * t * nalgebra::Vector4::new(0.5, 0.5, 4.0, 1.0);
        let oracle = Pixel::new(x[0] / x[2], x[1] / x[2]);
        assert_eq!(oracle, Pixel::new(985.0, 665.0));

        let pose = Pose::from_translation(Vector3::new(0.0, 0.0, -2.0));
        let p = project(&pose, &Point3::new(0.5, 0.5, 4.0), &k()).unwrap();
        assert!((p.u - oracle.u).abs() < 1e-12 && (p.v - oracle.v).abs() < 1e-12);

        let back = backproject(&pose, p, 2.0, &k()).unwrap();
        assert!((back - Point3::new(0.5, 0.5, 4.0)).norm() < 1e-9);
    }

    #[test]
    fn behind_camera_is_rejected() {
        let err = project(&Pose::identity(), &Point3::new(0.0, 0.0, -1.0), &k()).unwrap_err();
        assert!(matches!(err, GeomError::BehindCamera(_)));
        assert!(project(&Pose::identity(), &Point3::new(0.0, 0.0, 1e-7), &k()).is_err());
    }

    #[test]
    fn backproject_principal_point() {
        let p = backproject(&Pose::identity(), Pixel::new(960.0, 640.0), 10.0, &k()).unwrap();
        assert_eq!(p, Point3::new(0.0, 0.0, 10.0));
        assert!(matches!(
            backproject(&Pose::identity(), Pixel::new(0.0, 0.0), 0.0, &k()),
            Err(GeomError::NonPositiveDepth(_))
        ));
    }

    #[test]
    fn backproject_inverts_project_examples() {
        for pt in [Point3::new(0.0, 0.0, 5.0), Point3::new(1.0, 0.0, 5.0)] {
            let px = project(&Pose::identity(), &pt, &k()).unwrap();
            let back = backproject(&Pose::identity(), px, pt.z, &k()).unwrap();
            assert!((back - pt).norm() < 1e-9);
        }
    }

    #[test]
    fn closed_box_membership() {
        let b = Box2D::new(0.0, 0.0, 10.0, 10.0).unwrap();
        assert!(pixel_in_box(Pixel::new(5.0, 5.0), &b));
        assert!(pixel_in_box(Pixel::new(10.0, 10.0), &b));
        assert!(!pixel_in_box(Pixel::new(10.001, 5.0), &b));
        assert!(Box2D::new(1.0, 0.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn invalid_intrinsics_and_rotation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 10, 10).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 10.0, 1.0, 10, 10).is_err());
        let mut r = Matrix3::identity();
        r[(0, 0)] = -1.0;
        assert_eq!(Pose::new(r, Vector3::zeros()), Err(GeomError::InvalidRotation));
    }

    #[test]
    fn look_at_points_optical_axis_at_target() {
        let pose = Pose::look_at(Point3::new(0.0, 0.0, 1.6), Point3::new(10.0, 0.0, 1.6)).unwrap();
        let c = pose.transform(&Point3::new(10.0, 0.0, 1.6));
        assert!(c.x.abs() < 1e-12 && c.y.abs() < 1e-12 && (c.z - 10.0).abs() < 1e-12);
        // world up maps to image up (negative y)
        assert!(pose.transform(&Point3::new(10.0, 0.0, 2.6)).y < 0.0);
        // world left (+y) maps to image left (negative x)
        assert!(pose.transform(&Point3::new(10.0, 1.0, 1.6)).x < 0.0);
        assert!((pose.center() - Point3::new(0.0, 0.0, 1.6)).norm() < 1e-12);
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            -3.2f64..3.2,
            -1.5f64..1.5,
            -3.2f64..3.2,
            prop::array::uniform3(-50.0f64..50.0),
        )
            .prop_map(|(r, p, y, t)| {
                let rot = Rotation3::from_euler_angles(r, p, y);
                Pose::new(*rot.matrix(), Vector3::from(t)).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn project_backproject_round_trip(
            pose in arb_pose(),
            u in 0.0f64..1920.0,
            v in 0.0f64..1280.0,
            depth in 0.1f64..500.0,
        ) {
            let k = k();
            let px = Pixel::new(u, v);
            let world = backproject(&pose, px, depth, &k).unwrap();
            let again = project(&pose, &world, &k).unwrap();
            prop_assert!((again.u - u).abs() < 1e-9 && (again.v - v).abs() < 1e-9);
            let back = backproject(&pose, again, depth, &k).unwrap();
            prop_assert!((back - world).norm() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn composition_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose(),
                                      x in prop::array::uniform3(-577.0f64..577.0)) {
            let p = Point3::from(Vector3::from(x));
            let lhs = a.compose(&b).compose(&c).transform(&p);
            let rhs = a.transform(&b.transform(&c.transform(&p)));
            prop_assert!((lhs - rhs).norm() < 1e-12, "{}", (lhs - rhs).norm());
        }

        #[test]
        fn projection_invariant_under_common_rigid_motion(
            pose in arb_pose(), g in arb_pose(), x in prop::array::uniform3(-20.0f64..20.0)
        ) {
            let p = Point3::from(Vector3::from(x));
            // move the world by g: points p -> g p, poses T -> T g^-1
            let moved_pose = pose.compose(&g.inverse());
            let k = k();
            match (project(&pose, &p, &k), project(&moved_pose, &g.transform(&p), &k)) {
                (Ok(a), Ok(b)) => prop_assert!((a.u - b.u).abs() < 1e-6 && (a.v - b.v).abs() < 1e-6),
                (Err(_), Err(_)) => {}
                (a, b) => {
                    // depth sits on the MIN_DEPTH boundary within rounding
                    let z = pose.transform(&p).z;
                    prop_assert!((z - MIN_DEPTH).abs() < 1e-9, "{a:?} vs {b:?}");
                }
            }
        }
    }
}
