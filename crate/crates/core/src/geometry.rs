//! Pinhole camera model and rigid camera-to-world poses.
//!
//! Conventions used throughout the crate:
//! - poses map camera coordinates to world coordinates,
//! - the camera looks down +Z, with +X to the right and +Y down,
//! - the pixel origin is the top-left corner and integer pixel `(i, j)`
//!   has its center at `(i + 0.5, j + 0.5)`.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("invalid depth {0}: must be > 0")]
    InvalidDepth(f64),
    #[error("rotation is not orthonormal (max |RᵀR - I| = {0:e})")]
    NotOrthonormal(f64),
    #[error("rotation has determinant {0}, expected +1")]
    NotProperRotation(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("expected 12 pose values, got {0}")]
    PoseArity(usize),
    #[error("pose contains a non-finite value")]
    NonFinite,
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let intr = Self { fx, fy, cx, cy, width, height };
        intr.validate()?;
        Ok(intr)
    }

    /// Centered principal point with equal focal lengths.
    pub fn centered(focal: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    /// Square pixels with the given horizontal field of view in degrees.
    pub fn from_fov(hfov_deg: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let focal = width as f64 / 2.0 / (hfov_deg.to_radians() / 2.0).tan();
        Self::centered(focal, width, height)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::InvalidIntrinsics("non-finite parameter".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics("zero image size".into()));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Intrinsics of an image downsampled by an integer factor, with pixel
    /// centers kept consistent (focal lengths and principal point divide by
    /// the factor).
    pub fn downscaled(&self, factor: u32) -> Self {
        let f = factor as f64;
        Self {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: self.cx / f,
            cy: self.cy / f,
            width: self.width / factor,
            height: self.height / factor,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    /// Builds a pose, checking that `rotation` is a proper rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if err > ORTHONORMAL_TOL {
            return Err(GeometryError::NotOrthonormal(err));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeometryError::NotProperRotation(det));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::new(x, y, z) }
    }

    /// Rotation about the camera/world Y axis (yaw; positive turns +Z toward +X).
    pub fn from_yaw(yaw_rad: f64, translation: Vector3<f64>) -> Self {
        let (s, c) = yaw_rad.sin_cos();
        let rotation = Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c);
        Self { rotation, translation }
    }

    /// Camera at `eye` looking at `target`, with world `up` used to fix roll.
    /// Since the camera's +Y points down in the image, `up` maps to −Y.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self, GeometryError> {
        let forward = (target - eye).try_normalize(1e-12).ok_or(GeometryError::NonFinite)?;
        let right = forward.cross(&up).try_normalize(1e-12).ok_or(GeometryError::NonFinite)?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        Self::new(rotation, eye)
    }

    /// Row-major 3×4 `[R | t]`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [r[(0, 0)], r[(0, 1)], r[(0, 2)], t[0], r[(1, 0)], r[(1, 1)], r[(1, 2)], t[1], r[(2, 0)], r[(2, 1)], r[(2, 2)], t[2]]
    }

    pub fn from_row_major(values: &[f64]) -> Result<Self, GeometryError> {
        if values.len() != 12 {
            return Err(GeometryError::PoseArity(values.len()));
        }
        let v = values;
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let translation = Vector3::new(v[3], v[7], v[11]);
        Self::new(rotation, translation)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Self {
        Self { rotation: self.rotation * other.rotation, translation: self.rotation * other.translation + self.translation }
    }

    pub fn world_to_camera(&self, x_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (x_world - self.translation)
    }

    pub fn camera_to_world(&self, x_cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x_cam + self.translation
    }

    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_row_major().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(deserializer)?;
        Pose::from_row_major(&values).map_err(serde::de::Error::custom)
    }
}

/// Continuous pixel coordinates plus camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Projection {
    pub fn in_image(&self, intr: &Intrinsics) -> bool {
        self.u >= 0.0 && self.v >= 0.0 && self.u < intr.width as f64 && self.v < intr.height as f64
    }
}

/// Projects a world point; the result may lie outside the image.
pub fn project_point(pose: &Pose, intr: &Intrinsics, x_world: &Vector3<f64>) -> Result<Projection, GeometryError> {
    let p = pose.world_to_camera(x_world);
    project_camera_point(intr, &p)
}

pub fn project_camera_point(intr: &Intrinsics, p: &Vector3<f64>) -> Result<Projection, GeometryError> {
    if p.z <= 0.0 {
        return Err(GeometryError::BehindCamera(p.z));
    }
    Ok(Projection { u: intr.fx * p.x / p.z + intr.cx, v: intr.fy * p.y / p.z + intr.cy, depth: p.z })
}

/// Back-projects continuous pixel `(u, v)` at camera depth `d`.
pub fn unproject_pixel(pose: &Pose, intr: &Intrinsics, u: f64, v: f64, d: f64) -> Result<Vector3<f64>, GeometryError> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(GeometryError::InvalidDepth(d));
    }
    Ok(pose.camera_to_world(&camera_ray_point(intr, u, v, d)))
}

#[inline]
pub(crate) fn camera_ray_point(intr: &Intrinsics, u: f64, v: f64, d: f64) -> Vector3<f64> {
    Vector3::new((u - intr.cx) / intr.fx * d, (v - intr.cy) / intr.fy * d, d)
}

/// Pose of `b` expressed in `a`'s frame, so that `a.compose(&relative_pose(a, b)) == b`.
pub fn relative_pose(a: &Pose, b: &Pose) -> Pose {
    a.inverse().compose(b)
}

/// Frobenius norm of the difference of the homogeneous matrices.
pub fn pose_distance(a: &Pose, b: &Pose) -> f64 {
    pose_distance_weighted(a, b, 1.0)
}

/// Like [`pose_distance`] with the rotation block scaled by `rotation_weight`.
pub fn pose_distance_weighted(a: &Pose, b: &Pose, rotation_weight: f64) -> f64 {
    let dr = (a.rotation - b.rotation).norm_squared();
    let dt = (a.translation - b.translation).norm_squared();
    (rotation_weight * rotation_weight * dr + dt).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn intr() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 64.0, 64.0, 128, 128).unwrap()
    }

    fn random_pose(rx: f64, ry: f64, rz: f64, t: [f64; 3]) -> Pose {
        let rot = nalgebra::Rotation3::from_euler_angles(rx, ry, rz).into_inner();
        Pose::new(rot, Vector3::from(t)).unwrap()
    }

    #[test]
    fn principal_ray_projects_to_principal_point() {
        let p = project_point(&Pose::identity(), &intr(), &Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!((p.u, p.v, p.depth), (64.0, 64.0, 2.0));
    }

    #[test]
    fn offset_point_projection() {
        let p = project_point(&Pose::identity(), &intr(), &Vector3::new(0.5, 0.0, 2.0)).unwrap();
        assert_eq!((p.u, p.v, p.depth), (89.0, 64.0, 2.0));
    }

    #[test]
    fn translated_camera_sees_larger_depth() {
        let pose = Pose::from_translation(0.0, 0.0, -1.0);
        let p = project_point(&pose, &intr(), &Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!(p.depth, 3.0);
    }

    #[test]
    fn behind_camera_is_an_error_but_out_of_bounds_is_not() {
        let err = project_point(&Pose::identity(), &intr(), &Vector3::new(0.0, 0.0, -1.0));
        assert!(matches!(err, Err(GeometryError::BehindCamera(_))));
        let far_side = project_point(&Pose::identity(), &intr(), &Vector3::new(10.0, 0.0, 1.0)).unwrap();
        assert!(!far_side.in_image(&intr()));
    }

    #[test]
    fn unproject_inverts_examples() {
        let x = unproject_pixel(&Pose::identity(), &intr(), 64.0, 64.0, 2.0).unwrap();
        assert_eq!(x, Vector3::new(0.0, 0.0, 2.0));
        let x = unproject_pixel(&Pose::identity(), &intr(), 89.0, 64.0, 2.0).unwrap();
        assert!((x - Vector3::new(0.5, 0.0, 2.0)).norm() < 1e-12);
        assert!(matches!(unproject_pixel(&Pose::identity(), &intr(), 1.0, 1.0, 0.0), Err(GeometryError::InvalidDepth(_))));
    }

    #[test]
    fn relative_pose_examples() {
        let p = random_pose(0.1, -0.3, 0.7, [1.0, 2.0, 3.0]);
        let rel = relative_pose(&p, &p);
        assert!((rel.to_homogeneous() - Matrix4::identity()).abs().max() < 1e-12);

        let a = Pose::from_translation(1.0, 0.0, 0.0);
        let b = Pose::from_translation(2.0, 0.0, 0.0);
        assert_eq!(relative_pose(&a, &b).translation, Vector3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn pose_distance_examples() {
        let p = random_pose(0.4, 0.2, -0.1, [0.0, 1.0, 0.0]);
        assert_eq!(pose_distance(&p, &p), 0.0);
        let d = pose_distance(&Pose::identity(), &Pose::from_translation(3.0, 4.0, 0.0));
        assert!((d - 5.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_improper_rotations() {
        let reflection = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(Pose::new(reflection, Vector3::zeros()), Err(GeometryError::NotProperRotation(_))));
        let skew = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(Pose::new(skew, Vector3::zeros()), Err(GeometryError::NotOrthonormal(_))));
        assert!(matches!(Pose::from_row_major(&[0.0; 5]), Err(GeometryError::PoseArity(5))));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 2.0, 2.0, 4, 4).is_ok());
    }

    #[test]
    fn look_at_faces_target() {
        let pose = Pose::look_at(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0)).unwrap();
        let p = project_point(&pose, &intr(), &Vector3::zeros()).unwrap();
        assert!((p.u - 64.0).abs() < 1e-9 && (p.v - 64.0).abs() < 1e-9);
        assert!((p.depth - 1.0).abs() < 1e-12);
    }

    #[test]
    fn row_major_serialization_round_trips() {
        let p = random_pose(0.3, 0.2, 0.1, [0.5, -0.25, 3.0]);
        let json = serde_json::to_string(&p).unwrap();
        let back: Pose = serde_json::from_str(&json).unwrap();
        assert_eq!(p, back);
    }

    fn angle() -> impl Strategy<Value = f64> {
        -3.1f64..3.1
    }

    fn pose_strategy() -> impl Strategy<Value = Pose> {
        (angle(), angle(), angle(), -5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0).prop_map(|(a, b, c, x, y, z)| random_pose(a, b, c, [x, y, z]))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn unproject_project_round_trip(pose in pose_strategy(), u in 0.0f64..128.0, v in 0.0f64..128.0, d in 0.1f64..100.0) {
            let x = unproject_pixel(&pose, &intr(), u, v, d).unwrap();
            let p = project_point(&pose, &intr(), &x).unwrap();
            prop_assert!((p.u - u).abs() < 1e-5);
            prop_assert!((p.v - v).abs() < 1e-5);
            prop_assert!((p.depth - d).abs() < 1e-5);
        }

        #[test]
        fn relative_pose_composes_back(a in pose_strategy(), b in pose_strategy()) {
            let back = a.compose(&relative_pose(&a, &b));
            prop_assert!((back.to_homogeneous() - b.to_homogeneous()).abs().max() < 1e-6);
        }

        #[test]
        fn pose_distance_is_a_metric(a in pose_strategy(), b in pose_strategy(), c in pose_strategy()) {
            let ab = pose_distance(&a, &b);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, pose_distance(&b, &a));
            prop_assert!(ab <= pose_distance(&a, &c) + pose_distance(&c, &b) + 1e-12);
        }
    }
}
