//! Rigid-transform algebra.
//!
//! Rotations are stored as 3×3 matrices; quaternions only appear at I/O
//! boundaries (TUM trajectories, manifests).

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};
use thiserror::Error;

pub type Point3 = Vector3<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("quaternion has zero norm")]
    ZeroQuaternion,
    #[error("rotation matrix is not orthonormal (deviation {0:e})")]
    NotOrthonormal(f64),
}

/// Rigid SE(3) transform `p ↦ R·p + t`.
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
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, checking that `rotation` is a proper rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let dev = orthonormality_error(&rotation);
        if dev >= 1e-9 || rotation.determinant() <= 0.0 {
            return Err(GeometryError::NotOrthonormal(dev));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized), no translation.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle);
        Self {
            rotation: *rot.matrix(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), angle)
    }

    /// Exponential map of a twist `(ω, v)` applied as `Exp(ω) · p + v`.
    ///
    /// This is the small-angle update used by the registration solver, not
    /// the full SE(3) exponential (translation is not coupled through V(ω)).
    pub fn from_rotation_vector(omega: &Vector3<f64>, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::new(*omega);
        Self {
            rotation: *rot.matrix(),
            translation,
        }
    }

    pub fn from_quaternion(q: Quaternion, translation: Vector3<f64>) -> Self {
        let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q.w, q.x, q.y, q.z));
        Self {
            rotation: *uq.to_rotation_matrix().matrix(),
            translation,
        }
    }

    pub fn quaternion(&self) -> Quaternion {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        let uq = UnitQuaternion::from_rotation_matrix(&rot);
        Quaternion {
            x: uq.i,
            y: uq.j,
            z: uq.k,
            w: uq.w,
        }
    }

    /// `[Rᵀ, −Rᵀt]`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Homogeneous product `self · other` (apply `other` first).
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    pub fn transform_points(&self, pts: &[Point3]) -> Vec<Point3> {
        pts.iter().map(|p| self.transform_point(p)).collect()
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Rotation angle of this pose's rotation, in `[0, π]`.
    pub fn angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    /// Re-orthonormalizes the rotation via SVD projection onto SO(3).
    pub fn renormalized(&self) -> Self {
        let svd = self.rotation.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Self {
            rotation: r,
            translation: self.translation,
        }
    }

    pub fn is_valid(&self) -> bool {
        orthonormality_error(&self.rotation) < 1e-9
            && self.rotation.determinant() > 0.0
            && self.translation.iter().all(|v| v.is_finite())
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

/// `‖RᵀR − I‖∞` (max absolute entry).
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).abs().max()
}

/// `θ = arccos(clamp((tr R − 1)/2, −1, 1))`.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Unit quaternion in TUM component order `(qx, qy, qz, qw)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
}

impl Quaternion {
    pub fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            z: 0.0,
            w: 1.0,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z + self.w * self.w).sqrt()
    }

    pub fn normalized(&self) -> Result<Self, GeometryError> {
        let n = self.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(GeometryError::ZeroQuaternion);
        }
        Ok(Self {
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
            w: self.w / n,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn approx_pose(a: &Pose, b: &Pose, tol: f64) -> bool {
        (a.rotation - b.rotation).abs().max() < tol && (a.translation - b.translation).norm() < tol
    }

    #[test]
    fn invert_identity() {
        assert_eq!(Pose::identity().inverse(), Pose::identity());
    }

    #[test]
    fn invert_pure_translation() {
        let t = Pose::from_translation(Vector3::new(1.0, 2.0, 3.0));
        let inv = t.inverse();
        assert_eq!(inv.rotation, Matrix3::identity());
        assert_eq!(inv.translation, Vector3::new(-1.0, -2.0, -3.0));
    }

    #[test]
    fn invert_rotation_is_transpose() {
        let inv = Pose::rot_z(FRAC_PI_2).inverse();
        assert!(approx_pose(&inv, &Pose::rot_z(-FRAC_PI_2), 1e-12));
        assert!(approx_pose(
            &inv.compose(&Pose::rot_z(FRAC_PI_2)),
            &Pose::identity(),
            1e-12
        ));
    }

    #[test]
    fn compose_matches_homogeneous_product() {
        let a = Pose::from_translation(Vector3::new(1.0, 2.0, 3.0));
        let b = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0)).inverse();
        let c = a.compose(&b);
        assert!(approx_pose(
            &c,
            &Pose::from_translation(Vector3::new(0.0, 2.0, 3.0)),
            1e-12
        ));
        assert_eq!(Pose::identity().compose(&a), a);

        let p = Pose::from_axis_angle(&Vector3::new(1.0, 2.0, 0.5), 0.7)
            .compose(&Pose::from_translation(Vector3::new(0.3, -1.0, 2.0)));
        let q = Pose::rot_z(-1.1).compose(&Pose::from_translation(Vector3::new(4.0, 0.0, -2.0)));
        let m = p.to_homogeneous() * q.to_homogeneous();
        assert!((p.compose(&q).to_homogeneous() - m).abs().max() < 1e-12);
    }

    #[test]
    fn degenerate_relative_transform_with_identity_reference() {
        // T_AW = identity  ⇒  T_BW · T_AW⁻¹ = T_BW
        let t_bw = Pose::from_axis_angle(&Vector3::new(0.0, 1.0, 1.0), 0.4)
            .compose(&Pose::from_translation(Vector3::new(0.5, 0.1, -0.2)));
        let t_aw = Pose::identity();
        assert!(approx_pose(&t_bw.compose(&t_aw.inverse()), &t_bw, 1e-15));
    }

    #[test]
    fn transform_points_examples() {
        let origin = Point3::zeros();
        assert_eq!(Pose::identity().transform_points(&[origin]), vec![origin]);

        let shift = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let out = shift.transform_points(&[origin, Point3::new(0.0, 1.0, 0.0)]);
        assert_eq!(out, vec![Point3::new(1.0, 0.0, 0.0), Point3::new(1.0, 1.0, 0.0)]);

        let out = Pose::rot_z(FRAC_PI_2).transform_points(&[Point3::new(1.0, 0.0, 0.0)]);
        assert!((out[0] - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn rotation_angle_examples() {
        assert_eq!(rotation_angle(&Matrix3::identity()), 0.0);
        assert!((rotation_angle(&Pose::rot_z(FRAC_PI_2).rotation) - FRAC_PI_2).abs() < 1e-12);
        assert!((rotation_angle(&Pose::rot_z(PI).rotation) - PI).abs() < 1e-9);
    }

    #[test]
    fn quaternion_round_trip() {
        let p = Pose::from_axis_angle(&Vector3::new(0.2, -0.4, 1.0), 2.5);
        let q = p.quaternion();
        assert!((q.norm() - 1.0).abs() < 1e-12);
        let back = Pose::from_quaternion(q, Vector3::zeros());
        assert!(approx_pose(&p, &back, 1e-12));
    }

    #[test]
    fn new_rejects_reflection() {
        let mut m = Matrix3::identity();
        m[(2, 2)] = -1.0;
        assert!(Pose::new(m, Vector3::zeros()).is_err());
        assert!(Pose::new(Matrix3::identity() * 1.1, Vector3::zeros()).is_err());
    }

    #[test]
    fn zero_quaternion_rejected() {
        let q = Quaternion {
            x: 0.0,
            y: 0.0,
            z: 0.0,
            w: 0.0,
        };
        assert_eq!(q.normalized(), Err(GeometryError::ZeroQuaternion));
    }
}
