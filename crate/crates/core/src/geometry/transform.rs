//! Rigid transforms on 3D space: rotation plus translation.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

/// Frobenius-norm drift from orthogonality above which a rotation matrix is
/// re-orthonormalized after composition.
const ORTHO_DRIFT_TOL: f64 = 1e-9;

/// A proper rigid motion `p -> R p + t` with `R` in SO(3).
///
/// The rotation stays within `1e-9` (Frobenius) of orthogonal: construction
/// and composition re-polish via polar decomposition when drift is detected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds from a rotation matrix and translation vector.
    ///
    /// The rotation must be a proper rotation (det > 0, near-orthogonal);
    /// small numerical drift is polished away.
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let mut t = Self {
            rotation,
            translation,
        };
        if t.ortho_drift() > ORTHO_DRIFT_TOL {
            t.rotation = nearest_rotation(&t.rotation);
        }
        assert!(
            t.rotation.determinant() > 0.0,
            "rotation part must be a proper rotation"
        );
        t
    }

    /// Rotation about the z axis by `angle` radians.
    pub fn rotation_z(angle: f64) -> Self {
        Self::from_parts(
            Rotation3::from_axis_angle(&Vector3::z_axis(), angle).into_inner(),
            Vector3::zeros(),
        )
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Exponential map: rotation vector (axis * angle) to a rotation, zero
    /// translation.
    pub fn from_rotation_vector(omega: Vector3<f64>) -> Self {
        Self::from_parts(rotation_from_vector(omega), Vector3::zeros())
    }

    /// Rotation by `angle` about `axis` through the point `center`.
    pub fn rotation_about_point(
        axis: Unit<Vector3<f64>>,
        angle: f64,
        center: Vector3<f64>,
    ) -> Self {
        let r = Rotation3::from_axis_angle(&axis, angle).into_inner();
        let t = center - r * center;
        Self::from_parts(r, t)
    }

    /// Composition: applying the result equals applying `other` then `self`.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        let rotation = self.rotation * other.rotation;
        let translation = self.rotation * other.translation + self.translation;
        let mut out = Self {
            rotation,
            translation,
        };
        if out.ortho_drift() > ORTHO_DRIFT_TOL {
            out.rotation = nearest_rotation(&out.rotation);
        }
        out
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply_point(&self, p: &nalgebra::Point3<f64>) -> nalgebra::Point3<f64> {
        nalgebra::Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Rotates a direction vector (translation ignored).
    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    fn ortho_drift(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }
}

/// Nearest proper rotation in the Frobenius sense (polar decomposition).
fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd of 3x3 always yields u");
    let v_t = svd.v_t.expect("svd of 3x3 always yields v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u_fix = u;
        u_fix.column_mut(2).neg_mut();
        r = u_fix * v_t;
    }
    r
}

/// Rodrigues formula, stable near zero angle.
pub(crate) fn rotation_from_vector(omega: Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    if theta < 1e-12 {
        let k = skew(&omega);
        return Matrix3::identity() + k + k * k * 0.5;
    }
    Rotation3::from_axis_angle(&Unit::new_normalize(omega), theta).into_inner()
}

pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
