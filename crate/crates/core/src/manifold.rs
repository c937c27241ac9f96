//! Rotation, rigid-body pose and unit-vector manifolds.
//!
//! Every optimizer variable that is not Euclidean lives on one of these
//! manifolds. Updates are applied through retractions that map a small
//! tangent vector back onto the manifold:
//!
//! * poses: `T ⊕ (γ, τ) = (R·Exp(γ), r + R·τ)`
//! * unit vectors: `x ⊕ ξ = cos(‖Bξ‖)·x + sin(‖Bξ‖)·Bξ/‖Bξ‖` with a
//!   deterministic tangent basis `B` at `x`.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix3x2, Matrix4, Vector2, Vector3, Vector6};

/// Below this tangent norm the exponential and retraction maps switch to
/// their Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Cross-product matrix `[v]×`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Element of SO(3) stored as an orthonormal matrix.
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Rotation({:?})", self.0.as_slice())
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix that the caller guarantees to be a proper rotation.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Projects an arbitrary 3×3 matrix onto the closest rotation (Frobenius).
    pub fn from_matrix_orthonormalized(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Rotation(u * d * v_t)
    }

    /// Rotation about a unit axis by `angle` radians.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Self::exp(&(axis.normalize() * angle))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    /// Exponential map at the identity (Rodrigues' formula).
    pub fn exp(omega: &Vector3<f64>) -> Self {
        let theta2 = omega.norm_squared();
        let theta = theta2.sqrt();
        let k = skew(omega);
        if theta < SMALL_ANGLE {
            return Rotation(Matrix3::identity() + k + 0.5 * k * k);
        }
        let a = theta.sin() / theta;
        let b = (1.0 - theta.cos()) / theta2;
        Rotation(Matrix3::identity() + a * k + b * k * k)
    }

    /// Logarithm map; the result has norm in `[0, π]`.
    pub fn log(&self) -> Vector3<f64> {
        let r = &self.0;
        let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let w = vee(&(r - r.transpose())) * 0.5;
        let sin_theta = w.norm();
        let theta = sin_theta.atan2(cos_theta);
        if theta < SMALL_ANGLE {
            return w * (1.0 + theta * theta / 6.0);
        }
        if std::f64::consts::PI - theta < 1e-2 {
            // sin θ is too small to recover the axis from the skew part alone;
            // use the symmetric part instead: (R + Rᵀ)/2 = cos θ·I + (1 − cos θ)·aaᵀ.
            let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos_theta;
            let outer = sym / (1.0 - cos_theta);
            let i = (0..3)
                .max_by(|&a, &b| outer[(a, a)].total_cmp(&outer[(b, b)]))
                .unwrap_or(0);
            let mut axis: Vector3<f64> = outer.column(i).into();
            axis /= outer[(i, i)].max(0.0).sqrt().max(f64::MIN_POSITIVE);
            axis.normalize_mut();
            if axis.dot(&w) < 0.0 {
                axis = -axis;
            }
            return axis * theta;
        }
        w * (theta / sin_theta)
    }

    /// Rotation angle in radians, `acos((trace − 1)/2)`, evaluated through
    /// the skew part so that it stays accurate near the identity.
    pub fn angle(&self) -> f64 {
        let r = &self.0;
        let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let sin_theta = (vee(&(r - r.transpose())) * 0.5).norm();
        sin_theta.atan2(cos_theta)
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let should_be_identity = self.0 * self.0.transpose();
        (should_be_identity - Matrix3::identity()).abs().max() < tol
            && (self.0.determinant() - 1.0).abs() < tol
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

impl Mul<&Vector3<f64>> for &Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: &Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

/// Inverse of the right Jacobian of SO(3).
pub fn so3_right_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let k = skew(omega);
    if theta2 < 1e-10 {
        return Matrix3::identity() + 0.5 * k + k * k / 12.0;
    }
    let theta = theta2.sqrt();
    let coeff = 1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + 0.5 * k + coeff * k * k
}

/// Local coordinates `ζ = (γ, τ)` on SE(3).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TangentPose {
    /// Rotation coordinates, radians.
    pub rotation: Vector3<f64>,
    /// Translation coordinates in the body frame of the pose, km.
    pub translation: Vector3<f64>,
}

impl TangentPose {
    pub fn new(rotation: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            rotation: v.fixed_rows::<3>(0).into(),
            translation: v.fixed_rows::<3>(3).into(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.rotation);
        v.fixed_rows_mut::<3>(3).copy_from(&self.translation);
        v
    }
}

/// Camera-to-body rigid transform `T_BC`: `rotation` maps camera-frame
/// vectors into the body frame and `translation` is the camera centre
/// expressed in the body frame (km).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    /// `T ⊕ ζ`: rotation `R·Exp(γ)`, translation `r + R·τ`.
    pub fn retract(&self, zeta: &TangentPose) -> Pose {
        Pose {
            rotation: self.rotation * Rotation::exp(&zeta.rotation),
            translation: self.translation + self.rotation.matrix() * zeta.translation,
        }
    }

    /// Inverse of [`Pose::retract`]: the `ζ` with `self.retract(ζ) == other`.
    pub fn local(&self, other: &Pose) -> TangentPose {
        let rt = self.rotation.transpose();
        TangentPose {
            rotation: (rt * other.rotation).log(),
            translation: rt.matrix() * (other.translation - self.translation),
        }
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.translation + self.rotation.matrix() * other.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt.matrix() * self.translation),
        }
    }

    /// Maps a point from the pose's own frame into the parent frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix() * p + self.translation
    }

    /// Maps a parent-frame point into the pose's own frame.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix().tr_mul(&(p - self.translation))
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

/// Orientation and position error of an estimated pose relative to the
/// truth, taken from `T_est⁻¹·T_true`: returns (`Log` of the relative
/// rotation in radians, relative translation in km).
pub fn se3_log_error(estimate: &Pose, truth: &Pose) -> (Vector3<f64>, Vector3<f64>) {
    let rel = estimate.inverse().compose(truth);
    (rel.rotation.log(), rel.translation)
}

/// Point on the unit sphere S².
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitVector(Vector3<f64>);

impl UnitVector {
    /// Normalizes `v`; returns `None` for (near) zero or non-finite input.
    pub fn new(v: Vector3<f64>) -> Option<Self> {
        let n = v.norm();
        if !(n.is_finite() && n > 1e-300) {
            return None;
        }
        Some(UnitVector(v / n))
    }

    /// Wraps a vector the caller guarantees to be unit length.
    pub fn new_unchecked(v: Vector3<f64>) -> Self {
        UnitVector(v)
    }

    pub fn x() -> Self {
        UnitVector(Vector3::x())
    }

    pub fn y() -> Self {
        UnitVector(Vector3::y())
    }

    pub fn z() -> Self {
        UnitVector(Vector3::z())
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Vector3<f64> {
        self.0
    }

    pub fn dot(&self, other: &Vector3<f64>) -> f64 {
        self.0.dot(other)
    }

    /// Angle to another unit vector, radians in `[0, π]`.
    pub fn angle_to(&self, other: &UnitVector) -> f64 {
        self.0.dot(&other.0).clamp(-1.0, 1.0).acos()
    }

    /// Orthonormal basis of the tangent plane at this point.
    ///
    /// The standard axis least aligned with `x` is Gram–Schmidt
    /// orthogonalized against `x`; the second column is `x × b₁`. The result
    /// depends only on the bits of `x`.
    pub fn basis(&self) -> Matrix3x2<f64> {
        let x = &self.0;
        let abs = x.abs();
        let axis = if abs.x <= abs.y && abs.x <= abs.z {
            0
        } else if abs.y <= abs.z {
            1
        } else {
            2
        };
        let mut e = Vector3::zeros();
        e[axis] = 1.0;
        let b1 = (e - x * x[axis]).normalize();
        let b2 = x.cross(&b1);
        Matrix3x2::from_columns(&[b1, b2])
    }

    /// Retraction onto the sphere along the tangent direction `B·ξ`.
    pub fn retract(&self, xi: &Vector2<f64>) -> UnitVector {
        if xi.x == 0.0 && xi.y == 0.0 {
            return *self;
        }
        let v = self.basis() * xi;
        let theta = v.norm();
        let (c, s_over_theta) = if theta < SMALL_ANGLE {
            (1.0 - 0.5 * theta * theta, 1.0 - theta * theta / 6.0)
        } else {
            (theta.cos(), theta.sin() / theta)
        };
        let out = self.0 * c + v * s_over_theta;
        UnitVector(out / out.norm())
    }

    /// Inverse of [`UnitVector::retract`] for targets not antipodal to `self`.
    pub fn local(&self, other: &UnitVector) -> Vector2<f64> {
        let c = self.0.dot(&other.0).clamp(-1.0, 1.0);
        let perp = other.0 - self.0 * c;
        let s = perp.norm();
        let theta = s.atan2(c);
        let scale = if s < SMALL_ANGLE { 1.0 + theta * theta / 6.0 } else { theta / s };
        self.basis().tr_mul(&(perp * scale))
    }
}

impl std::ops::Neg for UnitVector {
    type Output = UnitVector;
    fn neg(self) -> UnitVector {
        UnitVector(-self.0)
    }
}

/// Jacobian of `v ↦ v/‖v‖`.
pub fn normalization_jacobian(v: &Vector3<f64>) -> Matrix3<f64> {
    let (x, y, z) = (v.x, v.y, v.z);
    let n2 = x * x + y * y + z * z;
    let m = Matrix3::new(
        y * y + z * z,
        -x * y,
        -x * z,
        -x * y,
        x * x + z * z,
        -y * z,
        -x * z,
        -y * z,
        x * x + y * y,
    );
    m / (n2 * n2.sqrt())
}
