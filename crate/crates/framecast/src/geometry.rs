//! Rotation-group and coordinate-conversion primitives.
//!
//! 2D rotations are parameterized by a yaw angle; 3D rotations by ZYX Euler
//! angles (yaw θ about z, pitch φ about y, roll ψ about x), composed as
//! `Q(ω) = Q_z(θ)·Q_y(φ)·Q_x(ψ)`. Angles wrap to `[-π, π)`; when an angle is
//! used as a network feature (not geometrically) it is normalized by π into
//! `[-1, 1)`.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("matrix is not a rotation: max |QᵀQ - I| = {ortho_err}, det = {det}")]
    NotARotation { ortho_err: f64, det: f64 },
    #[error("angular position for dimension {dim} needs {expected} components, got {got}")]
    BadAngularDim {
        dim: usize,
        expected: usize,
        got: usize,
    },
    #[error("block lift needs at least one block")]
    EmptyBlockLift,
    #[error("unsupported spatial dimension {0} (expected 2 or 3)")]
    BadDimension(usize),
}

pub type GeometryResult<V> = Result<V, GeometryError>;

/// Number of angular-position components for a spatial dimension: the yaw
/// angle in 2D; yaw, pitch, and roll in 3D.
pub fn angular_dim(dim: usize) -> GeometryResult<usize> {
    match dim {
        2 => Ok(1),
        3 => Ok(3),
        d => Err(GeometryError::BadDimension(d)),
    }
}

/// Wraps an angle into `[-π, π)`; π maps to -π.
pub fn wrap_angle<T: Scalar>(a: T) -> T {
    let two_pi = T::two_pi();
    let shifted = (a + T::pi()) / two_pi;
    a - two_pi * shifted.floor()
}

/// Wraps and divides by π, mapping into `[-1, 1)`.
///
/// Applied where angles enter networks as features; angles that
/// parameterize rotations stay in radians.
pub fn normalize_angle<T: Scalar>(a: T) -> T {
    wrap_angle(a) / T::pi()
}

/// Smallest signed difference `a - b` on the circle.
pub fn angle_difference<T: Scalar>(a: T, b: T) -> T {
    wrap_angle(a - b)
}

/// Small square matrix in row-major order; the container behind [`Rotation`]
/// and its block-diagonal lifts.
#[derive(Clone, Debug, PartialEq)]
pub struct SqMat<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> SqMat<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![T::zero(); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = T::one();
        }
        m
    }

    pub fn from_rows(dim: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), dim * dim, "square matrix data length");
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.dim + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.dim + c] = v;
    }

    pub fn transpose(&self) -> Self {
        let d = self.dim;
        let mut out = Self::zeros(d);
        for r in 0..d {
            for c in 0..d {
                out.data[c * d + r] = self.data[r * d + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "matrix dimension mismatch");
        let d = self.dim;
        let mut out = Self::zeros(d);
        for r in 0..d {
            for k in 0..d {
                let a = self.data[r * d + k];
                for c in 0..d {
                    out.data[r * d + c] += a * other.data[k * d + c];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.dim, "vector dimension mismatch");
        let d = self.dim;
        let mut out = vec![T::zero(); d];
        for r in 0..d {
            let mut acc = T::zero();
            for c in 0..d {
                acc += self.data[r * d + c] * v[c];
            }
            out[r] = acc;
        }
        out
    }

    /// Determinant for 2×2 and 3×3 matrices.
    pub fn det(&self) -> T {
        match self.dim {
            2 => self.get(0, 0) * self.get(1, 1) - self.get(0, 1) * self.get(1, 0),
            3 => {
                self.get(0, 0) * (self.get(1, 1) * self.get(2, 2) - self.get(1, 2) * self.get(2, 1))
                    - self.get(0, 1)
                        * (self.get(1, 0) * self.get(2, 2) - self.get(1, 2) * self.get(2, 0))
                    + self.get(0, 2)
                        * (self.get(1, 0) * self.get(2, 1) - self.get(1, 1) * self.get(2, 0))
            }
            _ => panic!("determinant implemented for dims 2 and 3"),
        }
    }

    /// Max absolute entry of `selfᵀ·self - I`.
    pub fn orthonormality_error(&self) -> T {
        let qtq = self.transpose().matmul(self);
        let mut err = T::zero();
        for r in 0..self.dim {
            for c in 0..self.dim {
                let expect = if r == c { T::one() } else { T::zero() };
                err = err.max((qtq.get(r, c) - expect).abs());
            }
        }
        err
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

/// Orthonormal rotation matrix with its block-diagonal lifts available via
/// [`block_rot`].
#[derive(Clone, Debug, PartialEq)]
pub struct Rotation<T> {
    q: SqMat<T>,
}

impl<T: Scalar> Rotation<T> {
    pub fn identity(dim: usize) -> Self {
        Self {
            q: SqMat::identity(dim),
        }
    }

    /// Wraps a matrix after validating orthonormality and unit determinant
    /// to 1e-6.
    pub fn from_matrix(q: SqMat<T>) -> GeometryResult<Self> {
        let ortho_err = q.orthonormality_error();
        let det = q.det();
        let tol = T::lit(1e-6);
        if ortho_err > tol || (det - T::one()).abs() > tol {
            return Err(GeometryError::NotARotation {
                ortho_err: ortho_err.as_f64(),
                det: det.as_f64(),
            });
        }
        Ok(Self { q })
    }

    /// Wraps a matrix that is a rotation by construction.
    pub(crate) fn from_matrix_unchecked(q: SqMat<T>) -> Self {
        Self { q }
    }

    pub fn dim(&self) -> usize {
        self.q.dim()
    }

    pub fn matrix(&self) -> &SqMat<T> {
        &self.q
    }

    pub fn inverse(&self) -> Self {
        Self {
            q: self.q.transpose(),
        }
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self {
            q: self.q.matmul(&other.q),
        }
    }

    pub fn apply(&self, v: &[T]) -> Vec<T> {
        self.q.matvec(v)
    }

    /// Applies the transpose (inverse) without materializing it.
    pub fn apply_transposed(&self, v: &[T]) -> Vec<T> {
        let d = self.q.dim();
        let mut out = vec![T::zero(); d];
        for c in 0..d {
            let mut acc = T::zero();
            for r in 0..d {
                acc += self.q.get(r, c) * v[r];
            }
            out[c] = acc;
        }
        out
    }
}

/// Planar rotation by a yaw angle.
pub fn rot2d<T: Scalar>(theta: T) -> Rotation<T> {
    let (s, c) = theta.sin_cos();
    Rotation::from_matrix_unchecked(SqMat::from_rows(2, vec![c, -s, s, c]))
}

/// Yaw angle of a 2D rotation matrix.
pub fn angle_of_rot2d<T: Scalar>(q: &SqMat<T>) -> T {
    q.get(1, 0).atan2(q.get(0, 0))
}

/// Elemental rotation about the z-axis.
pub fn rot_z<T: Scalar>(theta: T) -> SqMat<T> {
    let (s, c) = theta.sin_cos();
    let o = T::zero();
    let l = T::one();
    SqMat::from_rows(3, vec![c, -s, o, s, c, o, o, o, l])
}

/// Elemental rotation about the y-axis.
pub fn rot_y<T: Scalar>(phi: T) -> SqMat<T> {
    let (s, c) = phi.sin_cos();
    let o = T::zero();
    let l = T::one();
    SqMat::from_rows(3, vec![c, o, s, o, l, o, -s, o, c])
}

/// Elemental rotation about the x-axis.
pub fn rot_x<T: Scalar>(psi: T) -> SqMat<T> {
    let (s, c) = psi.sin_cos();
    let o = T::zero();
    let l = T::one();
    SqMat::from_rows(3, vec![l, o, o, o, c, -s, o, s, c])
}

/// 3D rotation from ZYX Euler angles `(θ yaw, φ pitch, ψ roll)`, composed as
/// the chained elemental product `Q_z(θ)·Q_y(φ)·Q_x(ψ)`.
pub fn rot3d<T: Scalar>(omega: &[T]) -> Rotation<T> {
    assert_eq!(omega.len(), 3, "3D angular position has three components");
    let q = rot_z(omega[0]).matmul(&rot_y(omega[1])).matmul(&rot_x(omega[2]));
    Rotation::from_matrix_unchecked(q)
}

/// Rotation for an angular position in either supported dimension.
pub fn rotation_from_angles<T: Scalar>(dim: usize, omega: &[T]) -> GeometryResult<Rotation<T>> {
    let adim = angular_dim(dim)?;
    if omega.len() != adim {
        return Err(GeometryError::BadAngularDim {
            dim,
            expected: adim,
            got: omega.len(),
        });
    }
    Ok(match dim {
        2 => rot2d(omega[0]),
        _ => rot3d(omega),
    })
}

/// Extent of the pitch band around ±π/2 treated as gimbal-locked.
pub const GIMBAL_BAND: f64 = 1e-9;

/// ZYX Euler angles of a validated 3D rotation matrix.
///
/// Off the gimbal band the extraction is `θ = atan2(Ω₁₀, Ω₀₀)`,
/// `φ = asin(-Ω₂₀)`, `ψ = atan2(Ω₂₁, Ω₂₂)`. At `|Ω₂₀| ≥ 1 - 1e-9` yaw and
/// roll are coupled; the convention here sets `ψ = 0` and lets
/// `θ = atan2(-Ω₀₁, Ω₁₁)` absorb the coupled angle, which reconstructs the
/// matrix exactly at the singularity.
pub fn euler_from_matrix<T: Scalar>(q: &SqMat<T>) -> GeometryResult<[T; 3]> {
    let rot = Rotation::from_matrix(q.clone())?;
    Ok(euler_from_rotation(&rot))
}

/// Euler extraction without re-validating the matrix.
pub fn euler_from_rotation<T: Scalar>(rot: &Rotation<T>) -> [T; 3] {
    let q = rot.matrix();
    debug_assert_eq!(q.dim(), 3);
    let s20 = q.get(2, 0);
    if s20.abs() >= T::one() - T::lit(GIMBAL_BAND) {
        let phi = (-s20.min(T::one()).max(-T::one())).asin();
        let theta = (-q.get(0, 1)).atan2(q.get(1, 1));
        [wrap_angle(theta), wrap_angle(phi), T::zero()]
    } else {
        let theta = q.get(1, 0).atan2(q.get(0, 0));
        let phi = (-s20).asin();
        let psi = q.get(2, 1).atan2(q.get(2, 2));
        [wrap_angle(theta), wrap_angle(phi), wrap_angle(psi)]
    }
}

/// Spherical decomposition of a 3-vector: radius, azimuth, polar angle.
///
/// `φ = acos(clamp(u_z / (ρ + 1e-8), -1, 1))`; the `ε = 1e-8` in the
/// denominator keeps the zero vector and backpropagation well behaved.
pub const SPHERICAL_EPS: f64 = 1e-8;

pub fn cart_to_spherical<T: Scalar>(u: &[T]) -> [T; 3] {
    assert_eq!(u.len(), 3, "spherical conversion takes a 3-vector");
    let rho = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    let theta = u[1].atan2(u[0]);
    let ratio = (u[2] / (rho + T::lit(SPHERICAL_EPS)))
        .max(-T::one())
        .min(T::one());
    let phi = ratio.acos();
    [rho, theta, phi]
}

/// Inverse of [`cart_to_spherical`], undoing the ε-regularized polar angle:
/// `u_z = (ρ + ε)·cos φ` (clamped to `|u_z| ≤ ρ`), with the planar radius
/// recovered as `√(ρ² - u_z²)`.
pub fn spherical_to_cart<T: Scalar>(s: &[T]) -> [T; 3] {
    assert_eq!(s.len(), 3, "spherical coordinates have three components");
    let (rho, theta, phi) = (s[0], s[1], s[2]);
    let uz = ((rho + T::lit(SPHERICAL_EPS)) * phi.cos()).max(-rho).min(rho);
    let planar_sq = (rho * rho - uz * uz).max(T::zero());
    let planar = planar_sq.sqrt();
    [planar * theta.cos(), planar * theta.sin(), uz]
}

/// Polar decomposition of a 2-vector: radius and azimuth.
pub fn cart_to_polar<T: Scalar>(u: &[T]) -> [T; 2] {
    assert_eq!(u.len(), 2, "polar conversion takes a 2-vector");
    let rho = (u[0] * u[0] + u[1] * u[1]).sqrt();
    [rho, u[1].atan2(u[0])]
}

/// Orientation proxy from a velocity vector.
///
/// 2D: yaw via `atan2`. 3D: `(θ, φ, 0)` from the spherical angles of the
/// velocity. An exactly zero velocity maps to the zero orientation.
pub fn orientation_from_velocity<T: Scalar>(u: &[T], dim: usize) -> GeometryResult<Vec<T>> {
    match dim {
        2 => {
            if u[0] == T::zero() && u[1] == T::zero() {
                return Ok(vec![T::zero()]);
            }
            Ok(vec![u[1].atan2(u[0])])
        }
        3 => {
            if u.iter().all(|&v| v == T::zero()) {
                return Ok(vec![T::zero(); 3]);
            }
            let s = cart_to_spherical(u);
            Ok(vec![wrap_angle(s[1]), wrap_angle(s[2]), T::zero()])
        }
        d => Err(GeometryError::BadDimension(d)),
    }
}

/// k-fold direct sum `Q ⊕ Q ⊕ … ⊕ Q`: a block-diagonal matrix with `k`
/// copies of the rotation along the diagonal.
pub fn block_rot<T: Scalar>(q: &SqMat<T>, k: usize) -> GeometryResult<SqMat<T>> {
    if k < 1 {
        return Err(GeometryError::EmptyBlockLift);
    }
    let d = q.dim();
    let mut out = SqMat::zeros(d * k);
    for b in 0..k {
        for r in 0..d {
            for c in 0..d {
                out.set(b * d + r, b * d + c, q.get(r, c));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_omega(rng: &mut StdRng) -> [f64; 3] {
        [
            rng.gen_range(-PI..PI),
            rng.gen_range(-FRAC_PI_2 + 0.01..FRAC_PI_2 - 0.01),
            rng.gen_range(-PI..PI),
        ]
    }

    #[test]
    fn wrap_angle_hits_spec_points() {
        assert!((wrap_angle(3.0 * PI / 2.0) - (-PI / 2.0)).abs() < 1e-15);
        assert_eq!(wrap_angle(-PI), -PI);
        assert_eq!(wrap_angle(PI), -PI);
        assert_eq!(wrap_angle(0.0), 0.0);
    }

    #[test]
    fn normalize_angle_is_wrapped_over_pi() {
        assert!((normalize_angle(3.0 * PI / 2.0) + 0.5).abs() < 1e-15);
        assert_eq!(normalize_angle(PI), -1.0);
    }

    #[test]
    fn rot2d_identity_and_quarter_turn() {
        let id = rot2d(0.0f64);
        assert_eq!(id.matrix().max_abs_diff(&SqMat::identity(2)), 0.0);
        let quarter = rot2d(FRAC_PI_2);
        let v = quarter.apply(&[1.0, 0.0]);
        assert!((v[0]).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rot2d_composition_is_angle_addition() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..100 {
            let a = rng.gen_range(-PI..PI);
            let b = rng.gen_range(-PI..PI);
            let composed = rot2d(a).compose(&rot2d(b));
            let direct = rot2d(a + b);
            assert!(composed.matrix().max_abs_diff(direct.matrix()) < 1e-12);
        }
    }

    #[test]
    fn simplified_2d_path_equals_matrix_path() {
        // Rotating θ_j's matrix form by Qᵀ(θ_i) and extracting the angle is
        // the same as wrapped angle subtraction.
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..200 {
            let ti = rng.gen_range(-PI..PI);
            let tj = rng.gen_range(-PI..PI);
            let rotated = rot2d(-ti).compose(&rot2d(tj));
            let via_matrix = angle_of_rot2d(rotated.matrix());
            let via_subtraction = wrap_angle(tj - ti);
            assert!(
                (wrap_angle(via_matrix - via_subtraction)).abs() < 1e-12,
                "{via_matrix} vs {via_subtraction}"
            );
        }
    }

    #[test]
    fn rot3d_zero_is_identity_and_pure_yaw_is_z_rotation() {
        let id = rot3d(&[0.0f64, 0.0, 0.0]);
        assert_eq!(id.matrix().max_abs_diff(&SqMat::identity(3)), 0.0);
        let yaw = rot3d(&[FRAC_PI_2, 0.0, 0.0]);
        assert!(yaw.matrix().max_abs_diff(&rot_z(FRAC_PI_2)) < 1e-15);
    }

    /// Closed-form ZYX matrix written out entry by entry; independent of the
    /// elemental-product implementation path.
    fn closed_form_zyx(omega: &[f64; 3]) -> SqMat<f64> {
        let (st, ct) = omega[0].sin_cos();
        let (sp, cp) = omega[1].sin_cos();
        let (ss, cs) = omega[2].sin_cos();
        SqMat::from_rows(
            3,
            vec![
                cp * ct,
                ss * sp * ct - cs * st,
                cs * sp * ct + ss * st,
                cp * st,
                ss * sp * st + cs * ct,
                cs * sp * st - ss * ct,
                -sp,
                ss * cp,
                cs * cp,
            ],
        )
    }

    #[test]
    fn rot3d_matches_closed_form_matrix() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..200 {
            let omega = [
                rng.gen_range(-PI..PI),
                rng.gen_range(-PI..PI),
                rng.gen_range(-PI..PI),
            ];
            let product = rot3d(&omega);
            let closed = closed_form_zyx(&omega);
            assert!(product.matrix().max_abs_diff(&closed) < 1e-12);
        }
    }

    #[test]
    fn rotations_are_orthonormal_with_unit_determinant() {
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..1000 {
            let q2 = rot2d(rng.gen_range(-10.0..10.0f64));
            assert!(q2.matrix().orthonormality_error() < 1e-10);
            assert!((q2.matrix().det() - 1.0).abs() < 1e-10);
            let omega = [
                rng.gen_range(-PI..PI),
                rng.gen_range(-PI..PI),
                rng.gen_range(-PI..PI),
            ];
            let q3 = rot3d(&omega);
            assert!(q3.matrix().orthonormality_error() < 1e-10);
            assert!((q3.matrix().det() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn euler_identity_is_zero() {
        let e = euler_from_matrix(&SqMat::<f64>::identity(3)).unwrap();
        assert_eq!(e, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn euler_round_trip_off_gimbal_band() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..1000 {
            let omega = random_omega(&mut rng);
            let q = rot3d(&omega);
            let back = euler_from_rotation(&q);
            for (a, b) in omega.iter().zip(back.iter()) {
                assert!(
                    angle_difference(*a, *b).abs() < 1e-9,
                    "omega {omega:?} came back as {back:?}"
                );
            }
        }
    }

    #[test]
    fn euler_gimbal_convention_reconstructs_matrix() {
        for (theta, psi, phi) in [
            (0.3, -0.8, FRAC_PI_2),
            (-2.0, 1.1, FRAC_PI_2),
            (0.3, -0.8, -FRAC_PI_2),
            (2.4, 0.6, -FRAC_PI_2),
        ] {
            let q = rot3d(&[theta, phi, psi]);
            let e = euler_from_rotation(&q);
            assert_eq!(e[2], 0.0, "roll is fixed to zero at the singularity");
            let back = rot3d(&e);
            assert!(
                q.matrix().max_abs_diff(back.matrix()) < 1e-9,
                "gimbal reconstruction failed for θ={theta}, ψ={psi}"
            );
        }
    }

    #[test]
    fn euler_rejects_non_rotation() {
        let m = SqMat::from_rows(3, vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            euler_from_matrix(&m),
            Err(GeometryError::NotARotation { .. })
        ));
    }

    #[test]
    fn spherical_spec_examples() {
        let s = cart_to_spherical(&[0.0f64, 0.0, 1.0]);
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert_eq!(s[1], 0.0);
        assert!(s[2].abs() < 1e-3, "polar angle ≈ 0, got {}", s[2]);

        let s = cart_to_spherical(&[1.0f64, 0.0, 0.0]);
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert_eq!(s[1], 0.0);
        assert!((s[2] - FRAC_PI_2).abs() < 1e-12);

        let s = cart_to_spherical(&[0.0f64, 0.0, 0.0]);
        assert_eq!(s[0], 0.0);
        assert_eq!(s[1], 0.0);
        assert!((s[2] - FRAC_PI_2).abs() < 1e-15, "acos(0) = π/2");
    }

    #[test]
    fn spherical_round_trip_recovers_vector() {
        let mut rng = StdRng::seed_from_u64(6);
        for _ in 0..1000 {
            let u: [f64; 3] = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ];
            if (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt() <= 1e-6 {
                continue;
            }
            let s = cart_to_spherical(&u);
            let back = spherical_to_cart(&s);
            for (a, b) in u.iter().zip(back.iter()) {
                assert!((a - b).abs() < 1e-9, "{u:?} came back as {back:?}");
            }
        }
        // Axis-aligned vectors exercise the ε-aware inverse.
        for u in [[0.0f64, 0.0, 1.0], [0.0, 0.0, -3.0], [0.0, 2.0, 0.0]] {
            let back = spherical_to_cart(&cart_to_spherical(&u));
            for (a, b) in u.iter().zip(back.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn orientation_from_velocity_examples() {
        let w = orientation_from_velocity(&[0.0f64, 1.0], 2).unwrap();
        assert!((w[0] - FRAC_PI_2).abs() < 1e-15);

        let w = orientation_from_velocity(&[0.0f64, 0.0, 1.0], 3).unwrap();
        assert!(w[0].abs() < 1e-12);
        assert!(w[1].abs() < 1e-3);
        assert_eq!(w[2], 0.0);

        assert_eq!(orientation_from_velocity(&[0.0f64, 0.0], 2).unwrap(), vec![0.0]);
        assert_eq!(
            orientation_from_velocity(&[0.0, 0.0, 0.0], 3).unwrap(),
            vec![0.0; 3]
        );
    }

    #[test]
    fn block_rot_examples() {
        let q = rot2d(0.7f64);
        let b1 = block_rot(q.matrix(), 1).unwrap();
        assert_eq!(b1.max_abs_diff(q.matrix()), 0.0);

        let b2 = block_rot(&SqMat::<f64>::identity(2), 2).unwrap();
        assert_eq!(b2.max_abs_diff(&SqMat::identity(4)), 0.0);

        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let omega = [
                rng.gen_range(-PI..PI),
                rng.gen_range(-PI..PI),
                rng.gen_range(-PI..PI),
            ];
            let q = rot3d(&omega);
            let lift = block_rot(q.matrix(), 3).unwrap();
            let lift_t = block_rot(&q.matrix().transpose(), 3).unwrap();
            let prod = lift.matmul(&lift_t);
            assert!(prod.max_abs_diff(&SqMat::identity(9)) < 1e-12);
        }

        assert!(matches!(
            block_rot(&SqMat::<f64>::identity(2), 0),
            Err(GeometryError::EmptyBlockLift)
        ));
    }

    proptest! {
        #[test]
        fn wrap_angle_lands_in_range_and_preserves_mod_two_pi(a in -50.0f64..50.0) {
            let w = wrap_angle(a);
            prop_assert!((-PI..PI).contains(&w));
            let diff = (a - w) / (2.0 * PI);
            prop_assert!((diff - diff.round()).abs() < 1e-9);
        }
    }
}
