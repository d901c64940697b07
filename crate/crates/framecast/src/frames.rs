//! Canonicalization of scene states into per-node local coordinate frames.
//!
//! For a target node `i` the frame is translated to `i`'s position and
//! rotated to its orientation; every node `j` (including `i` itself) is then
//! expressed in that frame. The module also provides the inverse map that
//! carries predicted deltas back to global coordinates, global
//! roto-translation of whole scenes, and the random-transform helpers the
//! property suites are built on.

use rand::Rng;
use thiserror::Error;

use crate::geometry::{
    self, angle_difference, angular_dim, cart_to_polar, cart_to_spherical, euler_from_rotation,
    rot2d, rotation_from_angles, wrap_angle, GeometryError, Rotation, SqMat,
};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("scene field {field} has length {got}, expected {expected}")]
    BadFieldLength {
        field: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("timestep {t} out of range (scene has {t_len})")]
    BadTimestep { t: usize, t_len: usize },
}

pub type FrameResult<V> = Result<V, FrameError>;

/// Whether orientations are part of the data or derived from velocities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum OrientationMode {
    Intrinsic,
    FromVelocity,
}

/// Which local frame the pipeline canonicalizes into. `RotoTranslated` is
/// the full method; the other two are ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    RotoTranslated,
    TranslatedOnly,
    Global,
}

/// Trajectory of an interacting system: positions, velocities, and angular
/// positions indexed `[time][node][component]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneStates<T> {
    dim: usize,
    n: usize,
    t_len: usize,
    positions: Vec<T>,
    velocities: Vec<T>,
    orientations: Vec<T>,
    mode: OrientationMode,
}

impl<T: Scalar> SceneStates<T> {
    pub fn new_intrinsic(
        dim: usize,
        t_len: usize,
        n: usize,
        positions: Vec<T>,
        velocities: Vec<T>,
        orientations: Vec<T>,
    ) -> FrameResult<Self> {
        let adim = angular_dim(dim)?;
        check_len("positions", positions.len(), t_len * n * dim)?;
        check_len("velocities", velocities.len(), t_len * n * dim)?;
        check_len("orientations", orientations.len(), t_len * n * adim)?;
        let orientations = orientations.into_iter().map(wrap_angle).collect();
        Ok(Self {
            dim,
            n,
            t_len,
            positions,
            velocities,
            orientations,
            mode: OrientationMode::Intrinsic,
        })
    }

    /// Builds a scene whose orientations are approximated from velocities.
    pub fn from_velocities(
        dim: usize,
        t_len: usize,
        n: usize,
        positions: Vec<T>,
        velocities: Vec<T>,
    ) -> FrameResult<Self> {
        let adim = angular_dim(dim)?;
        check_len("positions", positions.len(), t_len * n * dim)?;
        check_len("velocities", velocities.len(), t_len * n * dim)?;
        let mut orientations = Vec::with_capacity(t_len * n * adim);
        for frame in 0..t_len {
            for node in 0..n {
                let u = &velocities[(frame * n + node) * dim..(frame * n + node + 1) * dim];
                orientations.extend(geometry::orientation_from_velocity(u, dim)?);
            }
        }
        Ok(Self {
            dim,
            n,
            t_len,
            positions,
            velocities,
            orientations,
            mode: OrientationMode::FromVelocity,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn angular_dim(&self) -> usize {
        angular_dim(self.dim).expect("validated at construction")
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn mode(&self) -> OrientationMode {
        self.mode
    }

    pub fn position(&self, t: usize, node: usize) -> &[T] {
        let d = self.dim;
        &self.positions[(t * self.n + node) * d..(t * self.n + node + 1) * d]
    }

    pub fn velocity(&self, t: usize, node: usize) -> &[T] {
        let d = self.dim;
        &self.velocities[(t * self.n + node) * d..(t * self.n + node + 1) * d]
    }

    pub fn orientation(&self, t: usize, node: usize) -> &[T] {
        let a = self.angular_dim();
        &self.orientations[(t * self.n + node) * a..(t * self.n + node + 1) * a]
    }

    /// State vector `[p, u]` of one node at one timestep.
    pub fn state(&self, t: usize, node: usize) -> Vec<T> {
        let mut x = Vec::with_capacity(2 * self.dim);
        x.extend_from_slice(self.position(t, node));
        x.extend_from_slice(self.velocity(t, node));
        x
    }

    /// All positions of one timestep, `[N][D]`.
    pub fn frame_positions(&self, t: usize) -> &[T] {
        &self.positions[t * self.n * self.dim..(t + 1) * self.n * self.dim]
    }

    pub fn frame_velocities(&self, t: usize) -> &[T] {
        &self.velocities[t * self.n * self.dim..(t + 1) * self.n * self.dim]
    }

    pub fn frame_orientations(&self, t: usize) -> &[T] {
        let a = self.angular_dim();
        &self.orientations[t * self.n * a..(t + 1) * self.n * a]
    }

    /// Scene restricted to timesteps `[0, t_len)`.
    pub fn prefix(&self, t_len: usize) -> Self {
        assert!(t_len <= self.t_len);
        let d = self.dim;
        let a = self.angular_dim();
        Self {
            dim: self.dim,
            n: self.n,
            t_len,
            positions: self.positions[..t_len * self.n * d].to_vec(),
            velocities: self.velocities[..t_len * self.n * d].to_vec(),
            orientations: self.orientations[..t_len * self.n * a].to_vec(),
            mode: self.mode,
        }
    }

    pub fn canonicalize(&self, t: usize, frame: FrameKind) -> FrameResult<CanonicalFrame<T>> {
        if t >= self.t_len {
            return Err(FrameError::BadTimestep {
                t,
                t_len: self.t_len,
            });
        }
        canonicalize_frame(
            self.dim,
            self.n,
            self.frame_positions(t),
            self.frame_velocities(t),
            self.frame_orientations(t),
            frame,
        )
    }

    pub fn canonicalize_all(&self, frame: FrameKind) -> FrameResult<Vec<CanonicalFrame<T>>> {
        (0..self.t_len).map(|t| self.canonicalize(t, frame)).collect()
    }

    /// Largest absolute position/velocity discrepancy against another scene.
    pub fn max_state_diff(&self, other: &Self) -> T {
        let p = self
            .positions
            .iter()
            .zip(other.positions.iter())
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
        self.velocities
            .iter()
            .zip(other.velocities.iter())
            .fold(p, |m, (&a, &b)| m.max((a - b).abs()))
    }
}

fn check_len(field: &'static str, got: usize, expected: usize) -> FrameResult<()> {
    if got != expected {
        return Err(FrameError::BadFieldLength {
            field,
            got,
            expected,
        });
    }
    Ok(())
}

/// Index of the ordered pair (target `i`, source `j`) in the `N²` pair axis.
pub fn pair_index(target: usize, source: usize, n: usize) -> usize {
    target * n + source
}

/// Canonicalized pairwise states for one timestep.
///
/// All arrays run over the `N²` ordered pairs `(i target, j source)`,
/// including self pairs. Angles are wrapped radians; feature assembly for
/// networks normalizes them by π.
#[derive(Clone, Debug)]
pub struct CanonicalFrame<T> {
    pub dim: usize,
    pub n: usize,
    /// Relative positions in the target frame, `[N²][D]`.
    pub rel_pos: Vec<T>,
    /// Relative angular positions, `[N²][A]`.
    pub rel_ang: Vec<T>,
    /// Source velocities in the target frame, `[N²][D]`.
    pub vel: Vec<T>,
    /// Polar/spherical form of `rel_pos`: `(ρ, θ)` in 2D, `(ρ, θ, φ)` in 3D.
    pub sph: Vec<T>,
}

impl<T: Scalar> CanonicalFrame<T> {
    pub fn angular_dim(&self) -> usize {
        angular_dim(self.dim).expect("validated at construction")
    }

    /// Largest discrepancy against another canonical frame; angle channels
    /// are compared on the circle so the ±π seam does not inflate it.
    pub fn max_discrepancy(&self, other: &Self) -> T {
        let mut err = T::zero();
        for (a, b) in self.rel_pos.iter().zip(other.rel_pos.iter()) {
            err = err.max((*a - *b).abs());
        }
        for (a, b) in self.vel.iter().zip(other.vel.iter()) {
            err = err.max((*a - *b).abs());
        }
        for (a, b) in self.rel_ang.iter().zip(other.rel_ang.iter()) {
            err = err.max(angle_difference(*a, *b).abs());
        }
        let d = self.dim;
        for (idx, (a, b)) in self.sph.iter().zip(other.sph.iter()).enumerate() {
            if idx % d == 0 {
                err = err.max((*a - *b).abs());
            } else {
                err = err.max(angle_difference(*a, *b).abs());
            }
        }
        err
    }
}

/// Canonicalizes one timestep given per-node positions `[N][D]`, velocities
/// `[N][D]`, and orientations `[N][A]`.
pub fn canonicalize_frame<T: Scalar>(
    dim: usize,
    n: usize,
    positions: &[T],
    velocities: &[T],
    orientations: &[T],
    frame: FrameKind,
) -> FrameResult<CanonicalFrame<T>> {
    let adim = angular_dim(dim)?;
    check_len("positions", positions.len(), n * dim)?;
    check_len("velocities", velocities.len(), n * dim)?;
    check_len("orientations", orientations.len(), n * adim)?;

    let mut rel_pos = Vec::with_capacity(n * n * dim);
    let mut rel_ang = Vec::with_capacity(n * n * adim);
    let mut vel = Vec::with_capacity(n * n * dim);
    let mut sph = Vec::with_capacity(n * n * dim);

    for target in 0..n {
        let p_i = &positions[target * dim..(target + 1) * dim];
        let w_i = &orientations[target * adim..(target + 1) * adim];
        let rot_i = match frame {
            FrameKind::RotoTranslated => Some(rotation_from_angles(dim, w_i)?),
            FrameKind::TranslatedOnly | FrameKind::Global => None,
        };
        for source in 0..n {
            let p_j = &positions[source * dim..(source + 1) * dim];
            let u_j = &velocities[source * dim..(source + 1) * dim];
            let w_j = &orientations[source * adim..(source + 1) * adim];

            // Translate (except in the global ablation), then rotate.
            let mut r: Vec<T> = match frame {
                FrameKind::Global => p_j.to_vec(),
                _ => p_j.iter().zip(p_i.iter()).map(|(&a, &b)| a - b).collect(),
            };
            let mut u = u_j.to_vec();
            if let Some(rot) = &rot_i {
                r = rot.apply_transposed(&r);
                u = rot.apply_transposed(&u);
            }

            match frame {
                FrameKind::RotoTranslated => {
                    if source == target {
                        rel_ang.extend(std::iter::repeat(T::zero()).take(adim));
                    } else if dim == 2 {
                        // Simplified planar path: rotations commute, so the
                        // matrix conjugation reduces to angle subtraction.
                        rel_ang.push(wrap_angle(w_j[0] - w_i[0]));
                    } else {
                        let q_rel = rot_i
                            .as_ref()
                            .expect("set for roto-translated frames")
                            .inverse()
                            .compose(&rotation_from_angles(dim, w_j)?);
                        rel_ang.extend(euler_from_rotation(&q_rel));
                    }
                }
                FrameKind::TranslatedOnly | FrameKind::Global => {
                    rel_ang.extend(w_j.iter().map(|&a| wrap_angle(a)));
                }
            }

            match dim {
                2 => sph.extend(cart_to_polar(&r)),
                _ => sph.extend(cart_to_spherical(&r)),
            }
            rel_pos.extend(r);
            vel.extend(u);
        }
    }

    Ok(CanonicalFrame {
        dim,
        n,
        rel_pos,
        rel_ang,
        vel,
        sph,
    })
}

/// Carries a per-node delta predicted in the local frame back to global
/// coordinates: `x' = x + (Q(ω) ⊕ Q(ω))·Δx` with `x = [p, u]`.
pub fn globalize_delta<T: Scalar>(
    x: &[T],
    omega: &[T],
    delta: &[T],
    dim: usize,
) -> FrameResult<Vec<T>> {
    let rot = rotation_from_angles(dim, omega)?;
    debug_assert_eq!(x.len(), 2 * dim);
    debug_assert_eq!(delta.len(), 2 * dim);
    let dp = rot.apply(&delta[..dim]);
    let du = rot.apply(&delta[dim..]);
    let mut out = Vec::with_capacity(2 * dim);
    for (i, v) in dp.into_iter().chain(du.into_iter()).enumerate() {
        out.push(x[i] + v);
    }
    Ok(out)
}

/// A global roto-translation `(Q_g, τ_g)`.
#[derive(Clone, Debug)]
pub struct GlobalTransform<T> {
    pub rotation: Rotation<T>,
    pub translation: Vec<T>,
}

impl<T: Scalar> GlobalTransform<T> {
    pub fn identity(dim: usize) -> Self {
        Self {
            rotation: Rotation::identity(dim),
            translation: vec![T::zero(); dim],
        }
    }

    /// Validates an arbitrary matrix before use.
    pub fn from_matrix(q: SqMat<T>, translation: Vec<T>) -> FrameResult<Self> {
        Ok(Self {
            rotation: Rotation::from_matrix(q)?,
            translation,
        })
    }

    /// The composite transform "apply `first`, then `self`".
    pub fn compose(&self, first: &Self) -> Self {
        let rotation = self.rotation.compose(&first.rotation);
        let mut translation = self.rotation.apply(&first.translation);
        for (t, &b) in translation.iter_mut().zip(self.translation.iter()) {
            *t += b;
        }
        Self {
            rotation,
            translation,
        }
    }

    pub fn apply_point(&self, p: &[T]) -> Vec<T> {
        let mut out = self.rotation.apply(p);
        for (o, &t) in out.iter_mut().zip(self.translation.iter()) {
            *o += t;
        }
        out
    }

    pub fn apply_vector(&self, v: &[T]) -> Vec<T> {
        self.rotation.apply(v)
    }
}

/// Applies a global roto-translation to a whole scene.
///
/// Positions transform as points, velocities as vectors. Intrinsic
/// orientations compose with the rotation (`θ + α` in 2D, Euler extraction
/// of `Q_g·Q(ω)` in 3D); velocity-approximated orientations are recomputed
/// from the transformed velocities, matching how they were derived.
pub fn apply_global<T: Scalar>(
    scene: &SceneStates<T>,
    transform: &GlobalTransform<T>,
) -> FrameResult<SceneStates<T>> {
    let dim = scene.dim();
    let n = scene.n_nodes();
    let t_len = scene.t_len();
    let adim = scene.angular_dim();
    let mut positions = Vec::with_capacity(t_len * n * dim);
    let mut velocities = Vec::with_capacity(t_len * n * dim);
    for t in 0..t_len {
        for node in 0..n {
            positions.extend(transform.apply_point(scene.position(t, node)));
            velocities.extend(transform.apply_vector(scene.velocity(t, node)));
        }
    }
    match scene.mode() {
        OrientationMode::FromVelocity => {
            SceneStates::from_velocities(dim, t_len, n, positions, velocities)
        }
        OrientationMode::Intrinsic => {
            let mut orientations = Vec::with_capacity(t_len * n * adim);
            let g_angle = if dim == 2 {
                Some(geometry::angle_of_rot2d(transform.rotation.matrix()))
            } else {
                None
            };
            for t in 0..t_len {
                for node in 0..n {
                    let w = scene.orientation(t, node);
                    if dim == 2 {
                        orientations.push(wrap_angle(w[0] + g_angle.expect("set for 2D")));
                    } else {
                        let composed = transform.rotation.compose(&rotation_from_angles(dim, w)?);
                        orientations.extend(euler_from_rotation(&composed));
                    }
                }
            }
            SceneStates::new_intrinsic(dim, t_len, n, positions, velocities, orientations)
        }
    }
}

/// Random roto-translation: uniform rotation angles and translation
/// components uniform in ±2.
pub fn random_rototranslation<T: Scalar, R: Rng>(rng: &mut R, dim: usize) -> GlobalTransform<T> {
    let pi = std::f64::consts::PI;
    let rotation = match dim {
        2 => rot2d(T::lit(rng.gen_range(-pi..pi))),
        _ => crate::geometry::rot3d(&[
            T::lit(rng.gen_range(-pi..pi)),
            T::lit(rng.gen_range(-pi / 2.0 + 0.05..pi / 2.0 - 0.05)),
            T::lit(rng.gen_range(-pi..pi)),
        ]),
    };
    let translation = (0..dim).map(|_| T::lit(rng.gen_range(-2.0..2.0))).collect();
    GlobalTransform {
        rotation,
        translation,
    }
}

/// Random rotation about the z-axis only (the exact-invariance subgroup for
/// velocity-approximated orientations in 3D).
pub fn random_z_rotation<T: Scalar, R: Rng>(rng: &mut R) -> GlobalTransform<T> {
    let pi = std::f64::consts::PI;
    GlobalTransform {
        rotation: Rotation::from_matrix_unchecked(crate::geometry::rot_z(T::lit(
            rng.gen_range(-pi..pi),
        ))),
        translation: vec![T::zero(); 3],
    }
}

/// Random translation-only transform.
pub fn random_translation<T: Scalar, R: Rng>(rng: &mut R, dim: usize) -> GlobalTransform<T> {
    GlobalTransform {
        rotation: Rotation::identity(dim),
        translation: (0..dim).map(|_| T::lit(rng.gen_range(-2.0..2.0))).collect(),
    }
}

/// Random scene for property tests: positions in ±2, velocities in ±1, and
/// (when intrinsic) uniform random orientations.
pub fn random_scene<T: Scalar, R: Rng>(
    rng: &mut R,
    dim: usize,
    n: usize,
    t_len: usize,
    intrinsic: bool,
) -> SceneStates<T> {
    let pi = std::f64::consts::PI;
    let len = t_len * n * dim;
    let positions: Vec<T> = (0..len).map(|_| T::lit(rng.gen_range(-2.0..2.0))).collect();
    let velocities: Vec<T> = (0..len).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect();
    if intrinsic {
        let adim = angular_dim(dim).expect("dim validated by caller");
        let orientations = (0..t_len * n * adim)
            .map(|i| {
                // Keep pitch away from the gimbal band in 3D.
                if dim == 3 && i % 3 == 1 {
                    T::lit(rng.gen_range(-pi / 2.0 + 0.05..pi / 2.0 - 0.05))
                } else {
                    T::lit(rng.gen_range(-pi..pi))
                }
            })
            .collect();
        SceneStates::new_intrinsic(dim, t_len, n, positions, velocities, orientations)
            .expect("lengths built to match")
    } else {
        SceneStates::from_velocities(dim, t_len, n, positions, velocities)
            .expect("lengths built to match")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn self_pairs_have_zero_position_and_angle() {
        let mut rng = StdRng::seed_from_u64(0);
        for dim in [2usize, 3] {
            let scene = random_scene::<f64, _>(&mut rng, dim, 4, 3, true);
            let canon = scene.canonicalize(1, FrameKind::RotoTranslated).unwrap();
            let adim = canon.angular_dim();
            for i in 0..4 {
                let p = pair_index(i, i, 4);
                for c in 0..dim {
                    assert_eq!(canon.rel_pos[p * dim + c], 0.0);
                }
                for c in 0..adim {
                    assert_eq!(canon.rel_ang[p * adim + c], 0.0);
                }
                assert_eq!(canon.sph[p * dim], 0.0, "self distance is zero");
            }
        }
    }

    #[test]
    fn worked_2d_example_from_quarter_turn_frame() {
        // Target at (1,0) facing θ=π/2; source at (1,1): the source sits one
        // unit "ahead", so the canonical relative position is (1, 0).
        let positions = vec![1.0, 0.0, 1.0, 1.0];
        let velocities = vec![0.0; 4];
        let orientations = vec![FRAC_PI_2, 0.0];
        let scene =
            SceneStates::new_intrinsic(2, 1, 2, positions, velocities, orientations).unwrap();
        let canon = scene.canonicalize(0, FrameKind::RotoTranslated).unwrap();
        let p = pair_index(0, 1, 2);
        assert!((canon.rel_pos[p * 2] - 1.0).abs() < 1e-15);
        assert!(canon.rel_pos[p * 2 + 1].abs() < 1e-15);
    }

    #[test]
    fn canonicalization_invariant_under_rototranslation_intrinsic() {
        let mut rng = StdRng::seed_from_u64(1);
        for dim in [2usize, 3] {
            let scene = random_scene::<f64, _>(&mut rng, dim, 3, 4, true);
            let base: Vec<_> = scene.canonicalize_all(FrameKind::RotoTranslated).unwrap();
            for _ in 0..100 {
                let tr = random_rototranslation::<f64, _>(&mut rng, dim);
                let moved = apply_global(&scene, &tr).unwrap();
                let transformed = moved.canonicalize_all(FrameKind::RotoTranslated).unwrap();
                for (a, b) in base.iter().zip(transformed.iter()) {
                    let err = a.max_discrepancy(b);
                    assert!(err < 1e-9, "dim {dim}: discrepancy {err}");
                }
            }
        }
    }

    #[test]
    fn velocity_approx_invariance_2d_exact_and_3d_about_z() {
        let mut rng = StdRng::seed_from_u64(2);
        let scene2 = random_scene::<f64, _>(&mut rng, 2, 3, 4, false);
        let base2: Vec<_> = scene2.canonicalize_all(FrameKind::RotoTranslated).unwrap();
        for _ in 0..50 {
            let tr = random_rototranslation::<f64, _>(&mut rng, 2);
            let moved = apply_global(&scene2, &tr).unwrap();
            for (a, b) in base2
                .iter()
                .zip(moved.canonicalize_all(FrameKind::RotoTranslated).unwrap().iter())
            {
                assert!(a.max_discrepancy(b) < 1e-9);
            }
        }

        let scene3 = random_scene::<f64, _>(&mut rng, 3, 3, 4, false);
        let base3: Vec<_> = scene3.canonicalize_all(FrameKind::RotoTranslated).unwrap();
        for _ in 0..50 {
            let tr = random_z_rotation::<f64, _>(&mut rng);
            let moved = apply_global(&scene3, &tr).unwrap();
            for (a, b) in base3
                .iter()
                .zip(moved.canonicalize_all(FrameKind::RotoTranslated).unwrap().iter())
            {
                assert!(a.max_discrepancy(b) < 1e-9);
            }
        }
    }

    #[test]
    fn translated_only_frames_are_translation_but_not_rotation_invariant() {
        let mut rng = StdRng::seed_from_u64(3);
        let scene = random_scene::<f64, _>(&mut rng, 2, 3, 2, true);
        let base: Vec<_> = scene.canonicalize_all(FrameKind::TranslatedOnly).unwrap();

        let shift = random_translation::<f64, _>(&mut rng, 2);
        let shifted = apply_global(&scene, &shift).unwrap();
        for (a, b) in base
            .iter()
            .zip(shifted.canonicalize_all(FrameKind::TranslatedOnly).unwrap().iter())
        {
            assert!(a.max_discrepancy(b) < 1e-12);
        }

        let tr = random_rototranslation::<f64, _>(&mut rng, 2);
        let rotated = apply_global(&scene, &tr).unwrap();
        let rotated_canon = rotated.canonicalize_all(FrameKind::TranslatedOnly).unwrap();
        let max: f64 = base
            .iter()
            .zip(rotated_canon.iter())
            .map(|(a, b)| a.max_discrepancy(b))
            .fold(0.0, f64::max);
        assert!(max > 1e-3, "rotation should change translated-only frames");
    }

    #[test]
    fn global_frames_change_under_translation() {
        let mut rng = StdRng::seed_from_u64(4);
        let scene = random_scene::<f64, _>(&mut rng, 2, 3, 2, true);
        let base: Vec<_> = scene.canonicalize_all(FrameKind::Global).unwrap();
        let shift = random_translation::<f64, _>(&mut rng, 2);
        let shifted = apply_global(&scene, &shift).unwrap();
        let shifted_canon = shifted.canonicalize_all(FrameKind::Global).unwrap();
        let max: f64 = base
            .iter()
            .zip(shifted_canon.iter())
            .map(|(a, b)| a.max_discrepancy(b))
            .fold(0.0, f64::max);
        assert!(max > 1e-3, "translation should change global frames");
    }

    #[test]
    fn globalize_delta_examples() {
        // Zero delta leaves the state untouched.
        let x = vec![1.0, 2.0, 0.5, -0.5];
        let out = globalize_delta(&x, &[0.7], &[0.0; 4], 2).unwrap();
        assert_eq!(out, x);

        // Zero orientation degenerates to plain addition, bit-exactly.
        let delta = vec![0.1, -0.2, 0.3, 0.4];
        let out = globalize_delta(&x, &[0.0], &delta, 2).unwrap();
        for i in 0..4 {
            assert_eq!(out[i], x[i] + delta[i]);
        }
    }

    #[test]
    fn globalize_delta_is_rotation_equivariant() {
        let mut rng = StdRng::seed_from_u64(5);
        for dim in [2usize, 3] {
            for _ in 0..50 {
                let adim = angular_dim(dim).unwrap();
                let x: Vec<f64> = (0..2 * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let omega: Vec<f64> = (0..adim)
                    .map(|i| {
                        if dim == 3 && i == 1 {
                            rng.gen_range(-1.4..1.4)
                        } else {
                            rng.gen_range(-3.0..3.0)
                        }
                    })
                    .collect();
                let delta: Vec<f64> = (0..2 * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let tr = random_rototranslation::<f64, _>(&mut rng, dim);

                // Globalize in the transformed world.
                let mut x_t = tr.apply_point(&x[..dim]);
                x_t.extend(tr.apply_vector(&x[dim..]));
                let omega_t = if dim == 2 {
                    vec![wrap_angle(
                        omega[0] + geometry::angle_of_rot2d(tr.rotation.matrix()),
                    )]
                } else {
                    euler_from_rotation(
                        &tr.rotation.compose(&rotation_from_angles(3, &omega).unwrap()),
                    )
                    .to_vec()
                };
                let moved = globalize_delta(&x_t, &omega_t, &delta, dim).unwrap();

                // Transform the untransformed result instead.
                let base = globalize_delta(&x, &omega, &delta, dim).unwrap();
                let mut expected = tr.apply_point(&base[..dim]);
                expected.extend(tr.apply_vector(&base[dim..]));

                for (a, b) in moved.iter().zip(expected.iter()) {
                    assert!((a - b).abs() < 1e-9, "dim {dim}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn apply_global_identity_and_translation_behaviour() {
        let mut rng = StdRng::seed_from_u64(6);
        let scene = random_scene::<f64, _>(&mut rng, 3, 3, 4, true);
        let same = apply_global(&scene, &GlobalTransform::identity(3)).unwrap();
        assert!(scene.max_state_diff(&same) < 1e-12);

        let shift = random_translation::<f64, _>(&mut rng, 3);
        let moved = apply_global(&scene, &shift).unwrap();
        // Velocities are bit-identical under pure translation.
        for t in 0..scene.t_len() {
            for node in 0..scene.n_nodes() {
                assert_eq!(scene.velocity(t, node), moved.velocity(t, node));
            }
        }
    }

    #[test]
    fn composing_transforms_equals_applying_their_composition() {
        let mut rng = StdRng::seed_from_u64(7);
        for dim in [2usize, 3] {
            let scene = random_scene::<f64, _>(&mut rng, dim, 3, 3, true);
            for _ in 0..20 {
                let t1 = random_rototranslation::<f64, _>(&mut rng, dim);
                let t2 = random_rototranslation::<f64, _>(&mut rng, dim);
                let sequential = apply_global(&apply_global(&scene, &t1).unwrap(), &t2).unwrap();
                let composed = apply_global(&scene, &t2.compose(&t1)).unwrap();
                assert!(sequential.max_state_diff(&composed) < 1e-10);
            }
        }
    }
}
