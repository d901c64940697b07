//! Filter-generating networks: MLPs that map relative geometry to a weight
//! matrix per edge, giving direction-dependent (anisotropic) filtering.

use rand::Rng;

use crate::nn::{Activation, FwdCtx, Mlp, MlpLayerSpec, ParamSet};
use crate::scalar::Scalar;
use crate::tape::{TapeResult, Var};

/// Matrix field `W(Δp): filter_in → (out_dim × in_dim)` applied per edge row.
#[derive(Clone, Debug)]
pub struct FilterNet {
    net: Mlp,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl FilterNet {
    /// Two-layer generator: `filter_in → hidden (activation) → out·in`.
    pub fn new<T: Scalar, R: Rng>(
        ps: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        filter_in: usize,
        hidden: usize,
        hidden_activation: Activation,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let net = Mlp::new(
            ps,
            rng,
            name,
            filter_in,
            &[
                MlpLayerSpec::new(hidden, hidden_activation),
                MlpLayerSpec::new(out_dim * in_dim, Activation::Identity),
            ],
            false,
        );
        Self {
            net,
            in_dim,
            out_dim,
        }
    }

    /// Generates per-row matrices from `delta_p` and applies them to `x`.
    pub fn apply<T: Scalar>(&self, ctx: &mut FwdCtx<T>, delta_p: Var, x: Var) -> TapeResult<Var> {
        let w = self.net.forward(ctx, delta_p)?;
        ctx.g.bmm_rowwise(w, x, self.out_dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Graph;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_generator_weights_give_zero_messages() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::<f64>::new();
        let f = FilterNet::new(&mut ps, &mut rng, "wf", 3, 8, Activation::Elu, 5, 4);
        for name in ["wf.l0.w", "wf.l0.b", "wf.l1.w", "wf.l1.b"] {
            let shape = ps.get(name).unwrap().shape().to_vec();
            ps.set(name, Tensor::zeros(&shape)).unwrap();
        }
        let mut g = Graph::new();
        let mut ctx = FwdCtx::new(&mut g, &ps, false);
        let dp = ctx.g.constant(Tensor::new(vec![2, 3], vec![0.5; 6]).unwrap());
        let x = ctx.g.constant(Tensor::new(vec![2, 5], vec![1.0; 10]).unwrap());
        let y = f.apply(&mut ctx, dp, x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0; 8]);
    }

    #[test]
    fn different_directions_at_equal_distance_get_different_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::<f64>::new();
        let f = FilterNet::new(&mut ps, &mut rng, "wf", 3, 8, Activation::Tanh, 5, 4);
        let mut g = Graph::new();
        let mut ctx = FwdCtx::new(&mut g, &ps, false);
        // Same radius ρ=1, different azimuth: Δp = [ρ, θ/π, ω/π].
        let dp = ctx
            .g
            .constant(Tensor::new(vec![2, 3], vec![1.0, 0.25, 0.0, 1.0, -0.5, 0.0]).unwrap());
        let x = ctx.g.constant(Tensor::new(vec![2, 5], vec![0.3; 10]).unwrap());
        let y = f.apply(&mut ctx, dp, x).unwrap();
        let rows = g.value(y).data();
        let diff: f64 = (0..4).map(|c| (rows[c] - rows[4 + c]).abs()).sum();
        assert!(diff > 1e-6, "generated filters should differ by direction");
    }
}
