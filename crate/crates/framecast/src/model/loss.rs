//! ELBO components: per-dimension Gaussian reconstruction NLL with fixed
//! variance, and categorical KL between edge posteriors and priors.

use crate::scalar::Scalar;
use crate::tape::{Graph, TapeResult, Var};
use crate::tensor::Tensor;

/// Negative log likelihood of `target` under `N(mu, σ²I)`, summed over all
/// entries: `Σ (x-μ)²/(2σ²) + count·½ln(2πσ²)`.
pub fn gaussian_nll<T: Scalar>(
    g: &mut Graph<T>,
    mu: Var,
    target: &Tensor<T>,
    sigma_sq: T,
) -> TapeResult<Var> {
    let count = T::from_usize(target.len()).expect("element count fits scalar");
    let t = g.constant(target.clone());
    let diff = g.sub(mu, t)?;
    let sq = g.mul(diff, diff)?;
    let sse = g.sum_all(sq);
    let scaled = g.scale(sse, T::one() / (sigma_sq + sigma_sq));
    let half = T::lit(0.5);
    let log_term = half * (T::two_pi() * sigma_sq).ln() * count;
    Ok(g.add_scalar(scaled, log_term))
}

/// `Σ_rows Σ_k q_k (ln q_k - ln p_k)` with `q = softmax(q_logits)`,
/// `p = softmax(p_logits)` — the standard categorical KL divergence.
pub fn categorical_kl<T: Scalar>(
    g: &mut Graph<T>,
    q_logits: Var,
    p_logits: Var,
) -> TapeResult<Var> {
    let q = g.softmax_rows(q_logits)?;
    let log_q = g.log_softmax_rows(q_logits)?;
    let log_p = g.log_softmax_rows(p_logits)?;
    let diff = g.sub(log_q, log_p)?;
    let prod = g.mul(q, diff)?;
    Ok(g.sum_all(prod))
}

/// KL against a fixed categorical target (broadcast across rows).
pub fn categorical_kl_to_fixed<T: Scalar>(
    g: &mut Graph<T>,
    q_logits: Var,
    fixed_probs: &[T],
) -> TapeResult<Var> {
    let rows = g.value(q_logits).shape()[0];
    let k = fixed_probs.len();
    let log_p: Vec<T> = fixed_probs.iter().map(|&p| p.ln()).collect();
    let log_p_rows = Tensor::new(
        vec![rows, k],
        (0..rows).flat_map(|_| log_p.iter().copied()).collect(),
    )?;
    let q = g.softmax_rows(q_logits)?;
    let log_q = g.log_softmax_rows(q_logits)?;
    let lp = g.constant(log_p_rows);
    let diff = g.sub(log_q, lp)?;
    let prod = g.mul(q, diff)?;
    Ok(g.sum_all(prod))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_reconstruction_leaves_only_the_log_term() {
        // With μ = targets the NLL is exactly count · ½ ln(2πσ²).
        let sigma_sq = 1e-5;
        let target = Tensor::new(vec![4, 6], (0..24).map(|i| i as f64 * 0.3).collect()).unwrap();
        let mut g = Graph::inference();
        let mu = g.constant(target.clone());
        let nll = gaussian_nll(&mut g, mu, &target, sigma_sq).unwrap();
        let expect = 24.0 * 0.5 * (2.0 * std::f64::consts::PI * sigma_sq).ln();
        assert_eq!(g.value(nll).item().unwrap(), expect);
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let logits = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64).sin()).collect()).unwrap();
        let mut g = Graph::inference();
        let q = g.constant(logits.clone());
        let p = g.constant(logits);
        let kl = categorical_kl(&mut g, q, p).unwrap();
        assert!(g.value(kl).item().unwrap().abs() < 1e-12);
    }

    #[test]
    fn kl_matches_brute_force_summation() {
        let q_logits = Tensor::new(vec![2, 3], vec![0.3, -0.7, 1.2, 0.0, 0.5, -0.5]).unwrap();
        let p_logits = Tensor::new(vec![2, 3], vec![-1.0, 0.2, 0.4, 0.9, 0.9, -2.0]).unwrap();
        let mut g = Graph::inference();
        let qv = g.constant(q_logits.clone());
        let pv = g.constant(p_logits.clone());
        let kl = categorical_kl(&mut g, qv, pv).unwrap();

        // Direct Σ q ln(q/p) on plain floats.
        let softmax = |row: &[f64]| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect::<Vec<_>>()
        };
        let mut expect = 0.0;
        for r in 0..2 {
            let q = softmax(&q_logits.data()[r * 3..(r + 1) * 3]);
            let p = softmax(&p_logits.data()[r * 3..(r + 1) * 3]);
            for k in 0..3 {
                expect += q[k] * (q[k] / p[k]).ln();
            }
        }
        assert!((g.value(kl).item().unwrap() - expect).abs() < 1e-12);
        assert!(expect > 0.0, "differing distributions have positive KL");
    }

    #[test]
    fn fixed_prior_kl_matches_brute_force() {
        let q_logits = Tensor::new(vec![2, 2], vec![0.3, -0.7, 1.2, 0.0]).unwrap();
        let fixed = [0.9f64, 0.1];
        let mut g = Graph::inference();
        let qv = g.constant(q_logits.clone());
        let kl = categorical_kl_to_fixed(&mut g, qv, &fixed).unwrap();

        let softmax = |row: &[f64]| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect::<Vec<_>>()
        };
        let mut expect = 0.0;
        for r in 0..2 {
            let q = softmax(&q_logits.data()[r * 2..(r + 1) * 2]);
            for k in 0..2 {
                expect += q[k] * (q[k] / fixed[k]).ln();
            }
        }
        assert!((g.value(kl).item().unwrap() - expect).abs() < 1e-12);
    }
}
