//! Gumbel-softmax (concrete) relaxation of categorical edge sampling, plus
//! hard categorical sampling for inference.

use rand::Rng;

use crate::scalar::Scalar;
use crate::tape::{Graph, TapeResult, Var};
use crate::tensor::{Tensor, TensorBuilder};

/// Standard Gumbel noise `-ln(-ln(U))`, drawn as f64 for stream stability.
pub fn gumbel_noise<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor<T> {
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            // Open interval keeps both logs finite.
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            T::lit(-(-u.ln()).ln())
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape by construction")
}

/// Relaxed sample `softmax((logits + noise)/τ)` with provided noise; zero
/// noise degenerates to a plain tempered softmax.
pub fn gumbel_softmax_with_noise<T: Scalar>(
    logits: &Tensor<T>,
    noise: &Tensor<T>,
    temperature: T,
) -> TapeResult<Tensor<T>> {
    let mut g = Graph::inference();
    let l = g.constant(logits.clone());
    let n = g.constant(noise.clone());
    let z = sample_in_graph(&mut g, l, n, temperature)?;
    Ok(g.value(z).clone())
}

/// Relaxed sample with freshly drawn noise.
pub fn gumbel_softmax_sample<T: Scalar, R: Rng>(
    logits: &Tensor<T>,
    temperature: T,
    rng: &mut R,
) -> TapeResult<Tensor<T>> {
    let noise = gumbel_noise(rng, logits.shape());
    gumbel_softmax_with_noise(logits, &noise, temperature)
}

/// In-graph relaxed sampling: differentiable with respect to the logits
/// (the noise enters as a constant, which is the reparameterization).
pub fn sample_in_graph<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    noise: Var,
    temperature: T,
) -> TapeResult<Var> {
    let shifted = g.add(logits, noise)?;
    let tempered = g.scale(shifted, T::one() / temperature);
    g.softmax_rows(tempered)
}

/// Hard one-hot categorical samples per row via the Gumbel-max trick.
pub fn categorical_sample_onehot<T: Scalar, R: Rng>(
    logits: &Tensor<T>,
    rng: &mut R,
) -> Tensor<T> {
    let (rows, cols) = logits
        .dims2("categorical_sample_onehot")
        .expect("logits are rank-2");
    let noise = gumbel_noise::<T, _>(rng, &[rows, cols]);
    let mut out = TensorBuilder::zeros(&[rows, cols]);
    for r in 0..rows {
        let mut best = 0usize;
        let mut best_v = T::neg_infinity();
        for c in 0..cols {
            let v = logits.data()[r * cols + c] + noise.data()[r * cols + c];
            if v > best_v {
                best_v = v;
                best = c;
            }
        }
        out.set(r * cols + best, T::one());
    }
    out.finish()
}

/// Hard one-hot argmax per row.
pub fn argmax_onehot<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let (rows, cols) = logits.dims2("argmax_onehot").expect("logits are rank-2");
    let mut out = TensorBuilder::zeros(&[rows, cols]);
    for r in 0..rows {
        let row = &logits.data()[r * cols..(r + 1) * cols];
        let best = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
            .map(|(i, _)| i)
            .expect("non-empty row");
        out.set(r * cols + best, T::one());
    }
    out.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_noise_is_a_tempered_softmax() {
        let logits = Tensor::new(vec![1, 3], vec![0.2, -0.4, 1.0]).unwrap();
        let zero = Tensor::zeros(&[1, 3]);
        let z = gumbel_softmax_with_noise(&logits, &zero, 0.5).unwrap();
        // Direct tempered softmax.
        let scaled: Vec<f64> = logits.data().iter().map(|v| v / 0.5).collect();
        let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scaled.iter().map(|v| (v - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (a, e) in z.data().iter().zip(exps.iter()) {
            assert!((a - e / sum).abs() < 1e-12);
        }
    }

    #[test]
    fn low_temperature_saturates_to_onehot_of_perturbed_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = Tensor::new(vec![4, 3], vec![0.5, -0.2, 0.1, 2.0, 1.9, -3.0, 0.0, 0.0, 0.0, -1.0, 4.0, 1.0]).unwrap();
        let noise = gumbel_noise::<f64, _>(&mut rng, &[4, 3]);
        let z = gumbel_softmax_with_noise(&logits, &noise, 1e-4).unwrap();
        for r in 0..4 {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for c in 0..3 {
                let v = logits.data()[r * 3 + c] + noise.data()[r * 3 + c];
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            for c in 0..3 {
                let expect = if c == best { 1.0 } else { 0.0 };
                assert!(
                    (z.data()[r * 3 + c] - expect).abs() < 1e-3,
                    "row {r} col {c}: {}",
                    z.data()[r * 3 + c]
                );
            }
        }
    }

    #[test]
    fn relaxed_argmax_frequencies_match_softmax_probabilities() {
        // The argmax of a Gumbel-softmax sample is an exact categorical
        // sample from softmax(logits); check Monte-Carlo frequencies against
        // that oracle within ±0.01 over 50k samples.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let logits_row = [0.3f64, -0.5, 1.1];
        let m = logits_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits_row.iter().map(|v| (v - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();

        let rows = 50_000usize;
        let logits = Tensor::new(
            vec![rows, 3],
            (0..rows).flat_map(|_| logits_row.to_vec()).collect(),
        )
        .unwrap();
        let z = gumbel_softmax_sample(&logits, 0.5, &mut rng).unwrap();
        let mut counts = [0usize; 3];
        for r in 0..rows {
            let row = &z.data()[r * 3..(r + 1) * 3];
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            counts[best] += 1;
        }
        for (c, &p) in probs.iter().enumerate() {
            let freq = counts[c] as f64 / rows as f64;
            assert!(
                (freq - p).abs() < 0.01,
                "category {c}: frequency {freq}, probability {p}"
            );
        }
    }

    #[test]
    fn rows_stay_on_the_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = Tensor::new(vec![10, 4], (0..40).map(|i| (i as f64) * 0.1 - 2.0).collect()).unwrap();
        let z = gumbel_softmax_sample(&logits, 0.5, &mut rng).unwrap();
        for r in 0..10 {
            let sum: f64 = z.data()[r * 4..(r + 1) * 4].iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(z.data()[r * 4..(r + 1) * 4].iter().all(|&v| v >= 0.0));
        }
    }
}
