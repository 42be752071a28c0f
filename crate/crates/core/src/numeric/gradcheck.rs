use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mlp::loss_and_pattern;
use super::{mlp_gradient, Batch, Matrix, MlpParams, NumericError};

const STEP: f64 = 1e-5;
/// Nets with more weights than this are checked on a random subset.
const FULL_CHECK_LIMIT: usize = 4096;
const SAMPLED_WEIGHTS: usize = 512;
/// Denominator floor, so weights with vanishing gradients compare absolutely.
const REL_FLOOR: f64 = 1e-6;

/// Max relative error between the analytic loss gradient and central
/// finite differences.
pub fn gradient_check(params: &MlpParams, batch: &Batch) -> Result<f64, NumericError> {
    let (_, analytic) = mlp_gradient(params, batch)?;
    compare_gradient(params, batch, &analytic)
}

/// Compares `analytic` (one matrix per layer) with central differences of the
/// loss. Weights whose ±step perturbation flips a ReLU are skipped: the loss
/// is not differentiable there.
pub fn compare_gradient(params: &MlpParams, batch: &Batch, analytic: &[Matrix]) -> Result<f64, NumericError> {
    if batch.is_empty() {
        return Err(NumericError::Empty);
    }
    if analytic.len() != params.depth() {
        return Err(NumericError::DimensionMismatch {
            expected: params.depth(),
            got: analytic.len(),
        });
    }
    let mut offsets = Vec::with_capacity(params.depth());
    let mut total = 0;
    for layer in params.layers() {
        offsets.push(total);
        total += layer.as_slice().len();
    }
    let chosen: Vec<usize> = if total <= FULL_CHECK_LIMIT {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(total as u64);
        let mut picked = index::sample(&mut rng, total, SAMPLED_WEIGHTS).into_vec();
        picked.sort_unstable();
        picked
    };

    let (_, base_pattern) = loss_and_pattern(params, batch);
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for flat in chosen {
        let layer = offsets.partition_point(|&o| o <= flat) - 1;
        let idx = flat - offsets[layer];
        let original = probe.layers()[layer].as_slice()[idx];

        probe.layers_mut()[layer].as_mut_slice()[idx] = original + STEP;
        let (plus, plus_pattern) = loss_and_pattern(&probe, batch);
        probe.layers_mut()[layer].as_mut_slice()[idx] = original - STEP;
        let (minus, minus_pattern) = loss_and_pattern(&probe, batch);
        probe.layers_mut()[layer].as_mut_slice()[idx] = original;

        if plus_pattern != base_pattern || minus_pattern != base_pattern {
            continue;
        }
        let numeric = (plus - minus) / (2.0 * STEP);
        let a = analytic[layer].as_slice()[idx];
        // differences below the finite-difference round-off bound are unresolvable
        let roundoff = 4.0 * f64::EPSILON * (plus.abs() + minus.abs() + 1.0) / (2.0 * STEP);
        let diff = (a - numeric).abs();
        if diff > roundoff {
            worst = worst.max(diff / a.abs().max(numeric.abs()).max(REL_FLOOR));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_batch(rng: &mut ChaCha8Rng, d: usize, k: usize, n: usize) -> Batch {
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let triples: Vec<(&[f64], usize, f64)> = xs
            .iter()
            .map(|x| (x.as_slice(), rng.random_range(0..k), rng.random::<f64>()))
            .collect();
        Batch::from_triples(d, triples).unwrap()
    }

    #[test]
    fn zero_gradient_batch_has_zero_error() {
        let net = MlpParams::from_layers(vec![
            Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
        ])
        .unwrap();
        let batch = Batch::from_triples(1, [(&[0.5][..], 0, 0.5)]).unwrap();
        assert_eq!(gradient_check(&net, &batch).unwrap(), 0.0);
    }

    #[test]
    fn random_net_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let net = MlpParams::new(8, 16, 4, 2, &mut rng).unwrap();
        let batch = random_batch(&mut rng, 8, 4, 8);
        let err = gradient_check(&net, &batch).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let net = MlpParams::new(8, 16, 4, 2, &mut rng).unwrap();
        let batch = random_batch(&mut rng, 8, 4, 8);
        let (_, mut grads) = mlp_gradient(&net, &batch).unwrap();
        // flip the sign of the largest-magnitude entry
        let (layer, idx) = grads
            .iter()
            .enumerate()
            .flat_map(|(l, g)| g.as_slice().iter().enumerate().map(move |(i, v)| (l, i, v.abs())))
            .max_by(|a, b| a.2.total_cmp(&b.2))
            .map(|(l, i, _)| (l, i))
            .unwrap();
        grads[layer].as_mut_slice()[idx] *= -1.0;
        let err = compare_gradient(&net, &batch, &grads).unwrap();
        assert!(err > 0.5, "relative error {err}");
    }
}
