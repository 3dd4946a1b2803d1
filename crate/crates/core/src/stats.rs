//! Small numerical helpers shared across modules.

use rand::Rng;

/// `ln Σ exp(x_i)`, stable for large magnitudes. Empty input gives `-inf`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Index of the largest value, ties broken uniformly at random. The RNG is
/// only consumed when a tie actually occurs.
pub fn argmax_random_tie<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> usize {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties = values.iter().filter(|&&v| v == best).count();
    let pick = if ties > 1 { rng.random_range(0..ties) } else { 0 };
    values.iter().enumerate().filter(|(_, &v)| v == best).nth(pick).map(|(i, _)| i).unwrap_or(0)
}

/// Indices attaining the maximum.
pub fn argmax_set(values: &[f64]) -> Vec<usize> {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values.iter().enumerate().filter(|(_, &v)| v == best).map(|(i, _)| i).collect()
}

/// Sample mean and unbiased sample variance. A single value has variance 0.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var)
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let (m, v) = mean_var(xs);
    (m, (v / xs.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn logsumexp_is_stable() {
        assert!((logsumexp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((logsumexp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY, 0.0]), 0.0);
    }

    #[test]
    fn ties_are_split_evenly() {
        let mut rng = rng_from_seed(1);
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[argmax_random_tie(&[1.0, 0.0, 1.0], &mut rng)] += 1;
        }
        assert_eq!(counts[1], 0);
        assert!((counts[0] as f64 / 30_000.0 - 0.5).abs() < 0.015);
        assert_eq!(argmax_set(&[2.0, 5.0, 5.0]), vec![1, 2]);
    }
}
