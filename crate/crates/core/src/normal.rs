//! Standard normal distribution numerics: CDF, log-CDF, quantile, and a
//! one-sided truncated sampler for probit data augmentation.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal CDF, accurate to double precision across the range.
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `ln Φ(x)` without underflow in the lower tail.
pub fn ln_cdf(x: f64) -> f64 {
    if x > 0.0 {
        (-cdf(-x)).ln_1p()
    } else if x > -35.0 {
        cdf(x).ln()
    } else {
        // Asymptotic expansion of the Mills ratio.
        let z = 1.0 / (x * x);
        let series = 1.0 - z * (1.0 - 3.0 * z * (1.0 - 5.0 * z * (1.0 - 7.0 * z)));
        ln_pdf(x) - (-x).ln() + series.ln()
    }
}

/// Inverse Mills ratio `φ(x) / Φ(x)`.
pub fn mills_ratio(x: f64) -> f64 {
    (ln_pdf(x) - ln_cdf(x)).exp()
}

/// Standard normal quantile (Wichura's AS241), polished by one Newton step.
///
/// `p` must lie in `(0, 1)`; the endpoints map to infinities.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = as241(p);
    let err = if x > 0.0 { (1.0 - p) - cdf(-x) } else { cdf(x) - p };
    let dens = pdf(x);
    if dens > 0.0 && err.is_finite() {
        let step = err / dens;
        // Halley correction.
        x - step / (1.0 + 0.5 * x * step)
    } else {
        x
    }
}

fn poly(coef: &[f64], r: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, &c| acc * r + c)
}

fn as241(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_6,
        1.331_416_678_917_843_8e2,
        1.971_590_950_306_551_4e3,
        1.373_169_376_550_946e4,
        4.592_195_393_154_987e4,
        6.726_577_092_700_87e4,
        3.343_057_558_358_813e4,
        2.509_080_928_730_122_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091e1,
        6.871_870_074_920_579e2,
        5.394_196_021_424_751e3,
        2.121_379_430_158_659_7e4,
        3.930_789_580_009_271e4,
        2.872_908_573_572_194_3e4,
        5.226_495_278_852_545e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_5,
        4.630_337_846_156_545,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        2.417_807_251_774_506e-1,
        2.272_384_498_926_918_4e-2,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_8,
        1.676_384_830_183_803_8,
        6.897_673_349_851e-1,
        1.481_039_764_274_800_8e-1,
        1.519_866_656_361_645_7e-2,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_8e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        2.965_605_718_285_048_7e-1,
        2.653_218_952_657_612_4e-2,
        1.242_660_947_388_078_4e-3,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879e-1,
        1.369_298_809_227_358e-1,
        1.487_536_129_085_061_5e-2,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_939_7e-15,
    ];

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        r -= 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Draws `x ~ N(0, 1)` conditioned on `x > lower`.
///
/// Plain rejection while the acceptance rate is high, Robert's translated
/// exponential proposal in the tail.
pub fn sample_truncated_below<R: Rng + ?Sized>(lower: f64, rng: &mut R) -> f64 {
    if lower < 0.45 {
        loop {
            let x: f64 = StandardNormal.sample(rng);
            if x > lower {
                return x;
            }
        }
    }
    let alpha = 0.5 * (lower + (lower * lower + 4.0).sqrt());
    let exp = Exp::new(alpha).expect("positive rate");
    loop {
        let x = lower + exp.sample(rng);
        let accept = (-0.5 * (x - alpha) * (x - alpha)).exp();
        if rng.random::<f64>() <= accept {
            return x;
        }
    }
}

/// Latent utility for probit augmentation: `z ~ N(mean, 1)` restricted to
/// `(0, ∞)` when `positive`, otherwise to `(-∞, 0]`.
pub fn sample_latent<R: Rng + ?Sized>(mean: f64, positive: bool, rng: &mut R) -> f64 {
    if positive {
        mean + sample_truncated_below(-mean, rng)
    } else {
        mean - sample_truncated_below(mean, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    // Reference values from a 30-digit arbitrary-precision evaluation.
    #[test]
    fn cdf_reference_values() {
        assert!((cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((cdf(0.7) - 0.758_036_347_776_927).abs() < 1e-15);
        assert_eq!(cdf(0.0), 0.5);
        assert!((cdf(-8.0) - 6.220_960_574_271_784e-16).abs() < 1e-28);
    }

    #[test]
    fn quantile_reference_values() {
        let cases = [
            (0.975, 1.959_963_984_540_054),
            (0.95, 1.644_853_626_951_472_7),
            (0.5, 0.0),
            (0.01, -2.326_347_874_040_841),
            (1e-10, -6.361_340_902_404_056),
            (1.0 - 1e-8, 5.612_001_243_305_505),
        ];
        for (p, x) in cases {
            assert!((quantile(p) - x).abs() < 1e-9, "p={p}: {} vs {x}", quantile(p));
        }
    }

    #[test]
    fn ln_cdf_matches_direct_and_tail() {
        for &x in &[-30.0, -5.0, -1.0, 0.0, 2.0, 9.0] {
            let direct = cdf(x).ln();
            assert!((ln_cdf(x) - direct).abs() < 1e-12 * direct.abs().max(1.0), "x={x}");
        }
        // Continuity across the asymptotic switch.
        let a = ln_cdf(-35.0 + 1e-9);
        let b = ln_cdf(-35.0 - 1e-9);
        assert!((a - b).abs() < 1e-6);
        assert!(ln_cdf(-100.0).is_finite());
    }

    #[test]
    fn latent_has_dictated_sign() {
        let mut rng = rng_from_seed(3);
        for &m in &[-9.0, -2.0, -0.3, 0.0, 0.4, 3.0, 12.0] {
            for _ in 0..2000 {
                assert!(sample_latent(m, true, &mut rng) > 0.0);
                assert!(sample_latent(m, false, &mut rng) <= 0.0);
            }
        }
    }

    #[test]
    fn truncated_mean_matches_mills_ratio() {
        // E[x | x > a] = φ(a) / (1 - Φ(a)) = mills_ratio(-a).
        let mut rng = rng_from_seed(11);
        for &a in &[-1.0, 0.0, 0.8, 3.0] {
            let n = 100_000;
            let draws: Vec<f64> = (0..n).map(|_| sample_truncated_below(a, &mut rng)).collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let expected = mills_ratio(-a);
            assert!((mean - expected).abs() < 4.0 * (var / n as f64).sqrt(), "a={a}");
        }
    }
}
