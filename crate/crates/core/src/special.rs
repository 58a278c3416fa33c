//! Modified Bessel function of the second kind and a few distribution helpers.
//!
//! `K_ν` uses Temme's series for `x ≤ 2` and Steed's continued fraction for
//! larger arguments, both for the reduced order `|μ| ≤ 1/2`, followed by
//! upward recurrence in the order. Everything is returned in log space.

use std::f64::consts::PI;

use statrs::distribution::{ContinuousCDF, Normal};

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 100_000;

/// Taylor coefficients of `1/Γ(1+x)` around 0.
const RECIP_GAMMA: [f64; 30] = [
    1.0,
    0.577_215_664_901_532_860_61,
    -0.655_878_071_520_253_881_08,
    -0.042_002_635_034_095_235_529,
    0.166_538_611_382_291_489_5,
    -0.042_197_734_555_544_336_748,
    -0.009_621_971_527_876_973_562_1,
    0.007_218_943_246_663_099_542_4,
    -0.001_165_167_591_859_065_112_1,
    -0.000_215_241_674_114_950_972_82,
    0.000_128_050_282_388_116_186_15,
    -0.000_020_134_854_780_788_238_656,
    -1.250_493_482_142_670_657_3e-6,
    1.133_027_231_981_695_882_4e-6,
    -2.056_338_416_977_607_103_5e-7,
    6.116_095_104_481_415_817_9e-9,
    5.002_007_644_469_222_930_1e-9,
    -1.181_274_570_487_020_144_6e-9,
    1.043_426_711_691_100_510_5e-10,
    7.782_263_439_905_071_254e-12,
    -3.696_805_618_642_205_708_2e-12,
    5.100_370_287_454_475_979e-13,
    -2.058_326_053_566_506_783_2e-14,
    -5.348_122_539_423_017_982_4e-15,
    1.226_778_628_238_260_790_2e-15,
    -1.181_259_301_697_458_769_5e-16,
    1.186_692_254_751_600_332_6e-18,
    1.412_380_655_318_031_781_6e-18,
    -2.298_745_684_435_370_206_6e-19,
    1.714_406_321_927_337_433_4e-20,
];

/// Returns `(gam1, gam2, 1/Γ(1+μ), 1/Γ(1−μ))` for `|μ| ≤ 1/2`.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    let mut gam2 = 0.0;
    let mut gam1 = 0.0;
    let mu2 = mu * mu;
    let mut p = 1.0;
    for j in 0..RECIP_GAMMA.len() / 2 {
        gam2 += RECIP_GAMMA[2 * j] * p;
        gam1 -= RECIP_GAMMA[2 * j + 1] * p;
        p *= mu2;
    }
    let gampl = gam2 - mu * gam1;
    let gammi = gam2 + mu * gam1;
    (gam1, gam2, gampl, gammi)
}

/// `ln K_ν(x) + x` together with `ln K_{ν+1}(x) + x` for `|ν| ≤ 1/2`.
fn reduced_scaled(mu: f64, x: f64) -> (f64, f64) {
    if x <= 2.0 {
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu * mu);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        (sum.ln() + x, (sum1 * 2.0 / x).ln() + x)
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut h = d;
        let mut delh = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu * mu;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 1..MAX_ITER {
            let fi = i as f64;
            a -= 2.0 * fi;
            c = -a * c / (fi + 1.0);
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        h *= a1;
        let lk = 0.5 * (PI / (2.0 * x)).ln() - s.ln();
        let lk1 = lk + ((mu + x + 0.5 - h) / x).ln();
        (lk, lk1)
    }
}

/// `ln(K_ν(x) · eˣ)` for `x > 0`.
pub fn ln_bessel_k_scaled(nu: f64, x: f64) -> f64 {
    assert!(x > 0.0, "Bessel K needs a positive argument");
    let nu = nu.abs();
    let nl = (nu + 0.5).floor();
    let mu = nu - nl;
    let (lk0, lk1) = reduced_scaled(mu, x);
    if nl == 0.0 {
        return lk0;
    }
    // Upward recurrence on values normalized by K_{μ}.
    let mut k_prev = 1.0;
    let mut k_cur = (lk1 - lk0).exp();
    let mut log_scale = lk0;
    for i in 1..nl as usize {
        let next = (mu + i as f64) * 2.0 / x * k_cur + k_prev;
        k_prev = k_cur;
        k_cur = next;
        if k_cur > 1e250 {
            log_scale += k_cur.ln();
            k_prev /= k_cur;
            k_cur = 1.0;
        }
    }
    log_scale + k_cur.ln()
}

/// `ln K_ν(x)` for `x > 0`.
pub fn ln_bessel_k(nu: f64, x: f64) -> f64 {
    ln_bessel_k_scaled(nu, x) - x
}

pub fn bessel_k(nu: f64, x: f64) -> f64 {
    ln_bessel_k(nu, x).exp()
}

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

/// Standard normal upper tail `1 − Φ(z)`, accurate for large `z`.
pub fn norm_sf(z: f64) -> f64 {
    Normal::standard().sf(z)
}

/// Kolmogorov–Smirnov distance between a sample and the standard normal.
pub fn ks_distance_std_normal(sample: &[f64]) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    s.iter().enumerate().fold(0.0_f64, |acc, (i, &v)| {
        let f = norm_cdf(v);
        acc.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    /// `ln ∫₀^∞ exp(−x cosh t) cosh(νt) dt` by the trapezoid rule, which is
    /// spectrally accurate for this doubly-decaying analytic integrand.
    fn ln_k_quadrature(nu: f64, x: f64) -> f64 {
        let f = |t: f64| -> f64 {
            let lc = nu * t + (0.5 + 0.5 * (-2.0 * nu * t).exp()).ln();
            -x * t.cosh() + lc
        };
        let step = 1e-3;
        let mut fmax = f64::NEG_INFINITY;
        let mut t = 0.0;
        let mut vals = Vec::new();
        loop {
            let v = f(t);
            fmax = fmax.max(v);
            vals.push(v);
            if v < fmax - 60.0 && t > 1.0 {
                break;
            }
            t += step;
        }
        let mut s = 0.0;
        for (i, v) in vals.iter().enumerate() {
            let w = if i == 0 { 0.5 } else { 1.0 };
            s += w * (v - fmax).exp();
        }
        fmax + (s * step).ln()
    }

    #[test]
    fn closed_forms() {
        // K_{1/2}(x) = sqrt(π/(2x)) e^{-x}
        for &x in &[1e-3, 0.3, 1.0, 2.0, 2.5, 10.0, 300.0] {
            let want = 0.5 * (PI / (2.0 * x)).ln() - x;
            assert!((ln_bessel_k(0.5, x) - want).abs() < 1e-13, "x = {x}");
            // K_{3/2}(x) = K_{1/2}(x) (1 + 1/x)
            let want32 = want + (1.0 + 1.0 / x).ln();
            assert!((ln_bessel_k(1.5, x) - want32).abs() < 1e-12, "x = {x}");
        }
        assert!((bessel_k(0.0, 1.0) - 0.421_024_438_240_708_33).abs() < 1e-15);
        assert!((bessel_k(1.0, 1.0) - 0.601_907_230_197_234_6).abs() < 1e-15);
        assert!((bessel_k(1.0, 3.0) - 0.040_156_431_128_194_18).abs() < 1e-16);
    }

    #[test]
    fn matches_integral_representation() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..100 {
            let nu = 0.1 + 9.9 * rng.random::<f64>();
            let x = (1e-6f64.ln() + (500f64.ln() - 1e-6f64.ln()) * rng.random::<f64>()).exp();
            let got = ln_bessel_k(nu, x);
            let want = ln_k_quadrature(nu, x);
            // relative error of K itself
            assert!((got - want).abs() < 1e-10, "nu={nu} x={x} got={got} want={want}");
        }
    }

    #[test]
    fn scaled_is_stable_for_huge_arguments() {
        let x = 1e6;
        let want = 0.5 * (PI / (2.0 * x)).ln() + (1.0 + 3.0 / (8.0 * x)).ln();
        assert!((ln_bessel_k_scaled(1.0, x) - want).abs() < 1e-12);
    }

    #[test]
    fn temme_gammas_consistent() {
        for &mu in &[-0.5, -0.2, 0.0, 0.1, 0.5] {
            let (_, _, gp, gm) = temme_gammas(mu);
            assert!((gp - (-ln_gamma(1.0 + mu)).exp()).abs() < 1e-14);
            assert!((gm - (-ln_gamma(1.0 - mu)).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn ks_of_quantiles_is_small() {
        let n = 1000;
        let s: Vec<f64> = (0..n)
            .map(|i| {
                let p = (i as f64 + 0.5) / n as f64;
                Normal::standard().inverse_cdf(p)
            })
            .collect();
        assert!(ks_distance_std_normal(&s) <= 0.5 / n as f64 + 1e-9);
    }
}
