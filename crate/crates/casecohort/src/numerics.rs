//! Scalar numerics: logistic helpers, the standard-normal quantile, and
//! Gauss-Hermite quadrature for normal expectations.
//!
//! The quantile is a rational approximation (Wichura's PPND16) accurate to
//! well below 1e-10 over (0, 1), so no distribution crate is needed at
//! run time. Quadrature nodes are computed once by root bracketing on the
//! orthonormal Hermite recurrence and cached.

use std::sync::LazyLock;

/// Logistic function 1 / (1 + exp(-eta)), safe against overflow.
#[inline]
pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(eta)) without overflow for large |eta|.
#[inline]
pub fn log1p_exp(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

/// Quantile of the standard normal distribution.
///
/// Rational approximation PPND16 (Wichura, algorithm AS 241); absolute
/// error below 1e-15 for p away from the extreme tails.
///
/// # Panics
/// Panics unless 0 < p < 1.
#[allow(clippy::excessive_precision)] // published coefficients, kept verbatim
pub fn standard_normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile requires 0 < p < 1, got {p}");

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        const A: [f64; 8] = [
            3.387_132_872_796_366_608,
            133.141_667_891_784_377_45,
            1_971.590_950_306_551_442_7,
            13_731.693_765_509_461_125,
            45_921.953_931_549_871_457,
            67_265.770_927_008_700_853,
            33_430.575_583_588_128_105,
            2_509.080_928_730_122_672_7,
        ];
        const B: [f64; 8] = [
            1.0,
            42.313_330_701_600_911_252,
            687.187_007_492_057_908_3,
            5_394.196_021_424_751_107_7,
            21_213.794_301_586_595_867,
            39_307.895_800_092_710_61,
            28_729.085_735_721_942_674,
            5_226.495_278_852_854_561,
        ];
        let r = 0.180625 - q * q;
        return q * horner(&A, r) / horner(&B, r);
    }

    let r = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-r.ln()).sqrt();
    let z = if r <= 5.0 {
        const C: [f64; 8] = [
            1.423_437_110_749_683_577_3,
            4.630_337_846_156_545_295_9,
            5.769_497_221_460_691_405_5,
            3.647_848_324_763_204_605,
            1.270_458_252_452_368_382_6,
            0.241_780_725_177_450_611_77,
            0.022_723_844_989_269_184_583,
            0.000_774_545_014_278_341_407_64,
        ];
        const D: [f64; 8] = [
            1.0,
            2.053_191_626_637_758_821_9,
            1.676_384_830_183_803_849_4,
            0.689_767_334_985_100_004_55,
            0.148_103_976_427_480_074_59,
            0.015_198_666_563_616_457_197,
            0.000_547_593_808_499_534_494_6,
            1.050_750_071_644_416_843_2e-9,
        ];
        r -= 1.6;
        horner(&C, r) / horner(&D, r)
    } else {
        const E: [f64; 8] = [
            6.657_904_643_501_103_777_2,
            5.463_784_911_164_114_369_9,
            1.784_826_539_917_291_335_8,
            0.296_560_571_828_504_891_23,
            0.026_532_189_526_576_123_093,
            0.001_242_660_947_388_078_438_6,
            2.711_555_568_743_487_578_15e-5,
            2.010_334_399_292_288_132_65e-7,
        ];
        const F: [f64; 8] = [
            1.0,
            0.599_832_206_555_887_937_69,
            0.136_929_880_922_735_805_31,
            0.014_875_361_290_850_614_852,
            0.000_786_869_131_145_613_259_1,
            1.846_318_317_510_054_681_8e-5,
            1.421_511_758_316_445_888_7e-7,
            2.044_263_103_389_939_785_6e-15,
        ];
        r -= 5.0;
        horner(&E, r) / horner(&F, r)
    };
    if q < 0.0 {
        -z
    } else {
        z
    }
}

#[inline]
fn horner(coeffs: &[f64; 8], x: f64) -> f64 {
    let mut acc = coeffs[7];
    for &c in coeffs[..7].iter().rev() {
        acc = acc * x + c;
    }
    acc
}

/// Gauss-Hermite rule for integrals against the weight exp(-x^2).
///
/// Used through [`GaussHermite::expect_normal`] to evaluate E[f(Z)] for
/// standard normal Z.
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Build an n-point rule. Nodes are the roots of the degree-n Hermite
    /// polynomial, found by bisection on interlacing brackets; weights use
    /// the Christoffel sum of the orthonormal recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature order must be at least 1");
        let mut roots: Vec<f64> = vec![0.0]; // roots of the degree-1 polynomial
        for k in 2..=n {
            let bound = (2.0 * k as f64 + 1.0).sqrt() + 1.0;
            let mut brackets = Vec::with_capacity(k + 1);
            brackets.push(-bound);
            brackets.extend_from_slice(&roots);
            brackets.push(bound);
            let mut next = Vec::with_capacity(k);
            for w in brackets.windows(2) {
                next.push(bisect_root(k, w[0], w[1]));
            }
            roots = next;
        }

        let weights = roots
            .iter()
            .map(|&x| {
                // Christoffel function: w_i = 1 / sum_{k<n} p_k(x_i)^2
                let mut sum = 0.0;
                let mut prev = 0.0;
                let mut cur = std::f64::consts::PI.powf(-0.25);
                sum += cur * cur;
                for k in 0..n - 1 {
                    let kf = k as f64;
                    let next =
                        x * (2.0 / (kf + 1.0)).sqrt() * cur - (kf / (kf + 1.0)).sqrt() * prev;
                    prev = cur;
                    cur = next;
                    sum += cur * cur;
                }
                1.0 / sum
            })
            .collect();

        GaussHermite {
            nodes: roots,
            weights,
        }
    }

    /// E[f(Z)] for Z ~ N(0, 1).
    pub fn expect_normal(&self, f: impl Fn(f64) -> f64) -> f64 {
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
        let sqrt2 = std::f64::consts::SQRT_2;
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(sqrt2 * x))
            .sum::<f64>()
            * inv_sqrt_pi
    }

    /// Sum of the raw weights; equals sqrt(pi) for a correct rule.
    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Orthonormal Hermite value p_k(x) for the weight exp(-x^2).
fn hermite_value(k: usize, x: f64) -> f64 {
    let mut prev = 0.0;
    let mut cur = std::f64::consts::PI.powf(-0.25);
    for j in 0..k {
        let jf = j as f64;
        let next = x * (2.0 / (jf + 1.0)).sqrt() * cur - (jf / (jf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    cur
}

fn bisect_root(k: usize, mut lo: f64, mut hi: f64) -> f64 {
    let mut f_lo = hermite_value(k, lo);
    debug_assert!(f_lo * hermite_value(k, hi) < 0.0, "bracket must straddle a root");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let f_mid = hermite_value(k, mid);
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Shared 64-point rule; accuracy for the smooth integrands used here is
/// far below the documented 1e-8.
static NORMAL_RULE: LazyLock<GaussHermite> = LazyLock::new(|| GaussHermite::new(64));

/// E[f(Z)] for Z ~ N(0, 1) using the cached 64-point rule.
pub fn normal_expectation(f: impl Fn(f64) -> f64) -> f64 {
    NORMAL_RULE.expect_normal(f)
}
