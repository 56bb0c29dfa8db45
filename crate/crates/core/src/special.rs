//! Chi-squared and normal tail functions, plus log-space accumulation helpers.
//!
//! The one-degree-of-freedom tail is evaluated through the complementary
//! error function so that far-tail probabilities (p ~ 1e-300) keep full
//! relative precision. `erfc` comes from `libm` (fdlibm, about 1 ulp); the
//! `statrs` inverse only seeds a Newton polish against it.

use statrs::distribution::{ChiSquared, ContinuousCDF};
use libm::erfc;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::gamma_ur;
use std::f64::consts::{PI, SQRT_2};

/// `Pr(chi2_1 >= x)`.
pub fn chi2_1_sf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 1.0;
    }
    erfc((0.5 * x).sqrt())
}

/// `Pr(chi2_1 >= 2 * half)`, i.e. the tail at a deviance whose half is `half`.
pub fn chi2_1_sf_half(half: f64) -> f64 {
    if half <= 0.0 {
        return 1.0;
    }
    erfc(half.sqrt())
}

/// Root of `erfc(u) = p` for `u >= 0`, polished with Newton steps.
fn erfc_root(p: f64) -> f64 {
    let mut u = erfc_inv(p);
    for _ in 0..3 {
        let f = erfc(u) - p;
        let dfdu = -2.0 / PI.sqrt() * (-u * u).exp();
        if dfdu == 0.0 || !f.is_finite() {
            break;
        }
        let step = f / dfdu;
        u -= step;
        if step.abs() <= 1e-17 * u.abs().max(1.0) {
            break;
        }
    }
    u
}

/// Upper-tail quantile of chi2_1: the `x` with `Pr(chi2_1 >= x) = p`.
pub fn chi2_1_isf(p: f64) -> f64 {
    if p >= 1.0 {
        return 0.0;
    }
    if p <= 0.0 {
        return f64::INFINITY;
    }
    let u = erfc_root(p);
    2.0 * u * u
}

/// `Pr(chi2_k >= x)`.
pub fn chi2_sf(k: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if k == 1.0 {
        return chi2_1_sf(x);
    }
    gamma_ur(0.5 * k, 0.5 * x)
}

/// Upper-tail quantile of chi2_k: the `x` with `Pr(chi2_k >= x) = p`.
pub fn chi2_isf(k: f64, p: f64) -> f64 {
    if k == 1.0 {
        return chi2_1_isf(p);
    }
    if p >= 1.0 {
        return 0.0;
    }
    if p <= 0.0 {
        return f64::INFINITY;
    }
    let dist = ChiSquared::new(k).expect("degrees of freedom must be positive");
    let mut x = dist.inverse_cdf(1.0 - p);
    if !x.is_finite() || x <= 0.0 {
        x = k;
    }
    // Newton on log sf, which is close to linear in x far in the tail.
    for _ in 0..50 {
        let sf = chi2_sf(k, x);
        let pdf = dist_pdf(k, x);
        if sf <= 0.0 || pdf <= 0.0 {
            break;
        }
        let step = (sf.ln() - p.ln()) * sf / pdf;
        let next = (x + step).max(0.5 * x);
        if (next - x).abs() <= 1e-14 * x {
            x = next;
            break;
        }
        x = next;
    }
    x
}

fn dist_pdf(k: f64, x: f64) -> f64 {
    let a = 0.5 * k;
    ((a - 1.0) * x.ln() - 0.5 * x - a * std::f64::consts::LN_2 - statrs::function::gamma::ln_gamma(a)).exp()
}

/// Standard normal upper quantile: `z` with `Pr(Z >= z) = p`.
pub fn norm_isf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::INFINITY;
    }
    if p >= 1.0 {
        return f64::NEG_INFINITY;
    }
    if p <= 0.5 {
        SQRT_2 * erfc_root(2.0 * p)
    } else {
        -SQRT_2 * erfc_root(2.0 * (1.0 - p))
    }
}

/// Standard normal upper tail `Pr(Z >= z)`.
pub fn norm_sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// `log(exp(a) + exp(b))` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Streaming log-sum-exp accumulator with a running maximum.
///
/// Summation order is the order of `push` calls, so a fixed iteration order
/// gives bit-identical results.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    scaled: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self { max: f64::NEG_INFINITY, scaled: 0.0 }
    }
}

impl LogSumExp {
    pub fn push(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v <= self.max {
            self.scaled += (v - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - v).exp() + 1.0;
            self.max = v;
        }
    }

    pub fn merge(&mut self, other: &LogSumExp) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if other.max <= self.max {
            self.scaled += other.scaled * (other.max - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - other.max).exp() + other.scaled;
            self.max = other.max;
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}
