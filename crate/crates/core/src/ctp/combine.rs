//! p-value combination baselines: Bonferroni, Simes and the harmonic mean p-value.

use crate::error::{Error, Result};
use crate::numeric::{brent, integrate};
use std::f64::consts::{FRAC_PI_2, PI};

/// Euler-Mascheroni constant.
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

fn check(pvals: &[f64]) -> Result<()> {
    if pvals.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(p) = pvals.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::InvalidInput(format!("p-values must lie in (0, 1], got {p}")));
    }
    Ok(())
}

/// `min(1, k * min p)`.
pub fn combine_bonferroni(pvals: &[f64]) -> Result<f64> {
    check(pvals)?;
    let m = pvals.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((pvals.len() as f64 * m).min(1.0))
}

/// `min_i p_(i) k / i` over the ordered p-values.
pub fn combine_simes(pvals: &[f64]) -> Result<f64> {
    check(pvals)?;
    let mut sorted = pvals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len() as f64;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, p)| p * k / (i + 1) as f64)
        .fold(f64::INFINITY, f64::min)
        .min(1.0))
}

/// Survival function of the totally skewed (beta = 1) alpha = 1 stable law
/// with unit scale and zero location.
///
/// Uses the integral representation
/// `Pr(Z > z) = (1/pi) int_{-pi/2}^{pi/2} (1 - exp(-e^{-pi z/2} V(t))) dt`,
/// `V(t) = (2/pi) (pi/2 + t) / cos t * exp((pi/2 + t) tan t)`.
pub fn landau_sf(z: f64) -> f64 {
    let shift = FRAC_PI_2 * z;
    let ln_v = |t: f64| -> f64 {
        let a = FRAC_PI_2 + t;
        if a <= 0.0 {
            return (2.0 / PI).ln() - 1.0;
        }
        (2.0 / PI).ln() + a.ln() - t.cos().ln() + a * t.tan()
    };
    let f = |t: f64| {
        let e = (ln_v(t) - shift).exp();
        if e.is_finite() {
            -(-e).exp_m1()
        } else {
            1.0
        }
    };
    let lo = -FRAC_PI_2;
    let hi = FRAC_PI_2;
    // The integrand steps from 0 to 1 where ln V(t) crosses pi z / 2; for
    // large z that happens in a sliver near pi/2, so cut around it.
    let edge = hi - 1e-14;
    let mut cuts = vec![lo];
    for level in [-40.0, -10.0, -2.0, 0.0, 3.0] {
        let target = shift + level;
        if ln_v(*cuts.last().unwrap()) < target && ln_v(edge) > target {
            if let Ok(t) = brent(|t| ln_v(t) - target, *cuts.last().unwrap(), edge, 1e-16, 200) {
                cuts.push(t);
            }
        }
    }
    cuts.push(hi);
    let rough: Vec<f64> = cuts.windows(2).map(|w| integrate(f, w[0], w[1], 1e-10, 4000).unwrap_or(0.0)).collect();
    // Refine each piece to a tolerance relative to the whole integral.
    let tol = (rough.iter().sum::<f64>() * 1e-11).clamp(1e-300, 1e-10);
    let total: f64 = cuts
        .windows(2)
        .zip(&rough)
        .map(|(w, &r)| integrate(f, w[0], w[1], tol, 20_000).unwrap_or(r))
        .sum();
    (total / PI).clamp(0.0, 1.0)
}

/// Harmonic mean p-value with its asymptotically exact tail.
///
/// The weighted harmonic mean `(sum w_i / p_i)^-1` is referred to a Landau
/// (stable, alpha = 1, beta = 1) law with location `ln L + 1 - gamma + ln(pi/2)`
/// (about `ln L + 0.874`) and scale `pi/2`. Weights default to uniform and must
/// sum to one. A single p-value is returned unchanged.
pub fn combine_hmp(pvals: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    check(pvals)?;
    let l = pvals.len();
    let uniform;
    let w = match weights {
        Some(w) => {
            if w.len() != l || w.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::InvalidInput("weights must be positive, one per p-value".into()));
            }
            if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput("weights must sum to one".into()));
            }
            w
        }
        None => {
            uniform = vec![1.0 / l as f64; l];
            &uniform
        }
    };
    if l == 1 {
        return Ok(pvals[0]);
    }
    let inv_hmp: f64 = pvals.iter().zip(w).map(|(p, w)| w / p).sum();
    let z = (inv_hmp - ((l as f64).ln() + 1.0 - EULER_GAMMA)) / FRAC_PI_2;
    Ok(landau_sf(z).min(1.0))
}
