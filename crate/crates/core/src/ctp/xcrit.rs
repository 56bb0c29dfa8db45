//! The crossing point `x_crit` of the one-term and two-term mean tails.
//!
//! Let `X_i = exp(G_i)` with `G_i ~ Gamma(1/2, 1)` independent, so that
//! `2 log X_i` is chi-squared with one degree of freedom. `x_crit` solves
//! `Pr(X_1 >= x) = Pr((X_1 + X_2)/2 >= x)` for `x > 1`. Above it the
//! single-term tail dominates the averaged one.

use crate::error::Result;
use crate::numeric::{brent, integrate};
use crate::special::chi2_1_sf_half;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Root of the tail-crossing equation and the tail probability there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XcritResult {
    pub x_crit: f64,
    /// `Pr(chi2_1 >= 2 log x_crit)`.
    pub tail_prob: f64,
}

/// `Pr(X_1 >= x)`.
pub fn tail_one(x: f64) -> f64 {
    if x <= 1.0 {
        1.0
    } else {
        chi2_1_sf_half(x.ln())
    }
}

/// `Pr((X_1 + X_2)/2 >= x)` by quadrature over `u = sqrt(log X_2)`,
/// which is half-normal with density `(2/sqrt(pi)) exp(-u^2)`.
pub fn tail_two(x: f64, abs_tol: f64) -> Result<f64> {
    if x <= 1.0 {
        return Ok(1.0);
    }
    let u_star = (2.0 * x - 1.0).ln().sqrt();
    let dens = 2.0 / PI.sqrt();
    let f = |u: f64| {
        let rest = 2.0 * x - (u * u).exp();
        dens * (-u * u).exp() * tail_one(rest)
    };
    let body = integrate(f, 0.0, u_star, abs_tol, 10_000)?;
    Ok(body + libm::erfc(u_star))
}

/// Solve for `x_crit` on `[2, 100]` with quadrature tolerance `1e-10`.
pub fn xcrit_threshold() -> Result<XcritResult> {
    let tol = 1e-10;
    let mut failure = None;
    let root = brent(
        |x| match tail_two(x, tol) {
            Ok(t2) => tail_one(x) - t2,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        2.0,
        100.0,
        1e-12,
        200,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let x_crit = root?;
    Ok(XcritResult { x_crit, tail_prob: tail_one(x_crit) })
}

/// Monte Carlo estimate of `Pr((X_1 + ... + X_k)/k >= x)`.
///
/// Draws are split into fixed chunks with one ChaCha stream each, so the
/// count is identical for every thread count. Returns `(estimate, se)`.
pub fn mc_mean_tail(k: usize, x: f64, draws: u64, seed: u64) -> (f64, f64) {
    const CHUNK: u64 = 1 << 16;
    let chunks = draws.div_ceil(CHUNK);
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let len = CHUNK.min(draws - c * CHUNK);
            let mut hits = 0u64;
            for _ in 0..len {
                let mut sum = 0.0;
                for _ in 0..k {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sum += (0.5 * z * z).exp();
                }
                hits += (sum >= k as f64 * x) as u64;
            }
            hits
        })
        .sum();
    let p = hits as f64 / draws as f64;
    (p, (p * (1.0 - p) / draws as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_two_at_small_x_is_one() {
        assert_eq!(tail_two(1.0, 1e-10).unwrap(), 1.0);
        assert!(tail_two(1.5, 1e-10).unwrap() > tail_one(1.5));
    }

    #[test]
    fn root_matches_independent_solver() {
        // Independent oracle: mpmath quad + findroot on the same equation at 30 digits.
        let r = xcrit_threshold().unwrap();
        assert!((r.x_crit - 11.927_207_032_362_56).abs() < 1e-6, "{}", r.x_crit);
        assert!((r.tail_prob - 0.025_975_571_741_062_36).abs() < 1e-9, "{}", r.tail_prob);
        assert!((tail_one(r.x_crit) - tail_two(r.x_crit, 1e-12).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn tail_prob_is_chi_square_tail() {
        let r = xcrit_threshold().unwrap();
        let direct = crate::special::chi2_1_sf(2.0 * r.x_crit.ln());
        assert!((r.tail_prob - direct).abs() < 1e-9);
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        assert_eq!(mc_mean_tail(2, 5.0, 100_000, 3), mc_mean_tail(2, 5.0, 100_000, 3));
    }

    #[test]
    fn quadrature_agrees_with_monte_carlo() {
        let x = 6.0;
        let (p, se) = mc_mean_tail(2, x, 400_000, 11);
        let exact = tail_two(x, 1e-12).unwrap();
        assert!((p - exact).abs() < 4.0 * se, "{p} vs {exact}");
    }
}
