//! Monte Carlo calibration studies.
//!
//! All simulators draw from ChaCha8 streams keyed by a seed and a stream
//! index that depends only on the replicate (or replicate chunk), and count
//! events with integers, so reports are bit-identical across thread counts.

mod prior;
mod twovar;

pub use prior::{marginal_tester, sim_prior_bfwer, strikeout_rate, DesignSource, PriorSimConfig};
pub use twovar::{reference_fpr, sim_two_variable, sim_two_variable_data, TwoVarConfig, TwoVarTarget};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// An event frequency with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub events: u64,
    pub trials: u64,
    pub estimate: f64,
    pub se: f64,
}

impl Rate {
    /// `events / trials` with `se = sqrt(p (1 - p) / trials)`; zero trials give 0.
    pub fn new(events: u64, trials: u64) -> Self {
        if trials == 0 {
            return Self { events, trials, estimate: 0.0, se: 0.0 };
        }
        let p = events as f64 / trials as f64;
        Self { events, trials, estimate: p, se: (p * (1.0 - p) / trials as f64).sqrt() }
    }
}

/// Results at one configuration point (one `beta2`, one `rho`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPoint {
    /// Name of the swept parameter.
    pub parameter: String,
    pub value: f64,
    pub metrics: BTreeMap<String, Rate>,
    /// Large-sample reference level, when one exists.
    pub reference: Option<f64>,
}

/// Posterior error among elementary rejections in prior-matched draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdrSummary {
    pub rejections: u64,
    pub false_rejections: u64,
    /// Mean of `1 / (1 + PO)` over rejections.
    pub mean_null_prob: f64,
    pub mean_null_prob_se: f64,
    /// Fraction of rejections that were true nulls.
    pub fdp: f64,
    pub fdp_se: f64,
    /// `1 / (1 + tau)`.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub experiment: String,
    pub replicates: u64,
    pub seed: u64,
    pub points: Vec<SimPoint>,
    pub fdr: Option<FdrSummary>,
    pub evalue_bound: Option<f64>,
}

/// Worst-case Bayes FWER from treating posterior odds as e-values:
/// `((1 + mu/(1+mu))^nu - 1) / tau`, capped at 1.
pub fn evalue_bound(mu: f64, nu: usize, tau: f64) -> f64 {
    let q = mu / (1.0 + mu);
    ((nu as f64 * q.ln_1p()).exp_m1() / tau).min(1.0)
}

/// Ratio estimator `sum a / sum b` over replicates with a cluster-robust SE.
fn ratio_estimate(a: &[f64], b: &[f64]) -> (f64, f64) {
    let r = a.len() as f64;
    let sb: f64 = b.iter().sum();
    if sb == 0.0 {
        return (0.0, 0.0);
    }
    let m = a.iter().sum::<f64>() / sb;
    let bbar = sb / r;
    let var = a.iter().zip(b).map(|(x, y)| (x - m * y).powi(2)).sum::<f64>() / (r - 1.0).max(1.0);
    (m, (var / r).sqrt() / bbar)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evalue_bound_values() {
        assert!((evalue_bound(1.0, 2, 3.0) - 5.0 / 12.0).abs() < 1e-15);
        assert!((evalue_bound(0.1, 15, 9.0) - 0.298_7).abs() < 1e-4);
        let mu = 1e-6;
        assert!((evalue_bound(mu, 1, 9.0) / (mu / 9.0) - 1.0).abs() < 1e-5);
        assert_eq!(evalue_bound(1.0, 30, 2.0), 1.0);
    }

    #[test]
    fn rate_se() {
        let r = Rate::new(30, 1000);
        assert_eq!(r.estimate, 0.03);
        assert!((r.se - (0.03f64 * 0.97 / 1000.0).sqrt()).abs() < 1e-18);
        assert_eq!(Rate::new(0, 0).estimate, 0.0);
    }

    #[test]
    fn ratio_of_constant_rows() {
        let (m, se) = ratio_estimate(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]);
        assert!((m - 0.5).abs() < 1e-15 && se < 1e-15);
    }
}
