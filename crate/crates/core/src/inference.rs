//! Posterior odds, model averaging, and conversion between posterior odds,
//! p-values and error-rate thresholds.
//!
//! Throughout, `xi = h / (n + h)` and `c = mu * sqrt(xi)`. A model `s` has
//! posterior odds against the grand null
//!
//! ```text
//! PO_s = mu^|s| * xi^(|s|/2) * R_s^(1 - xi)
//! ```
//!
//! which is accumulated in log space. The model-averaged odds against a
//! tested set `T` sum `PO_s` over models that free some member of `T`
//! (numerator) and models that fix all of `T` (denominator).
//!
//! Asymptotically, `2 log(PO / scale)` has a one-degree-of-freedom chi-squared
//! tail under the null, where `scale` is the sum of the single-model constants
//! over the alternatives. For an unadjusted test of `k` variables that sum is
//! exactly `(1 + c)^k - 1`; the adjusted test and the FWER bound use the
//! union-bound form `nu * c`.

use crate::error::{Error, Result};
use crate::linmodel::{CompressedSystem, Dataset, ExhaustiveScan, FitResult, ModelId};
use crate::special::{chi2_1_isf, chi2_1_sf_half, chi2_isf, chi2_sf, norm_isf, LogSumExp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Adjusted p-values above this are reported as 1.
pub const REPORTING_CUTOFF: f64 = 0.025;

/// Prior and decision hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Prior odds that any one coefficient is nonzero.
    pub mu: f64,
    /// Prior precision.
    pub h: f64,
    /// Posterior-odds rejection threshold.
    pub tau: f64,
    /// Sample size.
    pub n: usize,
}

impl Hyperparams {
    pub fn new(mu: f64, h: f64, tau: f64, n: usize) -> Result<Self> {
        for (name, v) in [("mu", mu), ("h", h), ("tau", tau)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if n == 0 {
            return Err(Error::InvalidInput("n must be positive".into()));
        }
        Ok(Self { mu, h, tau, n })
    }

    /// Shrinkage factor `h / (n + h)`.
    pub fn xi(&self) -> f64 {
        self.h / (self.n as f64 + self.h)
    }

    /// Per-variable null scale `mu * sqrt(xi)`.
    pub fn c(&self) -> f64 {
        self.mu * self.xi().sqrt()
    }

    fn log_c(&self) -> f64 {
        self.mu.ln() + 0.5 * self.xi().ln()
    }

    /// Posterior-mean shrinkage `n / (n + h)`.
    pub fn shrinkage(&self) -> f64 {
        self.n as f64 / (self.n as f64 + self.h)
    }
}

/// `log PO_s` from the model size and `log R_s`.
pub fn log_posterior_odds(size: usize, log_mlr: f64, hyper: &Hyperparams) -> f64 {
    if size == 0 {
        return (1.0 - hyper.xi()) * log_mlr;
    }
    size as f64 * hyper.log_c() + (1.0 - hyper.xi()) * log_mlr
}

/// `log BF_s = (|s|/2) log xi + (1 - xi) log R_s`.
pub fn log_bayes_factor(size: usize, log_mlr: f64, hyper: &Hyperparams) -> f64 {
    0.5 * size as f64 * hyper.xi().ln() + (1.0 - hyper.xi()) * log_mlr
}

/// Posterior odds of a fitted model against the grand null.
pub fn posterior_odds_model(fit: &FitResult, hyper: &Hyperparams) -> f64 {
    log_posterior_odds(fit.model.size(), fit.log_mlr, hyper).exp()
}

/// Bayes factor of a fitted model against the grand null.
pub fn bayes_factor(fit: &FitResult, hyper: &Hyperparams) -> f64 {
    log_bayes_factor(fit.model.size(), fit.log_mlr, hyper).exp()
}

/// A nonempty tested set `T`; the null fixes `beta_j = 0` for all `j` in `T`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NullHypothesis {
    tested: Vec<usize>,
}

impl NullHypothesis {
    pub fn new(mut tested: Vec<usize>, nu: usize) -> Result<Self> {
        if tested.is_empty() {
            return Err(Error::EmptyTestedSet);
        }
        tested.sort_unstable();
        tested.dedup();
        if let Some(&bad) = tested.iter().find(|&&j| j >= nu) {
            return Err(Error::InvalidInput(format!("tested index {bad} out of range for nu = {nu}")));
        }
        Ok(Self { tested })
    }

    /// Null with every variable tested.
    pub fn grand(nu: usize) -> Result<Self> {
        Self::new((0..nu).collect(), nu)
    }

    pub fn tested(&self) -> &[usize] {
        &self.tested
    }

    pub fn k(&self) -> usize {
        self.tested.len()
    }

    pub fn mask(&self) -> u64 {
        ModelId::from_indices(&self.tested).0
    }
}

/// `log` of the model-averaged posterior odds against `mask`.
pub fn model_averaged_log_po_mask(log_po: &[f64], mask: u64) -> Result<f64> {
    if mask == 0 {
        return Err(Error::EmptyTestedSet);
    }
    let mut alt = LogSumExp::default();
    let mut null = LogSumExp::default();
    for (s, &v) in log_po.iter().enumerate() {
        if s as u64 & mask != 0 {
            alt.push(v);
        } else {
            null.push(v);
        }
    }
    Ok(alt.value() - null.value())
}

/// `log` of the model-averaged posterior odds against `null`.
pub fn model_averaged_log_po(scan: &ExhaustiveScan, null: &NullHypothesis) -> Result<f64> {
    if null.tested().iter().any(|&j| j >= scan.nu) {
        return Err(Error::InvalidInput("tested index out of range for the scan".into()));
    }
    model_averaged_log_po_mask(&scan.log_po, null.mask())
}

/// Model-averaged posterior odds against `null`.
pub fn model_averaged_po(scan: &ExhaustiveScan, null: &NullHypothesis) -> Result<f64> {
    model_averaged_log_po(scan, null).map(f64::exp)
}

/// `log((1 + c)^k - 1)`: the null scale for an unadjusted test of `k` variables.
fn log_unadjusted_scale(k: usize, hyper: &Hyperparams) -> f64 {
    if k == 1 {
        return hyper.log_c();
    }
    (k as f64 * hyper.c().ln_1p()).exp_m1().ln()
}

/// `log(nu * c)`: the null scale for the adjusted test and FWER bound.
fn log_adjusted_scale(nu: usize, hyper: &Hyperparams) -> f64 {
    (nu as f64).ln() + hyper.log_c()
}

/// Unadjusted p-value from `log PO` for a test of `k` variables.
pub fn log_po_to_p_unadjusted(log_po: f64, k: usize, hyper: &Hyperparams) -> f64 {
    assert!(k >= 1, "tested set must be nonempty");
    chi2_1_sf_half(log_po - log_unadjusted_scale(k, hyper))
}

/// Unadjusted p-value for posterior odds `po` on `k` tested variables.
///
/// Returns 1 when `po <= (1 + c)^k - 1`.
pub fn po_to_p_unadjusted(po: f64, k: usize, hyper: &Hyperparams) -> f64 {
    log_po_to_p_unadjusted(po.ln(), k, hyper)
}

/// Uncensored adjusted p-value from `log PO` with `nu` variables in the family.
pub fn log_po_to_p_adjusted_raw(log_po: f64, nu: usize, hyper: &Hyperparams) -> f64 {
    assert!(nu >= 1, "family must be nonempty");
    chi2_1_sf_half(log_po - log_adjusted_scale(nu, hyper))
}

/// Report `p` as 1 when it exceeds the reporting cutoff.
pub fn censor(p: f64) -> f64 {
    if p > REPORTING_CUTOFF {
        1.0
    } else {
        p
    }
}

/// Adjusted p-value for posterior odds `po` against a family of `nu` variables.
pub fn po_to_p_adjusted(po: f64, nu: usize, hyper: &Hyperparams, censored: bool) -> f64 {
    let p = log_po_to_p_adjusted_raw(po.ln(), nu, hyper);
    if censored {
        censor(p)
    } else {
        p
    }
}

/// `log PO` whose unadjusted p-value on `k` variables is `p`.
pub fn p_to_log_po(p: f64, k: usize, hyper: &Hyperparams) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidInput(format!("p must lie in (0, 1], got {p}")));
    }
    if k == 0 {
        return Err(Error::EmptyTestedSet);
    }
    Ok(log_unadjusted_scale(k, hyper) + 0.5 * chi2_1_isf(p))
}

/// Posterior odds whose unadjusted p-value on `k` variables is `p`.
pub fn p_to_po(p: f64, k: usize, hyper: &Hyperparams) -> Result<f64> {
    p_to_log_po(p, k, hyper).map(f64::exp)
}

/// Asymptotic strong-sense FWER of the test `PO >= tau` over `nu` variables.
pub fn fwer_threshold(hyper: &Hyperparams, nu: usize) -> f64 {
    chi2_1_sf_half(hyper.tau.ln() - log_adjusted_scale(nu, hyper))
}

/// Bayesian FDR bound `1 / (1 + tau)` implied by rejecting at `PO >= tau`.
pub fn fdr_threshold(tau: f64) -> f64 {
    1.0 / (1.0 + tau)
}

/// Threshold `tau` whose asymptotic FWER over `nu` variables is `alpha`.
pub fn tau_for_fwer(alpha: f64, nu: usize, mu: f64, h: f64, n: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if nu == 0 {
        return Err(Error::EmptyTestedSet);
    }
    let hyper = Hyperparams::new(mu, h, 1.0, n)?;
    Ok((log_adjusted_scale(nu, &hyper) + 0.5 * chi2_1_isf(alpha)).exp())
}

/// Classical power of the test `PO_s >= tau` for a model of dimension `k`
/// when effects are drawn from the prior.
pub fn classical_power(k: usize, hyper: &Hyperparams) -> f64 {
    let q = chi2_isf(k as f64, fdr_threshold(hyper.tau));
    chi2_sf(k as f64, q / (1.0 + hyper.n as f64 / hyper.h))
}

/// Whether a test is on the full variable set or a sub-analysis of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestMode {
    Full,
    /// Only a subset was analysed; a rejection applies to the intersection of
    /// the tested null with the nulls of every excluded variable.
    SubAnalysis { excluded: Vec<String> },
}

/// Outcome of testing one null hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub tested: Vec<usize>,
    pub tested_names: Vec<String>,
    /// Model-averaged posterior odds (may be `inf` when `log_po` exceeds ~709).
    pub po: f64,
    pub log_po: f64,
    pub p_unadj: f64,
    /// Adjusted p-value after reporting censoring.
    pub p_adj: f64,
    pub p_adj_raw: f64,
    /// Posterior probability of the null, `1 / (1 + po)`, when rejected.
    pub fdr_bound: Option<f64>,
    pub rejected_bayes: bool,
    /// Whether `p_adj_raw <= alpha`.
    pub rejected_freq: bool,
    /// Variable count of the family used for adjustment.
    pub nu_family: usize,
    pub mode: TestMode,
}

/// Assemble a report for a null with `k` tested variables.
#[allow(clippy::too_many_arguments)]
pub fn build_report(
    log_po: f64,
    tested: Vec<usize>,
    tested_names: Vec<String>,
    nu_family: usize,
    hyper: &Hyperparams,
    alpha: f64,
    censored: bool,
    mode: TestMode,
) -> TestReport {
    let k = tested.len();
    let po = log_po.exp();
    let p_unadj = log_po_to_p_unadjusted(log_po, k, hyper);
    let p_adj_raw = log_po_to_p_adjusted_raw(log_po, nu_family, hyper).max(p_unadj);
    let p_adj = if censored { censor(p_adj_raw) } else { p_adj_raw };
    let rejected_bayes = po >= hyper.tau;
    let fdr_bound = rejected_bayes.then(|| 1.0 / (1.0 + po));
    TestReport {
        tested,
        tested_names,
        po,
        log_po,
        p_unadj,
        p_adj,
        p_adj_raw,
        fdr_bound,
        rejected_bayes,
        rejected_freq: p_adj_raw <= alpha,
        nu_family,
        mode,
    }
}

/// Classical and Bayesian estimates of one coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEstimate {
    pub variable: usize,
    pub name: String,
    pub classical_mean: f64,
    pub classical_se: f64,
    pub bayes_mean: f64,
    pub bayes_se: f64,
    pub inclusion_prob: f64,
}

/// Estimates under the single model `s`; excluded variables are omitted.
pub fn model_estimates(data: &Dataset, s: ModelId, hyper: &Hyperparams) -> Result<Vec<CoefficientEstimate>> {
    let sys = CompressedSystem::new(data)?;
    let fit = sys.fit(s)?;
    let sigma2 = sys.sigma2(fit.rss);
    let shrink = hyper.shrinkage();
    Ok(s.indices()
        .into_iter()
        .enumerate()
        .map(|(c, j)| {
            let var = sigma2 * fit.inv_gram_diag[c];
            CoefficientEstimate {
                variable: j,
                name: data.names()[j].clone(),
                classical_mean: fit.beta[c],
                classical_se: var.sqrt(),
                bayes_mean: shrink * fit.beta[c],
                bayes_se: (shrink * var).sqrt(),
                inclusion_prob: 1.0,
            }
        })
        .collect())
}

const CHUNK: usize = 1024;

#[derive(Clone)]
struct Moments {
    weight: f64,
    incl: Vec<f64>,
    cm1: Vec<f64>,
    cm2: Vec<f64>,
    bm1: Vec<f64>,
    bm2: Vec<f64>,
}

impl Moments {
    fn zero(nu: usize) -> Self {
        Self {
            weight: 0.0,
            incl: vec![0.0; nu],
            cm1: vec![0.0; nu],
            cm2: vec![0.0; nu],
            bm1: vec![0.0; nu],
            bm2: vec![0.0; nu],
        }
    }

    fn add(&mut self, o: &Moments) {
        self.weight += o.weight;
        for j in 0..self.incl.len() {
            self.incl[j] += o.incl[j];
            self.cm1[j] += o.cm1[j];
            self.cm2[j] += o.cm2[j];
            self.bm1[j] += o.bm1[j];
            self.bm2[j] += o.bm2[j];
        }
    }
}

/// Model-averaged estimates for every candidate variable.
///
/// Each model contributes its classical estimate `theta_hat` with variance
/// `[J^-1]_jj` and its posterior `n/(n+h) theta_hat` with variance
/// `n/(n+h) [J^-1]_jj`, weighted by `PO_s / sum PO`. Excluded coefficients
/// are a point mass at zero. Means and variances follow the law of total
/// variance. Chunks are reduced in a fixed order, so results do not depend
/// on the thread count.
pub fn coefficient_estimates(data: &Dataset, scan: &ExhaustiveScan) -> Result<Vec<CoefficientEstimate>> {
    let nu = scan.nu;
    if data.nu() != nu || scan.hyper.n != data.n() {
        return Err(Error::InvalidInput("scan does not belong to this dataset".into()));
    }
    let sys = CompressedSystem::new(data)?;
    let mut total = LogSumExp::default();
    for &v in &scan.log_po {
        total.push(v);
    }
    let log_total = total.value();
    let shrink = scan.hyper.shrinkage();
    let parts = scan
        .log_po
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| -> Result<Moments> {
            let mut acc = Moments::zero(nu);
            for (off, &lp) in chunk.iter().enumerate() {
                let s = ModelId((ci * CHUNK + off) as u64);
                let w = (lp - log_total).exp();
                acc.weight += w;
                if s.0 == 0 || w == 0.0 {
                    continue;
                }
                let fit = sys.fit(s)?;
                let sigma2 = sys.sigma2(fit.rss);
                for (c, j) in s.indices().into_iter().enumerate() {
                    let m = fit.beta[c];
                    let v = sigma2 * fit.inv_gram_diag[c];
                    acc.incl[j] += w;
                    acc.cm1[j] += w * m;
                    acc.cm2[j] += w * (v + m * m);
                    let (bm, bv) = (shrink * m, shrink * v);
                    acc.bm1[j] += w * bm;
                    acc.bm2[j] += w * (bv + bm * bm);
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut tot = Moments::zero(nu);
    for p in &parts {
        tot.add(p);
    }
    Ok((0..nu)
        .map(|j| {
            let w = tot.weight;
            let (cm, bm) = (tot.cm1[j] / w, tot.bm1[j] / w);
            let cv = (tot.cm2[j] / w - cm * cm).max(0.0);
            let bv = (tot.bm2[j] / w - bm * bm).max(0.0);
            CoefficientEstimate {
                variable: j,
                name: data.names()[j].clone(),
                classical_mean: cm,
                classical_se: cv.sqrt(),
                bayes_mean: bm,
                bayes_se: bv.sqrt(),
                inclusion_prob: (tot.incl[j] / w).min(1.0),
            }
        })
        .collect())
}

/// Closed interval `(lower, upper)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

/// Classical `100(1 - alpha)%` confidence interval and Bayesian
/// `100(1 - 1/(1 + tau))%` credibility interval for one estimate.
///
/// For a mixture estimate these are the normal approximation
/// `mean +/- z * sd` of the mixture.
pub fn intervals(est: &CoefficientEstimate, alpha: f64, tau: f64) -> (Interval, Interval) {
    let zc = norm_isf(0.5 * alpha);
    let zb = norm_isf(0.5 * fdr_threshold(tau));
    (
        Interval { lower: est.classical_mean - zc * est.classical_se, upper: est.classical_mean + zc * est.classical_se },
        Interval { lower: est.bayes_mean - zb * est.bayes_se, upper: est.bayes_mean + zb * est.bayes_se },
    )
}
