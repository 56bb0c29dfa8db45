//! Prior-matched simulations: Bayes FWER, its asymptotic sum-of-odds
//! counterpart, posterior error among rejections and strikeout rates.
//!
//! Each replicate draws a true model with independent inclusions of
//! probability `mu / (1 + mu)`, draws the included coefficients from the
//! conjugate prior `N(0, C_SS^-1 / h)` with `C` the standardized design's
//! correlation matrix, and simulates `y = X beta + e` with unit noise. The
//! analysis uses the same prior with known unit variance and no intercept,
//! so the computed posterior odds are exact.

use super::{ratio_estimate, FdrSummary, Rate, SimPoint, SimReport};
use crate::ctp::build_grouping;
use crate::error::{Error, Result};
use crate::inference::{model_averaged_log_po_mask, Hyperparams};
use crate::linmodel::{scan_all_models, CorrelationMatrix, Dataset, ExhaustiveScan, NuisanceSpec, VarianceMode, DEFAULT_SCAN_CAP};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Where each replicate's design comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignSource {
    /// A fixed `n x nu` matrix, standardized once and reused.
    Template(DMatrix<f64>),
    /// Rows drawn from `N(0, R)` each replicate, then standardized.
    SyntheticCorr(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorSimConfig {
    pub nu: usize,
    pub mu: f64,
    pub h: f64,
    pub tau: f64,
    pub n: usize,
    pub design_source: DesignSource,
    pub rho_levels: Vec<f64>,
    pub replicates: u64,
    pub seed: u64,
}

/// Center and scale columns to mean 0 and `sum x^2 = n`.
fn standardize(mut x: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows() as f64;
    for mut col in x.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let ss = col.norm_squared();
        if !(ss > 1e-24 * n) {
            return Err(Error::ZeroVarianceColumn("simulated design column".into()));
        }
        col *= (n / ss).sqrt();
    }
    Ok(x)
}

enum Prepared {
    Fixed(DMatrix<f64>),
    Draw(DMatrix<f64>),
}

impl PriorSimConfig {
    fn validate(&self) -> Result<(Hyperparams, Prepared)> {
        if self.replicates == 0 {
            return Err(Error::InvalidInput("replicates must be at least 1".into()));
        }
        if self.nu == 0 {
            return Err(Error::InvalidInput("nu must be positive".into()));
        }
        if self.nu > DEFAULT_SCAN_CAP {
            return Err(Error::TooManyVariables { nu: self.nu, cap: DEFAULT_SCAN_CAP });
        }
        if let Some(r) = self.rho_levels.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::InvalidInput(format!("rho levels must lie in [0, 1], got {r}")));
        }
        let hyper = Hyperparams::new(self.mu, self.h, self.tau, self.n)?;
        let prepared = match &self.design_source {
            DesignSource::Template(x) => {
                if x.ncols() != self.nu || x.nrows() != self.n {
                    return Err(Error::InvalidInput(format!(
                        "template is {}x{}, expected {}x{}",
                        x.nrows(),
                        x.ncols(),
                        self.n,
                        self.nu
                    )));
                }
                Prepared::Fixed(standardize(x.clone())?)
            }
            DesignSource::SyntheticCorr(r) => {
                if r.nrows() != self.nu || r.ncols() != self.nu {
                    return Err(Error::InvalidInput("correlation matrix must be nu x nu".into()));
                }
                if (0..self.nu).any(|i| (r[(i, i)] - 1.0).abs() > 1e-12) || (r - r.transpose()).amax() > 1e-12 {
                    return Err(Error::InvalidInput("correlation matrix must be symmetric with unit diagonal".into()));
                }
                let chol = r
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::InvalidInput("correlation matrix is not positive definite".into()))?;
                Prepared::Draw(chol.l())
            }
        };
        if self.n <= self.nu {
            return Err(Error::InvalidInput("n must exceed nu".into()));
        }
        Ok((hyper, prepared))
    }
}

/// One simulated dataset and its scan.
struct Replicate {
    truth: u64,
    corr: CorrelationMatrix,
    scan: ExhaustiveScan,
}

fn simulate(cfg: &PriorSimConfig, hyper: &Hyperparams, prep: &Prepared, rep: u64) -> Result<Replicate> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(rep);
    let (n, nu) = (cfg.n, cfg.nu);
    let x = match prep {
        Prepared::Fixed(x) => x.clone(),
        Prepared::Draw(l) => {
            let z = DMatrix::from_fn(n, nu, |_, _| rng.sample::<f64, _>(StandardNormal));
            standardize(z * l.transpose())?
        }
    };
    let mut c = x.tr_mul(&x) / n as f64;
    c.fill_diagonal(1.0);
    let p_incl = cfg.mu / (1.0 + cfg.mu);
    let truth = (0..nu).fold(0u64, |m, j| if rng.random::<f64>() < p_incl { m | 1 << j } else { m });
    let idx: Vec<usize> = (0..nu).filter(|&j| truth >> j & 1 == 1).collect();
    let mut beta = DVector::zeros(nu);
    if !idx.is_empty() {
        let k = idx.len();
        let c_ss = DMatrix::from_fn(k, k, |a, b| c[(idx[a], idx[b])]);
        let chol = c_ss.cholesky().ok_or_else(|| Error::RankDeficient { model: truth, rank: 0, cols: k })?;
        let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal) / cfg.h.sqrt());
        // Solve L' b = z so that cov(b) = (L L')^-1 / h.
        let b = chol.l().tr_solve_lower_triangular(&z).expect("triangular factor is nonsingular");
        for (a, &j) in idx.iter().enumerate() {
            beta[j] = b[a];
        }
    }
    let mean = &x * &beta;
    let y: Vec<f64> = (0..n).map(|i| mean[i] + rng.sample::<f64, _>(StandardNormal)).collect();
    let corr = CorrelationMatrix::from_row_major(nu, (0..nu * nu).map(|e| c[(e / nu, e % nu)]).collect())?;
    let names = (0..nu).map(|j| format!("x{j}")).collect();
    let data = Dataset::new(y, x, names, NuisanceSpec::new(false, VarianceMode::Known(1.0)))?;
    let scan = scan_all_models(&data, hyper)?;
    Ok(Replicate { truth, corr, scan })
}

fn run<T: Send>(cfg: &PriorSimConfig, f: impl Fn(Replicate) -> Result<T> + Sync) -> Result<Vec<T>> {
    let (hyper, prep) = cfg.validate()?;
    (0..cfg.replicates)
        .into_par_iter()
        .map(|rep| f(simulate(cfg, &hyper, &prep, rep)?))
        .collect()
}

struct Outcome {
    bfwer: Vec<bool>,
    afwer: Vec<bool>,
    rejections: u64,
    false_rejections: u64,
    null_prob_sum: f64,
}

/// Bayes FWER and its sum-of-odds counterpart at each `rho` level, plus
/// posterior error among elementary rejections.
///
/// At level `rho` the largest admissible set of true nulls is the union of
/// correlation blocks containing no true signal; a familywise error occurs
/// exactly when that set is rejected, since posterior odds grow with the
/// tested set. The sum-of-odds event adds, over the same variables, the
/// odds of adding each one to the true model.
pub fn sim_prior_bfwer(cfg: &PriorSimConfig) -> Result<SimReport> {
    let log_tau = cfg.tau.ln();
    let nu = cfg.nu;
    let outcomes = run(cfg, |r| {
        let hyper = r.scan.hyper;
        let log_c = hyper.c().ln();
        let shrink = 1.0 - hyper.xi();
        let mut bfwer = Vec::with_capacity(cfg.rho_levels.len());
        let mut afwer = Vec::with_capacity(cfg.rho_levels.len());
        for &rho in &cfg.rho_levels {
            let policy = build_grouping(&r.corr, rho);
            let t = (0..policy.blocks.len())
                .map(|b| policy.block_mask(b))
                .filter(|m| m & r.truth == 0)
                .fold(0u64, |a, m| a | m);
            if t == 0 {
                bfwer.push(false);
                afwer.push(false);
                continue;
            }
            bfwer.push(model_averaged_log_po_mask(&r.scan.log_po, t)? >= log_tau);
            let base = r.scan.log_mlr[r.truth as usize];
            let sum: f64 = (0..nu)
                .filter(|&j| t >> j & 1 == 1)
                .map(|j| (log_c + shrink * (r.scan.log_mlr[(r.truth | 1 << j) as usize] - base)).exp())
                .sum();
            afwer.push(sum >= cfg.tau);
        }
        let mut rejections = 0;
        let mut false_rejections = 0;
        let mut null_prob_sum = 0.0;
        for j in 0..nu {
            let lp = model_averaged_log_po_mask(&r.scan.log_po, 1 << j)?;
            if lp >= log_tau {
                rejections += 1;
                false_rejections += (r.truth >> j & 1 == 0) as u64;
                null_prob_sum += 1.0 / (1.0 + lp.exp());
            }
        }
        Ok(Outcome { bfwer, afwer, rejections, false_rejections, null_prob_sum })
    })?;
    let reps = cfg.replicates;
    let points = cfg
        .rho_levels
        .iter()
        .enumerate()
        .map(|(i, &rho)| {
            let b = outcomes.iter().filter(|o| o.bfwer[i]).count() as u64;
            let a = outcomes.iter().filter(|o| o.afwer[i]).count() as u64;
            let mut metrics = BTreeMap::new();
            metrics.insert("bfwer".to_string(), Rate::new(b, reps));
            metrics.insert("afwer".to_string(), Rate::new(a, reps));
            SimPoint { parameter: "rho".into(), value: rho, metrics, reference: None }
        })
        .collect();
    let rej: Vec<f64> = outcomes.iter().map(|o| o.rejections as f64).collect();
    let (mean_null_prob, mean_null_prob_se) = ratio_estimate(&outcomes.iter().map(|o| o.null_prob_sum).collect::<Vec<_>>(), &rej);
    let (fdp, fdp_se) = ratio_estimate(&outcomes.iter().map(|o| o.false_rejections as f64).collect::<Vec<_>>(), &rej);
    let fdr = FdrSummary {
        rejections: outcomes.iter().map(|o| o.rejections).sum(),
        false_rejections: outcomes.iter().map(|o| o.false_rejections).sum(),
        mean_null_prob,
        mean_null_prob_se,
        fdp,
        fdp_se,
        bound: 1.0 / (1.0 + cfg.tau),
    };
    Ok(SimReport {
        experiment: "prior_bfwer".into(),
        replicates: reps,
        seed: cfg.seed,
        points,
        fdr: Some(fdr),
        evalue_bound: Some(super::evalue_bound(cfg.mu, nu, cfg.tau)),
    })
}

/// Fraction of replicates with at least one true signal in which the
/// tester rejects none of the true signals.
pub fn strikeout_rate(cfg: &PriorSimConfig, tester: &(dyn Fn(&ExhaustiveScan) -> Vec<usize> + Sync)) -> Result<SimReport> {
    let flags = run(cfg, |r| {
        if r.truth == 0 {
            return Ok(None);
        }
        let hit = tester(&r.scan).iter().any(|&j| r.truth >> j & 1 == 1);
        Ok(Some(!hit))
    })?;
    let trials = flags.iter().flatten().count() as u64;
    let events = flags.iter().flatten().filter(|&&s| s).count() as u64;
    let mut metrics = BTreeMap::new();
    metrics.insert("strikeout".to_string(), Rate::new(events, trials));
    Ok(SimReport {
        experiment: "strikeout".into(),
        replicates: cfg.replicates,
        seed: cfg.seed,
        points: vec![SimPoint { parameter: "tau".into(), value: cfg.tau, metrics, reference: None }],
        fdr: None,
        evalue_bound: None,
    })
}

/// Rejects each variable whose own model-averaged posterior odds reach `tau`.
pub fn marginal_tester(tau: f64) -> impl Fn(&ExhaustiveScan) -> Vec<usize> + Sync {
    let log_tau = tau.ln();
    move |scan: &ExhaustiveScan| {
        (0..scan.nu)
            .filter(|&j| model_averaged_log_po_mask(&scan.log_po, 1 << j).is_ok_and(|lp| lp >= log_tau))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn equicorr(nu: usize, r: f64) -> DMatrix<f64> {
        DMatrix::from_fn(nu, nu, |i, j| if i == j { 1.0 } else { r })
    }

    fn cfg(reps: u64) -> PriorSimConfig {
        PriorSimConfig {
            nu: 4,
            mu: 0.3,
            h: 1.0,
            tau: 9.0,
            n: 120,
            design_source: DesignSource::SyntheticCorr(equicorr(4, 0.4)),
            rho_levels: vec![0.0, 0.5, 1.0],
            replicates: reps,
            seed: 5,
        }
    }

    #[test]
    fn reproducible() {
        let c = cfg(300);
        assert_eq!(sim_prior_bfwer(&c).unwrap(), sim_prior_bfwer(&c).unwrap());
    }

    #[test]
    fn nested_levels() {
        // Admissible true-null sets only grow with rho, and so do the event rates.
        let r = sim_prior_bfwer(&cfg(2000)).unwrap();
        let b: Vec<u64> = r.points.iter().map(|p| p.metrics["bfwer"].events).collect();
        assert!(b.windows(2).all(|w| w[0] <= w[1]), "{b:?}");
    }

    #[test]
    fn prior_draw_covariance() {
        // E[(X beta)'(X beta) / n | S] = |S| / h under the prior.
        let c = PriorSimConfig { mu: 1e6, h: 2.0, ..cfg(1) };
        let (hyper, prep) = c.validate().unwrap();
        let mut total = 0.0;
        let reps = 4000;
        // Explained sum of squares of the full model has mean n |S| / h + |S|.
        for rep in 0..reps {
            let r = simulate(&c, &hyper, &prep, rep).unwrap();
            assert_eq!(r.truth, 0b1111);
            total += 2.0 * r.scan.log_mlr[15];
        }
        let mean = total / reps as f64;
        let want = c.n as f64 * 4.0 / c.h + 4.0;
        assert!((mean / want - 1.0).abs() < 0.05, "{mean} vs {want}");
    }

    #[test]
    fn strikeout_extremes() {
        let c = cfg(500);
        let all = strikeout_rate(&c, &|s: &ExhaustiveScan| (0..s.nu).collect()).unwrap();
        assert_eq!(all.points[0].metrics["strikeout"].events, 0);
        let none = strikeout_rate(&c, &|_: &ExhaustiveScan| Vec::new()).unwrap();
        let r = none.points[0].metrics["strikeout"];
        assert!(r.trials > 0 && r.events == r.trials);
    }

    #[test]
    fn vanishing_prior_is_all_null() {
        let c = PriorSimConfig { mu: 1e-12, ..cfg(400) };
        let r = sim_prior_bfwer(&c).unwrap();
        let f = r.fdr.unwrap();
        assert_eq!(f.rejections, f.false_rejections);
        let s = strikeout_rate(&c, &marginal_tester(9.0)).unwrap();
        assert_eq!(s.points[0].metrics["strikeout"].trials, 0);
    }

    #[test]
    fn template_shape_checked() {
        let c = PriorSimConfig { design_source: DesignSource::Template(DMatrix::zeros(10, 4)), ..cfg(1) };
        assert!(sim_prior_bfwer(&c).is_err());
        let c = PriorSimConfig { nu: 30, design_source: DesignSource::SyntheticCorr(equicorr(30, 0.0)), ..cfg(1) };
        assert!(matches!(sim_prior_bfwer(&c), Err(Error::TooManyVariables { .. })));
    }
}
