//! Two-variable false positive study.
//!
//! With known noise variance and a design whose Gram matrix is exactly
//! `n [[1, rho], [rho, 1]]`, the scores of the two variables reduce to two
//! independent normals `W ~ N(0, 1)` and `Z ~ N(sqrt(n) beta2 / sigma, 1)`
//! under `beta1 = 0`, and every model's posterior odds is a closed-form
//! function of `(W, Z)`. The score-space simulator samples those directly;
//! the data-level simulator fits generated data through the scan as a check.

use super::{Rate, SimPoint, SimReport};
use crate::error::{Error, Result};
use crate::inference::{model_averaged_log_po_mask, Hyperparams};
use crate::linmodel::{scan_all_models, Dataset, NuisanceSpec, VarianceMode};
use crate::special::{chi2_1_sf_half, log_add_exp};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::collections::BTreeMap;

const CHUNK: u64 = 1 << 14;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoVarConfig {
    pub n: usize,
    pub mu: f64,
    pub h: f64,
    pub tau: f64,
    /// Correlation between the two variables.
    pub rho: f64,
    /// Noise standard deviation.
    pub sigma: f64,
    pub beta2_grid: Vec<f64>,
    pub replicates: u64,
    pub seed: u64,
}

/// Which null is tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwoVarTarget {
    /// `beta1 = 0`, with `beta2` taken from the grid.
    TestBeta1,
    /// `beta1 = beta2 = 0`; the grid is ignored.
    GrandNull,
}

impl TwoVarTarget {
    fn k(self) -> usize {
        match self {
            Self::TestBeta1 => 1,
            Self::GrandNull => 2,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::TestBeta1 => "two_variable_beta1",
            Self::GrandNull => "two_variable_grand_null",
        }
    }
}

impl TwoVarConfig {
    fn validate(&self, target: TwoVarTarget) -> Result<Hyperparams> {
        if self.replicates == 0 {
            return Err(Error::InvalidInput("replicates must be at least 1".into()));
        }
        if !(self.rho.abs() <= 1.0) {
            return Err(Error::InvalidInput(format!("|rho| must be at most 1, got {}", self.rho)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidInput("sigma must be positive".into()));
        }
        if target == TwoVarTarget::TestBeta1 && self.beta2_grid.is_empty() {
            return Err(Error::InvalidInput("beta2 grid is empty".into()));
        }
        Hyperparams::new(self.mu, self.h, self.tau, self.n)
    }

    fn grid(&self, target: TwoVarTarget) -> Vec<f64> {
        match target {
            TwoVarTarget::TestBeta1 => self.beta2_grid.clone(),
            TwoVarTarget::GrandNull => vec![0.0],
        }
    }
}

/// Large-sample false positive rate `Pr(chi2_1 >= 2 log(tau / (k c)))`.
pub fn reference_fpr(hyper: &Hyperparams, k: usize) -> f64 {
    let t = (hyper.tau / (k as f64 * hyper.c())).ln();
    if t <= 0.0 {
        1.0
    } else {
        chi2_1_sf_half(t)
    }
}

/// Log posterior odds of the target null from the two scores.
fn log_po_scores(w: f64, z: f64, rho: f64, lc: f64, shrink: f64, target: TwoVarTarget) -> f64 {
    let s1 = (1.0 - rho * rho).sqrt() * w + rho * z;
    let l11 = 2.0 * lc + shrink * (w * w + z * z) / 2.0;
    let l10 = lc + shrink * s1 * s1 / 2.0;
    let l01 = lc + shrink * z * z / 2.0;
    match target {
        TwoVarTarget::TestBeta1 => log_add_exp(l11, l10) - log_add_exp(l01, 0.0),
        TwoVarTarget::GrandNull => log_add_exp(log_add_exp(l11, l10), l01),
    }
}

fn stream_rng(seed: u64, point: usize, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((point as u64) << 40) | chunk);
    rng
}

fn point(parameter: &str, value: f64, events: u64, trials: u64, reference: f64) -> SimPoint {
    let mut metrics = BTreeMap::new();
    metrics.insert("fpr".to_string(), Rate::new(events, trials));
    SimPoint { parameter: parameter.into(), value, metrics, reference: Some(reference) }
}

/// Score-space simulation of the false positive rate at each grid point.
pub fn sim_two_variable(cfg: &TwoVarConfig, target: TwoVarTarget) -> Result<SimReport> {
    let hyper = cfg.validate(target)?;
    let lc = hyper.c().ln();
    let shrink = 1.0 - hyper.xi();
    let log_tau = cfg.tau.ln();
    let reference = reference_fpr(&hyper, target.k());
    let chunks = cfg.replicates.div_ceil(CHUNK);
    let points = cfg
        .grid(target)
        .iter()
        .enumerate()
        .map(|(pi, &beta2)| {
            let mean_z = (cfg.n as f64).sqrt() * beta2 / cfg.sigma;
            let events: u64 = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut rng = stream_rng(cfg.seed, pi, c);
                    let len = CHUNK.min(cfg.replicates - c * CHUNK);
                    (0..len)
                        .filter(|_| {
                            let w: f64 = rng.sample(StandardNormal);
                            let z = mean_z + rng.sample::<f64, _>(StandardNormal);
                            log_po_scores(w, z, cfg.rho, lc, shrink, target) >= log_tau
                        })
                        .count() as u64
                })
                .sum();
            point("beta2", beta2, events, cfg.replicates, reference)
        })
        .collect();
    Ok(SimReport {
        experiment: target.name().into(),
        replicates: cfg.replicates,
        seed: cfg.seed,
        points,
        fdr: None,
        evalue_bound: None,
    })
}

/// Columns with `X'X / n = [[1, rho], [rho, 1]]` exactly.
fn exact_design(n: usize, rho: f64, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::InvalidInput("n must be at least 2".into()));
    }
    let raw = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = raw.qr().q();
    let scale = (n as f64).sqrt();
    let s = (1.0 - rho * rho).sqrt();
    Ok(DMatrix::from_fn(n, 2, |i, j| {
        let (a, b) = (q[(i, 0)], q[(i, 1)]);
        // Column 1 is the second variable, column 0 mixes it with noise.
        scale * if j == 1 { a } else { rho * a + s * b }
    }))
}

/// Data-level version of [`sim_two_variable`]: simulate `y`, run the scan and
/// model-average. Each grid point uses one fixed design.
pub fn sim_two_variable_data(cfg: &TwoVarConfig, target: TwoVarTarget) -> Result<SimReport> {
    let hyper = cfg.validate(target)?;
    let log_tau = cfg.tau.ln();
    let reference = reference_fpr(&hyper, target.k());
    let mask = match target {
        TwoVarTarget::TestBeta1 => 0b01,
        TwoVarTarget::GrandNull => 0b11,
    };
    let chunks = cfg.replicates.div_ceil(CHUNK);
    let names = vec!["x1".to_string(), "x2".to_string()];
    let mut points = Vec::new();
    for (pi, &beta2) in cfg.grid(target).iter().enumerate() {
        let x = exact_design(cfg.n, cfg.rho, &mut stream_rng(cfg.seed, pi, u64::from(u32::MAX)))?;
        let per_chunk = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = stream_rng(cfg.seed, pi, c);
                let len = CHUNK.min(cfg.replicates - c * CHUNK);
                let mut hits = 0u64;
                for _ in 0..len {
                    let y: Vec<f64> = (0..cfg.n)
                        .map(|i| beta2 * x[(i, 1)] + cfg.sigma * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let nuisance = NuisanceSpec::new(false, VarianceMode::Known(cfg.sigma * cfg.sigma));
                    let d = Dataset::new(y, x.clone(), names.clone(), nuisance)?;
                    let scan = scan_all_models(&d, &hyper)?;
                    hits += (model_averaged_log_po_mask(&scan.log_po, mask)? >= log_tau) as u64;
                }
                Ok(hits)
            })
            .collect::<Result<Vec<u64>>>()?;
        points.push(point("beta2", beta2, per_chunk.iter().sum(), cfg.replicates, reference));
    }
    Ok(SimReport {
        experiment: format!("{}_data", target.name()),
        replicates: cfg.replicates,
        seed: cfg.seed,
        points,
        fdr: None,
        evalue_bound: None,
    })
}
