//! Closed testing on top of an exhaustive scan.
//!
//! Because model-averaged posterior odds only grow when variables are added to
//! the tested set, rejecting `T` at `PO >= tau` also rejects every
//! intersection containing it. That makes every admissible group test a valid
//! step of a shortcut closed testing procedure, so groups can be explored
//! after the fact without extra multiplicity correction.

pub mod combine;
pub mod grouping;
pub mod selection;
pub mod xcrit;

pub use combine::{combine_bonferroni, combine_hmp, combine_simes, landau_sf};
pub use grouping::{build_grouping, is_admissible, rho_max, GroupingPolicy};
pub use selection::{leave_one_out_tests, select_subset, univariable_tests};
pub use xcrit::{mc_mean_tail, xcrit_threshold, XcritResult};

use crate::error::{Error, Result};
use crate::inference::{build_report, model_averaged_log_po_mask, Hyperparams, TestMode, TestReport};
use crate::linmodel::{correlation_matrix, scan_all_models_capped, CorrelationMatrix, Dataset, ExhaustiveScan};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Default node budget for the significant-group search.
pub const DEFAULT_SEARCH_BUDGET: usize = 1_000_000;

/// Whether the analysed variables are the whole family or a subset of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalysisMode {
    Full,
    /// `declared_nu` counts every variable of the original family, including
    /// the `excluded` ones; adjusted p-values use it.
    SubAnalysis { declared_nu: usize, excluded: Vec<String> },
}

/// Options for a single group test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOptions {
    /// Grouping threshold; `None` skips the admissibility check.
    pub rho: Option<f64>,
    /// Level for the frequentist rejection flag.
    pub alpha: f64,
    /// Report adjusted p-values above the cutoff as 1.
    pub censored: bool,
    /// Rejection threshold overriding the scan's `tau`.
    pub tau: Option<f64>,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self { rho: Some(1.0), alpha: crate::inference::REPORTING_CUTOFF, censored: true, tau: None }
    }
}

/// A scanned dataset ready for group tests.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub names: Vec<String>,
    pub scan: ExhaustiveScan,
    pub corr: CorrelationMatrix,
    pub mode: AnalysisMode,
}

impl Analysis {
    pub fn new(data: &Dataset, hyper: &Hyperparams, mode: AnalysisMode) -> Result<Self> {
        Self::with_cap(data, hyper, mode, crate::linmodel::DEFAULT_SCAN_CAP)
    }

    pub fn with_cap(data: &Dataset, hyper: &Hyperparams, mode: AnalysisMode, cap: usize) -> Result<Self> {
        let corr = correlation_matrix(data)?;
        let scan = scan_all_models_capped(data, hyper, cap)?;
        Self::from_parts(data.names().to_vec(), scan, corr, mode)
    }

    pub fn from_parts(names: Vec<String>, scan: ExhaustiveScan, corr: CorrelationMatrix, mode: AnalysisMode) -> Result<Self> {
        if names.len() != scan.nu || corr.nu() != scan.nu {
            return Err(Error::InvalidInput("names, scan and correlation sizes disagree".into()));
        }
        if let AnalysisMode::SubAnalysis { declared_nu, .. } = &mode {
            if *declared_nu < scan.nu {
                return Err(Error::InvalidInput(format!(
                    "declared family size {declared_nu} is smaller than the {} analysed variables",
                    scan.nu
                )));
            }
        }
        Ok(Self { names, scan, corr, mode })
    }

    pub fn nu(&self) -> usize {
        self.scan.nu
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.scan.hyper
    }

    /// Size of the family used for adjusted p-values.
    pub fn nu_family(&self) -> usize {
        match &self.mode {
            AnalysisMode::Full => self.nu(),
            AnalysisMode::SubAnalysis { declared_nu, .. } => *declared_nu,
        }
    }

    /// Indices of named variables.
    pub fn indices_of(&self, names: &[String]) -> Result<Vec<usize>> {
        let unknown: Vec<String> = names.iter().filter(|n| !self.names.contains(n)).cloned().collect();
        if !unknown.is_empty() {
            return Err(Error::UnknownVariables(unknown));
        }
        Ok(names.iter().map(|n| self.names.iter().position(|m| m == n).unwrap()).collect())
    }

    pub fn grouping(&self, rho: f64) -> Result<GroupingPolicy> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::InvalidInput(format!("rho must lie in [0, 1], got {rho}")));
        }
        Ok(build_grouping(&self.corr, rho))
    }

    fn test_mode(&self) -> TestMode {
        match &self.mode {
            AnalysisMode::Full => TestMode::Full,
            AnalysisMode::SubAnalysis { excluded, .. } => TestMode::SubAnalysis { excluded: excluded.clone() },
        }
    }

    /// Test the null that every variable in `tested` has a zero coefficient.
    pub fn test_group(&self, tested: &[usize], opts: &TestOptions) -> Result<TestReport> {
        let mut t = tested.to_vec();
        t.sort_unstable();
        t.dedup();
        if t.is_empty() {
            return Err(Error::EmptyTestedSet);
        }
        if let Some(&bad) = t.iter().find(|&&j| j >= self.nu()) {
            return Err(Error::InvalidInput(format!("variable index {bad} out of range")));
        }
        if let Some(rho) = opts.rho {
            let policy = self.grouping(rho)?;
            if let Some(b) = policy.violation(&t) {
                return Err(Error::InadmissibleGroup {
                    block: policy.blocks[b].iter().map(|&j| self.names[j].clone()).collect(),
                });
            }
        }
        if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
            return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {}", opts.alpha)));
        }
        let hyper = match opts.tau {
            Some(tau) if !(tau > 0.0 && tau.is_finite()) => {
                return Err(Error::InvalidInput(format!("tau must be positive and finite, got {tau}")));
            }
            Some(tau) => Hyperparams { tau, ..*self.hyper() },
            None => *self.hyper(),
        };
        let mask = t.iter().fold(0u64, |m, &j| m | 1u64 << j);
        let log_po = model_averaged_log_po_mask(&self.scan.log_po, mask)?;
        let names = t.iter().map(|&j| self.names[j].clone()).collect();
        Ok(build_report(log_po, t, names, self.nu_family(), &hyper, opts.alpha, opts.censored, self.test_mode()))
    }

    /// Test a group given by variable names.
    pub fn test_names(&self, names: &[String], opts: &TestOptions) -> Result<TestReport> {
        let idx = self.indices_of(names)?;
        self.test_group(&idx, opts)
    }

    /// Test of the grand null (all variables).
    pub fn grand_null(&self, opts: &TestOptions) -> Result<TestReport> {
        self.test_group(&(0..self.nu()).collect::<Vec<_>>(), &TestOptions { rho: None, ..*opts })
    }

    /// One elementary test per variable, admissibility not enforced.
    pub fn marginal_tests(&self, opts: &TestOptions) -> Result<Vec<TestReport>> {
        (0..self.nu()).map(|j| self.test_group(&[j], &TestOptions { rho: None, ..*opts })).collect()
    }

    /// Smallest admissible tested sets with `PO >= tau`.
    ///
    /// Candidates are unions of whole blocks of `policy`, visited in order of
    /// block count. A union is reported when it rejects and contains no
    /// previously reported set; since posterior odds only grow with the tested
    /// set, no proper admissible subset of a reported set rejects. Unions with
    /// more than `max_size` variables are not visited. More than `budget`
    /// enumerated candidates is an error.
    pub fn minimal_significant_groups(&self, tau: f64, max_size: usize, policy: &GroupingPolicy, budget: usize) -> Result<Vec<Vec<usize>>> {
        if policy.nu() != self.nu() {
            return Err(Error::InvalidInput("grouping does not match the analysis".into()));
        }
        if max_size > self.nu() {
            return Err(Error::InvalidInput(format!("max_size {max_size} exceeds nu = {}", self.nu())));
        }
        let log_tau = tau.ln();
        let masks: Vec<u64> = (0..policy.blocks.len()).map(|b| policy.block_mask(b)).collect();
        let mut found: Vec<u64> = Vec::new();
        let mut visited = 0usize;
        let nb = masks.len();
        for count in 1..=nb {
            let mut level: Vec<u64> = Vec::new();
            let mut idx: Vec<usize> = (0..count).collect();
            loop {
                visited += 1;
                if visited > budget {
                    return Err(Error::SearchBudgetExceeded { budget });
                }
                let m = idx.iter().fold(0u64, |acc, &b| acc | masks[b]);
                if m.count_ones() as usize <= max_size && !found.iter().any(|&f| f & m == f) {
                    level.push(m);
                }
                // Next combination in lexicographic order.
                let mut i = count;
                while i > 0 && idx[i - 1] == nb - count + i - 1 {
                    i -= 1;
                }
                if i == 0 {
                    break;
                }
                idx[i - 1] += 1;
                for j in i..count {
                    idx[j] = idx[j - 1] + 1;
                }
            }
            let hits: Vec<bool> = level
                .par_iter()
                .map(|&m| model_averaged_log_po_mask(&self.scan.log_po, m).map(|lp| lp >= log_tau))
                .collect::<Result<_>>()?;
            found.extend(level.iter().zip(&hits).filter(|(_, &h)| h).map(|(&m, _)| m));
            let smallest_next = {
                let mut sizes: Vec<u32> = masks.iter().map(|m| m.count_ones()).collect();
                sizes.sort_unstable();
                sizes.iter().take(count + 1).sum::<u32>() as usize
            };
            if count < nb && smallest_next > max_size {
                break;
            }
        }
        Ok(found
            .into_iter()
            .map(|m| (0..self.nu()).filter(|&j| m >> j & 1 == 1).collect())
            .collect())
    }
}
