//! Exact least-squares fits of every variable-subset normal linear model.
//!
//! Every fit is compared against the nuisance-only model `s = 0` through its
//! maximized likelihood ratio `R_s`. The exhaustive scan compresses the
//! augmented matrix `[N | X | y]` once with a Householder QR, which makes each
//! of the `2^nu` subsequent fits independent of `n`.

use crate::error::{Error, Result};
use crate::inference::{self, Hyperparams};
use crate::qr::PivotedQr;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Relative rank tolerance applied to the largest selected column norm.
pub const RANK_TOL: f64 = 1e-10;

/// Default upper limit on the number of candidate variables in a scan.
pub const DEFAULT_SCAN_CAP: usize = 25;

/// Treatment of the residual variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "sigma2", rename_all = "snake_case")]
pub enum VarianceMode {
    /// Fixed, known residual variance.
    Known(f64),
    /// Variance profiled out at its maximum-likelihood value `RSS / n`.
    Profiled,
}

/// Always-included covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceSpec {
    pub intercept: bool,
    /// `n x m` matrix of extra covariates (may have zero columns).
    pub extra_columns: DMatrix<f64>,
    pub variance: VarianceMode,
}

impl NuisanceSpec {
    pub fn new(intercept: bool, variance: VarianceMode) -> Self {
        Self { intercept, extra_columns: DMatrix::zeros(0, 0), variance }
    }

    /// Number of nuisance regression columns (intercept plus extras).
    pub fn n_columns(&self) -> usize {
        self.intercept as usize + self.extra_columns.ncols()
    }

    /// Total nuisance parameter count, counting a profiled variance.
    pub fn zeta(&self) -> usize {
        self.n_columns() + matches!(self.variance, VarianceMode::Profiled) as usize
    }
}

/// Outcome, candidate design and nuisance specification.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: DMatrix<f64>,
    names: Vec<String>,
    nuisance: NuisanceSpec,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: DMatrix<f64>, names: Vec<String>, nuisance: NuisanceSpec) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        if x.nrows() != n {
            return Err(Error::InvalidInput(format!("design has {} rows but outcome has {n}", x.nrows())));
        }
        if names.len() != x.ncols() {
            return Err(Error::InvalidInput(format!("{} names for {} columns", names.len(), x.ncols())));
        }
        if nuisance.extra_columns.ncols() > 0 && nuisance.extra_columns.nrows() != n {
            return Err(Error::InvalidInput("nuisance columns must have one row per observation".into()));
        }
        if y.iter().chain(x.iter()).chain(nuisance.extra_columns.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite value in data".into()));
        }
        if let VarianceMode::Known(s2) = nuisance.variance {
            if !(s2 > 0.0 && s2.is_finite()) {
                return Err(Error::InvalidInput(format!("known variance must be positive, got {s2}")));
            }
        }
        for (j, name) in names.iter().enumerate() {
            if x.column(j).iter().all(|&v| v == 0.0) {
                return Err(Error::InvalidInput(format!("column `{name}` is all zero")));
            }
        }
        let nu = x.ncols();
        if matches!(nuisance.variance, VarianceMode::Profiled) && n < nu + nuisance.n_columns() + 1 {
            return Err(Error::InvalidInput(format!(
                "profiled variance needs n >= nu + nuisance + 1 ({} > {n})",
                nu + nuisance.n_columns()
            )));
        }
        Ok(Self { y, x, names, nuisance })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn nu(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn nuisance(&self) -> &NuisanceSpec {
        &self.nuisance
    }

    /// Index of a variable by name.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Restrict the candidates to `cols`, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.nu()) {
            return Err(Error::InvalidInput(format!("column index {bad} out of range")));
        }
        let x = self.x.select_columns(cols);
        let names = cols.iter().map(|&c| self.names[c].clone()).collect();
        Dataset::new(self.y.clone(), x, names, self.nuisance.clone())
    }

    /// Nuisance design `n x m` (intercept first).
    pub fn nuisance_design(&self) -> DMatrix<f64> {
        let n = self.n();
        let m = self.nuisance.n_columns();
        let mut out = DMatrix::zeros(n, m);
        let mut c = 0;
        if self.nuisance.intercept {
            out.column_mut(0).fill(1.0);
            c = 1;
        }
        for j in 0..self.nuisance.extra_columns.ncols() {
            out.set_column(c + j, &self.nuisance.extra_columns.column(j));
        }
        out
    }
}

/// Bit set over candidate variables; bit `j` set means `beta_j` is free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelId(pub u64);

impl ModelId {
    pub const NULL: ModelId = ModelId(0);

    pub fn from_indices(idx: &[usize]) -> Self {
        ModelId(idx.iter().fold(0u64, |acc, &j| acc | (1u64 << j)))
    }

    pub fn size(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn contains(self, j: usize) -> bool {
        self.0 >> j & 1 == 1
    }

    /// Included indices in ascending order.
    pub fn indices(self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.size());
        let mut bits = self.0;
        while bits != 0 {
            out.push(bits.trailing_zeros() as usize);
            bits &= bits - 1;
        }
        out
    }
}

/// One fitted submodel.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: ModelId,
    /// MLE of the included candidate coefficients, ascending index order.
    pub beta_hat: Vec<f64>,
    /// MLE of the nuisance coefficients (intercept first).
    pub gamma_hat: Vec<f64>,
    /// Variance used for inference: the known value, or `rss / n`.
    pub sigma2_hat: f64,
    pub rss: f64,
    pub log_mlr: f64,
    /// Observed information at the MLE. Parameters are ordered as included
    /// candidates, nuisance columns, then the variance when profiled.
    pub obs_info: DMatrix<f64>,
}

/// Pearson correlations between candidate columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    nu: usize,
    values: Vec<f64>,
}

impl CorrelationMatrix {
    /// Build from a row-major `nu x nu` matrix. Symmetry and unit diagonal are checked.
    pub fn from_row_major(nu: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != nu * nu {
            return Err(Error::InvalidInput("correlation matrix has wrong size".into()));
        }
        for i in 0..nu {
            if values[i * nu + i] != 1.0 {
                return Err(Error::InvalidInput("correlation diagonal must be 1".into()));
            }
            for j in 0..i {
                let v = values[i * nu + j];
                if v != values[j * nu + i] || !(-1.0..=1.0).contains(&v) {
                    return Err(Error::InvalidInput("correlation matrix must be symmetric in [-1, 1]".into()));
                }
            }
        }
        Ok(Self { nu, values })
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.nu + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.nu.max(1)).take(self.nu).map(|r| r.to_vec()).collect()
    }
}

/// Pearson correlation matrix of the candidate columns (two-pass).
pub fn correlation_matrix(data: &Dataset) -> Result<CorrelationMatrix> {
    let x = data.x();
    let (n, nu) = (x.nrows(), x.ncols());
    let mut centered = Vec::with_capacity(nu);
    let mut sd = Vec::with_capacity(nu);
    for j in 0..nu {
        let col = x.column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let c: Vec<f64> = col.iter().map(|v| v - mean).collect();
        let ss: f64 = c.iter().map(|v| v * v).sum();
        if ss == 0.0 {
            return Err(Error::ZeroVarianceColumn(data.names()[j].clone()));
        }
        sd.push(ss.sqrt());
        centered.push(c);
    }
    let mut values = vec![0.0; nu * nu];
    for i in 0..nu {
        values[i * nu + i] = 1.0;
        for j in 0..i {
            let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            let r = (dot / (sd[i] * sd[j])).clamp(-1.0, 1.0);
            values[i * nu + j] = r;
            values[j * nu + i] = r;
        }
    }
    Ok(CorrelationMatrix { nu, values })
}

fn column_norm(col: impl Iterator<Item = f64>) -> f64 {
    col.map(|v| v * v).sum::<f64>().sqrt()
}

fn log_mlr_from(rss0: f64, rss: f64, explained: f64, n: usize, variance: VarianceMode) -> f64 {
    let v = match variance {
        VarianceMode::Known(s2) => explained / (2.0 * s2),
        VarianceMode::Profiled => {
            let frac = explained / rss0;
            if frac < 0.5 {
                -0.5 * n as f64 * (-frac).ln_1p()
            } else {
                0.5 * n as f64 * (rss0.ln() - rss.ln())
            }
        }
    };
    v.max(0.0)
}

fn is_degenerate(rss: f64, yy: f64) -> bool {
    rss <= 1e-26 * yy
}

/// Fit submodel `s` directly on the `n`-row design.
pub fn fit_submodel(data: &Dataset, s: ModelId) -> Result<FitResult> {
    let n = data.n();
    let idx = s.indices();
    if idx.last().is_some_and(|&j| j >= data.nu()) {
        return Err(Error::InvalidInput(format!("model {:#x} references a variable beyond nu = {}", s.0, data.nu())));
    }
    let nuis = data.nuisance_design();
    let m = nuis.ncols();
    let k = idx.len();
    let cols = m + k;
    let mut a = Vec::with_capacity(n * cols);
    let mut max_norm: f64 = 0.0;
    for j in 0..m {
        max_norm = max_norm.max(column_norm(nuis.column(j).iter().copied()));
        a.extend(nuis.column(j).iter());
    }
    for &j in &idx {
        max_norm = max_norm.max(column_norm(data.x().column(j).iter().copied()));
        a.extend(data.x().column(j).iter());
    }
    let tol = RANK_TOL * max_norm;
    let yy: f64 = data.y().iter().map(|v| v * v).sum();
    let qr = PivotedQr::factor(a, n, cols, data.y().to_vec(), m, tol).map_err(|d| {
        if d.rank < m {
            Error::InvalidInput("nuisance columns are collinear".into())
        } else {
            Error::RankDeficient { model: s.0, rank: d.rank, cols }
        }
    })?;
    let rss = qr.rss();
    let rss0 = rss + qr.explained(m..cols);
    let variance = data.nuisance().variance;
    if matches!(variance, VarianceMode::Profiled) && is_degenerate(rss, yy) {
        return Err(Error::DegenerateVariance { model: s.0 });
    }
    let log_mlr = log_mlr_from(rss0, rss, qr.explained(m..cols), n, variance);
    let coef = qr.coefficients();
    let (gamma_hat, beta_hat) = (coef[..m].to_vec(), coef[m..].to_vec());
    let sigma2_hat = match variance {
        VarianceMode::Known(s2) => s2,
        VarianceMode::Profiled => rss / n as f64,
    };
    // Observed information: X'X / sigma^2 on [X_s, N], plus n / (2 sigma^4) for a profiled variance.
    let extra = matches!(variance, VarianceMode::Profiled) as usize;
    let mut design = DMatrix::zeros(n, cols);
    for (c, &j) in idx.iter().enumerate() {
        design.set_column(c, &data.x().column(j));
    }
    for j in 0..m {
        design.set_column(k + j, &nuis.column(j));
    }
    let gram = design.transpose() * &design / sigma2_hat;
    let mut obs_info = DMatrix::zeros(cols + extra, cols + extra);
    obs_info.view_mut((0, 0), (cols, cols)).copy_from(&gram);
    if extra == 1 {
        obs_info[(cols, cols)] = n as f64 / (2.0 * sigma2_hat * sigma2_hat);
    }
    Ok(FitResult { model: s, beta_hat, gamma_hat, sigma2_hat, rss, log_mlr, obs_info })
}

/// Candidate block of the augmented QR with nuisance projected out.
///
/// `[N | X | y] = Q R`; rows `m..r` of `R` restricted to the `X` and `y`
/// columns form a small `(r - m) x (nu + 1)` system whose least-squares
/// problems have the same residuals as the original ones after the nuisance
/// columns are absorbed.
#[derive(Debug, Clone)]
pub struct CompressedSystem {
    n: usize,
    nu: usize,
    m: usize,
    rows: usize,
    /// Column-major `rows x (nu + 1)`; last column is the projected outcome.
    z: Vec<f64>,
    rss0: f64,
    yy: f64,
    nuisance_norm: f64,
    col_norms: Vec<f64>,
    variance: VarianceMode,
}

/// Per-model quantities needed for estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedFit {
    pub rss: f64,
    pub log_mlr: f64,
    /// Coefficients of the included candidates, ascending index order.
    pub beta: Vec<f64>,
    /// Diagonal of `(X_s' M_N X_s)^{-1}` for the included candidates.
    pub inv_gram_diag: Vec<f64>,
}

impl CompressedSystem {
    pub fn new(data: &Dataset) -> Result<Self> {
        let n = data.n();
        let nu = data.nu();
        let nuis = data.nuisance_design();
        let m = nuis.ncols();
        let cols = m + nu + 1;
        let mut aug = DMatrix::zeros(n, cols);
        for j in 0..m {
            aug.set_column(j, &nuis.column(j));
        }
        for j in 0..nu {
            aug.set_column(m + j, &data.x().column(j));
        }
        for (i, &v) in data.y().iter().enumerate() {
            aug[(i, m + nu)] = v;
        }
        let nuisance_norm = (0..m).map(|j| nuis.column(j).norm()).fold(0.0, f64::max);
        let col_norms: Vec<f64> = (0..nu).map(|j| data.x().column(j).norm()).collect();
        let yy: f64 = data.y().iter().map(|v| v * v).sum();

        // Unpivoted Householder triangularization, column by column.
        let r = n.min(cols);
        let a = aug.as_mut_slice();
        for k in 0..r.min(cols - 1) {
            let norm = a[k * n + k..(k + 1) * n].iter().map(|v| v * v).sum::<f64>().sqrt();
            if k < m && !(norm > RANK_TOL * nuisance_norm) {
                return Err(Error::InvalidInput("nuisance columns are collinear".into()));
            }
            if norm == 0.0 {
                continue;
            }
            let akk = a[k * n + k];
            let alpha = if akk >= 0.0 { -norm } else { norm };
            a[k * n + k] = akk - alpha;
            let vnorm2: f64 = a[k * n + k..(k + 1) * n].iter().map(|v| v * v).sum();
            let scale = 2.0 / vnorm2;
            for j in k + 1..cols {
                let mut dot = 0.0;
                for i in k..n {
                    dot += a[k * n + i] * a[j * n + i];
                }
                let f = dot * scale;
                for i in k..n {
                    a[j * n + i] -= f * a[k * n + i];
                }
            }
            a[k * n + k] = alpha;
            for i in k + 1..n {
                a[k * n + i] = 0.0;
            }
        }
        if m > r {
            return Err(Error::InvalidInput("more nuisance columns than observations".into()));
        }
        // Rows m.. of the candidate and outcome columns. When n > cols the
        // outcome column keeps its full residual below row cols - 1, so
        // fold that tail into a single entry to preserve its norm.
        let rows_kept = if n > cols { cols - m } else { n - m };
        let mut z = vec![0.0; rows_kept * (nu + 1)];
        for j in 0..nu {
            for i in 0..rows_kept {
                z[j * rows_kept + i] = a[(m + j) * n + m + i];
            }
        }
        let ycol = m + nu;
        for i in 0..rows_kept {
            z[nu * rows_kept + i] = a[ycol * n + m + i];
        }
        if n > cols {
            let tail: f64 = a[ycol * n + cols - 1..(ycol + 1) * n].iter().map(|v| v * v).sum();
            z[nu * rows_kept + rows_kept - 1] = tail.sqrt();
        }
        let rss0: f64 = z[nu * rows_kept..].iter().map(|v| v * v).sum();
        let variance = data.nuisance().variance;
        Ok(Self { n, nu, m, rows: rows_kept, z, rss0, yy, nuisance_norm, col_norms, variance })
    }

    pub fn rss0(&self) -> f64 {
        self.rss0
    }

    fn factor(&self, s: ModelId) -> Result<PivotedQr> {
        let idx = s.indices();
        let k = idx.len();
        let rows = self.rows;
        let mut a = Vec::with_capacity(rows * k);
        let mut max_norm = self.nuisance_norm;
        for &j in &idx {
            a.extend_from_slice(&self.z[j * rows..(j + 1) * rows]);
            max_norm = max_norm.max(self.col_norms[j]);
        }
        let b = self.z[self.nu * rows..].to_vec();
        let m_offset = self.m;
        PivotedQr::factor(a, rows, k, b, 0, RANK_TOL * max_norm).map_err(|d| Error::RankDeficient {
            model: s.0,
            rank: m_offset + d.rank,
            cols: m_offset + k,
        })
    }

    /// `log R_s` for model `s`.
    pub fn log_mlr(&self, s: ModelId) -> Result<f64> {
        if s.0 == 0 {
            if matches!(self.variance, VarianceMode::Profiled) && is_degenerate(self.rss0, self.yy) {
                return Err(Error::DegenerateVariance { model: 0 });
            }
            return Ok(0.0);
        }
        let qr = self.factor(s)?;
        let rss = qr.rss();
        if matches!(self.variance, VarianceMode::Profiled) && is_degenerate(rss, self.yy) {
            return Err(Error::DegenerateVariance { model: s.0 });
        }
        Ok(log_mlr_from(self.rss0, rss, qr.explained(0..qr.cols()), self.n, self.variance))
    }

    /// Coefficients and variance factors for model `s`.
    pub fn fit(&self, s: ModelId) -> Result<CompressedFit> {
        let log_mlr = self.log_mlr(s)?;
        if s.0 == 0 {
            return Ok(CompressedFit { rss: self.rss0, log_mlr, beta: vec![], inv_gram_diag: vec![] });
        }
        let qr = self.factor(s)?;
        Ok(CompressedFit { rss: qr.rss(), log_mlr, beta: qr.coefficients(), inv_gram_diag: qr.inverse_gram_diag() })
    }

    /// Variance plugged into classical standard errors for a model with this RSS.
    pub fn sigma2(&self, rss: f64) -> f64 {
        match self.variance {
            VarianceMode::Known(s2) => s2,
            VarianceMode::Profiled => rss / self.n as f64,
        }
    }
}

/// `log R_s` and `log PO_s` for every model, indexed by the integer value of `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveScan {
    pub nu: usize,
    pub hyper: Hyperparams,
    pub log_mlr: Vec<f64>,
    pub log_po: Vec<f64>,
}

impl ExhaustiveScan {
    /// Rebuild a scan from stored log-MLR values.
    pub fn from_log_mlr(nu: usize, hyper: Hyperparams, log_mlr: Vec<f64>) -> Result<Self> {
        if log_mlr.len() != 1usize << nu {
            return Err(Error::InvalidInput(format!("expected {} models, got {}", 1usize << nu, log_mlr.len())));
        }
        let log_po = log_mlr
            .iter()
            .enumerate()
            .map(|(s, &l)| inference::log_posterior_odds(ModelId(s as u64).size(), l, &hyper))
            .collect();
        Ok(Self { nu, hyper, log_mlr, log_po })
    }

    pub fn len(&self) -> usize {
        self.log_po.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_po.is_empty()
    }
}

/// Scan every submodel with the default cap on `nu`.
pub fn scan_all_models(data: &Dataset, hyper: &Hyperparams) -> Result<ExhaustiveScan> {
    scan_all_models_capped(data, hyper, DEFAULT_SCAN_CAP)
}

/// Scan every submodel. Models are fitted in parallel; each value depends
/// only on its own model so the output is identical to a serial run.
pub fn scan_all_models_capped(data: &Dataset, hyper: &Hyperparams, cap: usize) -> Result<ExhaustiveScan> {
    let nu = data.nu();
    if nu > cap || nu > 62 {
        return Err(Error::TooManyVariables { nu, cap: cap.min(62) });
    }
    if hyper.n != data.n() {
        return Err(Error::InvalidInput(format!(
            "hyperparameter n = {} does not match the data (n = {})",
            hyper.n,
            data.n()
        )));
    }
    let sys = CompressedSystem::new(data)?;
    let log_mlr = (0..1u64 << nu)
        .into_par_iter()
        .map(|s| sys.log_mlr(ModelId(s)))
        .collect::<Result<Vec<f64>>>()?;
    ExhaustiveScan::from_log_mlr(nu, *hyper, log_mlr)
}
