//! Sessions and the in-memory store.

use crate::error::ApiError;
use modavg::ctp::{Analysis, AnalysisMode};
use modavg::inference::{coefficient_estimates, CoefficientEstimate, Hyperparams, REPORTING_CUTOFF};
use modavg::io::{read_dataset, CsvOptions};
use modavg::linmodel::{correlation_matrix, Dataset, ExhaustiveScan, VarianceMode, DEFAULT_SCAN_CAP};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

fn default_mu() -> f64 {
    0.1
}
fn default_h() -> f64 {
    1.0
}
fn default_tau() -> f64 {
    9.0
}
fn default_alpha() -> f64 {
    REPORTING_CUTOFF
}
fn default_true() -> bool {
    true
}

/// The sub-analysis declaration: the full family size and the variables
/// left out of the upload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubAnalysis {
    pub declared_nu: usize,
    #[serde(default)]
    pub excluded: Vec<String>,
}

/// Analysis settings sent with an upload. Missing fields take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub outcome: Option<String>,
    #[serde(default)]
    pub candidates: Option<Vec<String>>,
    #[serde(default)]
    pub nuisance_columns: Vec<String>,
    #[serde(default = "default_true")]
    pub intercept: bool,
    #[serde(default = "profiled")]
    pub variance: VarianceMode,
    #[serde(default)]
    pub sub_analysis: Option<SubAnalysis>,
}

fn profiled() -> VarianceMode {
    VarianceMode::Profiled
}

impl Default for SessionConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl SessionConfig {
    fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            outcome: self.outcome.clone(),
            candidates: self.candidates.clone(),
            nuisance_columns: self.nuisance_columns.clone(),
            intercept: self.intercept,
            variance: self.variance,
        }
    }

    fn mode(&self) -> AnalysisMode {
        match &self.sub_analysis {
            None => AnalysisMode::Full,
            Some(s) => AnalysisMode::SubAnalysis { declared_nu: s.declared_nu, excluded: s.excluded.clone() },
        }
    }
}

/// Content hash of the upload and its canonical configuration.
pub fn session_id(csv: &str, config: &SessionConfig) -> String {
    let canon = serde_json::to_string(config).expect("config serializes");
    let mut h = Sha256::new();
    h.update((csv.len() as u64).to_le_bytes());
    h.update(csv.as_bytes());
    h.update(canon.as_bytes());
    hex::encode(&h.finalize()[..16])
}

/// A fitted, immutable analysis.
#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub created_at: u64,
    pub csv: String,
    pub config: SessionConfig,
    pub dataset: Dataset,
    pub analysis: Analysis,
    estimates: OnceLock<Result<Vec<CoefficientEstimate>, modavg::error::Error>>,
}

impl Session {
    fn prepare(csv: &str, config: &SessionConfig) -> Result<(Dataset, Hyperparams), ApiError> {
        if !(config.alpha > 0.0 && config.alpha < 1.0) {
            return Err(ApiError::invalid(format!("alpha must lie in (0, 1), got {}", config.alpha)));
        }
        let dataset = read_dataset(csv, &config.csv_options())?;
        let hyper = Hyperparams::new(config.mu, config.h, config.tau, dataset.n())?;
        Ok((dataset, hyper))
    }

    /// Parse, scan and wrap an upload.
    pub fn build(csv: String, config: SessionConfig, scan_cap: usize) -> Result<Self, ApiError> {
        let (dataset, hyper) = Self::prepare(&csv, &config)?;
        let analysis = Analysis::with_cap(&dataset, &hyper, config.mode(), scan_cap)?;
        Ok(Self::assemble(csv, config, dataset, analysis, now()))
    }

    /// Rebuild from stored scan values without refitting.
    pub fn restore(csv: String, config: SessionConfig, created_at: u64, log_mlr: Vec<f64>, log_po: Vec<f64>) -> Result<Self, ApiError> {
        let (dataset, hyper) = Self::prepare(&csv, &config)?;
        let mut scan = ExhaustiveScan::from_log_mlr(dataset.nu(), hyper, log_mlr)?;
        if scan.log_po.len() != log_po.len() {
            return Err(ApiError::archive("scan length mismatch"));
        }
        scan.log_po = log_po;
        let corr = correlation_matrix(&dataset)?;
        let analysis = Analysis::from_parts(dataset.names().to_vec(), scan, corr, config.mode())?;
        Ok(Self::assemble(csv, config, dataset, analysis, created_at))
    }

    fn assemble(csv: String, config: SessionConfig, dataset: Dataset, analysis: Analysis, created_at: u64) -> Self {
        Self { id: session_id(&csv, &config), created_at, csv, config, dataset, analysis, estimates: OnceLock::new() }
    }

    /// Model-averaged estimates, computed on first use.
    pub fn estimates(&self) -> Result<&[CoefficientEstimate], ApiError> {
        match self.estimates.get_or_init(|| coefficient_estimates(&self.dataset, &self.analysis.scan)) {
            Ok(v) => Ok(v),
            Err(e) => Err(e.clone().into()),
        }
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Sessions keyed by id. Sessions never change after insertion, so readers
/// share them through `Arc`; creations are serialized.
#[derive(Debug)]
pub struct Store {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    create_lock: tokio::sync::Mutex<()>,
    scan_cap: usize,
}

impl Default for Store {
    fn default() -> Self {
        Self::new(DEFAULT_SCAN_CAP)
    }
}

impl Store {
    pub fn new(scan_cap: usize) -> Self {
        Self { sessions: RwLock::new(HashMap::new()), create_lock: tokio::sync::Mutex::new(()), scan_cap }
    }

    pub fn get(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.read().expect("store lock").get(id).cloned()
    }

    /// All sessions ordered by creation time, then id.
    pub fn list(&self) -> Vec<Arc<Session>> {
        let mut v: Vec<_> = self.sessions.read().expect("store lock").values().cloned().collect();
        v.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
        v
    }

    /// Insert unless the id exists; returns the stored session and whether it is new.
    pub fn insert(&self, session: Session) -> (Arc<Session>, bool) {
        let mut map = self.sessions.write().expect("store lock");
        if let Some(s) = map.get(&session.id) {
            return (s.clone(), false);
        }
        let s = Arc::new(session);
        map.insert(s.id.clone(), s.clone());
        (s, true)
    }

    /// Create a session, reusing an identical earlier upload.
    pub async fn create(&self, csv: String, config: SessionConfig) -> Result<(Arc<Session>, bool), ApiError> {
        let _guard = self.create_lock.lock().await;
        if let Some(s) = self.get(&session_id(&csv, &config)) {
            return Ok((s, false));
        }
        let cap = self.scan_cap;
        let session = tokio::task::spawn_blocking(move || Session::build(csv, config, cap))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))??;
        Ok(self.insert(session))
    }
}
