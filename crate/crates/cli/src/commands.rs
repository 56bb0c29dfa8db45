use crate::args::*;
use crate::render::{Cell, Output, Table};
use modavg::ctp::selection::{select_subset, univariable_tests};
use modavg::ctp::xcrit::{mc_mean_tail, tail_two, xcrit_threshold};
use modavg::ctp::{Analysis, AnalysisMode, TestOptions};
use modavg::inference::{
    coefficient_estimates, fdr_threshold, fwer_threshold, tau_for_fwer, CoefficientEstimate, Hyperparams, TestReport,
};
use modavg::io::{parse_table, read_dataset, CsvOptions};
use modavg::linmodel::Dataset;
use modavg::simlab::{
    marginal_tester, sim_prior_bfwer, sim_two_variable, sim_two_variable_data, strikeout_rate, DesignSource,
    PriorSimConfig, SimReport, TwoVarConfig, TwoVarTarget,
};
use nalgebra::DMatrix;
use serde_json::{json, Value};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

/// Anything that ends the run with exit code 1.
#[derive(Debug)]
pub enum CliError {
    Io(String, std::io::Error),
    Engine(modavg::error::Error),
    Usage(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(what, e) => write!(f, "{what}: {e}"),
            CliError::Engine(e) => write!(f, "{e}"),
            CliError::Usage(s) => f.write_str(s),
        }
    }
}

impl From<modavg::error::Error> for CliError {
    fn from(e: modavg::error::Error) -> Self {
        CliError::Engine(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}", path.display()), e))
}

fn load(data: &DataArgs) -> Result<Dataset> {
    let text = read_text(&data.csv)?;
    let opts = CsvOptions {
        outcome: data.outcome.clone(),
        candidates: data.candidates.clone(),
        nuisance_columns: data.nuisance.clone(),
        intercept: data.intercept,
        variance: data.variance,
    };
    Ok(read_dataset(&text, &opts)?)
}

fn mode(h: &HyperArgs) -> Result<AnalysisMode> {
    match h.sub_analysis_nu {
        Some(declared_nu) => Ok(AnalysisMode::SubAnalysis { declared_nu, excluded: h.excluded.clone() }),
        None if h.excluded.is_empty() => Ok(AnalysisMode::Full),
        None => Err(CliError::Usage("--excluded requires --sub-analysis-nu".into())),
    }
}

/// Scan the data; `tau` defaults to the threshold with FWER `alpha` over the
/// full family.
fn analyse(data: &DataArgs, h: &HyperArgs) -> Result<(Dataset, Analysis)> {
    let dataset = load(data)?;
    let mode = mode(h)?;
    let family = match &mode {
        AnalysisMode::Full => dataset.nu(),
        AnalysisMode::SubAnalysis { declared_nu, .. } => *declared_nu,
    };
    let tau = match h.tau {
        Some(t) => t,
        None => tau_for_fwer(h.alpha, family.max(1), h.mu, h.h, dataset.n())?,
    };
    let hyper = Hyperparams::new(h.mu, h.h, tau, dataset.n())?;
    let analysis = Analysis::with_cap(&dataset, &hyper, mode, h.scan_cap)?;
    Ok((dataset, analysis))
}

fn settings_json(a: &Analysis, h: &HyperArgs) -> Value {
    let hy = a.hyper();
    json!({
        "n": hy.n,
        "nu": a.nu(),
        "nu_family": a.nu_family(),
        "mu": hy.mu,
        "h": hy.h,
        "tau": hy.tau,
        "alpha": h.alpha,
        "rho": h.rho,
        "fwer_threshold": fwer_threshold(hy, a.nu_family()),
        "fdr_threshold": fdr_threshold(hy.tau),
    })
}

fn settings_note(a: &Analysis) -> String {
    let hy = a.hyper();
    format!(
        "n = {}, nu = {} (family {}), mu = {}, h = {}, tau = {:.6}; FWER at tau {:.4e}, Bayes FDR bound {:.4e}",
        hy.n,
        a.nu(),
        a.nu_family(),
        hy.mu,
        hy.h,
        hy.tau,
        fwer_threshold(hy, a.nu_family()),
        fdr_threshold(hy.tau)
    )
}

fn blocks_table(a: &Analysis, rho: f64) -> Result<(Table, Value)> {
    let policy = a.grouping(rho)?;
    let mut t = Table::new(format!("groups at rho = {rho}"), vec!["block", "variables"]);
    let mut js = Vec::new();
    for (b, block) in policy.blocks.iter().enumerate() {
        let names: Vec<String> = block.iter().map(|&j| a.names[j].clone()).collect();
        t.push(vec![b.into(), names.join(",").into()]);
        js.push(names);
    }
    Ok((t, json!(js)))
}

const REPORT_HEADERS: [&str; 6] = ["po", "log_po", "p_unadj", "p_adj", "p_adj_raw", "reject"];

fn report_cells(r: &TestReport) -> Vec<Cell> {
    vec![
        r.po.into(),
        r.log_po.into(),
        r.p_unadj.into(),
        r.p_adj.into(),
        r.p_adj_raw.into(),
        (if r.rejected_bayes { "yes" } else { "no" }).into(),
    ]
}

fn headers(first: &'static str, extra: &[&'static str]) -> Vec<&'static str> {
    let mut h = vec![first];
    h.extend(REPORT_HEADERS);
    h.extend(extra);
    h
}

pub fn analyze(a: &AnalyzeArgs) -> Result<Output> {
    let (dataset, analysis) = analyse(&a.data, &a.hyper)?;
    let opts = TestOptions { rho: None, alpha: a.hyper.alpha, censored: !a.uncensored, tau: None };
    let marginal = analysis.marginal_tests(&opts)?;
    let estimates = coefficient_estimates(&dataset, &analysis.scan)?;
    let grand = analysis.grand_null(&opts)?;

    let mut order: Vec<usize> = (0..analysis.nu()).collect();
    order.sort_by(|&i, &j| marginal[j].log_po.total_cmp(&marginal[i].log_po).then(i.cmp(&j)));

    let mut t = Table::new("variables", headers("variable", &["mean", "sd", "inclusion"]));
    let mut rows = Vec::new();
    for &j in &order {
        let (r, e): (&TestReport, &CoefficientEstimate) = (&marginal[j], &estimates[j]);
        let mut cells = vec![Cell::from(analysis.names[j].clone())];
        cells.extend(report_cells(r));
        cells.extend([e.bayes_mean.into(), e.bayes_se.into(), e.inclusion_prob.into()]);
        t.push(cells);
        rows.push(json!({ "variable": analysis.names[j], "test": r, "estimate": e }));
    }
    let mut g = Table::new("grand null", headers("tested", &[]));
    let mut cells = vec![Cell::from("ALL")];
    cells.extend(report_cells(&grand));
    g.push(cells);
    let (b, blocks) = blocks_table(&analysis, a.hyper.rho)?;

    Ok(Output {
        tables: vec![t, g, b],
        notes: vec![settings_note(&analysis)],
        json: json!({
            "settings": settings_json(&analysis, &a.hyper),
            "variables": rows,
            "grand_null": grand,
            "blocks": blocks,
        }),
    })
}

pub fn test(a: &TestArgs) -> Result<Output> {
    let (_, analysis) = analyse(&a.data, &a.hyper)?;
    let opts = TestOptions {
        rho: (!a.allow_inadmissible).then_some(a.hyper.rho),
        alpha: a.hyper.alpha,
        censored: !a.uncensored,
        tau: None,
    };
    let mut t = Table::new("group tests", headers("tested", &[]));
    let mut reports = Vec::new();
    for g in &a.group {
        let names: Vec<String> = g.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
        let r = analysis.test_names(&names, &opts)?;
        let mut cells = vec![Cell::from(r.tested_names.join("+"))];
        cells.extend(report_cells(&r));
        t.push(cells);
        reports.push(r);
    }
    Ok(Output {
        tables: vec![t],
        notes: vec![settings_note(&analysis)],
        json: json!({ "settings": settings_json(&analysis, &a.hyper), "tests": reports }),
    })
}

pub fn select(a: &SelectArgs) -> Result<Output> {
    let dataset = load(&a.data)?;
    let kept = select_subset(&dataset, a.max_vars, a.rho_cap)?;
    let p = univariable_tests(&dataset)?;
    let mut t = Table::new("selected variables", vec!["rank", "variable", "p_univariable"]);
    let mut rows = Vec::new();
    for (rank, &j) in kept.iter().enumerate() {
        let name = &dataset.names()[j];
        t.push(vec![(rank + 1).into(), name.clone().into(), p[j].into()]);
        rows.push(json!({ "rank": rank + 1, "variable": name, "p_univariable": p[j] }));
    }
    let names: Vec<&str> = kept.iter().map(|&j| dataset.names()[j].as_str()).collect();
    Ok(Output {
        tables: vec![t],
        notes: vec![format!("--candidates {}", names.join(","))],
        json: json!({ "selected": rows, "nu_full": dataset.nu() }),
    })
}

fn sim_table(title: String, reports: &[(Vec<(&'static str, f64)>, SimReport)]) -> Table {
    let first = reports.first().map(|(k, _)| k.iter().map(|(n, _)| *n).collect::<Vec<_>>()).unwrap_or_default();
    let metric_names: Vec<String> = reports
        .first()
        .and_then(|(_, r)| r.points.first())
        .map(|p| p.metrics.keys().cloned().collect())
        .unwrap_or_default();
    let mut headers: Vec<String> = first.iter().map(|s| s.to_string()).collect();
    let param = reports.first().and_then(|(_, r)| r.points.first()).map(|p| p.parameter.clone()).unwrap_or_default();
    headers.push(param);
    for m in &metric_names {
        headers.extend([m.clone(), format!("{m}_se"), format!("{m}_events")]);
    }
    let has_ref = reports.iter().any(|(_, r)| r.points.iter().any(|p| p.reference.is_some()));
    if has_ref {
        headers.push("reference".into());
    }
    let mut t = Table::new(title, headers);
    for (keys, r) in reports {
        for p in &r.points {
            let mut cells: Vec<Cell> = keys.iter().map(|&(_, v)| Cell::from(v)).collect();
            cells.push(p.value.into());
            for m in &metric_names {
                let rate = &p.metrics[m];
                cells.extend([rate.estimate.into(), rate.se.into(), rate.events.into()]);
            }
            if has_ref {
                cells.push(p.reference.unwrap_or(f64::NAN).into());
            }
            t.push(cells);
        }
    }
    t
}

pub fn sim_twovar(a: &SimTwovarArgs) -> Result<Output> {
    let target = match a.target {
        TwovarTarget::Beta1 => TwoVarTarget::TestBeta1,
        TwovarTarget::GrandNull => TwoVarTarget::GrandNull,
    };
    let mut reports = Vec::new();
    let mut js = Vec::new();
    for &n in &a.n {
        for &rho in &a.rho {
            let cfg = TwoVarConfig {
                n,
                mu: a.mu,
                h: a.h,
                tau: a.tau,
                rho,
                sigma: a.sigma,
                beta2_grid: a.beta2.clone(),
                replicates: a.replicates,
                seed: a.seed,
            };
            let r = if a.data_level { sim_two_variable_data(&cfg, target)? } else { sim_two_variable(&cfg, target)? };
            js.push(json!({ "n": n, "rho": rho, "report": r }));
            reports.push((vec![("n", n as f64), ("rho", rho)], r));
        }
    }
    let title = format!("false positive rate, {} replicates, seed {}", a.replicates, a.seed);
    Ok(Output { tables: vec![sim_table(title, &reports)], notes: vec![], json: json!({ "runs": js }) })
}

fn correlation(nu: usize, f: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
    DMatrix::from_fn(nu, nu, |i, j| if i == j { 1.0 } else { f(i, j) })
}

pub fn sim_prior(a: &SimPriorArgs) -> Result<Output> {
    let (nu, n, design_source) = match (&a.design_csv, a.equicorr, a.ar1) {
        (Some(path), _, _) => {
            let table = parse_table(&read_text(path)?)?;
            let (rows, cols) = (table.rows(), table.columns.len());
            let x = DMatrix::from_fn(rows, cols, |i, j| table.columns[j][i]);
            (cols, rows, DesignSource::Template(x))
        }
        (None, Some(r), _) => (a.nu, a.n, DesignSource::SyntheticCorr(correlation(a.nu, |_, _| r))),
        (None, None, Some(phi)) => {
            (a.nu, a.n, DesignSource::SyntheticCorr(correlation(a.nu, |i, j| phi.powi(i.abs_diff(j) as i32))))
        }
        (None, None, None) => (a.nu, a.n, DesignSource::SyntheticCorr(correlation(a.nu, |_, _| 0.0))),
    };
    let cfg = PriorSimConfig {
        nu,
        mu: a.mu,
        h: a.h,
        tau: a.tau,
        n,
        design_source,
        rho_levels: a.rho_levels.clone(),
        replicates: a.replicates,
        seed: a.seed,
    };
    let report = sim_prior_bfwer(&cfg)?;
    let title = format!("Bayes FWER by grouping threshold, {} replicates, seed {}", a.replicates, a.seed);
    let mut tables = vec![sim_table(title, &[(vec![], report.clone())])];
    let mut notes = Vec::new();
    if let Some(f) = &report.fdr {
        let mut t = Table::new("false discoveries among elementary rejections", vec!["statistic", "estimate", "se"]);
        t.push(vec!["rejections".into(), f.rejections.into(), Cell::from("")]);
        t.push(vec!["false_rejections".into(), f.false_rejections.into(), Cell::from("")]);
        t.push(vec!["mean_null_prob".into(), f.mean_null_prob.into(), f.mean_null_prob_se.into()]);
        t.push(vec!["fdp".into(), f.fdp.into(), f.fdp_se.into()]);
        t.push(vec!["bound".into(), f.bound.into(), Cell::from("")]);
        tables.push(t);
    }
    if let Some(b) = report.evalue_bound {
        notes.push(format!("prior-averaged FWER bound: {b:.6}"));
    }
    let strikeout = match a.strikeout_alpha {
        Some(alpha) => {
            let tau = tau_for_fwer(alpha, nu, a.mu, a.h, n)?;
            let tester = marginal_tester(tau);
            let s = strikeout_rate(&PriorSimConfig { tau, ..cfg.clone() }, &tester)?;
            tables.push(sim_table(format!("strikeout of marginal tests at FWER {alpha}"), &[(vec![], s.clone())]));
            Some(s)
        }
        None => None,
    };
    Ok(Output { tables, notes, json: json!({ "nu": nu, "n": n, "report": report, "strikeout": strikeout }) })
}

pub fn xcrit(a: &XcritArgs) -> Result<Output> {
    let r = xcrit_threshold()?;
    let two = tail_two(r.x_crit, 1e-12)?;
    let mut t = Table::new("tail crossing point", vec!["quantity", "value"]);
    // Table output rounds to 4 decimals, too coarse for a constant.
    let fixed = |x: f64| Cell::from(format!("{x:.10}"));
    t.push(vec!["x_crit".into(), fixed(r.x_crit)]);
    t.push(vec!["tail_one".into(), fixed(r.tail_prob)]);
    t.push(vec!["tail_two".into(), fixed(two)]);
    let mut js = json!({ "x_crit": r.x_crit, "tail_one": r.tail_prob, "tail_two": two });
    if let Some(draws) = a.mc_draws {
        if draws == 0 {
            return Err(CliError::Usage("--mc-draws must be positive".into()));
        }
        let (est, se) = mc_mean_tail(2, r.x_crit, draws, a.seed);
        t.push(vec!["tail_two_mc".into(), fixed(est)]);
        t.push(vec!["tail_two_mc_se".into(), fixed(se)]);
        js["tail_two_mc"] = json!({ "estimate": est, "se": se, "draws": draws, "seed": a.seed });
    }
    Ok(Output { tables: vec![t], notes: vec![], json: js })
}

pub fn serve(a: &ServeArgs) -> Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Io("cannot start runtime".into(), e))?;
    let store = Arc::new(modavg_service::Store::new(a.scan_cap));
    let addr = format!("{}:{}", a.bind, a.port);
    rt.block_on(async {
        let listener =
            tokio::net::TcpListener::bind(&addr).await.map_err(|e| CliError::Io(format!("cannot bind {addr}"), e))?;
        let local = listener.local_addr().map_err(|e| CliError::Io("no local address".into(), e))?;
        eprintln!("listening on http://{local}");
        modavg_service::serve(listener, store).await.map_err(|e| CliError::Io("server failed".into(), e))
    })
}
