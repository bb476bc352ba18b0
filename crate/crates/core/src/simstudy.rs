//! Simulation harness and single-network pipeline.
//!
//! # Metrics schema
//!
//! `metrics.csv` has one row per (cell, replicate), sorted by cell in
//! config order (`n`, then `log10_rho`, then `lambda`) and replicate index:
//!
//! | column | meaning |
//! |---|---|
//! | `n`, `log10_rho`, `lambda` | design cell |
//! | `replicate` | replicate index, 0-based |
//! | `seed` | replicate seed (graph and fits derive from it) |
//! | `status` | `ok` or `failed` |
//! | `edges` | edge count of the sampled graph |
//! | `map_q` | block count with the largest lower bound |
//! | `rmse_map`, `rmse_avg` | RMSE of the MAP and model-averaged mean surfaces |
//! | `mu_true_<m>`, `mu_map_<m>`, `mu_avg_<m>` | motif probabilities |
//! | `kl_<m>` | Bernoulli KL for the MAP estimate; empty when degenerate |
//! | `kl_<m>_degenerate` | 1 when the estimate is 0 or 1 and the truth is not |
//! | `elbo_q<Q>` | lower bound of the fit with `Q` blocks (empty if it failed) |
//!
//! Wall times go to `timings.csv` so that `metrics.csv` is reproducible
//! byte for byte.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{read_edge_list, sample_wgraph, Graph, GraphonSpec};
use crate::motifs::{self, MotifSpec};
use crate::posterior::{grid_moments, GridSource};
use crate::seed;
use crate::vbem::{fit_ensemble, FitConfig, FitEnsemble, PriorFamily};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: Vec<usize>,
    pub log10_rho: Vec<f64>,
    pub lambda: Vec<f64>,
    pub replicates: usize,
    #[serde(alias = "Q_max")]
    pub q_max: usize,
    /// Cells per axis of the midpoint grid used for the RMSE.
    pub grid: usize,
    pub motifs: Vec<String>,
    pub seed: u64,
    /// Worker threads; 0 uses the rayon default.
    pub threads: usize,
    pub fit: FitConfig,
    pub prior: PriorFamily,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: vec![100, 316],
            log10_rho: vec![-2.0, -1.5, -1.0],
            lambda: vec![1.0, 2.0, 3.0, 5.0],
            replicates: 10,
            q_max: 10,
            grid: 100,
            motifs: vec!["triangle".into(), "square".into()],
            seed: 1,
            threads: 0,
            fit: FitConfig::default(),
            prior: PriorFamily::default(),
        }
    }
}

pub const PAPER_SCALE_REPLICATES: usize = 100;

impl SimConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: SimConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn paper_scale(mut self) -> Self {
        self.replicates = PAPER_SCALE_REPLICATES;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n.is_empty() || self.log10_rho.is_empty() || self.lambda.is_empty() || self.motifs.is_empty() {
            return Err(Error::InvalidArgument("n, log10_rho, lambda and motifs must be nonempty".into()));
        }
        if self.replicates == 0 || self.q_max == 0 {
            return Err(Error::InvalidArgument("replicates and q_max must be at least 1".into()));
        }
        if self.grid < 2 {
            return Err(Error::InvalidArgument("grid must be at least 2".into()));
        }
        if let Some(&n) = self.n.iter().find(|&&n| n < 2) {
            return Err(Error::InvalidArgument(format!("n = {n} is too small")));
        }
        self.motif_specs()?;
        Ok(())
    }

    pub fn motif_specs(&self) -> Result<Vec<MotifSpec>> {
        self.motifs.iter().map(|m| MotifSpec::parse(m)).collect()
    }

    /// Feasible design cells in config order; infeasible ones are skipped
    /// with a warning.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &log10_rho in &self.log10_rho {
                for &lambda in &self.lambda {
                    let rho = 10f64.powf(log10_rho);
                    match GraphonSpec::product_form(rho, lambda) {
                        Ok(_) => out.push(Cell { n, log10_rho, lambda }),
                        Err(e) => log::warn!("skipping cell n={n} log10_rho={log10_rho} lambda={lambda}: {e}"),
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub n: usize,
    pub log10_rho: f64,
    pub lambda: f64,
}

impl Cell {
    pub fn rho(&self) -> f64 {
        10f64.powf(self.log10_rho)
    }

    pub fn spec(&self) -> Result<GraphonSpec> {
        GraphonSpec::product_form(self.rho(), self.lambda)
    }

    pub fn replicate_seed(&self, master: u64, replicate: usize) -> u64 {
        seed::derive(
            master,
            &[self.n as u64, self.log10_rho.to_bits(), self.lambda.to_bits(), replicate as u64],
        )
    }
}

/// Bernoulli KL divergence, with a flagged sentinel for degenerate estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum KlValue {
    Finite(f64),
    Infinite,
}

impl KlValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            KlValue::Finite(x) => Some(x),
            KlValue::Infinite => None,
        }
    }
}

// x ln(x / y) with 0 ln 0 = 0
fn xlogxy(x: f64, ln_x: f64, ln_y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (ln_x - ln_y)
    }
}

pub fn kl_bernoulli(mu_true: f64, mu_est: f64) -> Result<KlValue> {
    if !(0.0..=1.0).contains(&mu_true) || !(0.0..=1.0).contains(&mu_est) {
        return Err(Error::InvalidArgument(format!("probabilities ({mu_true}, {mu_est}) outside [0, 1]")));
    }
    if (mu_est == 0.0 && mu_true > 0.0) || (mu_est == 1.0 && mu_true < 1.0) {
        return Ok(KlValue::Infinite);
    }
    let kl = xlogxy(mu_true, mu_true.ln(), mu_est.ln())
        + xlogxy(1.0 - mu_true, (-mu_true).ln_1p(), (-mu_est).ln_1p());
    Ok(KlValue::Finite(kl.max(0.0)))
}

/// Root mean squared difference between `truth` and a grid estimate,
/// both evaluated at the grid's cell midpoints.
pub fn rmse(truth: &GraphonSpec, estimate: &GraphonSpec) -> Result<f64> {
    truth.validate()?;
    let GraphonSpec::Grid { m, values } = estimate else {
        return Err(Error::InvalidArgument("estimate must be a grid graphon".into()));
    };
    estimate.validate()?;
    let m = *m;
    let mut sum = 0.0;
    for i in 0..m {
        let u = (i as f64 + 0.5) / m as f64;
        for j in 0..m {
            let v = (j as f64 + 0.5) / m as f64;
            let d = truth.eval_unchecked(u, v) - values[i * m + j];
            sum += d * d;
        }
    }
    Ok((sum / (m * m) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MotifMetrics {
    pub name: String,
    pub mu_true: f64,
    pub mu_map: f64,
    pub mu_avg: f64,
    pub kl_map: KlValue,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateMetrics {
    pub edges: usize,
    pub map_q: usize,
    pub rmse_map: f64,
    pub rmse_avg: f64,
    pub motifs: Vec<MotifMetrics>,
    pub elbos: Vec<Option<f64>>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub cell: Cell,
    pub replicate: usize,
    pub seed: u64,
    /// `Err` holds the failure message.
    pub outcome: std::result::Result<ReplicateMetrics, String>,
    pub wall_seconds: f64,
}

/// Samples one graph for the cell and evaluates every metric.
pub fn run_replicate(config: &SimConfig, cell: Cell, replicate_seed: u64) -> Result<ReplicateMetrics> {
    let spec = cell.spec()?;
    let motif_specs = config.motif_specs()?;
    let (graph, _) = sample_wgraph(&spec, cell.n, seed::derive(replicate_seed, &[0]))?;
    let fit_config = FitConfig { seed: seed::derive(replicate_seed, &[1]), ..config.fit };
    let ens = fit_ensemble(&graph, config.q_max, &config.prior, &fit_config)?;

    let (map_grid, _) = grid_moments(GridSource::Posterior(ens.map_fit()), config.grid, false)?;
    let (avg_grid, _) = grid_moments(GridSource::Averaged(&ens), config.grid, false)?;
    let rmse_map = rmse(&spec, &GraphonSpec::grid(config.grid, map_grid)?)?;
    let rmse_avg = rmse(&spec, &GraphonSpec::grid(config.grid, avg_grid)?)?;

    let mut motif_rows = Vec::with_capacity(motif_specs.len());
    for m in &motif_specs {
        let mu_true = motifs::mu_product_form(cell.rho(), cell.lambda, m)?;
        let est = motifs::mu_averaged(&ens, m)?;
        motif_rows.push(MotifMetrics {
            name: m.name().to_string(),
            mu_true,
            mu_map: est.map,
            mu_avg: est.averaged,
            kl_map: kl_bernoulli(mu_true, est.map)?,
        });
    }
    Ok(ReplicateMetrics {
        edges: graph.edge_count(),
        map_q: ens.map_q,
        rmse_map,
        rmse_avg,
        motifs: motif_rows,
        elbos: ens.elbos(),
        weights: ens.weights.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub rows: Vec<MetricsRow>,
    pub failures: usize,
    pub files: Vec<PathBuf>,
}

/// Runs every feasible cell and replicate, writing `metrics.csv`,
/// `q_posterior.csv`, `summary.csv`, `timings.csv` and `manifest.json`.
pub fn run_simulation(config: &SimConfig, out_dir: impl AsRef<Path>) -> Result<SimulationOutput> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let jobs: Vec<(Cell, usize)> = config
        .cells()
        .into_iter()
        .flat_map(|c| (0..config.replicates).map(move |r| (c, r)))
        .collect();
    if jobs.is_empty() {
        return Err(Error::InvalidArgument("no feasible design cell".into()));
    }

    let run = || -> Vec<MetricsRow> {
        jobs.par_iter()
            .map(|&(cell, replicate)| {
                let seed = cell.replicate_seed(config.seed, replicate);
                let start = Instant::now();
                let outcome = run_replicate(config, cell, seed).map_err(|e| {
                    log::error!(
                        "replicate {replicate} of n={} log10_rho={} lambda={} failed: {e}",
                        cell.n,
                        cell.log10_rho,
                        cell.lambda
                    );
                    e.to_string()
                });
                let wall_seconds = start.elapsed().as_secs_f64();
                log::info!(
                    "n={} log10_rho={} lambda={} replicate {replicate} done in {wall_seconds:.2}s",
                    cell.n,
                    cell.log10_rho,
                    cell.lambda
                );
                MetricsRow { cell, replicate, seed, outcome, wall_seconds }
            })
            .collect()
    };
    let rows = if config.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(run)
    } else {
        run()
    };
    let failures = rows.iter().filter(|r| r.outcome.is_err()).count();

    let motif_names: Vec<String> = config.motif_specs()?.iter().map(|m| m.name().to_string()).collect();
    let files = vec![
        out_dir.join("metrics.csv"),
        out_dir.join("q_posterior.csv"),
        out_dir.join("summary.csv"),
        out_dir.join("timings.csv"),
        out_dir.join("manifest.json"),
    ];
    write_metrics(&files[0], &rows, &motif_names, config.q_max)?;
    write_q_posterior(&files[1], &rows)?;
    write_summary(&files[2], &rows, &config.cells(), &motif_names, config.q_max)?;
    write_timings(&files[3], &rows)?;
    write_json(&files[4], &simulation_manifest(config, &rows, failures))?;
    Ok(SimulationOutput { rows, failures, files })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn fmt_f(x: f64) -> String {
    format!("{x}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_default()
}

fn cell_fields(cell: &Cell) -> [String; 3] {
    [cell.n.to_string(), fmt_f(cell.log10_rho), fmt_f(cell.lambda)]
}

fn write_metrics(path: &Path, rows: &[MetricsRow], motif_names: &[String], q_max: usize) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = ["n", "log10_rho", "lambda", "replicate", "seed", "status", "edges", "map_q"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.push("rmse_map".into());
    header.push("rmse_avg".into());
    for m in motif_names {
        for col in ["mu_true", "mu_map", "mu_avg"] {
            header.push(format!("{col}_{m}"));
        }
        header.push(format!("kl_{m}"));
        header.push(format!("kl_{m}_degenerate"));
    }
    header.extend((1..=q_max).map(|q| format!("elbo_q{q}")));
    w.write_record(&header)?;

    for row in rows {
        let mut rec: Vec<String> = cell_fields(&row.cell).to_vec();
        rec.push(row.replicate.to_string());
        rec.push(row.seed.to_string());
        match &row.outcome {
            Ok(m) => {
                rec.push("ok".into());
                rec.push(m.edges.to_string());
                rec.push(m.map_q.to_string());
                rec.push(fmt_f(m.rmse_map));
                rec.push(fmt_f(m.rmse_avg));
                for mm in &m.motifs {
                    rec.push(fmt_f(mm.mu_true));
                    rec.push(fmt_f(mm.mu_map));
                    rec.push(fmt_f(mm.mu_avg));
                    rec.push(fmt_opt(mm.kl_map.finite()));
                    rec.push(u8::from(mm.kl_map == KlValue::Infinite).to_string());
                }
                rec.extend(m.elbos.iter().map(|e| fmt_opt(*e)));
            }
            Err(_) => {
                rec.push("failed".into());
                rec.resize(header.len(), String::new());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_q_posterior(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["n", "log10_rho", "lambda", "replicate", "q", "elbo", "weight"])?;
    for row in rows {
        let Ok(m) = &row.outcome else { continue };
        for (i, (e, wt)) in m.elbos.iter().zip(&m.weights).enumerate() {
            let mut rec = cell_fields(&row.cell).to_vec();
            rec.extend([row.replicate.to_string(), (i + 1).to_string(), fmt_opt(*e), fmt_f(*wt)]);
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

fn write_summary(path: &Path, rows: &[MetricsRow], cells: &[Cell], motif_names: &[String], q_max: usize) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = ["n", "log10_rho", "lambda", "ok", "failed"].iter().map(|s| s.to_string()).collect();
    let stat_cols = |name: &str| ["q1", "median", "q3"].map(|s| format!("{name}_{s}"));
    header.extend(stat_cols("rmse_map"));
    header.extend(stat_cols("rmse_avg"));
    for m in motif_names {
        header.extend(stat_cols(&format!("kl_{m}")));
        header.push(format!("kl_{m}_degenerate"));
    }
    header.extend((1..=q_max).map(|q| format!("map_count_q{q}")));
    header.extend((1..=q_max).map(|q| format!("mean_weight_q{q}")));
    w.write_record(&header)?;

    for cell in cells {
        let in_cell: Vec<&MetricsRow> = rows.iter().filter(|r| r.cell == *cell).collect();
        let ok: Vec<&ReplicateMetrics> = in_cell.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
        let mut rec = cell_fields(cell).to_vec();
        rec.push(ok.len().to_string());
        rec.push((in_cell.len() - ok.len()).to_string());
        let stats = |xs: Vec<f64>| [0.25, 0.5, 0.75].map(|p| fmt_opt(quantile(&xs, p)));
        rec.extend(stats(ok.iter().map(|m| m.rmse_map).collect()));
        rec.extend(stats(ok.iter().map(|m| m.rmse_avg).collect()));
        for (k, _) in motif_names.iter().enumerate() {
            rec.extend(stats(ok.iter().filter_map(|m| m.motifs[k].kl_map.finite()).collect()));
            let degenerate = ok.iter().filter(|m| m.motifs[k].kl_map == KlValue::Infinite).count();
            rec.push(degenerate.to_string());
        }
        for q in 1..=q_max {
            rec.push(ok.iter().filter(|m| m.map_q == q).count().to_string());
        }
        for q in 1..=q_max {
            let mean = if ok.is_empty() {
                None
            } else {
                Some(ok.iter().map(|m| m.weights[q - 1]).sum::<f64>() / ok.len() as f64)
            };
            rec.push(fmt_opt(mean));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_timings(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["n", "log10_rho", "lambda", "replicate", "wall_seconds"])?;
    for row in rows {
        let mut rec = cell_fields(&row.cell).to_vec();
        rec.push(row.replicate.to_string());
        rec.push(format!("{:.3}", row.wall_seconds));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn versions() -> serde_json::Value {
    serde_json::json!({
        "package": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
    })
}

fn simulation_manifest(config: &SimConfig, rows: &[MetricsRow], failures: usize) -> serde_json::Value {
    let seeds: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            serde_json::json!({
                "n": r.cell.n,
                "log10_rho": r.cell.log10_rho,
                "lambda": r.cell.lambda,
                "replicate": r.replicate,
                "seed": r.seed,
                "error": r.outcome.as_ref().err(),
            })
        })
        .collect();
    serde_json::json!({
        "command": "simulate",
        "versions": versions(),
        "config": config,
        "replicates_run": rows.len(),
        "failures": failures,
        "seeds": seeds,
    })
}

/// Settings of the single-network pipeline.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisOptions {
    pub q_max: usize,
    pub grid: usize,
    pub motifs: Vec<MotifSpec>,
    pub fit: FitConfig,
    pub prior: PriorFamily,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            q_max: 15,
            grid: 100,
            motifs: vec![MotifSpec::parse("triangle").unwrap(), MotifSpec::parse("square").unwrap()],
            fit: FitConfig::default(),
            prior: PriorFamily::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MotifEstimate {
    pub motif: String,
    pub matrix: Vec<Vec<u8>>,
    pub mu_map: f64,
    pub mu_averaged: f64,
}

/// Everything the single-network pipeline produces.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub n: usize,
    pub edges: usize,
    pub map_q: usize,
    pub weights: Vec<f64>,
    pub elbos: Vec<Option<f64>>,
    pub grid: usize,
    /// MAP posterior mean on the midpoint grid, row-major.
    pub grid_mean: Vec<f64>,
    pub grid_sd: Vec<f64>,
    /// Model-averaged posterior mean on the same grid.
    pub grid_averaged: Vec<f64>,
    pub motifs: Vec<MotifEstimate>,
    #[serde(skip)]
    pub ensemble: FitEnsemble,
}

/// Fits `Q = 1..=q_max` to `graph` and evaluates the graphon grid and motif
/// posterior means.
pub fn analyze_graph(graph: &Graph, options: &AnalysisOptions) -> Result<EstimateReport> {
    let ens = fit_ensemble(graph, options.q_max, &options.prior, &options.fit)?;
    let (grid_mean, grid_sd) = grid_moments(GridSource::Posterior(ens.map_fit()), options.grid, true)?;
    let (grid_averaged, _) = grid_moments(GridSource::Averaged(&ens), options.grid, false)?;
    let motifs = options
        .motifs
        .iter()
        .map(|m| {
            let est = motifs::mu_averaged(&ens, m)?;
            Ok(MotifEstimate {
                motif: m.name().to_string(),
                matrix: m.matrix().to_vec(),
                mu_map: est.map,
                mu_averaged: est.averaged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimateReport {
        n: graph.n(),
        edges: graph.edge_count(),
        map_q: ens.map_q,
        weights: ens.weights.clone(),
        elbos: ens.elbos(),
        grid: options.grid,
        grid_mean,
        grid_sd: grid_sd.expect("sd requested"),
        grid_averaged,
        motifs,
        ensemble: ens,
    })
}

/// Reads an edge list, runs [`analyze_graph`] and writes `ensemble.json`,
/// `q_posterior.csv`, `grid.csv`, `grid_averaged.csv`, `grid_long.csv`,
/// `motifs.json` and `manifest.json` into `out_dir`.
pub fn analyze_network(
    edge_list: impl AsRef<Path>,
    options: &AnalysisOptions,
    out_dir: impl AsRef<Path>,
) -> Result<EstimateReport> {
    let edge_list = edge_list.as_ref();
    let out_dir = out_dir.as_ref();
    let graph = read_edge_list(edge_list)?;
    let report = analyze_graph(&graph, options)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    write_json(&out_dir.join("ensemble.json"), &report.ensemble.to_json(false))?;
    let qpath = out_dir.join("q_posterior.csv");
    let mut w = csv_writer(&qpath)?;
    w.write_record(["q", "elbo", "weight"])?;
    for (i, (e, wt)) in report.elbos.iter().zip(&report.weights).enumerate() {
        w.write_record([(i + 1).to_string(), fmt_opt(*e), fmt_f(*wt)])?;
    }
    w.flush().map_err(|e| Error::io(&qpath, e))?;

    write_grid_csv(out_dir.join("grid.csv"), report.grid, &report.grid_mean, "map posterior mean")?;
    write_grid_csv(out_dir.join("grid_averaged.csv"), report.grid, &report.grid_averaged, "model-averaged posterior mean")?;
    write_grid_long(out_dir.join("grid_long.csv"), report.grid, &report.grid_mean, &report.grid_sd)?;
    write_json(&out_dir.join("motifs.json"), &serde_json::to_value(&report.motifs)?)?;
    let manifest = serde_json::json!({
        "command": "fit",
        "versions": versions(),
        "input": edge_list,
        "options": options,
        "n": report.n,
        "edges": report.edges,
        "map_q": report.map_q,
    });
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(report)
}

/// Writes an `m x m` grid, one row per `u` cell, after a `#` header line.
pub fn write_grid_csv(path: impl AsRef<Path>, m: usize, values: &[f64], what: &str) -> Result<()> {
    let path = path.as_ref();
    if values.len() != m * m {
        return Err(Error::InvalidArgument(format!("grid of size {m} needs {} values", m * m)));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(out, "# m={m} convention=midpoint u_i=(i-0.5)/m v_j=(j-0.5)/m rows=u cols=v values={what}")?;
        for row in values.chunks(m) {
            let line: Vec<String> = row.iter().map(|&x| fmt_f(x)).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        out.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

/// Reads a grid written by [`write_grid_csv`].
pub fn read_grid_csv(path: impl AsRef<Path>) -> Result<GraphonSpec> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_path(path)?;
    let mut values = Vec::new();
    let mut m = None;
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        if *m.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Parse { path: path.into(), line: line + 2, msg: "ragged grid row".into() });
        }
        for field in rec.iter() {
            values.push(field.trim().parse::<f64>().map_err(|e| Error::Parse {
                path: path.into(),
                line: line + 2,
                msg: e.to_string(),
            })?);
        }
    }
    GraphonSpec::grid(m.unwrap_or(0), values)
}

fn write_grid_long(path: PathBuf, m: usize, mean: &[f64], sd: &[f64]) -> Result<()> {
    let mut w = csv_writer(&path)?;
    w.write_record(["u", "v", "mean", "sd"])?;
    for i in 0..m {
        for j in 0..m {
            let (u, v) = ((i as f64 + 0.5) / m as f64, (j as f64 + 0.5) / m as f64);
            w.write_record([fmt_f(u), fmt_f(v), fmt_f(mean[i * m + j]), fmt_f(sd[i * m + j])])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}
