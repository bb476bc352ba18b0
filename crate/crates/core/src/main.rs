use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use wgraph::graph::{read_edge_list, sample_wgraph, write_edge_list};
use wgraph::motifs::{self, FrequencyMode, MotifSpec};
use wgraph::posterior::{self, grid_moments, GridSource};
use wgraph::simstudy::{self, AnalysisOptions, SimConfig};
use wgraph::vbem::{fit_ensemble, FitConfig, PriorFamily};
use wgraph::{Error, GraphonSpec, Result};

#[derive(Parser)]
#[command(name = "wgraph", version, about = "Graphon and motif inference for W-graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct FitArgs {
    /// Largest number of blocks fitted.
    #[arg(long, default_value_t = 15)]
    qmax: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
}

impl FitArgs {
    fn config(&self) -> FitConfig {
        FitConfig { seed: self.seed, restarts: self.restarts, ..FitConfig::default() }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MotifMethod {
    Posterior,
    Empirical,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulation sweep described by a JSON config.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Use the full replicate count instead of the desk-scale default.
        #[arg(long)]
        paper_scale: bool,
    },
    /// Fit an edge list and write the ensemble, grids and motif estimates.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long, default_value_t = 100)]
        grid: usize,
        /// Comma-separated motif names; inline row strings use `;` between motifs.
        #[arg(long, default_value = "triangle,square")]
        motifs: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate one motif probability and print it as JSON.
    Motif {
        #[arg(long)]
        input: PathBuf,
        /// Builtin name or row string such as `011,101,110`.
        #[arg(long)]
        motif: String,
        #[arg(long, value_enum, default_value = "posterior")]
        method: MotifMethod,
        #[command(flatten)]
        fit: FitArgs,
        /// Sample this many tuples instead of enumerating all of them.
        #[arg(long)]
        samples: Option<u64>,
    },
    /// Fit an edge list and write the posterior mean grid.
    GraphonGrid {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long, default_value_t = 100)]
        grid: usize,
        /// Model-averaged instead of MAP posterior mean.
        #[arg(long)]
        averaged: bool,
    },
    /// Posterior density of W(u, v) under the MAP fit as `w,density` rows.
    PdfSlice {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        u: f64,
        #[arg(long)]
        v: f64,
        #[arg(long, default_value_t = 200)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Sample a W-graph from a JSON graphon spec and write its edge list.
    Sample {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_motifs(text: &str) -> Result<Vec<MotifSpec>> {
    // Row strings contain commas themselves, so they are separated by ';'.
    if text.contains(';') || text.chars().all(|c| c == '0' || c == '1' || c == ',') {
        text.split(';').filter(|s| !s.trim().is_empty()).map(MotifSpec::parse).collect()
    } else {
        text.split(',').filter(|s| !s.trim().is_empty()).map(MotifSpec::parse).collect()
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::Io { path: p.into(), source: e }),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out, paper_scale } => {
            let mut cfg = match config {
                Some(path) => SimConfig::from_json_file(path)?,
                None => SimConfig::default(),
            };
            if paper_scale {
                cfg = cfg.paper_scale();
            }
            let result = simstudy::run_simulation(&cfg, &out)?;
            println!(
                "{}",
                json!({
                    "replicates": result.rows.len(),
                    "failures": result.failures,
                    "files": result.files,
                })
            );
        }
        Command::Fit { input, fit, grid, motifs, out } => {
            let options = AnalysisOptions {
                q_max: fit.qmax,
                grid,
                motifs: parse_motifs(&motifs)?,
                fit: fit.config(),
                prior: PriorFamily::default(),
            };
            let report = simstudy::analyze_network(&input, &options, &out)?;
            println!(
                "{}",
                json!({ "n": report.n, "edges": report.edges, "map_q": report.map_q, "out": out })
            );
        }
        Command::Motif { input, motif, method, fit, samples } => {
            let spec = MotifSpec::parse(&motif)?;
            let graph = read_edge_list(&input)?;
            let value = match method {
                MotifMethod::Posterior => {
                    let ens = fit_ensemble(&graph, fit.qmax, &PriorFamily::default(), &fit.config())?;
                    let est = motifs::mu_averaged(&ens, &spec)?;
                    json!({
                        "motif": spec.name(),
                        "method": "posterior",
                        "mu": est.averaged,
                        "mu_map": est.map,
                        "map_q": est.map_q,
                    })
                }
                MotifMethod::Empirical => {
                    let mode = match samples {
                        Some(samples) => FrequencyMode::Sampled { samples, seed: fit.seed },
                        None => FrequencyMode::Exhaustive,
                    };
                    let est = motifs::empirical_frequency(&graph, &spec, mode)?;
                    let mut v = json!({ "motif": spec.name(), "method": "empirical", "mu": est.value });
                    if samples.is_some() {
                        v["se"] = json!(est.se);
                    }
                    v
                }
            };
            println!("{value}");
        }
        Command::GraphonGrid { input, out, fit, grid, averaged } => {
            let graph = read_edge_list(&input)?;
            let ens = fit_ensemble(&graph, fit.qmax, &PriorFamily::default(), &fit.config())?;
            let (source, what) = if averaged {
                (GridSource::Averaged(&ens), "model-averaged posterior mean")
            } else {
                (GridSource::Posterior(ens.map_fit()), "map posterior mean")
            };
            let (values, _) = grid_moments(source, grid, false)?;
            create_parent(&out)?;
            simstudy::write_grid_csv(&out, grid, &values, what)?;
        }
        Command::PdfSlice { input, u, v, points, out, fit } => {
            if points < 2 {
                return Err(Error::InvalidArgument("need at least 2 points".into()));
            }
            let graph = read_edge_list(&input)?;
            let ens = fit_ensemble(&graph, fit.qmax, &PriorFamily::default(), &fit.config())?;
            let w: Vec<f64> = (0..points).map(|i| (i as f64 + 0.5) / points as f64).collect();
            let density = posterior::posterior_pdf(u, v, ens.map_fit(), &w)?;
            create_parent(&out)?;
            let mut writer = csv::Writer::from_path(&out)?;
            writer.write_record(["w", "density"])?;
            for (x, d) in w.iter().zip(&density) {
                writer.write_record([x.to_string(), d.to_string()])?;
            }
            writer.flush().map_err(|e| Error::Io { path: out.clone(), source: e })?;
        }
        Command::Sample { spec, n, seed, out } => {
            let text = fs::read_to_string(&spec).map_err(|e| Error::Io { path: spec.clone(), source: e })?;
            let graphon: GraphonSpec = serde_json::from_str(&text)?;
            let (graph, _) = sample_wgraph(&graphon, n, seed)?;
            create_parent(&out)?;
            write_edge_list(&graph, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
