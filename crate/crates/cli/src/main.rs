use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sicert::geometry::{build_graph, ideal_witness_optimum, load_set};
use sicert::noisefit::{fit_delta_theta, fit_noise};
use sicert::opticsim::{simulate_experiment, ExperimentRecord, NoiseChannelParams};
use sicert::pipeline::{run_pipeline, sweep, sweep_csv, Mode, RunConfig, Verdict};

#[derive(Parser)]
#[command(
    name = "sicert",
    version,
    about = "Certify uncharacterized projectors with a contextuality witness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect built-in or file-defined measurement sets.
    Sets {
        #[command(subcommand)]
        action: SetsAction,
    },
    /// Simulate an experiment and write the record.
    Simulate(Common),
    /// Run the full certification pipeline.
    Certify {
        #[command(flatten)]
        common: Common,
        /// Ingest this record instead of simulating.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Eliminate channel noise before the witness and SDP stages.
        #[arg(long)]
        noise_fit: bool,
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long)]
        bootstrap_sdp: Option<usize>,
    },
    /// Fit channel noise and state deviations to a record's on-edge errors.
    FitNoise {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Fit the waveplate offset to a record's on-edge errors.
    FitAngle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Certify over a grid of waveplate offsets and write a CSV table.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Offsets in degrees, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long)]
        bootstrap_sdp: Option<usize>,
    },
}

#[derive(Subcommand)]
enum SetsAction {
    Show { name: String },
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    set: Option<String>,
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Degrees.
    #[arg(long, allow_hyphen_values = true)]
    delta_theta: Option<f64>,
    /// p_ba,p_bb,p_pa
    #[arg(long, value_delimiter = ',')]
    noise: Option<Vec<f64>>,
    /// Analytic probabilities instead of sampled counts.
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = &self.set {
            cfg.set = s.clone();
        }
        if let Some(s) = self.shots {
            cfg.simulation.shots = s;
        }
        if let Some(s) = self.seed {
            cfg.simulation.seed = s;
        }
        if let Some(d) = self.delta_theta {
            cfg.simulation.delta_theta = d;
        }
        if let Some(n) = &self.noise {
            if n.len() != 3 {
                bail!("--noise takes three comma-separated probabilities");
            }
            cfg.simulation.noise = NoiseChannelParams::new(n[0], n[1], n[2])?;
        }
        if self.exact {
            cfg.simulation.shots = 0;
        }
        if let Some(o) = &self.out {
            cfg.output = Some(o.clone());
        }
        Ok(cfg)
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn record_for(cfg: &RunConfig, record: &Option<PathBuf>) -> Result<ExperimentRecord> {
    let set = load_set(&cfg.set)?;
    let graph = build_graph(&set)?;
    match record {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let rec: ExperimentRecord =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            if rec.set != set.name {
                bail!("record is for set `{}`, not `{}`", rec.set, set.name);
            }
            Ok(rec)
        }
        None => Ok(simulate_experiment(&set, &graph, &cfg.simulation)?),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sets {
            action: SetsAction::Show { name },
        } => {
            let set = load_set(&name)?;
            let graph = build_graph(&set)?;
            let info = serde_json::json!({
                "name": set.name,
                "dim": set.dim,
                "vertices": set.n(),
                "edges": graph.edges.len(),
                "contexts": graph.contexts.len(),
                "non_edges": graph.non_edges().len(),
                "w_opt": ideal_witness_optimum(&set).to_string(),
                "labels": set.labels,
                "vectors": set.vectors,
            });
            println!("{}", serde_json::to_string_pretty(&info)?);
        }
        Command::Simulate(common) => {
            let cfg = common.config()?;
            cfg.simulation.noise.validate()?;
            let rec = record_for(&cfg, &None)?;
            emit(
                &(serde_json::to_string_pretty(&rec)? + "\n"),
                cfg.output.as_deref(),
            )?;
        }
        Command::Certify {
            common,
            record,
            noise_fit,
            bootstrap,
            bootstrap_sdp,
        } => {
            let mut cfg = common.config()?;
            if record.is_some() {
                cfg.mode = Mode::Ingest;
                cfg.record = record;
            }
            cfg.use_noise_fit |= noise_fit;
            if let Some(b) = bootstrap {
                cfg.bootstrap_resamples = b;
            }
            if let Some(b) = bootstrap_sdp {
                cfg.bootstrap_sdp_resamples = b;
            }
            let report = run_pipeline(&cfg)?;
            if cfg.output.is_none() {
                println!("{}", serde_json::to_string_pretty(&report)?);
            }
            let verdict = match report.verdict {
                Verdict::Certified => "certified",
                Verdict::NotCertified => "not certified",
            };
            eprintln!(
                "w_worst = {:.5} ± {:.5}, w_sdp = {:.5} ± {:.5}: {verdict}",
                report.w_worst.w, report.w_worst.sigma, report.w_sdp.w, report.w_sdp.sigma
            );
        }
        Command::FitNoise { common, record } => {
            let cfg = common.config()?;
            let set = load_set(&cfg.set)?;
            let graph = build_graph(&set)?;
            let rec = record_for(&cfg, &record)?;
            let fit = fit_noise(&rec.eps_by_index(&set)?, &set, &graph, &cfg.noise_fit)?;
            emit(
                &(serde_json::to_string_pretty(&fit)? + "\n"),
                cfg.output.as_deref(),
            )?;
        }
        Command::FitAngle { common, record } => {
            let cfg = common.config()?;
            let set = load_set(&cfg.set)?;
            let graph = build_graph(&set)?;
            let rec = record_for(&cfg, &record)?;
            let fit = fit_delta_theta(&rec.eps_by_index(&set)?, &set, &graph)?;
            emit(
                &(serde_json::to_string_pretty(&fit)? + "\n"),
                cfg.output.as_deref(),
            )?;
        }
        Command::Sweep {
            common,
            grid,
            bootstrap,
            bootstrap_sdp,
        } => {
            let mut cfg = common.config()?;
            if let Some(b) = bootstrap {
                cfg.bootstrap_resamples = b;
            }
            if let Some(b) = bootstrap_sdp {
                cfg.bootstrap_sdp_resamples = b;
            }
            let out = cfg.output.take();
            let rows = sweep(&cfg, &grid)?;
            emit(&sweep_csv(&rows), out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
