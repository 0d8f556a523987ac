//! End-to-end runs: simulate or ingest, eliminate noise, bound the witness,
//! search the SDP threshold, attach bootstrap error bars.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certsdp::{threshold_search, EpsilonPrimeMatrix, SdpConfig, SdpVerdict};
use crate::error::{Error, Result};
use crate::geometry::{
    build_graph, ideal_witness_optimum, load_set, ratio_to_f64, MeasurementSet, OrthogonalityGraph,
};
use crate::noisefit::{fit_delta_theta, fit_noise, AngleFitResult, NoiseFitConfig, NoiseFitResult};
use crate::opticsim::{
    simulate_experiment, ExperimentRecord, NoiseChannelParams, RawCounts, SimulationConfig,
};
use crate::witness::{witness_value, worst_case_bound, WitnessValue};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Simulate,
    Ingest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Built-in set name or path to a set file.
    pub set: String,
    pub mode: Mode,
    /// Record to read in ingest mode.
    pub record: Option<PathBuf>,
    pub simulation: SimulationConfig,
    pub use_noise_fit: bool,
    pub noise_fit: NoiseFitConfig,
    pub fit_angle: bool,
    pub bootstrap_resamples: usize,
    /// Resamples that rerun the full threshold search; 0 skips them.
    pub bootstrap_sdp_resamples: usize,
    pub sdp: SdpConfig,
    /// Threads for bootstrap resamples and sweep points; 0 uses all cores.
    pub workers: usize,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            set: "peres24".into(),
            mode: Mode::Simulate,
            record: None,
            simulation: SimulationConfig::default(),
            use_noise_fit: false,
            noise_fit: NoiseFitConfig::default(),
            fit_angle: true,
            bootstrap_resamples: 200,
            bootstrap_sdp_resamples: 20,
            sdp: SdpConfig::default(),
            workers: 0,
            output: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bootstrap_resamples < 1 {
            return Err(Error::InvalidInput(
                "bootstrap_resamples must be >= 1".into(),
            ));
        }
        let s = &self.sdp;
        for (name, v) in [
            ("tau_threshold", s.tau_threshold),
            ("eps_precision", s.eps_precision),
            ("bisection_tol", s.bisection_tol),
            ("solver_tol", s.solver_tol),
        ] {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::InvalidInput(format!("{name} must be > 0")));
            }
        }
        if s.max_sweeps < 1 {
            return Err(Error::InvalidInput("max_sweeps must be >= 1".into()));
        }
        if self.mode == Mode::Ingest && self.record.is_none() {
            return Err(Error::InvalidInput(
                "ingest mode needs a record path".into(),
            ));
        }
        self.simulation.noise.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    NotCertified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub shots: u64,
    pub exact: bool,
    pub edges_measured: usize,
    pub mean_eps: f64,
    pub mean_eps_sigma: f64,
    pub mean_p: f64,
    pub mean_p_sigma: f64,
}

impl RecordSummary {
    pub fn of(record: &ExperimentRecord) -> Self {
        let (mean_eps, mean_eps_sigma) = record.mean_eps();
        let (mean_p, mean_p_sigma) = record.mean_p();
        RecordSummary {
            shots: record.shots,
            exact: record.is_exact(),
            edges_measured: record.eps.len(),
            mean_eps,
            mean_eps_sigma,
            mean_p,
            mean_p_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseFitSummary {
    pub params: NoiseChannelParams,
    pub residual: f64,
    pub initial_residual: f64,
    pub mean_eps_prime: f64,
    pub eps_prime: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub resamples: usize,
    pub sdp_resamples: usize,
    /// Set when the record carries no counts and every sigma is zero.
    pub exact_mode: bool,
    /// Bootstrap sigma of the mean on-edge error.
    pub mean_eps_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub config: RunConfig,
    pub set: String,
    pub dim: usize,
    pub w_opt: f64,
    pub record: RecordSummary,
    pub w_exp: WitnessValue,
    pub w_worst: WitnessValue,
    pub w_sdp: WitnessValue,
    pub noise_fit: Option<NoiseFitSummary>,
    pub angle_fit: Option<AngleFitResult>,
    pub sdp: SdpVerdict,
    pub verdict: Verdict,
    pub bootstrap: BootstrapSummary,
    /// Wall-clock seconds per stage. Not reproducible.
    pub timing: BTreeMap<String, f64>,
}

impl CertificationReport {
    /// Verdict implied by the report's own numbers.
    pub fn recomputed_verdict(&self) -> Verdict {
        verdict_of(self.w_worst.w, &self.sdp)
    }

    /// JSON with the timing section emptied, for reproducibility checks.
    pub fn to_json_without_timing(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.timing.clear();
        Ok(serde_json::to_string_pretty(&copy)?)
    }
}

pub fn verdict_of(w_worst: f64, sdp: &SdpVerdict) -> Verdict {
    if w_worst > sdp.w_sdp && sdp.completeness_ok && sdp.orthogonality_ok {
        Verdict::Certified
    } else {
        Verdict::NotCertified
    }
}

/// Everything derived from one record, before error bars.
#[derive(Debug, Clone, PartialEq)]
pub struct Certification {
    pub w_exp: WitnessValue,
    pub w_worst: WitnessValue,
    pub noise_fit: Option<NoiseFitResult>,
    /// On-edge values fed to the SDPs, keyed by ordered measured pair.
    pub eps_on_edges: BTreeMap<(usize, usize), f64>,
    pub sdp: SdpVerdict,
    pub verdict: Verdict,
}

/// `w_exp`, `w_worst`, the noise fit if any, and the on-edge values used.
type WitnessStage = (
    WitnessValue,
    WitnessValue,
    Option<NoiseFitResult>,
    BTreeMap<(usize, usize), f64>,
);

/// Witness stages without the threshold search.
fn witness_stage(
    record: &ExperimentRecord,
    set: &MeasurementSet,
    graph: &OrthogonalityGraph,
    use_noise_fit: bool,
    fit_cfg: &NoiseFitConfig,
) -> Result<WitnessStage> {
    let mut inputs = record.witness_inputs(set)?;
    let (fit, eps) = if use_noise_fit {
        let fit =
            fit_noise(&inputs.eps, set, graph, fit_cfg).map_err(|e| e.in_stage("noise fit"))?;
        let eps = fit.eps_prime_by_index(set)?;
        (Some(fit), eps)
    } else {
        (None, inputs.eps.clone())
    };
    inputs.eps = eps.clone();
    let w_exp = witness_value(set, graph, &inputs).map_err(|e| e.in_stage("witness"))?;
    let w_opt = ratio_to_f64(ideal_witness_optimum(set));
    let w_worst = worst_case_bound(w_exp, w_opt, set.dim)?;
    Ok((w_exp, w_worst, fit, eps))
}

/// Noise elimination (optional), witness, worst-case bound, threshold search.
pub fn certify(
    record: &ExperimentRecord,
    set: &MeasurementSet,
    graph: &OrthogonalityGraph,
    use_noise_fit: bool,
    fit_cfg: &NoiseFitConfig,
    sdp_cfg: &SdpConfig,
) -> Result<Certification> {
    let (w_exp, w_worst, noise_fit, eps) =
        witness_stage(record, set, graph, use_noise_fit, fit_cfg)?;
    let eps_matrix = EpsilonPrimeMatrix::from_edges(graph, &eps)?;
    let sdp = threshold_search(&eps_matrix, set, graph, sdp_cfg).map_err(|e| e.in_stage("sdp"))?;
    let verdict = verdict_of(w_worst.w, &sdp);
    Ok(Certification {
        w_exp,
        w_worst,
        noise_fit,
        eps_on_edges: eps,
        sdp,
        verdict,
    })
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))
}

fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn resample_counts(counts: &RawCounts, rng: &mut ChaCha20Rng) -> RawCounts {
    let mut draw = |c: u64| {
        if c == 0 {
            0
        } else {
            Poisson::new(c as f64)
                .map(|d| d.sample(rng) as u64)
                .unwrap_or(c)
        }
    };
    let mut out = counts.clone();
    for b in &mut out.m1 {
        for c in &mut b.counts {
            *c = draw(*c);
        }
    }
    for pc in out.m2.values_mut() {
        for c in &mut pc.counts {
            *c = draw(*c);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSigmas {
    pub w_exp: f64,
    pub w_worst: f64,
    pub w_sdp: f64,
    pub mean_eps: f64,
    pub resamples: usize,
    pub sdp_resamples: usize,
    pub exact_mode: bool,
}

/// Poisson bootstrap: each count is redrawn with itself as mean and every
/// downstream quantity recomputed. Exact-mode records give zero sigmas.
pub fn bootstrap_errors(
    record: &ExperimentRecord,
    set: &MeasurementSet,
    graph: &OrthogonalityGraph,
    config: &RunConfig,
) -> Result<BootstrapSigmas> {
    let Some(counts) = &record.counts else {
        return Ok(BootstrapSigmas {
            w_exp: 0.0,
            w_worst: 0.0,
            w_sdp: 0.0,
            mean_eps: 0.0,
            resamples: 0,
            sdp_resamples: 0,
            exact_mode: true,
        });
    };
    let b = config.bootstrap_resamples.max(1);
    let b_sdp = config.bootstrap_sdp_resamples.min(b);
    // Resample fits start only from zero deviations.
    let fit_cfg = NoiseFitConfig {
        starts: 1,
        ..config.noise_fit.clone()
    };
    let sdp_cfg = SdpConfig {
        compute_nu: false,
        ..config.sdp.clone()
    };
    let one = |k: usize| -> Result<[f64; 4]> {
        let mut rng = ChaCha20Rng::seed_from_u64(config.simulation.seed);
        rng.set_stream((1u64 << 40) + k as u64);
        let resampled = record.with_counts(set, graph, resample_counts(counts, &mut rng))?;
        let (we, ww, _, eps) =
            witness_stage(&resampled, set, graph, config.use_noise_fit, &fit_cfg)?;
        let ws = if k < b_sdp {
            let m = EpsilonPrimeMatrix::from_edges(graph, &eps)?;
            threshold_search(&m, set, graph, &sdp_cfg)?.w_sdp
        } else {
            f64::NAN
        };
        Ok([we.w, ww.w, ws, resampled.mean_eps().0])
    };
    let draws: Vec<[f64; 4]> =
        pool(config.workers)?.install(|| (0..b).into_par_iter().map(one).collect::<Result<_>>())?;
    let column =
        |c: usize| -> Vec<f64> { draws.iter().map(|d| d[c]).filter(|v| !v.is_nan()).collect() };
    Ok(BootstrapSigmas {
        w_exp: sample_std(&column(0)),
        w_worst: sample_std(&column(1)),
        w_sdp: sample_std(&column(2)),
        mean_eps: sample_std(&column(3)),
        resamples: b,
        sdp_resamples: b_sdp,
        exact_mode: false,
    })
}

/// Produces or reads the record named by the configuration.
pub fn acquire_record(
    config: &RunConfig,
    set: &MeasurementSet,
    graph: &OrthogonalityGraph,
) -> Result<ExperimentRecord> {
    match config.mode {
        Mode::Simulate => {
            simulate_experiment(set, graph, &config.simulation).map_err(|e| e.in_stage("simulate"))
        }
        Mode::Ingest => {
            let path = config.record.as_ref().expect("validated");
            let text =
                std::fs::read_to_string(path).map_err(|e| Error::from(e).in_stage("ingest"))?;
            let record: ExperimentRecord =
                serde_json::from_str(&text).map_err(|e| Error::from(e).in_stage("ingest"))?;
            if record.set != set.name {
                return Err(Error::InvalidInput(format!(
                    "record is for set `{}`, config names `{}`",
                    record.set, set.name
                ))
                .in_stage("ingest"));
            }
            Ok(record)
        }
    }
}

pub fn run_pipeline(config: &RunConfig) -> Result<CertificationReport> {
    config.validate()?;
    let mut timing = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timing: &mut BTreeMap<String, f64>| {
        timing.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let set = load_set(&config.set).map_err(|e| e.in_stage("load set"))?;
    let graph = build_graph(&set).map_err(|e| e.in_stage("graph"))?;
    let record = acquire_record(config, &set, &graph)?;
    lap("acquire", &mut timing);

    let cert = certify(
        &record,
        &set,
        &graph,
        config.use_noise_fit,
        &config.noise_fit,
        &config.sdp,
    )?;
    lap("certify", &mut timing);

    let angle_fit = if config.fit_angle {
        Some(
            fit_delta_theta(&cert.eps_on_edges, &set, &graph)
                .map_err(|e| e.in_stage("angle fit"))?,
        )
    } else {
        None
    };
    lap("angle_fit", &mut timing);

    let sigmas =
        bootstrap_errors(&record, &set, &graph, config).map_err(|e| e.in_stage("bootstrap"))?;
    lap("bootstrap", &mut timing);

    let noise_fit = cert.noise_fit.as_ref().map(|f| NoiseFitSummary {
        params: f.params,
        residual: f.residual,
        initial_residual: f.initial_residual,
        mean_eps_prime: f.eps_prime.values().sum::<f64>() / f.eps_prime.len().max(1) as f64,
        eps_prime: f.eps_prime.clone(),
    });
    let report = CertificationReport {
        config: config.clone(),
        set: set.name.clone(),
        dim: set.dim,
        w_opt: ratio_to_f64(ideal_witness_optimum(&set)),
        record: RecordSummary::of(&record),
        w_exp: WitnessValue {
            w: cert.w_exp.w,
            sigma: if sigmas.exact_mode { 0.0 } else { sigmas.w_exp },
        },
        w_worst: WitnessValue {
            w: cert.w_worst.w,
            sigma: sigmas.w_worst,
        },
        w_sdp: WitnessValue {
            w: cert.sdp.w_sdp,
            sigma: sigmas.w_sdp,
        },
        noise_fit,
        angle_fit,
        sdp: cert.sdp,
        verdict: cert.verdict,
        bootstrap: BootstrapSummary {
            resamples: sigmas.resamples,
            sdp_resamples: sigmas.sdp_resamples,
            exact_mode: sigmas.exact_mode,
            mean_eps_sigma: sigmas.mean_eps,
        },
        timing,
    };
    if let Some(path) = &config.output {
        write_report(&report, path)?;
    }
    Ok(report)
}

pub fn write_report(report: &CertificationReport, path: &std::path::Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::from(e).in_stage("write report"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta_theta: f64,
    pub w_worst: f64,
    pub w_worst_sigma: f64,
    pub w_sdp: f64,
    pub w_sdp_sigma: f64,
    pub verdict: Option<Verdict>,
    /// Error message when this grid point failed.
    pub error: Option<String>,
}

/// Runs the pipeline once per offset. Failures are kept per row.
pub fn sweep(config: &RunConfig, delta_theta_grid: &[f64]) -> Result<Vec<SweepRow>> {
    if delta_theta_grid.is_empty() {
        return Err(Error::InvalidInput("empty delta-theta grid".into()));
    }
    config.validate()?;
    let rows = pool(config.workers)?.install(|| {
        delta_theta_grid
            .par_iter()
            .map(|&dt| {
                let mut cfg = config.clone();
                cfg.simulation.delta_theta = dt;
                cfg.output = None;
                match run_pipeline(&cfg) {
                    Ok(r) => SweepRow {
                        delta_theta: dt,
                        w_worst: r.w_worst.w,
                        w_worst_sigma: r.w_worst.sigma,
                        w_sdp: r.w_sdp.w,
                        w_sdp_sigma: r.w_sdp.sigma,
                        verdict: Some(r.verdict),
                        error: None,
                    },
                    Err(e) => SweepRow {
                        delta_theta: dt,
                        w_worst: f64::NAN,
                        w_worst_sigma: f64::NAN,
                        w_sdp: f64::NAN,
                        w_sdp_sigma: f64::NAN,
                        verdict: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });
    Ok(rows)
}

pub const SWEEP_CSV_HEADER: &str =
    "delta_theta_deg,w_worst,w_worst_sigma,w_sdp,w_sdp_sigma,verdict";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let verdict = match (&r.verdict, &r.error) {
            (Some(Verdict::Certified), _) => "certified".to_string(),
            (Some(Verdict::NotCertified), _) => "not_certified".to_string(),
            (None, Some(e)) => format!("error: {}", e.replace([',', '\n'], ";")),
            (None, None) => "error".to_string(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.delta_theta, r.w_worst, r.w_worst_sigma, r.w_sdp, r.w_sdp_sigma, verdict
        ));
    }
    out
}
