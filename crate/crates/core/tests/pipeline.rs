use sicert::error::Error;
use sicert::geometry::{build_graph, load_set};
use sicert::opticsim::{simulate_experiment, NoiseChannelParams};
use sicert::pipeline::{
    bootstrap_errors, run_pipeline, sweep, sweep_csv, CertificationReport, Mode, RunConfig,
    Verdict, SWEEP_CSV_HEADER,
};

fn quick(set: &str) -> RunConfig {
    let mut cfg = RunConfig {
        set: set.into(),
        bootstrap_resamples: 10,
        bootstrap_sdp_resamples: 1,
        ..RunConfig::default()
    };
    cfg.sdp.compute_nu = false;
    cfg.simulation.seed = 21;
    cfg.simulation.noise = NoiseChannelParams::new(0.0005, 0.0005, 0.001).unwrap();
    cfg
}

#[test]
fn report_round_trips_and_verdict_is_recomputable() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick("yo13");
    cfg.output = Some(dir.path().join("report.json"));
    let report = run_pipeline(&cfg).unwrap();
    let text = std::fs::read_to_string(cfg.output.as_ref().unwrap()).unwrap();
    let back: CertificationReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, report);
    assert_eq!(report.recomputed_verdict(), report.verdict);
    for s in [
        report.w_exp.sigma,
        report.w_worst.sigma,
        report.w_sdp.sigma,
        report.record.mean_eps_sigma,
    ] {
        assert!(s >= 0.0);
    }
    assert!(report.w_worst.sigma > 0.0);
    assert_eq!(report.bootstrap.sdp_resamples, 1);
}

#[test]
fn ideal_exact_run_is_certified() {
    let mut cfg = quick("yo13");
    cfg.simulation.shots = 0;
    cfg.simulation.noise = NoiseChannelParams::default();
    let report = run_pipeline(&cfg).unwrap();
    assert!((report.w_worst.w - 35.0 / 3.0).abs() < 1e-12);
    assert_eq!(report.verdict, Verdict::Certified);
    assert!(report.bootstrap.exact_mode);
    assert_eq!(report.w_worst.sigma, 0.0);
}

#[test]
fn single_resample_has_zero_sigma() {
    let cfg = RunConfig {
        bootstrap_resamples: 1,
        bootstrap_sdp_resamples: 0,
        ..quick("yo13")
    };
    let set = load_set("yo13").unwrap();
    let g = build_graph(&set).unwrap();
    let rec = simulate_experiment(&set, &g, &cfg.simulation).unwrap();
    let s = bootstrap_errors(&rec, &set, &g, &cfg).unwrap();
    assert_eq!(
        (s.w_exp, s.w_worst, s.w_sdp, s.mean_eps),
        (0.0, 0.0, 0.0, 0.0)
    );
    assert!(!s.exact_mode);
}

#[test]
fn ingest_reads_a_stored_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick("yo13");
    let set = load_set("yo13").unwrap();
    let g = build_graph(&set).unwrap();
    let rec = simulate_experiment(&set, &g, &cfg.simulation).unwrap();
    let path = dir.path().join("record.json");
    std::fs::write(&path, serde_json::to_string(&rec).unwrap()).unwrap();
    let ingest = RunConfig {
        mode: Mode::Ingest,
        record: Some(path.clone()),
        ..cfg.clone()
    };
    let a = run_pipeline(&ingest).unwrap();
    let b = run_pipeline(&cfg).unwrap();
    assert_eq!(a.w_worst, b.w_worst);
    assert_eq!(a.sdp, b.sdp);

    let wrong = RunConfig {
        set: "peres24".into(),
        ..ingest
    };
    assert!(matches!(run_pipeline(&wrong), Err(Error::Stage { .. })));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = quick("yo13");
    cfg.bootstrap_resamples = 0;
    assert!(run_pipeline(&cfg).is_err());
    let mut cfg = quick("yo13");
    cfg.sdp.bisection_tol = 0.0;
    assert!(run_pipeline(&cfg).is_err());
    let cfg = RunConfig {
        mode: Mode::Ingest,
        ..quick("yo13")
    };
    assert!(run_pipeline(&cfg).is_err());
    assert!(sweep(&quick("yo13"), &[]).is_err());
}

#[test]
fn single_point_sweep() {
    let mut cfg = quick("yo13");
    cfg.simulation.shots = 0;
    cfg.simulation.noise = NoiseChannelParams::default();
    let rows = sweep(&cfg, &[0.0]).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].verdict, Some(Verdict::Certified));
    let csv = sweep_csv(&rows);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(SWEEP_CSV_HEADER));
    assert!(lines.next().unwrap().ends_with(",certified"));
}

#[test]
fn failing_points_keep_their_row() {
    let mut cfg = quick("yo13");
    cfg.set = "missing-set".into();
    let rows = sweep(&cfg, &[0.0, 1.0]).unwrap();
    assert!(rows
        .iter()
        .all(|r| r.verdict.is_none() && r.error.is_some()));
    assert!(sweep_csv(&rows).lines().nth(1).unwrap().contains("error"));
}
