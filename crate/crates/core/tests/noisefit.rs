use sicert::geometry::{build_graph, peres24, yo13};
use sicert::noisefit::{delta_theta_objective, fit_delta_theta, fit_noise, NoiseFitConfig};
use sicert::opticsim::{simulate_experiment, NoiseChannelParams, OpticalModel, SimulationConfig};

#[test]
fn noiseless_data_need_no_channel() {
    let set = peres24();
    let g = build_graph(&set).unwrap();
    let rec = simulate_experiment(
        &set,
        &g,
        &SimulationConfig {
            shots: 0,
            ..Default::default()
        },
    )
    .unwrap();
    let fit = fit_noise(
        &rec.eps_by_index(&set).unwrap(),
        &set,
        &g,
        &NoiseFitConfig::default(),
    )
    .unwrap();
    assert!(fit.params.p_ba < 1e-6 && fit.params.p_bb < 1e-6 && fit.params.p_pa < 1e-6);
    assert!(fit.eps_prime.values().all(|&e| e < 1e-10));
}

#[test]
fn fit_never_worse_than_no_noise() {
    let set = yo13();
    let g = build_graph(&set).unwrap();
    let sim = SimulationConfig {
        shots: 30_000,
        seed: 5,
        noise: NoiseChannelParams::new(0.002, 0.001, 0.004).unwrap(),
        ..Default::default()
    };
    let rec = simulate_experiment(&set, &g, &sim).unwrap();
    let cfg = NoiseFitConfig {
        starts: 2,
        ..Default::default()
    };
    let fit = fit_noise(&rec.eps_by_index(&set).unwrap(), &set, &g, &cfg).unwrap();
    assert!(fit.residual <= fit.initial_residual);
    assert!(fit.params.validate().is_ok());
}

#[test]
fn offset_objective_is_minimal_at_the_injected_offset() {
    let set = peres24();
    let g = build_graph(&set).unwrap();
    let model = OpticalModel::new(&set).unwrap();
    let rec = simulate_experiment(
        &set,
        &g,
        &SimulationConfig {
            shots: 0,
            delta_theta: 1.0,
            ..Default::default()
        },
    )
    .unwrap();
    let eps = rec.eps_by_index(&set).unwrap();
    let at = delta_theta_objective(1.0, &eps, &model);
    assert!(at < 1e-9);
    assert!(delta_theta_objective(0.8, &eps, &model) > at);
    assert!(delta_theta_objective(1.2, &eps, &model) > at);
    let fit = fit_delta_theta(&eps, &set, &g).unwrap();
    assert!((fit.delta_theta - 1.0).abs() < 1e-3);
}
