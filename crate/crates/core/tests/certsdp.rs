use nalgebra::DMatrix;
use proptest::prelude::*;
use sicert::certsdp::{
    all_context_bounds, context_gram_bounds, evaluate_candidate, tau_min, threshold_search,
    tighten_eps_prime, EpsilonPrimeMatrix, SdpConfig,
};
use sicert::geometry::{build_graph, yo13, OrthogonalityGraph};

fn cfg() -> SdpConfig {
    SdpConfig {
        compute_nu: false,
        ..SdpConfig::default()
    }
}

fn random_unit(raw: &[f64]) -> Vec<f64> {
    let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    raw.iter().map(|x| x / n).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(500) })]

    #[test]
    fn gershgorin_encloses_every_compatible_gram(
        raw in proptest::collection::vec(-1.0f64..1.0, 16),
        slack in proptest::collection::vec(0.0f64..0.05, 6),
    ) {
        let set = yo13();
        let graph = build_graph(&set).unwrap();
        // A 4-clique of arbitrary vectors in a 4-dimensional space.
        let vecs: Vec<Vec<f64>> = raw.chunks(4).map(random_unit).collect();
        let context: Vec<usize> = (0..4).collect();
        let gram = DMatrix::from_fn(4, 4, |a, b| vecs[a].iter().zip(&vecs[b]).map(|(x, y)| x * y).sum::<f64>());
        let mut eps = EpsilonPrimeMatrix::uniform(&graph, 0.0);
        let mut k = 0;
        for a in 0..4 {
            for b in a + 1..4 {
                eps.set(a, b, (gram[(a, b)].powi(2) + slack[k]).min(1.0));
                k += 1;
            }
        }
        let bound = context_gram_bounds(&context, &eps, false).unwrap();
        let ev = gram.symmetric_eigenvalues();
        prop_assert!(ev.iter().all(|&l| l >= bound.g_min_lb - 1e-12 && l <= bound.g_max_ub + 1e-12));
    }
}

fn on_edge(graph: &OrthogonalityGraph, values: &[f64]) -> EpsilonPrimeMatrix {
    let map = graph
        .edges
        .iter()
        .zip(values.iter().cycle())
        .map(|(&e, &v)| (e, v))
        .collect();
    EpsilonPrimeMatrix::from_edges(graph, &map).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(20) })]

    // Off-edge bounds and context Gram bounds only enter as constraints, so
    // loosening them can only lower the minimum.
    #[test]
    fn tau_shrinks_when_constraints_loosen(
        base in proptest::collection::vec(0.0f64..2e-3, 24),
        off in proptest::collection::vec(0.05f64..1.0, 54),
        widen in 0.0f64..0.05,
        pair in 0usize..54,
        witness in 10.0f64..11.6,
    ) {
        let set = yo13();
        let graph = build_graph(&set).unwrap();
        let loose = on_edge(&graph, &base);
        let mut tight = loose.clone();
        for (k, (a, b)) in graph.non_edges().into_iter().enumerate() {
            tight.set(a, b, off[k]);
        }
        let gram = all_context_bounds(&set, &graph, &loose).unwrap();
        let mut wide = gram.clone();
        for b in &mut wide.bounds {
            b.g_min_lb -= widen;
            b.g_max_ub += widen;
        }
        let (i, j) = graph.non_edges()[pair];
        let t_tight = tau_min(i, j, &tight, &gram, witness, &set, &graph, &cfg()).unwrap();
        let t_loose = tau_min(i, j, &loose, &wide, witness, &set, &graph, &cfg()).unwrap();
        match (t_tight.value(), t_loose.value()) {
            (Some(t), Some(l)) => prop_assert!(l <= t + 1e-5, "{l} > {t}"),
            (Some(_), None) => prop_assert!(false, "loosened program became infeasible"),
            _ => {}
        }
    }
}

#[test]
fn tightening_only_lowers_bounds_and_lowers_more_at_higher_witness() {
    let set = yo13();
    let graph = build_graph(&set).unwrap();
    let eps = EpsilonPrimeMatrix::uniform(&graph, 1e-4);
    let gram = all_context_bounds(&set, &graph, &eps).unwrap();
    let lo = tighten_eps_prime(&eps, &gram, 11.0, &set, &graph, &cfg()).unwrap();
    let hi = tighten_eps_prime(&eps, &gram, 11.6, &set, &graph, &cfg()).unwrap();
    assert!(lo.feasible && hi.feasible);
    for (i, j) in graph.non_edges() {
        assert!(lo.eps.get(i, j) <= eps.get(i, j));
        assert!(hi.eps.get(i, j) <= lo.eps.get(i, j) + 1e-3, "{i}-{j}");
    }
    for &(i, j) in &graph.edges {
        assert_eq!(hi.eps.get(i, j), eps.get(i, j));
    }
}

#[test]
fn bisection_brackets_the_threshold() {
    let set = yo13();
    let graph = build_graph(&set).unwrap();
    let eps = EpsilonPrimeMatrix::uniform(&graph, 1e-5);
    let cfg = cfg();
    let v = threshold_search(&eps, &set, &graph, &cfg).unwrap();
    let w_opt = 35.0 / 3.0;
    assert!(
        v.certifiable && v.w_sdp > 0.0 && v.w_sdp < w_opt,
        "{}",
        v.w_sdp
    );
    assert!(v.orthogonality_ok && v.completeness_ok);
    assert!(v.tau.values().all(|&t| t > cfg.tau_threshold));
    let gram = all_context_bounds(&set, &graph, &eps).unwrap();
    let below = evaluate_candidate(
        &eps,
        &gram,
        v.w_sdp - cfg.bisection_tol,
        &set,
        &graph,
        &cfg,
        false,
    )
    .unwrap();
    assert!(!below.verified);
    let above = evaluate_candidate(
        &eps,
        &gram,
        (v.w_sdp + 0.05).min(w_opt),
        &set,
        &graph,
        &cfg,
        false,
    )
    .unwrap();
    assert!(above.verified);
}

#[test]
fn large_errors_cannot_be_certified() {
    let set = yo13();
    let graph = build_graph(&set).unwrap();
    let eps = EpsilonPrimeMatrix::uniform(&graph, 0.05);
    let v = threshold_search(&eps, &set, &graph, &cfg()).unwrap();
    assert!(!v.certifiable);
    assert_eq!(v.w_sdp, 35.0 / 3.0);
}

#[test]
fn malformed_bounds_are_rejected() {
    let set = yo13();
    let graph = build_graph(&set).unwrap();
    let mut map: std::collections::BTreeMap<_, _> = graph.edges.iter().map(|&e| (e, 0.0)).collect();
    map.remove(&graph.edges[0]);
    assert!(EpsilonPrimeMatrix::from_edges(&graph, &map).is_err());
    map.insert(graph.edges[0], 1.5);
    assert!(EpsilonPrimeMatrix::from_edges(&graph, &map).is_err());
    let eps = EpsilonPrimeMatrix::uniform(&graph, 0.0);
    let gram = all_context_bounds(&set, &graph, &eps).unwrap();
    let (i, j) = graph.edges[0];
    assert!(tau_min(i, j, &eps, &gram, 11.0, &set, &graph, &cfg()).is_err());
}
