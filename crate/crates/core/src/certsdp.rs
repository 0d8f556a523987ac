//! Gram-matrix semidefinite verification of orthogonality and completeness.
//!
//! Every program works on a real symmetric `(1 + n) x (1 + n)` matrix `X`
//! that is the Gram matrix of
//!
//! ```text
//! { |V_m>, <V_1|V_m>|V_1>, ..., <V_n|V_m>|V_n> }
//! ```
//!
//! for an anchor vertex `m`. Row/column 0 is the anchor state; row `k + 1`
//! belongs to vertex `k`. Consequently `X_00 = X_0m = 1`, `X_kk = X_0k` is
//! the probability of projecting `|V_m>` onto `|V_k>`, and for the anchor's
//! own row `X_mk = |<V_m|V_k>|^2`.
//!
//! The verification searches the smallest witness threshold `W_SDP` at which
//! every non-adjacent pair keeps a strictly positive minimal overlap.

use std::collections::BTreeMap;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ideal_witness_optimum, ratio_to_f64, MeasurementSet, OrthogonalityGraph};

/// How the three-factor bound on off-diagonal Gram entries is indexed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripleBound {
    /// `|X_kt|^2 <= e'_mk e'_kt e'_tm` with `m` the anchor vertex. This is the
    /// bound implied by the Gram construction.
    #[default]
    Anchored,
    /// `|X_kt|^2 <= e'_ik e'_kt e'_tj` with `(i, j)` the pair under study,
    /// applied in both index orders.
    PairIndexed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdpConfig {
    /// Minimal overlaps at or below this value count as orthogonal.
    pub tau_threshold: f64,
    /// Tightening stops once no off-edge bound moves by more than this.
    pub eps_precision: f64,
    pub max_sweeps: usize,
    pub bisection_tol: f64,
    pub triple_bound: TripleBound,
    /// Clarabel gap/feasibility tolerance.
    pub solver_tol: f64,
    pub solver_max_iter: u32,
    pub solver_verbose: bool,
    /// Every overlap bound and context-sum bound is floored at this value (context-sum bounds widened by it when they pinch) so
    /// the programs keep a strict interior. Loosening only shrinks `tau`.
    pub constraint_floor: f64,
    /// Tenfold floor increases tried after a solver failure.
    pub floor_retries: u32,
    /// Also run the dimension-free completeness programs on the final threshold.
    pub compute_nu: bool,
}

impl Default for SdpConfig {
    fn default() -> Self {
        SdpConfig {
            tau_threshold: 1e-4,
            eps_precision: 1e-3,
            max_sweeps: 5,
            bisection_tol: 1e-3,
            triple_bound: TripleBound::Anchored,
            solver_tol: 1e-7,
            solver_max_iter: 200,
            solver_verbose: false,
            constraint_floor: 1e-9,
            floor_retries: 4,
            compute_nu: true,
        }
    }
}

/// Symmetric matrix of upper bounds on `|<V_i|V_j>|^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonPrimeMatrix {
    n: usize,
    values: Vec<f64>,
}

impl EpsilonPrimeMatrix {
    /// On-edge entries from `on_edge` (ordered keys; when both orientations
    /// are present the larger one is kept), off-edge entries 1, diagonal 1.
    pub fn from_edges(
        graph: &OrthogonalityGraph,
        on_edge: &BTreeMap<(usize, usize), f64>,
    ) -> Result<Self> {
        let n = graph.n;
        let mut m = EpsilonPrimeMatrix {
            n,
            values: vec![1.0; n * n],
        };
        for &(i, j) in &graph.edges {
            let v = [(i, j), (j, i)]
                .iter()
                .filter_map(|k| on_edge.get(k))
                .copied()
                .fold(None, |acc: Option<f64>, x| {
                    Some(acc.map_or(x, |a| a.max(x)))
                })
                .ok_or(Error::MissingEdge(i, j))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "eps' for edge {i}-{j} is {v}, outside [0, 1]"
                )));
            }
            m.set(i, j, v);
        }
        for &(a, b) in on_edge.keys() {
            if !graph.is_edge(a, b) {
                return Err(Error::InvalidInput(format!("{a}-{b} is not an edge")));
            }
        }
        Ok(m)
    }

    /// Every edge gets `value`.
    pub fn uniform(graph: &OrthogonalityGraph, value: f64) -> Self {
        let map = graph.edges.iter().map(|&e| (e, value)).collect();
        Self::from_edges(graph, &map).expect("uniform edge map is complete")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n + j] = v;
        self.values[j * self.n + i] = v;
    }

    /// Copy with all off-edge entries reset to 1.
    pub fn reset_off_edge(&self, graph: &OrthogonalityGraph) -> Self {
        let mut out = self.clone();
        for (i, j) in graph.non_edges() {
            out.set(i, j, 1.0);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GramBound {
    pub g_min_lb: f64,
    pub g_max_ub: f64,
}

/// Per-context eigenvalue enclosures, aligned with `graph.contexts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextGramBounds {
    pub bounds: Vec<GramBound>,
}

impl ContextGramBounds {
    pub fn all_positive(&self) -> bool {
        self.bounds.iter().all(|b| b.g_min_lb > 0.0)
    }
}

/// Gershgorin enclosure of the spectrum of any context Gram matrix with unit
/// diagonal and `|G_ij|^2 <= eps'_ij`.
pub fn context_gram_bounds(
    context: &[usize],
    eps: &EpsilonPrimeMatrix,
    force_unit: bool,
) -> Result<GramBound> {
    let mut radius: f64 = 0.0;
    for &i in context {
        let mut r = 0.0;
        for &j in context {
            if i == j {
                continue;
            }
            let e = eps.get(i, j);
            if !e.is_finite() || e < 0.0 {
                return Err(Error::MissingEdge(i, j));
            }
            r += e.sqrt();
        }
        radius = radius.max(r);
    }
    if force_unit {
        return Ok(GramBound {
            g_min_lb: 1.0,
            g_max_ub: 1.0,
        });
    }
    Ok(GramBound {
        g_min_lb: 1.0 - radius,
        g_max_ub: 1.0 + radius,
    })
}

pub fn all_context_bounds(
    set: &MeasurementSet,
    graph: &OrthogonalityGraph,
    eps: &EpsilonPrimeMatrix,
) -> Result<ContextGramBounds> {
    let bounds = graph
        .contexts
        .iter()
        .map(|c| context_gram_bounds(c, eps, set.force_unit_context_gram))
        .collect::<Result<Vec<_>>>()?;
    Ok(ContextGramBounds { bounds })
}

/// Result of one semidefinite program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SdpOutcome {
    Optimal(f64),
    Infeasible,
}

impl SdpOutcome {
    pub fn value(self) -> Option<f64> {
        match self {
            SdpOutcome::Optimal(v) => Some(v),
            SdpOutcome::Infeasible => None,
        }
    }
}

/// Logical index of a Gram row: 0 is the anchor state, `k + 1` is vertex `k`.
type Entry = (usize, usize);

/// Sparse constraint rows in Clarabel's `A x + s = b` form, grouped by cone.
///
/// Rows are written against logical Gram entries. Entries whose row is known
/// to be zero are dropped and the anchor vertex row is merged into row 0
/// (`X_00 = X_0m = X_mm = 1` forces them to coincide). This removes the
/// implicit equalities that leave the zero-error programs without interior.
struct ProgramBuilder {
    slot: Vec<Option<usize>>,
    dim: usize,
    zero: Vec<(Vec<(usize, f64)>, f64)>,
    nonneg: Vec<(Vec<(usize, f64)>, f64)>,
    /// Some constant row was violated.
    inconsistent: bool,
}

impl ProgramBuilder {
    fn new(n: usize, anchor: usize, vanishing: &[bool]) -> Self {
        let mut slot = vec![None; n + 1];
        slot[0] = Some(0);
        let mut dim = 1;
        for k in 0..n {
            if k == anchor {
                slot[k + 1] = Some(0);
            } else if !vanishing[k] {
                slot[k + 1] = Some(dim);
                dim += 1;
            }
        }
        ProgramBuilder {
            slot,
            dim,
            zero: Vec::new(),
            nonneg: Vec::new(),
            inconsistent: false,
        }
    }

    fn vars(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }

    fn var(&self, (r, c): Entry) -> Option<usize> {
        let (r, c) = (self.slot[r]?, self.slot[c]?);
        let (r, c) = if r <= c { (r, c) } else { (c, r) };
        Some(c * (c + 1) / 2 + r)
    }

    fn lower(&self, row: &[(Entry, f64)], sign: f64) -> Vec<(usize, f64)> {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for &(e, a) in row {
            if let Some(v) = self.var(e) {
                *acc.entry(v).or_insert(0.0) += sign * a;
            }
        }
        acc.into_iter().filter(|(_, a)| a.abs() > 1e-14).collect()
    }

    fn equal(&mut self, row: &[(Entry, f64)], rhs: f64) {
        let row = self.lower(row, 1.0);
        if row.is_empty() {
            self.inconsistent |= rhs.abs() > 1e-12;
        } else {
            self.zero.push((row, rhs));
        }
    }

    /// `row . x <= rhs`
    fn at_most(&mut self, row: &[(Entry, f64)], rhs: f64) {
        let row = self.lower(row, 1.0);
        if row.is_empty() {
            self.inconsistent |= rhs < -1e-12;
        } else {
            self.nonneg.push((row, rhs));
        }
    }

    fn at_least(&mut self, row: &[(Entry, f64)], rhs: f64) {
        let row = self.lower(row, -1.0);
        if row.is_empty() {
            self.inconsistent |= rhs > 1e-12;
        } else {
            self.nonneg.push((row, -rhs));
        }
    }

    fn solve(&self, objective: &[(Entry, f64)], cfg: &SdpConfig) -> Result<SdpOutcome> {
        if self.inconsistent {
            return Ok(SdpOutcome::Infeasible);
        }
        let nv = self.vars();
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut b = Vec::new();
        let mut r = 0;
        for (row, rhs) in self.zero.iter().chain(self.nonneg.iter()) {
            for &(v, a) in row {
                rows.push(r);
                cols.push(v);
                vals.push(a);
            }
            b.push(*rhs);
            r += 1;
        }
        let sqrt2 = std::f64::consts::SQRT_2;
        for c in 0..self.dim {
            for rr in 0..=c {
                let v = c * (c + 1) / 2 + rr;
                rows.push(r + v);
                cols.push(v);
                vals.push(if rr == c { -1.0 } else { -sqrt2 });
            }
        }
        b.extend(std::iter::repeat_n(0.0, nv));
        let total_rows = r + nv;

        let a = CscMatrix::new_from_triplets(total_rows, nv, rows, cols, vals);
        let p = CscMatrix::zeros((nv, nv));
        let obj = self.lower(objective, 1.0);
        let mut q = vec![0.0; nv];
        for &(v, c) in &obj {
            q[v] += c;
        }
        let mut cones = Vec::new();
        if !self.zero.is_empty() {
            cones.push(SupportedConeT::ZeroConeT(self.zero.len()));
        }
        if !self.nonneg.is_empty() {
            cones.push(SupportedConeT::NonnegativeConeT(self.nonneg.len()));
        }
        cones.push(SupportedConeT::PSDTriangleConeT(self.dim));

        let settings = DefaultSettingsBuilder::default()
            .verbose(cfg.solver_verbose)
            .tol_gap_abs(cfg.solver_tol)
            .tol_gap_rel(cfg.solver_tol)
            .tol_feas(cfg.solver_tol)
            .max_iter(cfg.solver_max_iter)
            .chordal_decomposition_enable(false)
            .build()
            .map_err(|e| Error::InvalidInput(format!("solver settings: {e:?}")))?;
        let mut solver =
            DefaultSolver::new(&p, &q, &a, &b, &cones, settings).map_err(|e| Error::Solver {
                pair: None,
                witness: f64::NAN,
                status: format!("{e:?}"),
            })?;
        solver.solve();
        let sol = &solver.solution;
        match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {
                let value: f64 = obj.iter().map(|&(v, c)| c * sol.x[v]).sum();
                Ok(SdpOutcome::Optimal(value))
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                Ok(SdpOutcome::Infeasible)
            }
            other => Err(Error::Solver {
                pair: None,
                witness: f64::NAN,
                status: format!("{other:?}"),
            }),
        }
    }
}

/// Coefficients of `X_kk` in the witness constraint: each unordered edge
/// charges `w_kt eps'_kt (X_kk + X_tt) / 2`.
fn witness_coefficients(
    set: &MeasurementSet,
    graph: &OrthogonalityGraph,
    eps: &EpsilonPrimeMatrix,
) -> Vec<f64> {
    let w_edge = set.edge_weight_f64();
    let mut c: Vec<f64> = (0..set.n()).map(|k| set.weight_f64(k)).collect();
    for &(k, t) in &graph.edges {
        let charge = 0.5 * w_edge * eps.get(k, t);
        c[k] -= charge;
        c[t] -= charge;
    }
    c
}

/// Common skeleton: unit anchor row, `X_kk = X_0k`, witness constraint.
/// `vanishing[k]` marks vertices whose row is already known to be zero.
fn anchored_skeleton(
    set: &MeasurementSet,
    graph: &OrthogonalityGraph,
    eps: &EpsilonPrimeMatrix,
    anchor: usize,
    vanishing: &[bool],
    witness: f64,
) -> ProgramBuilder {
    let n = set.n();
    let mut pb = ProgramBuilder::new(n, anchor, vanishing);
    pb.equal(&[((0, 0), 1.0)], 1.0);
    for k in 1..=n {
        if k != anchor + 1 {
            pb.equal(&[((k, k), 1.0), ((0, k), -1.0)], 0.0);
        }
    }
    let coeffs = witness_coefficients(set, graph, eps);
    let row: Vec<(Entry, f64)> = coeffs
        .iter()
        .enumerate()
        .map(|(k, &c)| ((k + 1, k + 1), c))
        .collect();
    pb.at_least(&row, witness);
    pb
}

fn triple_bound(
    eps: &EpsilonPrimeMatrix,
    (i, j): (usize, usize),
    k: usize,
    t: usize,
    form: TripleBound,
) -> f64 {
    match form {
        TripleBound::Anchored => (eps.get(i, k) * eps.get(k, t) * eps.get(t, i)).sqrt(),
        TripleBound::PairIndexed => (eps.get(i, k) * eps.get(k, t) * eps.get(t, j))
            .sqrt()
            .min((eps.get(i, t) * eps.get(t, k) * eps.get(k, j)).sqrt()),
    }
}

/// The pair program shared by `tau_min` (minimize) and tightening (maximize).
#[allow(clippy::too_many_arguments)]
fn pair_program(
    set: &MeasurementSet,
    graph: &OrthogonalityGraph,
    eps: &EpsilonPrimeMatrix,
    gram: &ContextGramBounds,
    witness: f64,
    (i, j): (usize, usize),
    form: TripleBound,
    floor: f64,
) -> ProgramBuilder {
    let n = set.n();
    // X_kk = X_0k = X_ik, so a zero bound on (i, k) empties row k.
    let vanishing: Vec<bool> = (0..n)
        .map(|k| k != i && triple_bound(eps, (i, j), i, k, form) <= 0.0)
        .collect();
    let mut pb = anchored_skeleton(set, graph, eps, i, &vanishing, witness);
    pb.at_least(&[((i + 1, j + 1), 1.0)], 0.0);

    for k in 0..n {
        for t in k + 1..n {
            let bound = triple_bound(eps, (i, j), k, t, form).max(floor);
            let x = (k + 1, t + 1);
            if bound <= 0.0 {
                pb.equal(&[(x, 1.0)], 0.0);
            } else if bound < 1.0 {
                pb.at_most(&[(x, 1.0)], bound);
                pb.at_least(&[(x, 1.0)], -bound);
            }
        }
    }

    for (c, b) in graph.contexts.iter().zip(&gram.bounds) {
        let row: Vec<(Entry, f64)> = c.iter().map(|&k| ((k + 1, k + 1), 1.0)).collect();
        let (lo, hi) = if b.g_max_ub - b.g_min_lb < 2.0 * floor {
            (b.g_min_lb - floor, b.g_max_ub + floor)
        } else {
            (b.g_min_lb, b.g_max_ub)
        };
        if lo == hi {
            pb.equal(&row, lo);
        } else {
            pb.at_most(&row, hi);
            pb.at_least(&row, lo);
        }
    }
    pb
}

/// Solves at the configured floor and, on a numerical failure, retries with
/// the floor raised tenfold. Raising the floor only loosens the program.
fn solve_robust<F>(build: F, objective: &[(Entry, f64)], cfg: &SdpConfig) -> Result<SdpOutcome>
where
    F: Fn(f64) -> ProgramBuilder,
{
    let mut floor = cfg.constraint_floor;
    let mut attempt = 0;
    loop {
        match build(floor).solve(objective, cfg) {
            Err(Error::Solver { .. }) if attempt < cfg.floor_retries => {
                attempt += 1;
                floor = if floor > 0.0 { floor * 10.0 } else { 1e-9 };
            }
            other => return other,
        }
    }
}

fn tag(err: Error, pair: (usize, usize), witness: f64) -> Error {
    match err {
        Error::Solver { status, .. } => Error::Solver {
            pair: Some(pair),
            witness,
            status,
        },
        other => other,
    }
}

/// Minimal `|<V_i|V_j>|^2` over all Gram realizations compatible with the
/// bounds and witness value, for a non-adjacent pair.
#[allow(clippy::too_many_arguments)]
pub fn tau_min(
    i: usize,
    j: usize,
    eps: &EpsilonPrimeMatrix,
    gram: &ContextGramBounds,
    witness: f64,
    set: &MeasurementSet,
    graph: &OrthogonalityGraph,
    cfg: &SdpConfig,
) -> Result<SdpOutcome> {
    if i == j || graph.is_edge(i, j) {
        return Err(Error::InvalidInput(format!("{i}-{j} is not a non-edge")));
    }
    let build = |floor| {
        pair_program(
            set,
            graph,
            eps,
            gram,
            witness,
            (i, j),
            cfg.triple_bound,
            floor,
        )
    };
    solve_robust(build, &[((i + 1, j + 1), 1.0)], cfg).map_err(|e| tag(e, (i, j), witness))
}

#[allow(clippy::too_many_arguments)]
fn max_overlap(
    i: usize,
    j: usize,
    eps: &EpsilonPrimeMatrix,
    gram: &ContextGramBounds,
    witness: f64,
    set: &MeasurementSet,
    graph: &OrthogonalityGraph,
    cfg: &SdpConfig,
) -> Result<SdpOutcome> {
    let build = |floor| {
        pair_program(
            set,
            graph,
            eps,
            gram,
            witness,
            (i, j),
            cfg.triple_bound,
            floor,
        )
    };
    let out =
        solve_robust(build, &[((i + 1, j + 1), -1.0)], cfg).map_err(|e| tag(e, (i, j), witness))?;
    Ok(match out {
        SdpOutcome::Optimal(v) => SdpOutcome::Optimal(-v),
        inf => inf,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tightened {
    pub eps: EpsilonPrimeMatrix,
    pub sweeps: usize,
    /// False when some program was infeasible: no realization reaches the witness.
    pub feasible: bool,
}

/// Jacobi sweeps of `eps'_ij := max X_ij` over all non-edges until the
/// largest change drops below `cfg.eps_precision` or `cfg.max_sweeps` is hit.
pub fn tighten_eps_prime(
    eps: &EpsilonPrimeMatrix,
    gram: &ContextGramBounds,
    witness: f64,
    set: &MeasurementSet,
    graph: &OrthogonalityGraph,
    cfg: &SdpConfig,
) -> Result<Tightened> {
    let pairs = graph.non_edges();
    let mut current = eps.clone();
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        let results = pairs
            .par_iter()
            .map(|&(i, j)| max_overlap(i, j, &current, gram, witness, set, graph, cfg))
            .collect::<Result<Vec<_>>>()?;
        sweeps += 1;
        if results.contains(&SdpOutcome::Infeasible) {
            return Ok(Tightened {
                eps: current,
                sweeps,
                feasible: false,
            });
        }
        let mut next = current.clone();
        let mut change: f64 = 0.0;
        for (&(i, j), r) in pairs.iter().zip(&results) {
            let old = current.get(i, j);
            let new = r.value().unwrap_or(old).clamp(0.0, 1.0).min(old);
            change = change.max(old - new);
            next.set(i, j, new);
        }
        current = next;
        if change < cfg.eps_precision {
            break;
        }
    }
    Ok(Tightened {
        eps: current,
        sweeps,
        feasible: true,
    })
}

/// Dimension-free completeness: for each context, the minimal probability
/// mass any vertex state outside it puts on the context. `None` when no
/// realization reaches the witness value.
pub fn completeness_nu(
    eps_on_edges: &EpsilonPrimeMatrix,
    witness: f64,
    set: &MeasurementSet,
    graph: &OrthogonalityGraph,
    cfg: &SdpConfig,
) -> Result<Vec<Option<f64>>> {
    let n = set.n();
    graph
        .contexts
        .iter()
        .map(|c| {
            let anchors: Vec<usize> = (0..n).filter(|m| !c.contains(m)).collect();
            let values = anchors
                .par_iter()
                .map(|&m| {
                    let vanishing: Vec<bool> = (0..n)
                        .map(|k| graph.is_edge(m, k) && eps_on_edges.get(m, k) <= 0.0)
                        .collect();
                    let build = |floor: f64| {
                        let mut pb =
                            anchored_skeleton(set, graph, eps_on_edges, m, &vanishing, witness);
                        for &(k, t) in &graph.edges {
                            let bound = eps_on_edges.get(k, t).max(floor);
                            let x = (k + 1, t + 1);
                            if bound <= 0.0 {
                                pb.equal(&[(x, 1.0)], 0.0);
                            } else {
                                pb.at_most(&[(x, 1.0)], bound);
                                pb.at_least(&[(x, 1.0)], -bound);
                            }
                        }
                        pb
                    };
                    let objective: Vec<(Entry, f64)> =
                        c.iter().map(|&k| ((0, k + 1), 1.0)).collect();
                    solve_robust(build, &objective, cfg).map_err(|e| tag(e, (m, c[0]), witness))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(values
                .into_iter()
                .filter_map(SdpOutcome::value)
                .fold(None, |acc: Option<f64>, v| {
                    Some(acc.map_or(v, |a| a.min(v)))
                }))
        })
        .collect()
}

/// Outcome of the verification at a single witness candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEval {
    pub witness: f64,
    pub feasible: bool,
    pub verified: bool,
    /// Minimal overlaps computed so far (all non-edges when `verified`).
    pub tau: BTreeMap<(usize, usize), f64>,
    pub eps: EpsilonPrimeMatrix,
    pub sweeps: usize,
}

/// Tightens the off-edge bounds at `witness`, starting from `start`, and
/// checks every non-edge. With `stop_early`, returns at the first
/// orthogonal-looking pair, so a verified result always has every `tau`.
///
/// `start` may carry off-edge bounds tightened at any witness value not above
/// `witness`: those remain valid because the feasible set only shrinks.
pub fn evaluate_candidate(
    start: &EpsilonPrimeMatrix,
    gram: &ContextGramBounds,
    witness: f64,
    set: &MeasurementSet,
    graph: &OrthogonalityGraph,
    cfg: &SdpConfig,
    stop_early: bool,
) -> Result<CandidateEval> {
    let t = tighten_eps_prime(start, gram, witness, set, graph, cfg)?;
    let mut eval = CandidateEval {
        witness,
        feasible: t.feasible,
        verified: false,
        tau: BTreeMap::new(),
        eps: t.eps,
        sweeps: t.sweeps,
    };
    if !eval.feasible {
        return Ok(eval);
    }
    let pairs = graph.non_edges();
    let mut ok = gram.all_positive();
    if stop_early {
        for &(i, j) in &pairs {
            match tau_min(i, j, &eval.eps, gram, witness, set, graph, cfg)? {
                SdpOutcome::Optimal(v) => {
                    eval.tau.insert((i, j), v);
                    if v <= cfg.tau_threshold {
                        ok = false;
                        break;
                    }
                }
                SdpOutcome::Infeasible => {
                    eval.feasible = false;
                    return Ok(eval);
                }
            }
        }
    } else {
        let results = pairs
            .par_iter()
            .map(|&(i, j)| tau_min(i, j, &eval.eps, gram, witness, set, graph, cfg))
            .collect::<Result<Vec<_>>>()?;
        for (&pair, r) in pairs.iter().zip(results) {
            match r {
                SdpOutcome::Optimal(v) => {
                    eval.tau.insert(pair, v);
                    ok &= v > cfg.tau_threshold;
                }
                SdpOutcome::Infeasible => {
                    eval.feasible = false;
                    return Ok(eval);
                }
            }
        }
    }
    eval.verified = ok;
    Ok(eval)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpVerdict {
    pub w_sdp: f64,
    /// Some candidate up to `W_opt` verified.
    pub certifiable: bool,
    /// Keyed `"i-j"` by vertex labels.
    pub tau: BTreeMap<String, f64>,
    /// Per context (in graph order); `null` where no realization reaches the witness.
    pub nu: Option<Vec<Option<f64>>>,
    pub completeness_ok: bool,
    pub completeness_dimension_free_ok: Option<bool>,
    pub orthogonality_ok: bool,
    pub iterations: usize,
    pub gram_bounds: ContextGramBounds,
    /// Converged off-edge bounds at `w_sdp`, keyed like `tau`.
    pub eps_prime_off_edge: BTreeMap<String, f64>,
    pub candidates_evaluated: usize,
}

fn pair_key(set: &MeasurementSet, i: usize, j: usize) -> String {
    format!("{}-{}", set.label(i), set.label(j))
}

/// Bisection for the smallest verifying witness value in `[0, W_opt]`.
pub fn threshold_search(
    eps_on_edges: &EpsilonPrimeMatrix,
    set: &MeasurementSet,
    graph: &OrthogonalityGraph,
    cfg: &SdpConfig,
) -> Result<SdpVerdict> {
    let w_opt = ratio_to_f64(ideal_witness_optimum(set));
    let gram = all_context_bounds(set, graph, eps_on_edges)?;
    let mut evaluated = 0;

    let cold = eps_on_edges.reset_off_edge(graph);
    let mut eval = |start: &EpsilonPrimeMatrix, w: f64, full: bool| {
        evaluated += 1;
        evaluate_candidate(start, &gram, w, set, graph, cfg, !full)
    };

    let top = eval(&cold, w_opt, true)?;
    let (w_sdp, best, certifiable) = if !top.verified {
        (w_opt, top, false)
    } else {
        let bottom = eval(&cold, 0.0, false)?;
        if bottom.verified {
            (0.0, bottom, true)
        } else {
            let (mut lo, mut hi) = (0.0, w_opt);
            let mut lo_eps = if bottom.feasible { bottom.eps } else { cold };
            let mut best = top;
            while hi - lo > cfg.bisection_tol {
                let mid = 0.5 * (lo + hi);
                let e = eval(&lo_eps, mid, false)?;
                if e.verified {
                    hi = mid;
                    best = e;
                } else {
                    lo = mid;
                    if e.feasible {
                        lo_eps = e.eps;
                    }
                }
            }
            (hi, best, true)
        }
    };

    let nu = if cfg.compute_nu {
        Some(completeness_nu(eps_on_edges, w_sdp, set, graph, cfg)?)
    } else {
        None
    };
    let completeness_dimension_free_ok = nu.as_ref().map(|v| {
        v.iter()
            .all(|x| x.is_none_or(|val| val > cfg.tau_threshold))
    });
    let orthogonality_ok = best.feasible
        && best.tau.len() == graph.non_edges().len()
        && best.tau.values().all(|&t| t > cfg.tau_threshold);

    Ok(SdpVerdict {
        w_sdp,
        certifiable,
        tau: best
            .tau
            .iter()
            .map(|(&(i, j), &v)| (pair_key(set, i, j), v))
            .collect(),
        nu,
        completeness_ok: gram.all_positive(),
        completeness_dimension_free_ok,
        orthogonality_ok,
        iterations: best.sweeps,
        eps_prime_off_edge: graph
            .non_edges()
            .into_iter()
            .map(|(i, j)| (pair_key(set, i, j), best.eps.get(i, j)))
            .collect(),
        gram_bounds: gram,
        candidates_evaluated: evaluated,
    })
}
