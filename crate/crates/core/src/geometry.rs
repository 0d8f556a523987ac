//! Target measurement sets and their exact orthogonality structure.
//!
//! Vectors are unnormalized integer rays. Orthogonality, contexts and ideal
//! overlaps are all computed in exact integer/rational arithmetic.

use std::collections::BTreeSet;
use std::path::Path;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named state-independent contextuality set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasurementSet {
    pub name: String,
    pub dim: usize,
    pub vectors: Vec<Vec<i64>>,
    pub vertex_weights: Vec<Rational64>,
    pub edge_weight: Rational64,
    pub aux_vectors: Vec<Vec<i64>>,
    pub force_unit_context_gram: bool,
    pub labels: Vec<String>,
}

/// One element of a measurement basis: either a set vertex or an auxiliary
/// completion vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BasisElement {
    Vertex(usize),
    Aux(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrthogonalityGraph {
    pub n: usize,
    /// Unordered edges stored as `(i, j)` with `i < j`, sorted.
    pub edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<bool>>,
    /// Size-`d` cliques, each sorted ascending.
    pub contexts: Vec<Vec<usize>>,
    pub measurement_bases: Vec<Vec<BasisElement>>,
}

const PERES24: [[i64; 4]; 24] = [
    [1, 0, 0, 0],
    [0, 1, 0, 0],
    [0, 0, 1, 0],
    [0, 0, 0, 1],
    [1, 1, 1, 1],
    [1, 1, -1, -1],
    [1, -1, 1, -1],
    [1, -1, -1, 1],
    [1, 1, 1, -1],
    [1, 1, -1, 1],
    [1, -1, 1, 1],
    [-1, 1, 1, 1],
    [1, 1, 0, 0],
    [1, -1, 0, 0],
    [0, 0, 1, 1],
    [0, 0, 1, -1],
    [1, 0, 1, 0],
    [1, 0, -1, 0],
    [0, 1, 0, 1],
    [0, 1, 0, -1],
    [1, 0, 0, 1],
    [1, 0, 0, -1],
    [0, 1, 1, 0],
    [0, 1, -1, 0],
];

const YO13: [[i64; 3]; 13] = [
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
    [0, 1, 1],
    [0, 1, -1],
    [1, 0, 1],
    [1, 0, -1],
    [1, 1, 0],
    [1, -1, 0],
    [1, 1, 1],
    [1, 1, -1],
    [-1, 1, 1],
    [1, -1, 1],
];

const YO13_AUX: [[i64; 3]; 4] = [[2, -1, -1], [-1, 2, 1], [1, -1, 2], [1, 2, 1]];

pub const BUILTIN_SETS: [&str; 2] = ["peres24", "yo13"];

/// On-disk set definition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SetFile {
    pub name: String,
    pub dim: usize,
    pub vectors: Vec<Vec<i64>>,
    pub vertex_weights: Vec<serde_json::Value>,
    pub edge_weight: serde_json::Value,
    #[serde(default)]
    pub aux_vectors: Vec<Vec<i64>>,
    #[serde(default)]
    pub force_unit_context_gram: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

fn parse_weight(v: &serde_json::Value) -> Result<Rational64> {
    match v {
        serde_json::Value::Number(num) => {
            if let Some(i) = num.as_i64() {
                Ok(Rational64::from_integer(i))
            } else {
                let f = num
                    .as_f64()
                    .ok_or_else(|| Error::MalformedSet(format!("bad weight {num}")))?;
                Rational64::approximate_float(f)
                    .ok_or_else(|| Error::MalformedSet(format!("bad weight {num}")))
            }
        }
        serde_json::Value::String(s) => s
            .trim()
            .parse::<Rational64>()
            .map_err(|_| Error::MalformedSet(format!("bad weight `{s}`"))),
        other => Err(Error::MalformedSet(format!("bad weight {other}"))),
    }
}

fn weight_value(w: Rational64) -> serde_json::Value {
    if w.is_integer() {
        serde_json::Value::from(*w.numer())
    } else {
        serde_json::Value::from(w.to_string())
    }
}

impl MeasurementSet {
    /// Builds and validates a set.
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        vectors: Vec<Vec<i64>>,
        vertex_weights: Vec<Rational64>,
        edge_weight: Rational64,
        aux_vectors: Vec<Vec<i64>>,
        force_unit_context_gram: bool,
    ) -> Result<Self> {
        let labels = (1..=vectors.len()).map(|i| i.to_string()).collect();
        let set = MeasurementSet {
            name: name.into(),
            dim,
            vectors,
            vertex_weights,
            edge_weight,
            aux_vectors,
            force_unit_context_gram,
            labels,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.vectors.len() {
            return Err(Error::InvalidSet(format!(
                "{} labels for {} vectors",
                labels.len(),
                self.vectors.len()
            )));
        }
        let unique: BTreeSet<&String> = labels.iter().collect();
        if unique.len() != labels.len() {
            return Err(Error::InvalidSet("duplicate vertex labels".into()));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidSet("dimension must be positive".into()));
        }
        if self.vectors.len() != self.vertex_weights.len() {
            return Err(Error::InvalidSet(format!(
                "{} vectors but {} vertex weights",
                self.vectors.len(),
                self.vertex_weights.len()
            )));
        }
        for (kind, list) in [("vector", &self.vectors), ("aux vector", &self.aux_vectors)] {
            for (i, v) in list.iter().enumerate() {
                if v.len() != self.dim {
                    return Err(Error::InvalidSet(format!(
                        "{kind} {i} has length {} (dimension {})",
                        v.len(),
                        self.dim
                    )));
                }
                if v.iter().all(|&x| x == 0) {
                    return Err(Error::InvalidSet(format!("{kind} {i} is zero")));
                }
            }
        }
        if let Some((i, _)) = self
            .vertex_weights
            .iter()
            .enumerate()
            .find(|(_, w)| **w < Rational64::from_integer(0))
        {
            return Err(Error::InvalidSet(format!("vertex weight {i} is negative")));
        }
        if let Some(max_w) = self.vertex_weights.iter().max() {
            if self.edge_weight < *max_w {
                return Err(Error::InvalidSet(format!(
                    "edge weight {} is below the largest vertex weight {}",
                    self.edge_weight, max_w
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.vectors.len()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn weight_f64(&self, i: usize) -> f64 {
        ratio_to_f64(self.vertex_weights[i])
    }

    pub fn edge_weight_f64(&self) -> f64 {
        ratio_to_f64(self.edge_weight)
    }

    /// Integer vector of a basis element.
    pub fn element_vector(&self, e: BasisElement) -> &[i64] {
        match e {
            BasisElement::Vertex(i) => &self.vectors[i],
            BasisElement::Aux(a) => &self.aux_vectors[a],
        }
    }

    /// Unit-normalized floating-point copy of vertex `i`.
    pub fn unit_vector(&self, i: usize) -> Vec<f64> {
        normalize(&self.vectors[i])
    }

    pub fn unit_element(&self, e: BasisElement) -> Vec<f64> {
        normalize(self.element_vector(e))
    }

    pub fn from_file_def(def: SetFile) -> Result<Self> {
        let weights = def
            .vertex_weights
            .iter()
            .map(parse_weight)
            .collect::<Result<Vec<_>>>()?;
        let edge_weight = parse_weight(&def.edge_weight)?;
        let set = MeasurementSet::new(
            def.name,
            def.dim,
            def.vectors,
            weights,
            edge_weight,
            def.aux_vectors,
            def.force_unit_context_gram,
        )?;
        match def.labels {
            Some(labels) => set.with_labels(labels),
            None => Ok(set),
        }
    }

    pub fn to_file_def(&self) -> SetFile {
        SetFile {
            name: self.name.clone(),
            dim: self.dim,
            vectors: self.vectors.clone(),
            vertex_weights: self
                .vertex_weights
                .iter()
                .map(|w| weight_value(*w))
                .collect(),
            edge_weight: weight_value(self.edge_weight),
            aux_vectors: self.aux_vectors.clone(),
            force_unit_context_gram: self.force_unit_context_gram,
            labels: Some(self.labels.clone()),
        }
    }
}

fn normalize(v: &[i64]) -> Vec<f64> {
    let norm = (v.iter().map(|x| x * x).sum::<i64>() as f64).sqrt();
    v.iter().map(|&x| x as f64 / norm).collect()
}

pub(crate) fn ratio_to_f64(r: Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

pub fn peres24() -> MeasurementSet {
    MeasurementSet::new(
        "peres24",
        4,
        PERES24.iter().map(|v| v.to_vec()).collect(),
        vec![Rational64::from_integer(1); 24],
        Rational64::from_integer(1),
        Vec::new(),
        false,
    )
    .expect("built-in Peres-24 is valid")
}

pub fn yo13() -> MeasurementSet {
    let mut weights = vec![Rational64::from_integer(3); 9];
    weights.extend([Rational64::from_integer(2); 4]);
    let labels = [
        "1", "2", "3", "4", "5", "6", "7", "8", "9", "A", "B", "C", "D",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    MeasurementSet::new(
        "yo13",
        3,
        YO13.iter().map(|v| v.to_vec()).collect(),
        weights,
        Rational64::from_integer(3),
        YO13_AUX.iter().map(|v| v.to_vec()).collect(),
        true,
    )
    .and_then(|s| s.with_labels(labels))
    .expect("built-in YO-13 is valid")
}

/// Resolves a built-in name or, failing that, a path to a JSON set definition.
pub fn load_set(name_or_path: &str) -> Result<MeasurementSet> {
    match name_or_path.to_ascii_lowercase().as_str() {
        "peres24" | "peres-24" => return Ok(peres24()),
        "yo13" | "yo-13" => return Ok(yo13()),
        _ => {}
    }
    let path = Path::new(name_or_path);
    if path.exists() {
        load_set_file(path)
    } else {
        Err(Error::UnknownSet(name_or_path.to_string()))
    }
}

pub fn load_set_file(path: &Path) -> Result<MeasurementSet> {
    let text = std::fs::read_to_string(path)?;
    let def: SetFile =
        serde_json::from_str(&text).map_err(|e| Error::MalformedSet(e.to_string()))?;
    MeasurementSet::from_file_def(def)
}

pub fn dot(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_sq(a: &[i64]) -> i64 {
    dot(a, a)
}

/// Extends `current` with vertices from `candidates` (all > last) into cliques of size `k`.
fn extend_cliques(
    adj: &[Vec<bool>],
    k: usize,
    current: &mut Vec<usize>,
    candidates: &[usize],
    out: &mut Vec<Vec<usize>>,
) {
    if current.len() == k {
        out.push(current.clone());
        return;
    }
    for (pos, &v) in candidates.iter().enumerate() {
        if current.len() + (candidates.len() - pos) < k {
            break;
        }
        let next: Vec<usize> = candidates[pos + 1..]
            .iter()
            .copied()
            .filter(|&u| adj[v][u])
            .collect();
        current.push(v);
        extend_cliques(adj, k, current, &next, out);
        current.pop();
    }
}

fn k_cliques(adj: &[Vec<bool>], k: usize) -> Vec<Vec<usize>> {
    let all: Vec<usize> = (0..adj.len()).collect();
    let mut out = Vec::new();
    extend_cliques(adj, k, &mut Vec::with_capacity(k), &all, &mut out);
    out
}

/// Computes edges, size-`d` contexts and a covering family of measurement bases.
pub fn build_graph(set: &MeasurementSet) -> Result<OrthogonalityGraph> {
    let mut graph = orthogonality(set)?;
    graph.measurement_bases = cover_with_bases(set, &graph.contexts)?;
    Ok(graph)
}

/// Edges and contexts only; `measurement_bases` is left empty. Useful for
/// sets that are not meant to be measured, e.g. partial configurations.
pub fn orthogonality(set: &MeasurementSet) -> Result<OrthogonalityGraph> {
    set.validate()?;
    let n = set.n();
    let mut adjacency = vec![vec![false; n]; n];
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if dot(&set.vectors[i], &set.vectors[j]) == 0 {
                adjacency[i][j] = true;
                adjacency[j][i] = true;
                edges.push((i, j));
            }
        }
    }
    let contexts = k_cliques(&adjacency, set.dim);
    Ok(OrthogonalityGraph {
        n,
        edges,
        adjacency,
        contexts,
        measurement_bases: Vec::new(),
    })
}

/// Greedy cover: contexts first, then bases that mix vertices with auxiliary
/// vectors for whatever is still uncovered.
fn cover_with_bases(
    set: &MeasurementSet,
    contexts: &[Vec<usize>],
) -> Result<Vec<Vec<BasisElement>>> {
    let n = set.n();
    let mut covered = vec![false; n];
    let mut bases: Vec<Vec<BasisElement>> = Vec::new();

    let as_elements =
        |c: &[usize]| -> Vec<BasisElement> { c.iter().map(|&v| BasisElement::Vertex(v)).collect() };
    greedy_pick(
        &contexts.iter().map(|c| as_elements(c)).collect::<Vec<_>>(),
        &mut covered,
        &mut bases,
    );

    if covered.iter().any(|c| !c) && !set.aux_vectors.is_empty() {
        // Extended graph over vertices followed by auxiliary vectors.
        let elements: Vec<BasisElement> = (0..n)
            .map(BasisElement::Vertex)
            .chain((0..set.aux_vectors.len()).map(BasisElement::Aux))
            .collect();
        let m = elements.len();
        let mut adj = vec![vec![false; m]; m];
        for a in 0..m {
            for b in a + 1..m {
                let orth = dot(
                    set.element_vector(elements[a]),
                    set.element_vector(elements[b]),
                ) == 0;
                adj[a][b] = orth;
                adj[b][a] = orth;
            }
        }
        let mixed: Vec<Vec<BasisElement>> = k_cliques(&adj, set.dim)
            .into_iter()
            .filter(|c| c.iter().any(|&x| x >= n))
            .map(|c| c.into_iter().map(|x| elements[x]).collect())
            .collect();
        greedy_pick(&mixed, &mut covered, &mut bases);
    }

    if let Some(v) = covered.iter().position(|c| !c) {
        return Err(Error::UncoveredVertex(v));
    }
    Ok(bases)
}

fn greedy_pick(
    candidates: &[Vec<BasisElement>],
    covered: &mut [bool],
    bases: &mut Vec<Vec<BasisElement>>,
) {
    let gain = |b: &[BasisElement], covered: &[bool]| {
        b.iter()
            .filter(|e| matches!(e, BasisElement::Vertex(v) if !covered[*v]))
            .count()
    };
    loop {
        let best = candidates
            .iter()
            .map(|b| (gain(b, covered), b))
            .filter(|(g, _)| *g > 0)
            .max_by(|a, b| a.0.cmp(&b.0).then(std::cmp::Ordering::Greater));
        let Some((_, basis)) = best else { break };
        for e in basis {
            if let BasisElement::Vertex(v) = e {
                covered[*v] = true;
            }
        }
        bases.push(basis.clone());
    }
}

impl OrthogonalityGraph {
    pub fn is_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i][j]
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[i]
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(|(j, _)| j)
    }

    /// Unordered non-adjacent pairs `(i, j)` with `i < j`.
    pub fn non_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if !self.adjacency[i][j] {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Index of the first measurement basis containing vertex `i`.
    pub fn primary_basis(&self, i: usize) -> usize {
        self.measurement_bases
            .iter()
            .position(|b| b.contains(&BasisElement::Vertex(i)))
            .expect("every vertex is covered by construction")
    }

    pub fn contexts_containing(&self, i: usize) -> usize {
        self.contexts.iter().filter(|c| c.contains(&i)).count()
    }
}

/// Squared overlaps `|<v_i|v_j>|^2` of the normalized vectors, exact.
pub fn ideal_overlaps(set: &MeasurementSet) -> Vec<Vec<Rational64>> {
    let n = set.n();
    let norms: Vec<i64> = set.vectors.iter().map(|v| norm_sq(v)).collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let d = dot(&set.vectors[i], &set.vectors[j]);
                    Rational64::new(d * d, norms[i] * norms[j])
                })
                .collect()
        })
        .collect()
}

/// `sum_i w_i / d`: the witness value of the ideal realization on any state.
pub fn ideal_witness_optimum(set: &MeasurementSet) -> Rational64 {
    let total: Rational64 = set.vertex_weights.iter().copied().sum();
    total / Rational64::from_integer(set.dim as i64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    #[test]
    fn builtin_vectors_match_tables() {
        let p = load_set("peres24").unwrap();
        assert_eq!(p.vectors[4], vec![1, 1, 1, 1]);
        assert_eq!(p.vectors[11], vec![-1, 1, 1, 1]);
        let y = load_set("yo13").unwrap();
        let c = y.index_of("C").unwrap();
        assert_eq!(y.vectors[c], vec![-1, 1, 1]);
        assert_eq!(y.vertex_weights[c], r(2, 1));
        assert_eq!(y.edge_weight, r(3, 1));
        assert!(y.force_unit_context_gram);
        assert_eq!(y.aux_vectors.len(), 4);
    }

    #[test]
    fn unknown_set_is_rejected() {
        assert!(matches!(load_set("nosuchset"), Err(Error::UnknownSet(_))));
    }

    #[test]
    fn zero_vector_is_rejected() {
        let err = MeasurementSet::new(
            "bad",
            2,
            vec![vec![1, 0], vec![0, 0]],
            vec![r(1, 1); 2],
            r(1, 1),
            vec![],
            false,
        )
        .unwrap_err();
        assert!(err.to_string().contains("vector 1 is zero"), "{err}");
    }

    #[test]
    fn edge_weight_rule_is_enforced() {
        let err = MeasurementSet::new(
            "bad",
            2,
            vec![vec![1, 0], vec![0, 1]],
            vec![r(2, 1); 2],
            r(1, 1),
            vec![],
            false,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidSet(_)));
    }

    #[test]
    fn peres_edge_and_contexts() {
        let p = peres24();
        let g = build_graph(&p).unwrap();
        assert!(g.is_edge(4, 5));
        assert!(g.is_edge(8, 18), "eps_{{9-19}} must be an edge");
        assert_eq!(g.contexts.len(), 24);
        for v in 0..24 {
            assert_eq!(g.contexts_containing(v), 4);
        }
        // Disjoint cover of the 24 vertices.
        assert_eq!(g.measurement_bases.len(), 6);
    }

    #[test]
    fn yo13_contexts_and_bases() {
        let y = yo13();
        let g = build_graph(&y).unwrap();
        let expected: Vec<Vec<usize>> =
            vec![vec![0, 1, 2], vec![0, 3, 4], vec![1, 5, 6], vec![2, 7, 8]];
        assert_eq!(g.contexts, expected);
        use BasisElement::*;
        let aux_bases: Vec<BTreeSet<BasisElement>> = vec![
            [Vertex(4), Vertex(9), Aux(0)].into(),
            [Vertex(5), Vertex(10), Aux(1)].into(),
            [Vertex(7), Vertex(11), Aux(2)].into(),
            [Vertex(6), Vertex(12), Aux(3)].into(),
        ];
        let got: Vec<BTreeSet<BasisElement>> = g
            .measurement_bases
            .iter()
            .map(|b| b.iter().copied().collect())
            .collect();
        assert_eq!(got.len(), 8);
        for b in &aux_bases {
            assert!(got.contains(b), "missing {b:?}");
        }
    }

    #[test]
    fn overlaps_exact() {
        let p = peres24();
        let o = ideal_overlaps(&p);
        assert_eq!(o[0][4], r(1, 4));
        assert_eq!(o[3][3], r(1, 1));
        let y = yo13();
        let o = ideal_overlaps(&y);
        assert_eq!(o[0][9], r(1, 3));
    }

    #[test]
    fn overlaps_vanish_exactly_on_edges() {
        for set in [peres24(), yo13()] {
            let g = build_graph(&set).unwrap();
            let o = ideal_overlaps(&set);
            for i in 0..set.n() {
                assert_eq!(o[i][i], r(1, 1));
                for j in 0..set.n() {
                    if i != j {
                        assert_eq!(g.is_edge(i, j), g.is_edge(j, i));
                        if g.is_edge(i, j) {
                            assert_eq!(o[i][j], r(0, 1));
                        } else {
                            assert!(o[i][j] > r(0, 1));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn contexts_resolve_identity() {
        for set in [peres24(), yo13()] {
            let g = build_graph(&set).unwrap();
            let d = set.dim;
            for c in &g.contexts {
                for a in 0..c.len() {
                    for b in a + 1..c.len() {
                        assert!(g.is_edge(c[a], c[b]));
                    }
                }
                for r_ in 0..d {
                    for s in 0..d {
                        let sum: Rational64 = c
                            .iter()
                            .map(|&k| {
                                let v = &set.vectors[k];
                                Rational64::new(v[r_] * v[s], norm_sq(v))
                            })
                            .sum();
                        let expect = if r_ == s { r(1, 1) } else { r(0, 1) };
                        assert_eq!(sum, expect);
                    }
                }
            }
        }
    }

    #[test]
    fn witness_optimum() {
        assert_eq!(ideal_witness_optimum(&peres24()), r(6, 1));
        assert_eq!(ideal_witness_optimum(&yo13()), r(35, 3));
        let basis = MeasurementSet::new(
            "e3",
            3,
            vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]],
            vec![r(1, 1); 3],
            r(1, 1),
            vec![],
            false,
        )
        .unwrap();
        assert_eq!(ideal_witness_optimum(&basis), r(1, 1));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("yo.json");
        let y = yo13();
        std::fs::write(&path, serde_json::to_string(&y.to_file_def()).unwrap()).unwrap();
        let back = load_set(path.to_str().unwrap()).unwrap();
        assert_eq!(back, y);
    }

    #[test]
    fn malformed_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{\"name\": 3}").unwrap();
        assert!(matches!(
            load_set(path.to_str().unwrap()),
            Err(Error::MalformedSet(_))
        ));
    }
}
