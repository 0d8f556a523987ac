//! The SI-C witness, its worst-case lower bound, and the witness operator.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{MeasurementSet, OrthogonalityGraph};

/// Measured statistics feeding the witness. `eps` is keyed by ordered pairs
/// `(first measured, second measured)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WitnessInputs {
    pub p: Vec<f64>,
    pub eps: BTreeMap<(usize, usize), f64>,
    pub sigma_p: Vec<f64>,
    pub sigma_eps: BTreeMap<(usize, usize), f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WitnessValue {
    pub w: f64,
    pub sigma: f64,
}

impl WitnessValue {
    pub fn exact(w: f64) -> Self {
        WitnessValue { w, sigma: 0.0 }
    }
}

/// Orientations measured for one unordered edge, each weighted by 1/count.
fn orientations(inputs: &WitnessInputs, i: usize, j: usize) -> Result<Vec<((usize, usize), f64)>> {
    let present: Vec<(usize, usize)> = [(i, j), (j, i)]
        .into_iter()
        .filter(|k| inputs.eps.contains_key(k))
        .collect();
    if present.is_empty() {
        return Err(Error::MissingEdge(i, j));
    }
    let share = 1.0 / present.len() as f64;
    Ok(present.into_iter().map(|k| (k, share)).collect())
}

/// `sum_i w_i P_i - sum_{ij in E} w_ij P_i eps_ij`, with first-order error propagation.
pub fn witness_value(
    set: &MeasurementSet,
    graph: &OrthogonalityGraph,
    inputs: &WitnessInputs,
) -> Result<WitnessValue> {
    let n = set.n();
    if inputs.p.len() != n {
        return Err(Error::InvalidInput(format!(
            "{} probabilities for {} vertices",
            inputs.p.len(),
            n
        )));
    }
    let w_edge = set.edge_weight_f64();
    let mut dw_dp: Vec<f64> = (0..n).map(|i| set.weight_f64(i)).collect();
    let mut value: f64 = (0..n).map(|i| set.weight_f64(i) * inputs.p[i]).sum();
    let mut var = 0.0;

    for &(i, j) in &graph.edges {
        for ((a, b), share) in orientations(inputs, i, j)? {
            let eps = inputs.eps[&(a, b)];
            value -= share * w_edge * inputs.p[a] * eps;
            dw_dp[a] -= share * w_edge * eps;
            let s_eps = inputs.sigma_eps.get(&(a, b)).copied().unwrap_or(0.0);
            var += (share * w_edge * inputs.p[a] * s_eps).powi(2);
        }
    }
    for i in 0..n {
        let s = inputs.sigma_p.get(i).copied().unwrap_or(0.0);
        var += (dw_dp[i] * s).powi(2);
    }
    Ok(WitnessValue {
        w: value,
        sigma: var.sqrt(),
    })
}

/// Lower bound on the witness over all states from its maximally-mixed value:
/// `d * W_mm - (d - 1) * W_opt`.
pub fn worst_case_bound(w_mm: WitnessValue, w_opt: f64, d: usize) -> Result<WitnessValue> {
    if d < 2 {
        return Err(Error::InvalidInput(format!("dimension {d} < 2")));
    }
    let d = d as f64;
    Ok(WitnessValue {
        w: d * w_mm.w - (d - 1.0) * w_opt,
        sigma: d * w_mm.sigma,
    })
}

fn projector(v: &DVector<f64>) -> DMatrix<f64> {
    v * v.transpose()
}

/// Witness operator built from the projectors actually realized.
///
/// Each unordered edge contributes `(P_i P_j P_i + P_j P_i P_j) / 2`.
pub fn witness_operator(
    projector_vectors: &[Vec<f64>],
    set: &MeasurementSet,
    graph: &OrthogonalityGraph,
) -> Result<DMatrix<f64>> {
    if projector_vectors.len() != set.n() {
        return Err(Error::InvalidInput(format!(
            "{} projectors for {} vertices",
            projector_vectors.len(),
            set.n()
        )));
    }
    let d = set.dim;
    let projectors = projector_vectors
        .iter()
        .enumerate()
        .map(|(index, v)| {
            if v.len() != d {
                return Err(Error::InvalidInput(format!(
                    "projector {index} has length {}",
                    v.len()
                )));
            }
            let v = DVector::from_column_slice(v);
            let norm = v.norm();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(Error::NotNormalized { index, norm });
            }
            Ok(projector(&v))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut op = DMatrix::zeros(d, d);
    for (i, p) in projectors.iter().enumerate() {
        op += p * set.weight_f64(i);
    }
    let w_edge = set.edge_weight_f64();
    for &(i, j) in &graph.edges {
        let (pi, pj) = (&projectors[i], &projectors[j]);
        let sandwich = pi * pj * pi + pj * pi * pj;
        op -= sandwich * (0.5 * w_edge);
    }
    // Remove rounding asymmetry.
    let sym = (&op + op.transpose()) * 0.5;
    Ok(sym)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumBounds {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub trace_over_d: f64,
}

pub fn spectrum_bounds(op: &DMatrix<f64>) -> Result<SpectrumBounds> {
    if !op.is_square() || op.nrows() == 0 {
        return Err(Error::InvalidInput("operator must be square".into()));
    }
    let asym = (op - op.transpose()).amax();
    if asym > 1e-12 {
        return Err(Error::NotHermitian(asym));
    }
    let d = op.nrows();
    let eig = SymmetricEigen::new(op.clone());
    if cfg!(debug_assertions) {
        let scale = op.norm().max(1.0);
        for k in 0..d {
            let v = eig.eigenvectors.column(k);
            let resid = (op * v - v * eig.eigenvalues[k]).norm();
            debug_assert!(resid <= 1e-10 * scale, "eigen residual {resid}");
        }
    }
    let lambda_min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let lambda_max = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SpectrumBounds {
        lambda_min,
        lambda_max,
        trace_over_d: eig.eigenvalues.sum() / d as f64,
    })
}
