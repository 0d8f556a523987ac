//! Noise elimination and calibration-offset attribution.
//!
//! `fit_noise` explains raw on-edge errors by small real deviations of the
//! prepared/projected states plus the three Kraus channels, and returns the
//! pure-state overlaps of the fitted deviations. `fit_delta_theta` then
//! attributes those overlaps to a single offset on the last measurement plate.

use std::collections::BTreeMap;

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::storage::Owned;
use nalgebra::{DMatrix, DVector, Dyn, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BasisElement, MeasurementSet, OrthogonalityGraph};
use crate::opticsim::{apply_noise_unchecked, embed, pair_label, NoiseChannelParams, OpticalModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseFitConfig {
    /// Number of starts; the first has zero deviations.
    pub starts: usize,
    pub seed: u64,
    /// Scale of the random initial deviations.
    pub start_scale: f64,
    /// Channel probabilities every start begins from.
    pub start_probability: f64,
    pub max_evaluations: usize,
}

impl Default for NoiseFitConfig {
    fn default() -> Self {
        NoiseFitConfig {
            starts: 8,
            seed: 0,
            start_scale: 1e-3,
            start_probability: 1e-3,
            max_evaluations: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseFitResult {
    pub params: NoiseChannelParams,
    /// Deviation added to each normalized ideal vector, orthogonal to it.
    pub deviations: Vec<Vec<f64>>,
    /// `|<V_j|V_i>|^2` of the fitted pure states, keyed like the input.
    pub eps_prime: BTreeMap<String, f64>,
    pub residual: f64,
    /// Residual of the all-zero starting point.
    pub initial_residual: f64,
    pub best_start: usize,
}

impl NoiseFitResult {
    pub fn eps_prime_by_index(
        &self,
        set: &MeasurementSet,
    ) -> Result<BTreeMap<(usize, usize), f64>> {
        self.eps_prime
            .iter()
            .map(|(k, &v)| Ok((crate::opticsim::parse_pair_label(set, k)?, v)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleFitResult {
    /// Degrees.
    pub delta_theta: f64,
    pub residual: f64,
}

fn logistic(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Orthonormal basis of the complement of unit vector `v`.
fn complement_basis(v: &DVector<f64>) -> Vec<DVector<f64>> {
    let d = v.len();
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(d - 1);
    for k in 0..d {
        let mut e = DVector::zeros(d);
        e[k] = 1.0;
        e -= v * v.dot(&e);
        for b in &out {
            e -= b * b.dot(&e);
        }
        let n = e.norm();
        if n > 1e-8 {
            out.push(e / n);
        }
        if out.len() == d - 1 {
            break;
        }
    }
    out
}

struct NoiseProblem {
    dim: usize,
    ideal: Vec<DVector<f64>>,
    complements: Vec<Vec<DVector<f64>>>,
    pairs: Vec<(usize, usize)>,
    targets: Vec<f64>,
    x: DVector<f64>,
}

impl NoiseProblem {
    fn n_params(&self) -> usize {
        3 + self.ideal.len() * (self.dim - 1)
    }

    fn channel(&self, x: &DVector<f64>) -> NoiseChannelParams {
        NoiseChannelParams {
            p_ba: logistic(x[0]),
            p_bb: logistic(x[1]),
            p_pa: 0.5 * logistic(x[2]),
        }
    }

    fn deviation(&self, x: &DVector<f64>, i: usize) -> DVector<f64> {
        let off = 3 + i * (self.dim - 1);
        let mut d = DVector::zeros(self.dim);
        for (k, b) in self.complements[i].iter().enumerate() {
            d += b * x[off + k];
        }
        d
    }

    fn states(&self, x: &DVector<f64>) -> Vec<Vector4<f64>> {
        (0..self.ideal.len())
            .map(|i| {
                let v = &self.ideal[i] + self.deviation(x, i);
                let v = v.normalize();
                embed(v.as_slice()).expect("dimension checked")
            })
            .collect()
    }

    fn residuals_at(&self, x: &DVector<f64>) -> DVector<f64> {
        let noise = self.channel(x);
        let states = self.states(x);
        let mut rho_cache: Vec<Option<nalgebra::Matrix4<f64>>> = vec![None; states.len()];
        DVector::from_iterator(
            self.pairs.len(),
            self.pairs.iter().zip(&self.targets).map(|(&(i, j), &t)| {
                let rho =
                    *rho_cache[i].get_or_insert_with(|| apply_noise_unchecked(&states[i], &noise));
                (states[j].transpose() * rho * states[j])[(0, 0)] - t
            }),
        )
    }
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for NoiseProblem {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, x: &DVector<f64>) {
        self.x.copy_from(x);
    }

    fn params(&self) -> DVector<f64> {
        self.x.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let r = self.residuals_at(&self.x);
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let m = self.pairs.len();
        let n = self.n_params();
        let mut jac = DMatrix::zeros(m, n);
        let mut x = self.x.clone();
        for k in 0..n {
            let h = 1e-7 * (1.0 + self.x[k].abs());
            x[k] = self.x[k] + h;
            let up = self.residuals_at(&x);
            x[k] = self.x[k] - h;
            let down = self.residuals_at(&x);
            x[k] = self.x[k];
            jac.set_column(k, &((up - down) / (2.0 * h)));
        }
        Some(jac)
    }
}

fn sum_sq(r: &DVector<f64>) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Least-squares fit of channel probabilities and state deviations to the
/// measured on-edge errors. Keys are ordered `(prepared, detected)` pairs.
pub fn fit_noise(
    eps_measured: &BTreeMap<(usize, usize), f64>,
    set: &MeasurementSet,
    graph: &OrthogonalityGraph,
    cfg: &NoiseFitConfig,
) -> Result<NoiseFitResult> {
    if set.dim != 3 && set.dim != 4 {
        return Err(Error::InvalidInput(format!(
            "noise model carries d = 3 or 4, not {}",
            set.dim
        )));
    }
    if eps_measured.is_empty() {
        return Err(Error::InvalidInput("no on-edge errors to fit".into()));
    }
    for (&(i, j), &e) in eps_measured {
        if i >= set.n() || j >= set.n() || !graph.is_edge(i, j) {
            return Err(Error::InvalidInput(format!("{i}-{j} is not an edge")));
        }
        if !(0.0..=1.0).contains(&e) {
            return Err(Error::InvalidInput(format!(
                "eps {i}-{j} = {e} outside [0, 1]"
            )));
        }
    }
    let ideal: Vec<DVector<f64>> = (0..set.n())
        .map(|i| DVector::from_vec(set.unit_vector(i)))
        .collect();
    let complements = ideal.iter().map(complement_basis).collect();
    let pairs: Vec<(usize, usize)> = eps_measured.keys().copied().collect();
    let targets: Vec<f64> = eps_measured.values().copied().collect();
    let template = NoiseProblem {
        dim: set.dim,
        ideal,
        complements,
        pairs,
        targets,
        x: DVector::zeros(0),
    };
    let n_params = template.n_params();
    let a0 = logit(cfg.start_probability);
    let a_pa = logit(2.0 * cfg.start_probability);
    let starts: Vec<DVector<f64>> = (0..cfg.starts.max(1))
        .map(|s| {
            let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
            rng.set_stream(s as u64);
            DVector::from_fn(n_params, |k, _| match k {
                0 | 1 => a0,
                2 => a_pa,
                _ if s == 0 => 0.0,
                _ => cfg.start_scale * rng.gen_range(-1.0..1.0),
            })
        })
        .collect();

    let zero_point = {
        let mut x = DVector::zeros(n_params);
        x[0] = -40.0;
        x[1] = -40.0;
        x[2] = -40.0;
        x
    };
    let initial_residual = sum_sq(&template.residuals_at(&zero_point));

    let solver = LevenbergMarquardt::new()
        .with_ftol(1e-15)
        .with_xtol(1e-15)
        .with_gtol(1e-15)
        .with_patience(cfg.max_evaluations.div_ceil(n_params + 1).max(1));
    let fits: Vec<(f64, DVector<f64>)> = starts
        .into_par_iter()
        .map(|x0| {
            let problem = NoiseProblem {
                x: x0,
                dim: template.dim,
                ideal: template.ideal.clone(),
                complements: template.complements.clone(),
                pairs: template.pairs.clone(),
                targets: template.targets.clone(),
            };
            let (problem, _report) = solver.minimize(problem);
            let r = sum_sq(&problem.residuals_at(&problem.x));
            (r, problem.x)
        })
        .collect();
    let best = fits
        .iter()
        .map(|f| f.0)
        .filter(|r| r.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::NoConvergence(f64::NAN));
    }
    // Channel noise and state deviations can explain the same data. Among
    // fits that are equally good, keep the one with the smallest deviations.
    let tie = best + 1e-12 * initial_residual.max(f64::MIN_POSITIVE);
    let deviation_norm = |x: &DVector<f64>| x.rows(3, n_params - 3).norm_squared();
    let (best_start, (mut residual, mut x)) = fits
        .into_iter()
        .enumerate()
        .filter(|(_, (r, _))| *r <= tie)
        .min_by(|a, b| deviation_norm(&a.1 .1).total_cmp(&deviation_norm(&b.1 .1)))
        .expect("best fit is within the tie band");
    if initial_residual <= residual {
        residual = initial_residual;
        x = zero_point;
    }

    let params = template.channel(&x);
    let states = template.states(&x);
    let deviations = (0..set.n())
        .map(|i| template.deviation(&x, i).iter().copied().collect())
        .collect();
    let eps_prime = template
        .pairs
        .iter()
        .map(|&(i, j)| {
            let o = states[i].dot(&states[j]);
            (pair_label(set, i, j), (o * o).clamp(0.0, 1.0))
        })
        .collect();
    Ok(NoiseFitResult {
        params,
        deviations,
        eps_prime,
        residual,
        initial_residual,
        best_start,
    })
}

/// `sum (|<V_j(dtheta)|v_i>|^2 - eps'_ij)^2` with `V_j` projected through
/// the offset last plate.
pub fn delta_theta_objective(
    delta_theta: f64,
    eps_prime: &BTreeMap<(usize, usize), f64>,
    model: &OpticalModel,
) -> f64 {
    eps_prime
        .iter()
        .map(|(&(i, j), &e)| {
            let v = model.prepared(i);
            let w = model.measured(BasisElement::Vertex(j), delta_theta);
            let o = v.dot(&w);
            (o * o - e).powi(2)
        })
        .sum()
}

/// Grid scan of `[-5, 5]` degrees followed by golden-section refinement.
pub fn fit_delta_theta(
    eps_prime: &BTreeMap<(usize, usize), f64>,
    set: &MeasurementSet,
    graph: &OrthogonalityGraph,
) -> Result<AngleFitResult> {
    for &(i, j) in eps_prime.keys() {
        if i >= graph.n || j >= graph.n || !graph.is_edge(i, j) {
            return Err(Error::InvalidInput(format!("{i}-{j} is not an edge")));
        }
    }
    let model = OpticalModel::new(set)?;
    let f = |t: f64| delta_theta_objective(t, eps_prime, &model);
    let step = 0.01;
    let (mut best, mut best_val) = (0.0, f(0.0));
    for k in -500..=500 {
        let t = k as f64 * step;
        let v = f(t);
        if v < best_val {
            best = t;
            best_val = v;
        }
    }
    let (mut a, mut b) = ((best - step).max(-5.0), (best + step).min(5.0));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-4 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    let (t, v) = [(mid, f(mid)), (best, best_val)]
        .into_iter()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap();
    Ok(AngleFitResult {
        delta_theta: t,
        residual: v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_graph, peres24};

    #[test]
    fn complement_is_orthonormal() {
        let v = DVector::from_vec(vec![0.5, 0.5, 0.5, 0.5]);
        let b = complement_basis(&v);
        assert_eq!(b.len(), 3);
        for (k, x) in b.iter().enumerate() {
            assert!(x.dot(&v).abs() < 1e-12);
            for y in &b[k + 1..] {
                assert!(x.dot(y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ideal_data_fits_to_nothing() {
        let set = peres24();
        let g = build_graph(&set).unwrap();
        let eps = g.edges.iter().map(|&e| (e, 0.0)).collect();
        let fit = fit_noise(
            &eps,
            &set,
            &g,
            &NoiseFitConfig {
                starts: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(fit.residual < 1e-20);
        assert!(fit.eps_prime.values().all(|&e| e < 1e-10));
        assert!(fit.params.p_ba < 1e-8 && fit.params.p_bb < 1e-8 && fit.params.p_pa < 1e-8);
    }

    #[test]
    fn zero_overlaps_give_zero_offset() {
        let set = peres24();
        let g = build_graph(&set).unwrap();
        let eps = g.edges.iter().map(|&e| (e, 0.0)).collect();
        let fit = fit_delta_theta(&eps, &set, &g).unwrap();
        assert!(fit.delta_theta.abs() < 1e-3);
    }

    #[test]
    fn rejects_non_edges() {
        let set = peres24();
        let g = build_graph(&set).unwrap();
        let (i, j) = g.non_edges()[0];
        let eps = [((i, j), 0.1)].into_iter().collect();
        assert!(fit_noise(&eps, &set, &g, &NoiseFitConfig::default()).is_err());
        assert!(fit_delta_theta(&eps, &set, &g).is_err());
    }
}
