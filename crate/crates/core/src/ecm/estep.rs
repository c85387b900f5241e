use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{ComponentState, Responsibilities};
use crate::error::{Error, Result};
use crate::numerics::{log_gamma, log_sum_exp};

/// Projections of `x` onto the component subspace and its complement.
///
/// Both are affine: they pass through `mu`, so `p_vec + p_perp - mu = x`.
pub fn project(x: &DVector<f64>, state: &ComponentState) -> (DVector<f64>, DVector<f64>) {
    let centered = x - &state.mu;
    let lead = state.orient.columns(0, state.d);
    let rest = state.orient.columns(state.d, state.dim() - state.d);
    let inside = &lead * (lead.transpose() * &centered) + &state.mu;
    let outside = &rest * (rest.transpose() * &centered) + &state.mu;
    (inside, outside)
}

/// Parameter-only part of the cost function.
struct CostTerms {
    /// Everything in `K_g` except the distance term.
    offset: f64,
    nu: f64,
    p: f64,
}

impl CostTerms {
    fn new(state: &ComponentState) -> Result<Self> {
        let p = state.dim() as f64;
        let log_det = state.a.iter().map(|a| a.ln()).sum::<f64>() + (p - state.d as f64) * state.b.ln();
        let mut offset = log_det - 2.0 * state.pi.ln();
        if state.is_gaussian() {
            offset += p * (2.0 * PI).ln();
        } else {
            let nu = state.nu;
            offset += -2.0 * log_gamma((nu + p) / 2.0)? + 2.0 * log_gamma(nu / 2.0)? + p * (nu.ln() + PI.ln());
        }
        Ok(CostTerms { offset, nu: state.nu, p })
    }

    fn cost(&self, delta: f64) -> f64 {
        if self.nu.is_infinite() {
            self.offset + delta
        } else {
            self.offset + (self.nu + self.p) * (delta / self.nu).ln_1p()
        }
    }

    fn weight(&self, delta: f64) -> f64 {
        if self.nu.is_infinite() {
            1.0
        } else {
            (self.nu + self.p) / (self.nu + delta)
        }
    }
}

/// `||mu - P(x)||^2_A + ||x - P(x)||^2 / b` for every row of `data`, where
/// `A` weights the subspace coordinates by `1 / a_j`.
fn distances(data: &DMatrix<f64>, state: &ComponentState) -> Vec<f64> {
    let (n, p) = data.shape();
    let mut centered = data.clone();
    for j in 0..p {
        let m = state.mu[j];
        centered.column_mut(j).add_scalar_mut(-m);
    }
    let coords = centered * &state.orient;
    let inv_a: Vec<f64> = state.a.iter().map(|a| 1.0 / a).collect();
    let inv_b = 1.0 / state.b;
    (0..n)
        .map(|i| {
            let mut inside = 0.0;
            let mut outside = 0.0;
            for j in 0..p {
                let c = coords[(i, j)];
                if j < state.d {
                    inside += c * c * inv_a[j];
                } else {
                    outside += c * c;
                }
            }
            inside + outside * inv_b
        })
        .collect()
}

fn single_distance(x: &DVector<f64>, state: &ComponentState) -> f64 {
    distances(&DMatrix::from_row_slice(1, x.len(), x.as_slice()), state)[0]
}

/// Cost function `K_g(x) = -2 log(pi_g f(x | theta_g))` evaluated through the
/// subspace projections.
pub fn cost_k(x: &DVector<f64>, state: &ComponentState) -> f64 {
    let terms = CostTerms::new(state).expect("valid state has positive degrees of freedom");
    terms.cost(single_distance(x, state))
}

/// Output of [`e_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Expectation {
    pub resp: Responsibilities,
    /// Observed-data log-likelihood of the states that produced `resp`.
    pub loglik: f64,
}

/// Posterior memberships, latent weights and the log-likelihood.
pub fn e_step(data: &DMatrix<f64>, states: &[ComponentState]) -> Result<Expectation> {
    let (n, p) = data.shape();
    if states.is_empty() {
        return Err(Error::Shape("no components".into()));
    }
    if let Some(bad) = states.iter().find(|s| s.dim() != p) {
        return Err(Error::Shape(format!("component has dimension {}, data has {p}", bad.dim())));
    }
    let groups = states.len();
    let mut half_neg_cost = DMatrix::zeros(n, groups);
    let mut u = DMatrix::zeros(n, groups);
    for (g, state) in states.iter().enumerate() {
        let terms = CostTerms::new(state)?;
        for (i, delta) in distances(data, state).into_iter().enumerate() {
            half_neg_cost[(i, g)] = -0.5 * terms.cost(delta);
            u[(i, g)] = terms.weight(delta);
        }
    }

    let mut z = DMatrix::zeros(n, groups);
    let mut loglik = 0.0;
    let mut row = vec![0.0; groups];
    for i in 0..n {
        for g in 0..groups {
            row[g] = half_neg_cost[(i, g)];
        }
        let total = log_sum_exp(&row);
        loglik += total;
        for g in 0..groups {
            z[(i, g)] = (row[g] - total).exp();
        }
    }
    Ok(Expectation {
        resp: Responsibilities { z, u },
        loglik,
    })
}
