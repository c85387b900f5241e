//! ECM fitting of a single `(model, G)` pair.
//!
//! One iteration is an E-step (posterior memberships `z` and latent precision
//! weights `u` from the projection-based cost function), followed by two
//! conditional maximizations: proportions, means and degrees of freedom
//! first, then the subspace covariance parameters and intrinsic dimensions.
//! Every conditional step is accepted only if it does not lower the expected
//! complete-data log-likelihood, which keeps the observed log-likelihood
//! non-decreasing even when the intrinsic dimension moves between
//! iterations.

mod cmstep;
mod dims;
mod estep;
mod init;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model_space::{CountOptions, DimensionAssignment, ModelSpec, RhoConvention};
use crate::numerics::SymMatrix;
use crate::selection::{aitken_check, bic, total_param_count};
use crate::seeds::derive_seed;

pub use cmstep::{cm_step, update_nu, update_pi_mu, NuUpdate};
pub use dims::{scree_dimension, select_dims};
pub use estep::{cost_k, e_step, project, Expectation};
pub use init::{initialize, kmeans};

/// How starting memberships are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMethod {
    #[default]
    KMeans,
    Random,
}

/// How intrinsic dimensions are chosen on every covariance step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DimMethod {
    /// Penalized profile likelihood over `d = 1..p-1`.
    Bic,
    /// Eigenvalue-gap threshold rule.
    #[default]
    Scree,
}

/// Tuning knobs for [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub init: InitMethod,
    /// Number of independent starts; `None` means 1 for k-means and 10 for
    /// random starts.
    pub n_init: Option<usize>,
    pub max_iter: usize,
    /// Aitken stopping threshold.
    pub epsilon: f64,
    pub dim_method: DimMethod,
    pub scree_threshold: f64,
    /// Degrees of freedom are clamped to this closed interval.
    pub nu_bounds: (f64, f64),
    /// Degrees of freedom used until the first update.
    pub nu_start: f64,
    /// Gaussian limit: unit latent weights and no degrees-of-freedom terms.
    pub gaussian: bool,
    pub seed: u64,
    pub rho: RhoConvention,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            init: InitMethod::KMeans,
            n_init: None,
            max_iter: 200,
            epsilon: 1e-2,
            dim_method: DimMethod::Scree,
            scree_threshold: 0.2,
            nu_bounds: (1.0, 200.0),
            nu_start: 50.0,
            gaussian: false,
            seed: 0,
            rho: RhoConvention::Standard,
        }
    }
}

impl FitConfig {
    pub fn restarts(&self) -> usize {
        self.n_init.unwrap_or(match self.init {
            InitMethod::KMeans => 1,
            InitMethod::Random => 10,
        })
    }

    pub fn count_options(&self) -> CountOptions {
        CountOptions {
            rho: self.rho,
            gaussian: self.gaussian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.max_iter < 3 {
            return fail(format!("max_iter = {} but at least 3 are needed", self.max_iter));
        }
        if self.restarts() == 0 {
            return fail("n_init must be positive".into());
        }
        if !(self.epsilon > 0.0) {
            return fail(format!("epsilon = {} must be positive", self.epsilon));
        }
        if !(self.scree_threshold > 0.0 && self.scree_threshold < 1.0) {
            return fail(format!("scree threshold {} outside (0, 1)", self.scree_threshold));
        }
        let (lo, hi) = self.nu_bounds;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return fail(format!("degrees-of-freedom bounds ({lo}, {hi}) are not an interval in (0, inf)"));
        }
        if !(self.nu_start > 0.0) {
            return fail(format!("starting degrees of freedom {} must be positive", self.nu_start));
        }
        Ok(())
    }
}

/// Parameters of one mixture component.
///
/// `orient` holds all `p` eigenvectors; the first `d` span the component's
/// subspace. `a` holds the `d` subspace variances and `b` the common variance
/// of the remaining `p - d` directions. `nu` is infinite in Gaussian mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentState {
    pub pi: f64,
    pub mu: DVector<f64>,
    pub orient: DMatrix<f64>,
    pub a: Vec<f64>,
    pub b: f64,
    pub d: usize,
    pub nu: f64,
}

impl ComponentState {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn is_gaussian(&self) -> bool {
        self.nu.is_infinite()
    }

    /// `D diag(a_1..a_d, b..b) D'`.
    pub fn covariance(&self) -> SymMatrix {
        let p = self.dim();
        let diag = DVector::from_fn(p, |j, _| if j < self.d { self.a[j] } else { self.b });
        let m = &self.orient * DMatrix::from_diagonal(&diag) * self.orient.transpose();
        SymMatrix::symmetrized(m)
    }

    /// Checks shapes, ranges and orthonormality of the frame.
    pub fn validate(&self) -> Result<()> {
        let p = self.dim();
        if self.orient.shape() != (p, p) {
            return Err(Error::Shape(format!("orientation is {:?}, expected {p}x{p}", self.orient.shape())));
        }
        if self.d < 1 || self.d >= p || self.a.len() != self.d {
            return Err(Error::Dimension(format!("d = {} with {} subspace variances, p = {p}", self.d, self.a.len())));
        }
        if !(self.pi > 0.0 && self.pi <= 1.0) {
            return Err(Error::ConstraintViolation(format!("proportion {}", self.pi)));
        }
        if !(self.b > 0.0) || self.a.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::ConstraintViolation("variances must be positive".into()));
        }
        if !(self.nu > 0.0) {
            return Err(Error::ConstraintViolation(format!("degrees of freedom {}", self.nu)));
        }
        let gram = self.orient.tr_mul(&self.orient);
        if (gram - DMatrix::identity(p, p)).amax() > 1e-10 {
            return Err(Error::ConstraintViolation("orientation is not orthonormal".into()));
        }
        Ok(())
    }
}

/// Posterior memberships `z` and latent weights `u`, both `n x G`.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub z: DMatrix<f64>,
    pub u: DMatrix<f64>,
}

impl Responsibilities {
    /// Hard memberships with unit latent weights.
    pub fn from_labels(labels: &[usize], groups: usize) -> Self {
        let n = labels.len();
        let mut z = DMatrix::zeros(n, groups);
        for (i, &g) in labels.iter().enumerate() {
            z[(i, g)] = 1.0;
        }
        Responsibilities {
            z,
            u: DMatrix::from_element(n, groups, 1.0),
        }
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn groups(&self) -> usize {
        self.z.ncols()
    }

    /// `n_g = sum_i z_ig`.
    pub fn group_sizes(&self) -> Vec<f64> {
        (0..self.groups()).map(|g| self.z.column(g).sum()).collect()
    }

    /// Row-wise argmax of `z`, ties to the lowest index.
    pub fn labels(&self) -> Vec<usize> {
        argmax_rows(&self.z)
    }

    /// Components whose total membership is below one observation.
    pub fn empty_components(&self) -> Vec<usize> {
        self.group_sizes()
            .iter()
            .enumerate()
            .filter(|(_, &s)| s < 1.0)
            .map(|(g, _)| g)
            .collect()
    }
}

pub(crate) fn argmax_rows(z: &DMatrix<f64>) -> Vec<usize> {
    z.row_iter()
        .map(|row| {
            let mut best = 0;
            for g in 1..row.len() {
                if row[g] > row[best] {
                    best = g;
                }
            }
            best
        })
        .collect()
}

/// Counters collected while fitting.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Runs started, including retries after empty components.
    pub attempts: usize,
    /// Iterations whose degrees-of-freedom update fell back to the old value.
    pub nu_fallbacks: usize,
    /// Covariance steps where the freshly selected dimensions were rejected.
    pub dimension_rejections: usize,
    /// Messages from failed attempts.
    pub failures: Vec<String>,
}

/// Outcome of [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub groups: usize,
    pub states: Vec<ComponentState>,
    pub resp: Responsibilities,
    pub labels: Vec<usize>,
    pub loglik_trace: Vec<f64>,
    pub bic: f64,
    pub n_params: usize,
    pub converged: bool,
    pub iterations: usize,
    pub gaussian: bool,
    pub diagnostics: Diagnostics,
}

impl FitResult {
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("a fit records at least one likelihood")
    }

    pub fn dims(&self) -> Vec<usize> {
        self.states.iter().map(|s| s.d).collect()
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }
}

fn check_data(data: &DMatrix<f64>) -> Result<()> {
    crate::numerics::ensure_finite(data.as_slice(), "data")?;
    if data.ncols() < 2 {
        return Err(Error::Dimension(format!("p = {} but at least 2 variables are needed", data.ncols())));
    }
    Ok(())
}

/// Fits `spec` with `groups` components by ECM.
///
/// The best of `config.restarts()` starts (by final log-likelihood) is
/// returned. A start that empties a component is retried up to five times
/// from random partitions with fresh seeds.
pub fn fit(data: &DMatrix<f64>, spec: &ModelSpec, groups: usize, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    check_data(data)?;
    if groups == 0 {
        return Err(Error::Infeasible("G must be positive".into()));
    }
    if data.nrows() <= groups {
        return Err(Error::Infeasible(format!("n = {} must exceed G = {groups}", data.nrows())));
    }

    const RETRIES: u64 = 5;
    let mut diagnostics = Diagnostics::default();
    let mut best: Option<FitResult> = None;
    for restart in 0..config.restarts() as u64 {
        let base = derive_seed(config.seed, restart);
        for attempt in 0..=RETRIES {
            diagnostics.attempts += 1;
            let mut run_config = config.clone();
            run_config.seed = base;
            if attempt > 0 {
                run_config.seed = derive_seed(base, attempt);
                run_config.init = InitMethod::Random;
            }
            match run_once(data, spec, groups, &run_config) {
                Ok(result) => {
                    diagnostics.nu_fallbacks += result.diagnostics.nu_fallbacks;
                    diagnostics.dimension_rejections += result.diagnostics.dimension_rejections;
                    if best.as_ref().is_none_or(|b| result.loglik() > b.loglik()) {
                        best = Some(result);
                    }
                    break;
                }
                Err(e) if e.is_numerical() => {
                    diagnostics.failures.push(format!("start {restart} attempt {attempt}: {e}"));
                }
                Err(e) => return Err(e),
            }
        }
    }
    match best {
        Some(mut result) => {
            result.diagnostics = diagnostics;
            Ok(result)
        }
        None => Err(Error::FitFailed {
            model: spec.code().to_string(),
            groups,
            diagnostics: diagnostics.failures.join("; "),
        }),
    }
}

fn run_once(data: &DMatrix<f64>, spec: &ModelSpec, groups: usize, config: &FitConfig) -> Result<FitResult> {
    let start = initialize(data, groups, config)?;
    let mut diagnostics = Diagnostics::default();
    let mut states = cmstep::cm_step_detailed(data, &start, spec, None, config, &mut diagnostics)?;

    let mut trace = Vec::new();
    let mut converged = false;
    let resp = loop {
        let expectation = e_step(data, &states)?;
        if let Some(&g) = expectation.resp.empty_components().first() {
            return Err(Error::DegenerateComponent {
                component: g,
                reason: format!("membership fell to {:.3}", expectation.resp.group_sizes()[g]),
            });
        }
        if !expectation.loglik.is_finite() {
            return Err(Error::NumericInput("log-likelihood is not finite".into()));
        }
        trace.push(expectation.loglik);
        let k = trace.len();
        if k >= 3 && aitken_check([trace[k - 3], trace[k - 2], trace[k - 1]], config.epsilon).converged {
            converged = true;
            break expectation.resp;
        }
        if k >= config.max_iter {
            break expectation.resp;
        }
        states = cmstep::cm_step_detailed(data, &expectation.resp, spec, Some(&states), config, &mut diagnostics)?;
    };

    let p = data.ncols();
    let dims = DimensionAssignment::new(states.iter().map(|s| s.d).collect(), p)?;
    let n_params = total_param_count(spec, groups, p, &dims, config.count_options())?;
    let loglik = *trace.last().expect("loop runs at least once");
    Ok(FitResult {
        spec: *spec,
        groups,
        labels: resp.labels(),
        resp,
        states,
        bic: bic(loglik, n_params, data.nrows()),
        n_params,
        converged,
        iterations: trace.len(),
        loglik_trace: trace,
        gaussian: config.gaussian,
        diagnostics,
    })
}

/// Applies the fitted E-step to new rows: hard labels and memberships.
pub fn predict(result: &FitResult, newdata: &DMatrix<f64>) -> Result<(Vec<usize>, DMatrix<f64>)> {
    if newdata.ncols() != result.dim() {
        return Err(Error::Shape(format!(
            "model was fitted on {} variables, data has {}",
            result.dim(),
            newdata.ncols()
        )));
    }
    crate::numerics::ensure_finite(newdata.as_slice(), "data")?;
    let expectation = e_step(newdata, &result.states)?;
    Ok((expectation.resp.labels(), expectation.resp.z))
}

#[cfg(test)]
mod tests;
