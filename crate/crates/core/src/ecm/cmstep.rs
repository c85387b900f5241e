use nalgebra::{DMatrix, DVector};

use super::dims::select_dims;
use super::{ComponentState, Diagnostics, FitConfig, Responsibilities};
use crate::error::{Error, Result};
use crate::model_space::{DimensionAssignment, EigenConstraint, ModelSpec};
use crate::numerics::{digamma, log_gamma, sym_eigen, weighted_scatter, SymMatrix};

/// Eigenvalues below this fraction of the largest one are raised to it.
const EIGEN_FLOOR_REL: f64 = 1e-8;

/// First conditional step: `pi_g = n_g / n` and the `z u`-weighted means.
pub fn update_pi_mu(data: &DMatrix<f64>, resp: &Responsibilities) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    let (n, p) = data.shape();
    if resp.n() != n {
        return Err(Error::Shape(format!("{} responsibility rows for {n} observations", resp.n())));
    }
    let mut pi = Vec::with_capacity(resp.groups());
    let mut mu = Vec::with_capacity(resp.groups());
    for g in 0..resp.groups() {
        let n_g = resp.z.column(g).sum();
        let mut total = 0.0;
        let mut acc = DVector::zeros(p);
        for i in 0..n {
            let w = resp.z[(i, g)] * resp.u[(i, g)];
            if w != 0.0 {
                total += w;
                acc += data.row(i).transpose() * w;
            }
        }
        if !(total > 0.0) {
            return Err(Error::DegenerateComponent {
                component: g,
                reason: "no weighted membership".into(),
            });
        }
        pi.push(n_g / n as f64);
        mu.push(acc / total);
    }
    Ok((pi, mu))
}

/// Result of [`update_nu`].
#[derive(Debug, Clone, PartialEq)]
pub struct NuUpdate {
    /// One value per group; identical entries when shared.
    pub values: Vec<f64>,
    /// True when a non-finite intermediate forced a fallback to the old value.
    pub flagged: bool,
}

/// Terms of the expected complete-data log-likelihood that involve `nu`.
struct NuObjective {
    weight: f64,
    /// `sum z (E[log u] - u)` with `E[log u]` taken under the old `nu`.
    slope: f64,
}

impl NuObjective {
    fn value(&self, nu: f64) -> f64 {
        let half = nu / 2.0;
        let lg = log_gamma(half).unwrap_or(f64::INFINITY);
        self.weight * (half * half.ln() - lg) + half * self.slope
    }
}

/// Closed-form approximate root of `log(nu/2) - digamma(nu/2) = k`, corrected
/// with the digamma approximation error at the previous value.
fn closed_form_nu(k: f64, nu_old: f64) -> Result<f64> {
    let ek = k.exp();
    let correction = digamma(nu_old / 2.0)?.exp() + (1.0 - nu_old) / 2.0;
    Ok((-ek + 2.0 * ek * correction) / (1.0 - ek))
}

fn update_one(weight: f64, raw: f64, nu_old: f64, p: f64, bounds: (f64, f64)) -> (f64, bool) {
    let y = (nu_old + p) / 2.0;
    let (Ok(dg), true) = (digamma(y), weight > 0.0) else {
        return (nu_old, true);
    };
    let k = -1.0 - raw / weight - dg + y.ln();
    let candidate = match closed_form_nu(k, nu_old) {
        Ok(v) if v.is_finite() => v,
        // k -> 0 sends the root to infinity.
        Ok(v) if v == f64::INFINITY || (k.abs() < 1e-300) => bounds.1,
        _ => return (nu_old, true),
    };
    let candidate = candidate.clamp(bounds.0, bounds.1);

    let objective = NuObjective {
        weight,
        slope: raw + weight * (dg - y.ln()),
    };
    let base = objective.value(nu_old);
    let mut step = candidate - nu_old;
    for _ in 0..40 {
        let trial = nu_old + step;
        if objective.value(trial) >= base {
            return (trial, false);
        }
        step *= 0.5;
    }
    (nu_old, false)
}

/// Degrees-of-freedom update from the closed-form approximation.
///
/// Unshared: group `g` uses its own terms normalized by `n_g`. Shared: terms
/// are pooled over all groups and normalized by `n`. Results are clamped to
/// `bounds`, and a step that lowers the expected complete-data
/// log-likelihood is halved back toward the old value.
pub fn update_nu(resp: &Responsibilities, states: &[ComponentState], shared: bool, bounds: (f64, f64)) -> Result<NuUpdate> {
    let groups = resp.groups();
    if states.len() != groups {
        return Err(Error::Shape(format!("{} states for {groups} groups", states.len())));
    }
    let p = states[0].dim() as f64;
    let group_terms: Vec<(f64, f64)> = (0..groups)
        .map(|g| {
            let mut weight = 0.0;
            let mut raw = 0.0;
            for i in 0..resp.n() {
                let z = resp.z[(i, g)];
                let u = resp.u[(i, g)];
                weight += z;
                raw += z * (u.ln() - u);
            }
            (weight, raw)
        })
        .collect();

    if shared {
        let weight: f64 = group_terms.iter().map(|t| t.0).sum();
        let raw: f64 = group_terms.iter().map(|t| t.1).sum();
        let (nu, flagged) = update_one(weight, raw, states[0].nu, p, bounds);
        Ok(NuUpdate {
            values: vec![nu; groups],
            flagged,
        })
    } else {
        let mut flagged = false;
        let values = group_terms
            .iter()
            .zip(states)
            .map(|(&(weight, raw), s)| {
                let (nu, f) = update_one(weight, raw, s.nu, p, bounds);
                flagged |= f;
                nu
            })
            .collect();
        Ok(NuUpdate { values, flagged })
    }
}

struct GroupScatter {
    size: f64,
    scatter: SymMatrix,
}

/// Covariance parameters of all groups.
#[derive(Debug, Clone)]
struct Covariance {
    orient: Vec<DMatrix<f64>>,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    dims: Vec<usize>,
}

impl Covariance {
    fn from_states(states: &[ComponentState]) -> Self {
        Covariance {
            orient: states.iter().map(|s| s.orient.clone()).collect(),
            a: states.iter().map(|s| s.a.clone()).collect(),
            b: states.iter().map(|s| s.b).collect(),
            dims: states.iter().map(|s| s.d).collect(),
        }
    }

    /// `-1/2 sum_g n_g (log|Sigma_g| + tr(Sigma_g^{-1} S_g))`.
    fn expected_loglik(&self, scatters: &[GroupScatter]) -> f64 {
        scatters
            .iter()
            .enumerate()
            .map(|(g, gs)| {
                let s = gs.scatter.as_matrix();
                let d = self.dims[g];
                let p = s.nrows();
                let lead = self.orient[g].columns(0, d);
                let projected = s * lead;
                let mut log_det = (p - d) as f64 * self.b[g].ln();
                let mut inside = 0.0;
                let mut captured = 0.0;
                for j in 0..d {
                    let v = lead.column(j).dot(&projected.column(j));
                    log_det += self.a[g][j].ln();
                    inside += v / self.a[g][j];
                    captured += v;
                }
                let outside = (s.trace() - captured) / self.b[g];
                -0.5 * gs.size * (log_det + inside + outside)
            })
            .sum()
    }
}

/// Orientation and per-group variance spectra along it.
struct Frames {
    orient: Vec<DMatrix<f64>>,
    /// Variance of group `g` along each column of its frame.
    spectra: Vec<Vec<f64>>,
    /// Spectra handed to dimension selection.
    selection: Vec<Vec<f64>>,
}

fn frames(scatters: &[GroupScatter], spec: &ModelSpec) -> Result<Frames> {
    let n: f64 = scatters.iter().map(|s| s.size).sum();
    if spec.orientation.is_shared() {
        let p = scatters[0].scatter.dim();
        let mut pooled = DMatrix::zeros(p, p);
        for gs in scatters {
            pooled += gs.scatter.as_matrix() * (gs.size / n);
        }
        let eig = sym_eigen(&SymMatrix::symmetrized(pooled))?;
        let spectra = scatters
            .iter()
            .map(|gs| {
                let sd = gs.scatter.as_matrix() * &eig.vectors;
                (0..p).map(|j| eig.vectors.column(j).dot(&sd.column(j))).collect()
            })
            .collect();
        let common: Vec<f64> = eig.values.iter().copied().collect();
        Ok(Frames {
            orient: vec![eig.vectors; scatters.len()],
            spectra,
            selection: vec![common; scatters.len()],
        })
    } else {
        let mut orient = Vec::with_capacity(scatters.len());
        let mut spectra = Vec::with_capacity(scatters.len());
        for gs in scatters {
            let eig = sym_eigen(&gs.scatter)?;
            spectra.push(eig.values.iter().copied().collect::<Vec<f64>>());
            orient.push(eig.vectors);
        }
        Ok(Frames {
            orient,
            selection: spectra.clone(),
            spectra,
        })
    }
}

fn floor_all(values: &mut [Vec<f64>], floor: f64) {
    for v in values.iter_mut().flat_map(|s| s.iter_mut()) {
        *v = v.max(floor);
    }
}

/// Maximizes the covariance part of the expected complete-data
/// log-likelihood for the constraint pattern of `spec`, with dimensions
/// either selected afresh or fixed by `fixed_dims`.
fn fit_covariance(
    scatters: &[GroupScatter],
    spec: &ModelSpec,
    config: &FitConfig,
    fixed_dims: Option<&[usize]>,
) -> Result<Covariance> {
    let groups = scatters.len();
    let p = scatters[0].scatter.dim();
    let mut frames = frames(scatters, spec)?;
    let top = frames
        .selection
        .iter()
        .chain(frames.spectra.iter())
        .map(|s| s[0])
        .fold(0.0f64, f64::max);
    if !(top > 0.0) {
        return Err(Error::DegenerateComponent {
            component: 0,
            reason: "scatter matrices are zero".into(),
        });
    }
    let floor = top * EIGEN_FLOOR_REL;
    let raw_spectra = frames.spectra.clone();
    floor_all(&mut frames.spectra, floor);
    floor_all(&mut frames.selection, floor);

    let sizes: Vec<f64> = scatters.iter().map(|s| s.size).collect();
    let dims = match fixed_dims {
        Some(d) => DimensionAssignment::new(d.to_vec(), p)?,
        None => select_dims(&frames.selection, &sizes, spec, config)?,
    };
    let dims = dims.dims().to_vec();
    let spectra = &frames.spectra;
    let n: f64 = sizes.iter().sum();

    let retained = |g: usize| spectra[g][..dims[g]].iter().sum::<f64>();
    let trailing = |g: usize| spectra[g][dims[g]..].iter().sum::<f64>();

    let a: Vec<Vec<f64>> = match spec.a {
        EigenConstraint::Free => (0..groups).map(|g| spectra[g][..dims[g]].to_vec()).collect(),
        EigenConstraint::AcrossDimensions => (0..groups)
            .map(|g| vec![retained(g) / dims[g] as f64; dims[g]])
            .collect(),
        EigenConstraint::AcrossGroups => {
            let d = dims[0];
            let shared: Vec<f64> = (0..d)
                .map(|j| (0..groups).map(|g| sizes[g] * spectra[g][j]).sum::<f64>() / n)
                .collect();
            vec![shared; groups]
        }
        EigenConstraint::Common => {
            let num: f64 = (0..groups).map(|g| sizes[g] * retained(g)).sum();
            let den: f64 = (0..groups).map(|g| sizes[g] * dims[g] as f64).sum();
            let value = num / den;
            (0..groups).map(|g| vec![value; dims[g]]).collect()
        }
    };
    let b: Vec<f64> = if spec.b.is_shared() {
        let num: f64 = (0..groups).map(|g| sizes[g] * trailing(g)).sum();
        let den: f64 = (0..groups).map(|g| sizes[g] * (p - dims[g]) as f64).sum();
        vec![(num / den).max(floor); groups]
    } else {
        (0..groups)
            .map(|g| {
                let raw = raw_spectra[g][dims[g]..].iter().sum::<f64>() / (p - dims[g]) as f64;
                if raw <= floor {
                    return Err(Error::DegenerateComponent {
                        component: g,
                        reason: "no variance outside the subspace".into(),
                    });
                }
                Ok(trailing(g) / (p - dims[g]) as f64)
            })
            .collect::<Result<_>>()?
    };
    let a = a
        .into_iter()
        .map(|v| v.into_iter().map(|x| x.max(floor)).collect())
        .collect();
    Ok(Covariance {
        orient: frames.orient,
        a,
        b,
        dims,
    })
}

/// Both conditional maximization steps.
///
/// Without `previous` the call acts as the first step after initialization:
/// degrees of freedom start at `config.nu_start` and no monotonicity guard
/// is applied.
pub fn cm_step(
    data: &DMatrix<f64>,
    resp: &Responsibilities,
    spec: &ModelSpec,
    previous: Option<&[ComponentState]>,
    config: &FitConfig,
) -> Result<Vec<ComponentState>> {
    cm_step_detailed(data, resp, spec, previous, config, &mut Diagnostics::default())
}

pub(super) fn cm_step_detailed(
    data: &DMatrix<f64>,
    resp: &Responsibilities,
    spec: &ModelSpec,
    previous: Option<&[ComponentState]>,
    config: &FitConfig,
    diagnostics: &mut Diagnostics,
) -> Result<Vec<ComponentState>> {
    let groups = resp.groups();
    if let Some(prev) = previous {
        if prev.len() != groups {
            return Err(Error::Shape(format!("{} previous states for {groups} groups", prev.len())));
        }
    }
    let sizes = resp.group_sizes();
    if let Some(g) = sizes.iter().position(|&s| s < 2.0) {
        return Err(Error::DegenerateComponent {
            component: g,
            reason: format!("membership {:.3} is below two observations", sizes[g]),
        });
    }

    let (pi, mu) = update_pi_mu(data, resp)?;

    let nu: Vec<f64> = if config.gaussian {
        vec![f64::INFINITY; groups]
    } else {
        match previous {
            Some(prev) => {
                let update = update_nu(resp, prev, spec.nu.is_shared(), config.nu_bounds)?;
                if update.flagged {
                    diagnostics.nu_fallbacks += 1;
                }
                update.values
            }
            None => vec![config.nu_start.clamp(config.nu_bounds.0, config.nu_bounds.1); groups],
        }
    };

    let scatters = (0..groups)
        .map(|g| {
            let weights: Vec<f64> = (0..resp.n()).map(|i| resp.z[(i, g)] * resp.u[(i, g)]).collect();
            let scatter = weighted_scatter(data, &weights, &mu[g], sizes[g]).map_err(|e| match e {
                Error::DegenerateComponent { reason, .. } => Error::DegenerateComponent { component: g, reason },
                other => other,
            })?;
            Ok(GroupScatter { size: sizes[g], scatter })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut covariance = fit_covariance(&scatters, spec, config, None)?;
    if let Some(prev) = previous {
        let kept = Covariance::from_states(prev);
        let floor = kept.expected_loglik(&scatters);
        if covariance.expected_loglik(&scatters) < floor {
            diagnostics.dimension_rejections += 1;
            let same_dims = fit_covariance(&scatters, spec, config, Some(&kept.dims))?;
            covariance = if same_dims.expected_loglik(&scatters) >= floor {
                same_dims
            } else {
                kept
            };
        }
    }

    let Covariance { orient, a, b, dims } = covariance;
    Ok(orient
        .into_iter()
        .zip(a)
        .enumerate()
        .map(|(g, (orient, a))| ComponentState {
            pi: pi[g],
            mu: mu[g].clone(),
            orient,
            a,
            b: b[g],
            d: dims[g],
            nu: nu[g],
        })
        .collect())
}
