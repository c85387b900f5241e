//! BIC, Aitken stopping and the (model, G) grid search.

use std::fmt::Write as _;
use std::hash::Hash;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::ecm::{fit, FitConfig, FitResult};
use crate::error::{Error, Result};
use crate::evaluation::ari;
use crate::model_space::{count_params, CountOptions, DimensionAssignment, ModelSpec};
use crate::seeds::derive_seed;

/// `2 loglik - n_params log n`; larger is better.
pub fn bic(loglik: f64, n_params: usize, n: usize) -> f64 {
    2.0 * loglik - n_params as f64 * (n as f64).ln()
}

/// Number of free parameters used as the BIC penalty.
pub fn total_param_count(
    spec: &ModelSpec,
    groups: usize,
    p: usize,
    dims: &DimensionAssignment,
    options: CountOptions,
) -> Result<usize> {
    count_params(spec, groups, p, dims, options)
}

/// Outcome of [`aitken_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AitkenCheck {
    pub converged: bool,
    /// Asymptotic estimate of the log-likelihood; `NaN` when the
    /// acceleration is undefined.
    pub l_inf: f64,
    /// True when the raw-difference rule was used instead.
    pub fallback: bool,
}

/// Aitken-accelerated stopping rule on the last three log-likelihoods
/// `(l_{k-1}, l_k, l_{k+1})`.
///
/// Converged iff `0 <= l_inf - l_k < epsilon`. If the previous increment is
/// not positive, the acceleration is at least one, or anything is
/// non-finite, falls back to `|l_{k+1} - l_k| < epsilon`.
pub fn aitken_check(trace: [f64; 3], epsilon: f64) -> AitkenCheck {
    let [l0, l1, l2] = trace;
    let fallback = || AitkenCheck {
        converged: (l2 - l1).abs() < epsilon,
        l_inf: f64::NAN,
        fallback: true,
    };
    let previous = l1 - l0;
    if !(previous > 0.0) || !trace.iter().all(|v| v.is_finite()) {
        return fallback();
    }
    let a = (l2 - l1) / previous;
    if !(a < 1.0) {
        return fallback();
    }
    let l_inf = l1 + (l2 - l1) / (1.0 - a);
    if !l_inf.is_finite() {
        return fallback();
    }
    let gap = l_inf - l1;
    AitkenCheck {
        converged: (0.0..epsilon).contains(&gap),
        l_inf,
        fallback: false,
    }
}

/// A grid of models and component counts fitted with one configuration.
#[derive(Debug, Clone)]
pub struct GridRequest {
    pub specs: Vec<ModelSpec>,
    pub g_values: Vec<usize>,
    pub config: FitConfig,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
    /// Record wall-clock seconds per cell.
    pub timing: bool,
}

impl GridRequest {
    pub fn new(specs: Vec<ModelSpec>, g_values: Vec<usize>, config: FitConfig) -> Self {
        GridRequest {
            specs,
            g_values,
            config,
            jobs: None,
            timing: false,
        }
    }
}

/// Result of one grid cell.
#[derive(Debug, Clone)]
pub enum CellOutcome {
    Fitted(Box<FitResult>),
    Failed { reason: String },
}

/// One grid cell.
#[derive(Debug, Clone)]
pub struct GridEntry {
    pub spec: ModelSpec,
    pub groups: usize,
    pub outcome: CellOutcome,
    /// ARI against the supplied truth, if any.
    pub ari: Option<f64>,
    pub seconds: Option<f64>,
}

impl GridEntry {
    pub fn fit(&self) -> Option<&FitResult> {
        match &self.outcome {
            CellOutcome::Fitted(r) => Some(r),
            CellOutcome::Failed { .. } => None,
        }
    }

    pub fn bic(&self) -> Option<f64> {
        self.fit().map(|r| r.bic)
    }
}

/// All cells in grid order (specs outer, G inner) and the BIC winner.
#[derive(Debug, Clone)]
pub struct GridResult {
    pub entries: Vec<GridEntry>,
    /// Index into `entries`.
    pub best: usize,
}

impl GridResult {
    pub fn best_entry(&self) -> &GridEntry {
        &self.entries[self.best]
    }

    pub fn best_fit(&self) -> &FitResult {
        self.best_entry().fit().expect("best entry is a successful fit")
    }

    /// Entry indices ordered by decreasing BIC; failures last, ties by grid
    /// order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_by(|&x, &y| {
            let key = |i: usize| self.entries[i].bic().unwrap_or(f64::NEG_INFINITY);
            key(y).total_cmp(&key(x)).then(x.cmp(&y))
        });
        order
    }

    /// Ranked table with columns `model,G,bic,ari,converged,iterations,seconds`.
    /// Missing values are empty; failed cells carry no BIC.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,G,bic,ari,converged,iterations,seconds\n");
        for i in self.ranking() {
            let e = &self.entries[i];
            let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
            let (bic, converged, iterations) = match e.fit() {
                Some(r) => (format!("{}", r.bic), r.converged.to_string(), r.iterations.to_string()),
                None => (String::new(), "failed".to_string(), String::new()),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.spec.code(),
                e.groups,
                bic,
                opt(e.ari),
                converged,
                iterations,
                opt(e.seconds)
            );
        }
        out
    }
}

/// Seed of the cell `(spec, groups)` under base seed `seed`.
pub fn cell_seed(seed: u64, spec: &ModelSpec, groups: usize) -> u64 {
    derive_seed(derive_seed(seed, spec.index() as u64), groups as u64)
}

/// Fits every `(spec, G)` pair independently. Failed cells are recorded and
/// only an all-failed grid is an error. With `truth`, each fit is scored by
/// ARI.
pub fn grid_search<L: Eq + Hash + Sync>(
    data: &DMatrix<f64>,
    request: &GridRequest,
    truth: Option<&[L]>,
) -> Result<GridResult> {
    if request.specs.is_empty() || request.g_values.is_empty() {
        return Err(Error::Config("grid needs at least one model and one G".into()));
    }
    if request.g_values.contains(&0) {
        return Err(Error::Config("G must be positive".into()));
    }
    if let Some(t) = truth {
        if t.len() != data.nrows() {
            return Err(Error::Shape(format!("{} labels for {} observations", t.len(), data.nrows())));
        }
    }
    request.config.validate()?;

    let cells: Vec<(ModelSpec, usize)> = request
        .specs
        .iter()
        .flat_map(|s| request.g_values.iter().map(move |&g| (*s, g)))
        .collect();

    let run = |&(spec, groups): &(ModelSpec, usize)| -> Result<GridEntry> {
        let mut config = request.config.clone();
        config.seed = cell_seed(request.config.seed, &spec, groups);
        let started = Instant::now();
        let outcome = fit(data, &spec, groups, &config);
        let seconds = request.timing.then(|| started.elapsed().as_secs_f64());
        match outcome {
            Ok(result) => {
                let score = match truth {
                    Some(t) => Some(ari(t, &result.labels)?),
                    None => None,
                };
                Ok(GridEntry {
                    spec,
                    groups,
                    outcome: CellOutcome::Fitted(Box::new(result)),
                    ari: score,
                    seconds,
                })
            }
            Err(e) if e.is_numerical() || matches!(e, Error::Infeasible(_)) => Ok(GridEntry {
                spec,
                groups,
                outcome: CellOutcome::Failed { reason: e.to_string() },
                ari: None,
                seconds,
            }),
            Err(e) => Err(e),
        }
    };

    let entries: Vec<GridEntry> = match request.jobs {
        Some(1) => cells.iter().map(run).collect::<Result<_>>()?,
        Some(jobs) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            pool.install(|| cells.par_iter().map(run).collect::<Result<_>>())?
        }
        None => cells.par_iter().map(run).collect::<Result<_>>()?,
    };

    let best = entries
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.bic().map(|b| (i, b)))
        .fold(None, |acc: Option<(usize, f64)>, (i, b)| match acc {
            Some((_, top)) if top >= b => acc,
            _ => Some((i, b)),
        })
        .map(|(i, _)| i)
        .ok_or(Error::GridFailed(entries.len()))?;
    Ok(GridResult { entries, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_space::parse_model;

    #[test]
    fn bic_examples() {
        assert_eq!(bic(0.0, 0, 1), 0.0);
        assert!((bic(-100.0, 10, 7) - (-200.0 - 10.0 * 7f64.ln())).abs() < 1e-12);
        assert!((bic(-50.0, 4, 10) - bic(-50.0, 5, 10) - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn counts_match_rows() {
        let dims = DimensionAssignment::new(vec![2, 2], 4).unwrap();
        let c = |code: &str| total_param_count(&parse_model(code).unwrap(), 2, 4, &dims, CountOptions::default()).unwrap();
        assert_eq!(c("UUUUC"), 28);
        assert_eq!(c("UUUUU") - 1, c("UUUUC"));
        let dims3 = DimensionAssignment::uniform(2, 3, 4).unwrap();
        let gcccc = total_param_count(&parse_model("GCCCC").unwrap(), 3, 4, &dims3, CountOptions::default()).unwrap();
        assert_eq!(gcccc, 14 + 5 + 2 + 3);
    }

    #[test]
    fn aitken_not_converged() {
        let check = aitken_check([0.0, 0.5, 0.75], 0.01);
        assert!(!check.converged && !check.fallback);
        assert!((check.l_inf - 1.0).abs() < 1e-12);
    }

    #[test]
    fn aitken_vanishing_increment() {
        assert!(aitken_check([0.0, 1.0, 1.0 + 1e-9], 0.01).converged);
    }

    #[test]
    fn aitken_flat_history_falls_back() {
        let check = aitken_check([1.0, 1.0, 1.005], 0.01);
        assert!(check.fallback && check.converged);
        assert!(!aitken_check([1.0, 1.0, 2.0], 0.01).converged);
    }

    #[test]
    fn csv_ranks_by_bic() {
        let spec = parse_model("UUUUU").unwrap();
        let failed = |g| GridEntry {
            spec,
            groups: g,
            outcome: CellOutcome::Failed { reason: "x".into() },
            ari: None,
            seconds: None,
        };
        let result = GridResult {
            entries: vec![failed(1), failed(2)],
            best: 0,
        };
        let csv = result.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("UUUUU,1,,,failed"));
    }
}
