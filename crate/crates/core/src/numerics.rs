//! Numerical kernels shared by the density, fitting and sampling code.
//!
//! Everything here is a pure function over immutable inputs.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Absolute tolerance used when checking a matrix for symmetry.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Smallest admissible eigenvalue, relative to the largest, for a matrix to
/// count as positive definite.
pub const PD_REL_THRESHOLD: f64 = 1e-12;

/// A finite, symmetric square matrix.
///
/// Construction symmetrizes the input as `(M + M') / 2` once the asymmetry
/// check has passed, so the stored matrix is exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Shape(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::Shape("empty matrix".into()));
        }
        ensure_finite(m.as_slice(), "symmetric matrix")?;
        let asym = max_asymmetry(&m);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(Self::symmetrized(m))
    }

    /// Wraps an accumulated matrix that is symmetric up to rounding, without
    /// the absolute asymmetry check.
    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(p: usize) -> Self {
        SymMatrix(DMatrix::identity(p, p))
    }

    pub fn from_diagonal(values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Checks positive definiteness against [`PD_REL_THRESHOLD`].
    pub fn ensure_positive_definite(&self) -> Result<()> {
        let eig = sym_eigen(self)?;
        let largest = eig.values[0];
        let smallest = eig.values[eig.values.len() - 1];
        if largest <= 0.0 || smallest <= PD_REL_THRESHOLD * largest {
            return Err(Error::SingularMatrix(format!(
                "eigenvalue range [{smallest:e}, {largest:e}]"
            )));
        }
        Ok(())
    }

    /// Cholesky factor of a positive definite matrix.
    pub fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        self.ensure_positive_definite()?;
        Cholesky::new(self.0.clone())
            .ok_or_else(|| Error::SingularMatrix("Cholesky factorization failed".into()))
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let p = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..p {
        for j in (i + 1)..p {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericInput(format!("{what} contains NaN or infinity")))
    }
}

/// Eigenvalues in non-increasing order with their orthonormal eigenvectors
/// stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// Symmetric eigendecomposition with a fixed ordering and sign convention.
///
/// Values are sorted descending. Each eigenvector is flipped so that its
/// largest-magnitude entry (first one on ties) is non-negative.
pub fn sym_eigen(m: &SymMatrix) -> Result<EigenPair> {
    ensure_finite(m.as_matrix().as_slice(), "eigen input")?;
    let p = m.dim();
    let decomposition = SymmetricEigen::new(m.as_matrix().clone());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| {
        decomposition.eigenvalues[j]
            .total_cmp(&decomposition.eigenvalues[i])
            .then(i.cmp(&j))
    });

    let mut values = DVector::zeros(p);
    let mut vectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = decomposition.eigenvalues[src];
        let column = decomposition.eigenvectors.column(src);
        let mut pivot = 0;
        for r in 1..p {
            if column[r].abs() > column[pivot].abs() {
                pivot = r;
            }
        }
        let sign = if column[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..p {
            vectors[(r, dst)] = sign * column[r];
        }
    }
    Ok(EigenPair { values, vectors })
}

/// Natural logarithm of the Gamma function for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain {
            function: "log_gamma",
            value: x,
        });
    }
    Ok(statrs::function::gamma::ln_gamma(x))
}

/// Digamma function (derivative of [`log_gamma`]) for `x > 0`.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain {
            function: "digamma",
            value: x,
        });
    }
    Ok(statrs::function::gamma::digamma(x))
}

/// Squared Mahalanobis distance `(x - mu)' sigma^{-1} (x - mu)`.
pub fn mahalanobis(x: &DVector<f64>, mu: &DVector<f64>, sigma: &SymMatrix) -> Result<f64> {
    if x.len() != mu.len() || x.len() != sigma.dim() {
        return Err(Error::Shape(format!(
            "x has {} entries, mu {}, sigma is {}x{}",
            x.len(),
            mu.len(),
            sigma.dim(),
            sigma.dim()
        )));
    }
    let chol = sigma.cholesky()?;
    Ok(mahalanobis_with(&chol, x, mu))
}

/// Mahalanobis distance from a precomputed Cholesky factor.
pub(crate) fn mahalanobis_with(chol: &Cholesky<f64, Dyn>, x: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    let diff = x - mu;
    let solved = chol
        .l_dirty()
        .solve_lower_triangular(&diff)
        .expect("Cholesky factor has a non-zero diagonal");
    solved.norm_squared()
}

/// `sum_i w_i (x_i - mu)(x_i - mu)' / normalizer` over the rows of `data`.
pub fn weighted_scatter(
    data: &DMatrix<f64>,
    weights: &[f64],
    mu: &DVector<f64>,
    normalizer: f64,
) -> Result<SymMatrix> {
    let (n, p) = data.shape();
    if weights.len() != n || mu.len() != p {
        return Err(Error::Shape(format!(
            "data is {n}x{p}, weights has {} entries, mu has {}",
            weights.len(),
            mu.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::NumericInput("weights must be finite and non-negative".into()));
    }
    if !weights.iter().any(|&w| w > 0.0) {
        return Err(Error::DegenerateComponent {
            component: 0,
            reason: "all scatter weights are zero".into(),
        });
    }
    if !(normalizer > 0.0) {
        return Err(Error::DegenerateComponent {
            component: 0,
            reason: format!("scatter normalizer {normalizer} is not positive"),
        });
    }
    let mut scaled = DMatrix::zeros(n, p);
    for i in 0..n {
        let root = weights[i].sqrt();
        for j in 0..p {
            scaled[(i, j)] = root * (data[(i, j)] - mu[j]);
        }
    }
    let scatter = scaled.tr_mul(&scaled) / normalizer;
    Ok(SymMatrix::symmetrized(scatter))
}

/// Numerically stable `log(sum(exp(values)))`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
