//! Multivariate-t densities, mixture likelihoods and sampling.
//!
//! Sampling uses the normal variance-mean mixture representation: draw a
//! precision weight `w ~ Gamma(nu/2, rate nu/2)` and return
//! `mu + L z / sqrt(w)` where `L L' = Sigma` and `z` is standard normal.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{self, log_gamma, log_sum_exp, SymMatrix};

/// Location, scale and degrees of freedom of a multivariate-t component.
#[derive(Debug, Clone, PartialEq)]
pub struct TParams {
    pub mu: DVector<f64>,
    pub sigma: SymMatrix,
    pub nu: f64,
}

impl TParams {
    pub fn new(mu: DVector<f64>, sigma: SymMatrix, nu: f64) -> Result<Self> {
        if mu.len() != sigma.dim() {
            return Err(Error::Shape(format!(
                "mu has {} entries but sigma is {}x{}",
                mu.len(),
                sigma.dim(),
                sigma.dim()
            )));
        }
        numerics::ensure_finite(mu.as_slice(), "location")?;
        if !(nu > 0.0) || nu.is_nan() {
            return Err(Error::Domain {
                function: "degrees of freedom",
                value: nu,
            });
        }
        sigma.ensure_positive_definite()?;
        Ok(TParams { mu, sigma, nu })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Mixing proportions paired with their components.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    proportions: Vec<f64>,
    components: Vec<TParams>,
}

impl MixtureParams {
    pub fn new(proportions: Vec<f64>, components: Vec<TParams>) -> Result<Self> {
        if proportions.is_empty() || proportions.len() != components.len() {
            return Err(Error::Shape(format!(
                "{} proportions for {} components",
                proportions.len(),
                components.len()
            )));
        }
        if proportions.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::ConstraintViolation(
                "mixing proportions must be strictly positive".into(),
            ));
        }
        let total: f64 = proportions.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::ConstraintViolation(format!(
                "mixing proportions sum to {total}"
            )));
        }
        let p = components[0].dim();
        if components.iter().any(|c| c.dim() != p) {
            return Err(Error::Shape("components disagree on dimension".into()));
        }
        Ok(MixtureParams {
            proportions,
            components,
        })
    }

    pub fn proportions(&self) -> &[f64] {
        &self.proportions
    }

    pub fn components(&self) -> &[TParams] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }
}

/// Density terms that depend only on the parameters.
struct Prepared {
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
    nu: f64,
    p: f64,
}

impl Prepared {
    fn new(params: &TParams) -> Result<Self> {
        let chol = params.sigma.cholesky()?;
        let p = params.dim() as f64;
        let nu = params.nu;
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let log_norm = log_gamma((nu + p) / 2.0)? - log_gamma(nu / 2.0)?
            - 0.5 * log_det
            - 0.5 * p * (PI * nu).ln();
        Ok(Prepared { chol, log_norm, nu, p })
    }

    fn log_density(&self, x: &DVector<f64>, mu: &DVector<f64>) -> f64 {
        let delta = numerics::mahalanobis_with(&self.chol, x, mu);
        self.log_norm - 0.5 * (self.nu + self.p) * (delta / self.nu).ln_1p()
    }
}

/// Log-density of the multivariate-t distribution at `x`.
pub fn t_log_density(x: &DVector<f64>, params: &TParams) -> Result<f64> {
    if x.len() != params.dim() {
        return Err(Error::Shape(format!(
            "point has {} entries, distribution has dimension {}",
            x.len(),
            params.dim()
        )));
    }
    Ok(Prepared::new(params)?.log_density(x, &params.mu))
}

/// `sum_i log sum_g pi_g f_t(x_i | theta_g)` over the rows of `data`.
pub fn mixture_log_likelihood(data: &DMatrix<f64>, params: &MixtureParams) -> Result<f64> {
    if data.ncols() != params.dim() {
        return Err(Error::Shape(format!(
            "data has {} columns, mixture has dimension {}",
            data.ncols(),
            params.dim()
        )));
    }
    let prepared = params
        .components
        .iter()
        .map(Prepared::new)
        .collect::<Result<Vec<_>>>()?;
    let log_pi: Vec<f64> = params.proportions.iter().map(|p| p.ln()).collect();
    let mut terms = vec![0.0; prepared.len()];
    let mut total = 0.0;
    for row in data.row_iter() {
        let x = row.transpose();
        for (g, prep) in prepared.iter().enumerate() {
            terms[g] = log_pi[g] + prep.log_density(&x, &params.components[g].mu);
        }
        total += log_sum_exp(&terms);
    }
    Ok(total)
}

struct Sampler {
    lower: DMatrix<f64>,
    gamma: Gamma<f64>,
}

impl Sampler {
    fn new(params: &TParams) -> Result<Self> {
        let lower = params.sigma.cholesky()?.unpack();
        let half = params.nu / 2.0;
        let gamma = Gamma::new(half, 1.0 / half).map_err(|_| Error::Domain {
            function: "gamma sampler",
            value: params.nu,
        })?;
        Ok(Sampler { lower, gamma })
    }

    fn draw_into<R: Rng>(&self, rng: &mut R, mu: &DVector<f64>, out: &mut [f64]) {
        let p = mu.len();
        let w = self.gamma.sample(rng);
        let z = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
        let y = &self.lower * z;
        let scale = 1.0 / w.sqrt();
        for j in 0..p {
            out[j] = mu[j] + scale * y[j];
        }
    }
}

/// Draws `n` i.i.d. rows from a multivariate-t distribution.
pub fn t_sample(params: &TParams, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::Infeasible("sample size must be positive".into()));
    }
    let sampler = Sampler::new(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = params.dim();
    let mut out = DMatrix::zeros(n, p);
    let mut row = vec![0.0; p];
    for i in 0..n {
        sampler.draw_into(&mut rng, &params.mu, &mut row);
        for j in 0..p {
            out[(i, j)] = row[j];
        }
    }
    Ok(out)
}

/// Draws `n` labelled rows from a mixture. Labels are 0-based component indices.
pub fn mixture_sample(params: &MixtureParams, n: usize, seed: u64) -> Result<(DMatrix<f64>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::Infeasible("sample size must be positive".into()));
    }
    let samplers = params
        .components
        .iter()
        .map(Sampler::new)
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = params.dim();
    let mut out = DMatrix::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    let mut row = vec![0.0; p];
    for i in 0..n {
        let g = draw_label(&mut rng, &params.proportions);
        samplers[g].draw_into(&mut rng, &params.components[g].mu, &mut row);
        for j in 0..p {
            out[(i, j)] = row[j];
        }
        labels.push(g);
    }
    Ok((out, labels))
}

fn draw_label<R: Rng>(rng: &mut R, proportions: &[f64]) -> usize {
    let target: f64 = rng.random();
    let mut acc = 0.0;
    for (g, &p) in proportions.iter().enumerate() {
        acc += p;
        if target < acc {
            return g;
        }
    }
    proportions.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    fn scalar(mu: f64, var: f64, nu: f64) -> TParams {
        TParams::new(
            DVector::from_vec(vec![mu]),
            SymMatrix::from_diagonal(&[var]).unwrap(),
            nu,
        )
        .unwrap()
    }

    #[test]
    fn cauchy_at_mode() {
        let v = t_log_density(&DVector::from_vec(vec![0.0]), &scalar(0.0, 1.0, 1.0)).unwrap();
        assert!((v - (1.0 / PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn bivariate_nu2_at_mode() {
        let params = TParams::new(DVector::zeros(2), SymMatrix::identity(2), 2.0).unwrap();
        let v = t_log_density(&DVector::zeros(2), &params).unwrap();
        assert!((v - (1.0 / (2.0 * PI)).ln()).abs() < 1e-14);
    }

    #[test]
    fn matches_high_precision_reference() {
        // Reference computed with 50-digit arithmetic.
        let sigma = SymMatrix::new(dmatrix![
            2.0, 0.3, -0.2, 0.1;
            0.3, 1.5, 0.4, 0.0;
            -0.2, 0.4, 1.2, -0.3;
            0.1, 0.0, -0.3, 0.9
        ])
        .unwrap();
        let params = TParams::new(DVector::from_vec(vec![0.1, -0.4, 1.5, -0.6]), sigma, 3.7).unwrap();
        let x = DVector::from_vec(vec![0.7, -1.3, 2.1, 0.25]);
        let v = t_log_density(&x, &params).unwrap();
        assert!((v - (-6.052_085_447_052_651_4)).abs() < 1e-10, "{v}");
    }

    #[test]
    fn density_integrates_to_one() {
        for nu in [1.0, 3.0, 30.0] {
            let params = scalar(0.0, 1.0, nu);
            let steps = 400_000;
            let h = 100.0 / steps as f64;
            let mut acc = 0.0;
            for k in 0..=steps {
                let x = -50.0 + k as f64 * h;
                let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
                acc += w * t_log_density(&DVector::from_vec(vec![x]), &params).unwrap().exp();
            }
            acc *= h;
            let tail = 2.0 * (1.0 - StudentsT::new(0.0, 1.0, nu).unwrap().cdf(50.0));
            assert!((acc + tail - 1.0).abs() < 1e-6, "nu={nu}: {acc}");
        }
    }

    #[test]
    fn wrong_dimension_is_shape_error() {
        let params = scalar(0.0, 1.0, 3.0);
        assert!(matches!(
            t_log_density(&DVector::zeros(2), &params),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn single_component_likelihood_is_sum_of_densities() {
        let params = TParams::new(DVector::zeros(2), SymMatrix::identity(2), 4.0).unwrap();
        let data = dmatrix![0.5, 1.0; -2.0, 0.3; 3.0, -1.0];
        let mix = MixtureParams::new(vec![1.0], vec![params.clone()]).unwrap();
        let ll = mixture_log_likelihood(&data, &mix).unwrap();
        let direct: f64 = data
            .row_iter()
            .map(|r| t_log_density(&r.transpose(), &params).unwrap())
            .sum();
        assert_eq!(ll, direct);

        let twin = MixtureParams::new(vec![0.3, 0.7], vec![params.clone(), params]).unwrap();
        assert!((mixture_log_likelihood(&data, &twin).unwrap() - ll).abs() < 1e-12);
    }

    #[test]
    fn likelihood_matches_naive_sum() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = TParams::new(
            DVector::from_vec(vec![0.0, 1.0]),
            SymMatrix::new(dmatrix![1.5, 0.2; 0.2, 0.8]).unwrap(),
            3.0,
        )
        .unwrap();
        let b = TParams::new(
            DVector::from_vec(vec![2.0, -1.0]),
            SymMatrix::new(dmatrix![0.6, -0.1; -0.1, 1.1]).unwrap(),
            7.5,
        )
        .unwrap();
        let mix = MixtureParams::new(vec![0.4, 0.6], vec![a.clone(), b.clone()]).unwrap();
        let data = DMatrix::from_fn(10, 2, |_, _| rng.random_range(-3.0..3.0));
        let naive: f64 = data
            .row_iter()
            .map(|r| {
                let x = r.transpose();
                (0.4 * t_log_density(&x, &a).unwrap().exp() + 0.6 * t_log_density(&x, &b).unwrap().exp()).ln()
            })
            .sum();
        assert!((mixture_log_likelihood(&data, &mix).unwrap() - naive).abs() < 1e-9);
    }

    #[test]
    fn sampling_is_deterministic() {
        let params = TParams::new(DVector::zeros(3), SymMatrix::identity(3), 4.0).unwrap();
        assert_eq!(t_sample(&params, 50, 1).unwrap(), t_sample(&params, 50, 1).unwrap());
        assert_ne!(t_sample(&params, 50, 1).unwrap(), t_sample(&params, 50, 2).unwrap());
    }

    #[test]
    fn large_nu_sample_covariance_is_identity() {
        let params = TParams::new(DVector::zeros(3), SymMatrix::identity(3), 1e6).unwrap();
        let x = t_sample(&params, 10_000, 17).unwrap();
        let mean = x.row_mean();
        let centered = DMatrix::from_fn(x.nrows(), 3, |i, j| x[(i, j)] - mean[j]);
        let cov = centered.tr_mul(&centered) / (x.nrows() as f64 - 1.0);
        assert!((cov - DMatrix::identity(3, 3)).amax() < 0.1);
    }

    #[test]
    fn scaled_distance_follows_f_distribution() {
        use statrs::distribution::{ContinuousCDF, FisherSnedecor};
        let params = TParams::new(DVector::zeros(2), SymMatrix::identity(2), 3.0).unwrap();
        let x = t_sample(&params, 10_000, 23).unwrap();
        let mut stats: Vec<f64> = x.row_iter().map(|r| r.norm_squared() / 2.0).collect();
        stats.sort_by(f64::total_cmp);
        let median = 0.5 * (stats[4999] + stats[5000]);
        let expected = FisherSnedecor::new(2.0, 3.0).unwrap().inverse_cdf(0.5);
        assert!((median / expected - 1.0).abs() < 0.1, "{median} vs {expected}");
    }

    #[test]
    fn mixture_labels() {
        let c = TParams::new(DVector::zeros(2), SymMatrix::identity(2), 5.0).unwrap();
        let single = MixtureParams::new(vec![1.0], vec![c.clone()]).unwrap();
        let (_, labels) = mixture_sample(&single, 100, 3).unwrap();
        assert!(labels.iter().all(|&l| l == 0));

        let pair = MixtureParams::new(vec![0.5, 0.5], vec![c.clone(), c]).unwrap();
        let n = 10_000;
        let (x, labels) = mixture_sample(&pair, n, 4).unwrap();
        let ones = labels.iter().filter(|&&l| l == 1).count() as f64;
        let bound = 3.0 * (n as f64 / 4.0).sqrt();
        assert!((ones - n as f64 / 2.0).abs() <= bound);
        let (x2, labels2) = mixture_sample(&pair, n, 4).unwrap();
        assert_eq!(x, x2);
        assert_eq!(labels, labels2);
    }

    #[test]
    fn invalid_parameters() {
        assert!(TParams::new(DVector::zeros(1), SymMatrix::identity(1), 0.0).is_err());
        assert!(TParams::new(
            DVector::zeros(2),
            SymMatrix::from_diagonal(&[1.0, 0.0]).unwrap(),
            3.0
        )
        .is_err());
        let c = TParams::new(DVector::zeros(1), SymMatrix::identity(1), 3.0).unwrap();
        assert!(MixtureParams::new(vec![0.5, 0.4], vec![c.clone(), c]).is_err());
    }
}
