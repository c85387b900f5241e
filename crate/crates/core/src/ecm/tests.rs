use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::evaluation::ari;
use crate::model_space::parse_model;
use crate::numerics::sym_eigen;
use crate::tdist::{mixture_sample, t_log_density, MixtureParams, TParams};

fn random_orthonormal(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    m.qr().q()
}

fn random_state(rng: &mut ChaCha8Rng, p: usize, pi: f64) -> ComponentState {
    let d = rng.random_range(1..p);
    let b = rng.random_range(0.1..1.0);
    let mut a: Vec<f64> = (0..d).map(|_| b + rng.random_range(0.1..5.0)).collect();
    a.sort_by(|x, y| y.total_cmp(x));
    ComponentState {
        pi,
        mu: DVector::from_fn(p, |_, _| rng.random_range(-3.0..3.0)),
        orient: random_orthonormal(rng, p),
        a,
        b,
        d,
        nu: rng.random_range(1.0..30.0),
    }
}

fn dense_log_density(x: &DVector<f64>, s: &ComponentState) -> f64 {
    let params = TParams::new(s.mu.clone(), s.covariance(), s.nu).unwrap();
    t_log_density(x, &params).unwrap()
}

fn two_blobs(seed: u64, n: usize) -> (DMatrix<f64>, Vec<usize>) {
    let p = 4;
    let comp = |shift: f64, nu: f64| {
        let mut mu = DVector::zeros(p);
        mu[0] = shift;
        TParams::new(mu, SymMatrix::from_diagonal(&[1.0, 2.0, 0.3, 0.2]).unwrap(), nu).unwrap()
    };
    let mix = MixtureParams::new(vec![0.5, 0.5], vec![comp(0.0, 5.0), comp(12.0, 8.0)]).unwrap();
    mixture_sample(&mix, n, seed).unwrap()
}

#[test]
fn projection_fixed_point_and_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = random_state(&mut rng, 5, 1.0);
    let (a, b) = project(&s.mu, &s);
    assert!((a - &s.mu).amax() < 1e-12 && (b - &s.mu).amax() < 1e-12);
    for _ in 0..50 {
        let x = DVector::from_fn(5, |_, _| rng.random_range(-10.0..10.0));
        let (pv, pp) = project(&x, &s);
        assert!((pv + pp - &s.mu - &x).amax() < 1e-10);
    }
}

#[test]
fn projection_inside_subspace() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut s = random_state(&mut rng, 4, 1.0);
    s.d = 3;
    s.a = vec![3.0, 2.0, 1.5];
    let x = &s.mu + s.orient.columns(0, 3) * DVector::from_vec(vec![0.4, -1.0, 2.0]);
    let (pv, pp) = project(&x, &s);
    assert!((pv - &x).amax() < 1e-10);
    assert!((pp - &s.mu).amax() < 1e-10);
}

#[test]
fn cost_matches_dense_density_small_case() {
    let s = ComponentState {
        pi: 1.0,
        mu: DVector::zeros(2),
        orient: DMatrix::identity(2, 2),
        a: vec![2.0],
        b: 1.0,
        d: 1,
        nu: 5.0,
    };
    let x = DVector::zeros(2);
    assert!((cost_k(&x, &s) + 2.0 * dense_log_density(&x, &s)).abs() < 1e-12);
}

#[test]
fn cost_matches_dense_density_random() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let pi = rng.random_range(0.05..1.0);
        let s = random_state(&mut rng, 6, pi);
        let x = DVector::from_fn(6, |_, _| rng.random_range(-6.0..6.0));
        let oracle = -2.0 * (pi.ln() + dense_log_density(&x, &s));
        assert!((cost_k(&x, &s) - oracle).abs() < 1e-8);
    }
}

#[test]
fn cost_shifts_with_proportion() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut s = random_state(&mut rng, 3, 0.5);
    let x = DVector::from_vec(vec![0.3, 1.0, -2.0]);
    let before = cost_k(&x, &s);
    s.pi *= 0.25;
    assert!((cost_k(&x, &s) - before + 2.0 * 0.25f64.ln()).abs() < 1e-12);
}

#[test]
fn posterior_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let states = vec![random_state(&mut rng, 3, 0.3), random_state(&mut rng, 3, 0.7)];
        let data = DMatrix::from_fn(15, 3, |_, _| rng.random_range(-5.0..5.0));
        let e = e_step(&data, &states).unwrap();
        for i in 0..15 {
            let x = data.row(i).transpose();
            let w: Vec<f64> = states.iter().map(|s| s.pi.ln() + dense_log_density(&x, s)).collect();
            let top = w[0].max(w[1]);
            let total: f64 = w.iter().map(|v| (v - top).exp()).sum();
            for g in 0..2 {
                assert!((e.resp.z[(i, g)] - (w[g] - top).exp() / total).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn single_component_posterior_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = random_state(&mut rng, 4, 1.0);
    let data = DMatrix::from_fn(10, 4, |_, _| rng.random_range(-2.0..2.0));
    let e = e_step(&data, &[s]).unwrap();
    assert!(e.resp.z.iter().all(|&z| (z - 1.0).abs() < 1e-15));
}

#[test]
fn latent_weight_at_mean_and_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let s = random_state(&mut rng, 5, 1.0);
        let mut data = DMatrix::from_fn(4, 5, |_, _| rng.random_range(-4.0..4.0));
        data.set_row(0, &s.mu.transpose());
        let e = e_step(&data, std::slice::from_ref(&s)).unwrap();
        let top = (s.nu + 5.0) / s.nu;
        assert_eq!(e.resp.u[(0, 0)], top);
        for i in 1..4 {
            assert!(e.resp.u[(i, 0)] > 0.0 && e.resp.u[(i, 0)] < top);
        }
    }
}

#[test]
fn pi_mu_hand_example() {
    let data = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 2.0, 0.0, 0.0, 4.0, 6.0, 2.0]);
    let z = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.5, 0.5, 0.5, 0.5, 0.0, 1.0]);
    let u = DMatrix::from_row_slice(4, 2, &[2.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 0.5]);
    let (pi, mu) = update_pi_mu(&data, &Responsibilities { z, u }).unwrap();
    assert_eq!(pi, vec![0.5, 0.5]);
    // Group 0 weights (2, 0.5, 1, 0): mean (1/3.5, 4/3.5).
    assert!((mu[0][0] - 1.0 / 3.5).abs() < 1e-15 && (mu[0][1] - 4.0 / 3.5).abs() < 1e-15);
    // Group 1 weights (0, 0.5, 0.5, 0.5): mean (8/3, 2).
    assert!((mu[1][0] - 8.0 / 3.0).abs() < 1e-15 && (mu[1][1] - 2.0).abs() < 1e-15);
}

#[test]
fn pi_mu_hard_labels_give_cluster_means() {
    let data = DMatrix::from_row_slice(4, 1, &[1.0, 3.0, 10.0, 14.0]);
    let (pi, mu) = update_pi_mu(&data, &Responsibilities::from_labels(&[0, 0, 1, 1], 2)).unwrap();
    assert_eq!(pi, vec![0.5, 0.5]);
    assert_eq!((mu[0][0], mu[1][0]), (2.0, 12.0));
    let uniform = Responsibilities {
        z: DMatrix::from_element(4, 2, 0.5),
        u: DMatrix::from_element(4, 2, 1.0),
    };
    assert_eq!(update_pi_mu(&data, &uniform).unwrap().0, vec![0.5, 0.5]);
}

#[test]
fn pi_mu_zero_weight_is_degenerate() {
    let data = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
    let resp = Responsibilities {
        z: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]),
        u: DMatrix::from_element(2, 2, 1.0),
    };
    assert!(matches!(update_pi_mu(&data, &resp), Err(Error::DegenerateComponent { component: 1, .. })));
}

/// Data whose scatter about its mean has eigenvalues `(5, 2, 1)` along the
/// coordinate axes.
fn axis_data() -> DMatrix<f64> {
    let s = [5f64.sqrt(), 2f64.sqrt(), 1.0];
    let mut rows = Vec::new();
    for (j, scale) in s.iter().enumerate() {
        for sign in [1.0, -1.0] {
            let mut r = [0.0; 3];
            r[j] = sign * scale * 3f64.sqrt();
            rows.extend_from_slice(&r);
        }
    }
    DMatrix::from_row_slice(6, 3, &rows)
}

#[test]
fn noise_variance_hand_example() {
    let data = axis_data();
    let resp = Responsibilities::from_labels(&[0; 6], 1);
    let config = FitConfig {
        scree_threshold: 0.9,
        ..FitConfig::default()
    };
    let states = cm_step(&data, &resp, &parse_model("UUUUU").unwrap(), None, &config).unwrap();
    let s = &states[0];
    assert_eq!(s.d, 1);
    assert!((s.a[0] - 5.0).abs() < 1e-12);
    assert!((s.b - 1.5).abs() < 1e-12);
}

#[test]
fn free_model_uses_scatter_eigenvalues() {
    let (data, labels) = two_blobs(8, 400);
    let resp = Responsibilities::from_labels(&labels, 2);
    let states = cm_step(&data, &resp, &parse_model("UUUUU").unwrap(), None, &FitConfig::default()).unwrap();
    for (g, s) in states.iter().enumerate() {
        let members: Vec<usize> = (0..400).filter(|&i| labels[i] == g).collect();
        let weights: Vec<f64> = labels.iter().map(|&l| if l == g { 1.0 } else { 0.0 }).collect();
        let scatter = crate::numerics::weighted_scatter(&data, &weights, &s.mu, members.len() as f64).unwrap();
        let eig = sym_eigen(&scatter).unwrap();
        for j in 0..s.d {
            assert!((s.a[j] - eig.values[j]).abs() < 1e-10 * eig.values[0]);
        }
        let trailing = eig.values.rows(s.d, 4 - s.d).sum() / (4 - s.d) as f64;
        assert!((s.b - trailing).abs() < 1e-10 * eig.values[0]);
    }
}

#[test]
fn shared_model_is_bitwise_symmetric() {
    let (data, labels) = two_blobs(9, 300);
    let resp = Responsibilities::from_labels(&labels, 2);
    let config = FitConfig::default();
    let states = cm_step(&data, &resp, &parse_model("CCCCC").unwrap(), None, &config).unwrap();
    let (x, y) = (&states[0], &states[1]);
    assert!(x.a == y.a && x.b == y.b && x.orient == y.orient && x.d == y.d && x.nu == y.nu);
    let e = e_step(&data, &states).unwrap();
    let next = cm_step(&data, &e.resp, &parse_model("CCCCC").unwrap(), Some(&states), &config).unwrap();
    assert!(next[0].a == next[1].a && next[0].b == next[1].b && next[0].orient == next[1].orient);
    assert_eq!(next[0].nu, next[1].nu);
}

#[test]
fn twin_groups_give_identical_state() {
    let (data, _) = two_blobs(10, 200);
    let doubled = DMatrix::from_fn(400, 4, |i, j| data[(i % 200, j)]);
    let labels: Vec<usize> = (0..400).map(|i| i / 200).collect();
    let resp = Responsibilities::from_labels(&labels, 2);
    let states = cm_step(&doubled, &resp, &parse_model("CCCCC").unwrap(), None, &FitConfig::default()).unwrap();
    assert!((states[0].mu.clone() - &states[1].mu).amax() < 1e-12);
}

fn t_sample_data(nu: f64, n: usize, seed: u64) -> DMatrix<f64> {
    let params = TParams::new(DVector::zeros(3), SymMatrix::from_diagonal(&[4.0, 1.0, 0.25]).unwrap(), nu).unwrap();
    crate::tdist::t_sample(&params, n, seed).unwrap()
}

#[test]
fn nu_estimate_is_consistent() {
    let data = t_sample_data(3.0, 2000, 11);
    let result = fit(&data, &parse_model("UUUUU").unwrap(), 1, &FitConfig::default()).unwrap();
    let nu = result.states[0].nu;
    assert!((2.0..=4.5).contains(&nu), "nu = {nu}");
    assert!(result.converged);
}

#[test]
fn nu_is_clamped_to_upper_bound() {
    // Gaussian data drives the estimate past any finite bound.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let data = DMatrix::from_fn(3000, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
    let config = FitConfig {
        nu_bounds: (1.0, 20.0),
        ..FitConfig::default()
    };
    let result = fit(&data, &parse_model("UUUUU").unwrap(), 1, &config).unwrap();
    assert_eq!(result.states[0].nu, 20.0);
}

#[test]
fn nu_pooling_symmetry() {
    let data = t_sample_data(4.0, 300, 13);
    let doubled = DMatrix::from_fn(600, 3, |i, j| data[(i % 300, j)]);
    let labels: Vec<usize> = (0..600).map(|i| i / 300).collect();
    let config = FitConfig::default();
    let spec = parse_model("UUUUU").unwrap();
    let start = cm_step(&doubled, &Responsibilities::from_labels(&labels, 2), &spec, None, &config).unwrap();
    let mut resp = Responsibilities::from_labels(&labels, 2);
    let single = e_step(&data, &start[..1]).unwrap();
    for i in 0..600 {
        resp.u[(i, i / 300)] = single.resp.u[(i % 300, 0)];
    }
    let free = update_nu(&resp, &start, false, config.nu_bounds).unwrap();
    let pooled = update_nu(&resp, &start, true, config.nu_bounds).unwrap();
    assert!(!free.flagged && !pooled.flagged);
    assert!((free.values[0] - free.values[1]).abs() < 1e-12);
    assert!((pooled.values[0] - free.values[0]).abs() < 1e-10);
}

#[test]
fn kmeans_separates_blobs() {
    let (data, truth) = two_blobs(14, 200);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let labels = kmeans(&data, 2, &mut rng);
    assert_eq!(ari(&truth, &labels).unwrap(), 1.0);
}

#[test]
fn initialization_contracts() {
    let (data, _) = two_blobs(15, 50);
    let config = FitConfig {
        init: InitMethod::Random,
        seed: 3,
        ..FitConfig::default()
    };
    let a = initialize(&data, 4, &config).unwrap();
    assert_eq!(a, initialize(&data, 4, &config).unwrap());
    assert!(a.group_sizes().iter().all(|&s| s >= 1.0));
    assert!(a.u.iter().all(|&u| u == 1.0));
    let one = initialize(&data, 1, &FitConfig::default()).unwrap();
    assert!(one.z.iter().all(|&z| z == 1.0));
    assert!(matches!(initialize(&data, 51, &config), Err(Error::Infeasible(_))));
}

#[test]
fn single_group_fit_and_prediction() {
    let data = t_sample_data(5.0, 300, 16);
    for code in ["UUUUU", "CCCCC", "DCUCU"] {
        let result = fit(&data, &parse_model(code).unwrap(), 1, &FitConfig::default()).unwrap();
        assert!(result.converged, "{code}");
        assert!(result.resp.z.iter().all(|&z| z == 1.0));
        assert!(result.labels.iter().all(|&l| l == 0));
    }
}

#[test]
fn fit_recovers_blobs_and_predicts() {
    let (data, truth) = two_blobs(17, 400);
    let result = fit(&data, &parse_model("UUUUU").unwrap(), 2, &FitConfig::default()).unwrap();
    assert!(ari(&truth, &result.labels).unwrap() > 0.99);
    let (labels, z) = predict(&result, &data).unwrap();
    assert_eq!(labels, result.labels);
    assert!(z.row_iter().all(|r| (r.sum() - 1.0).abs() < 1e-10));
    let at_mean = DMatrix::from_fn(3, 4, |_, j| result.states[1].mu[j]);
    assert_eq!(predict(&result, &at_mean).unwrap().0, vec![1, 1, 1]);
    assert!(matches!(predict(&result, &DMatrix::zeros(2, 3)), Err(Error::Shape(_))));
}

#[test]
fn trace_is_monotone_for_every_model() {
    let (data, _) = two_blobs(18, 200);
    for spec in crate::model_space::enumerate_models() {
        let result = fit(&data, &spec, 2, &FitConfig::default()).unwrap();
        for w in result.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "{spec}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn large_nu_matches_gaussian_mode() {
    let (data, _) = two_blobs(19, 400);
    let spec = parse_model("UUUUU").unwrap();
    let t_config = FitConfig {
        nu_bounds: (1e6, 1e6),
        nu_start: 1e6,
        ..FitConfig::default()
    };
    let gaussian = FitConfig {
        gaussian: true,
        ..FitConfig::default()
    };
    let t = fit(&data, &spec, 2, &t_config).unwrap();
    let g = fit(&data, &spec, 2, &gaussian).unwrap();
    assert_eq!(t.iterations, g.iterations);
    for (x, y) in t.states.iter().zip(&g.states) {
        assert!((x.pi - y.pi).abs() < 1e-3);
        assert!((x.mu.clone() - &y.mu).amax() < 1e-3);
        assert_eq!(x.d, y.d);
        for (a, b) in x.a.iter().zip(&y.a) {
            assert!((a - b).abs() < 1e-3 * b.max(1.0));
        }
        assert!((x.b - y.b).abs() < 1e-3);
        assert!(y.nu.is_infinite());
    }
    assert!(g.resp.u.iter().all(|&u| u == 1.0));
}

#[test]
fn config_validation() {
    let bad = FitConfig {
        max_iter: 2,
        ..FitConfig::default()
    };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    let (data, _) = two_blobs(20, 10);
    assert!(matches!(
        fit(&data, &parse_model("UUUUU").unwrap(), 10, &FitConfig::default()),
        Err(Error::Infeasible(_))
    ));
}
