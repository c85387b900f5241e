use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FitConfig, InitMethod, Responsibilities};
use crate::error::{Error, Result};

const KMEANS_STARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 100;
const KMEANS_TOL: f64 = 1e-6;

/// Starting memberships for [`super::fit`], drawn from `config.seed`.
///
/// Every group receives at least one observation.
pub fn initialize(data: &DMatrix<f64>, groups: usize, config: &FitConfig) -> Result<Responsibilities> {
    let n = data.nrows();
    if groups == 0 || groups > n {
        return Err(Error::Infeasible(format!("cannot form {groups} groups from {n} observations")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let labels = match config.init {
        InitMethod::KMeans => kmeans(data, groups, &mut rng),
        InitMethod::Random => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut labels = vec![0; n];
            for (rank, &i) in order.iter().enumerate() {
                labels[i] = if rank < groups { rank } else { rng.random_range(0..groups) };
            }
            labels
        }
    };
    Ok(Responsibilities::from_labels(&labels, groups))
}

fn sq_dist(data: &DMatrix<f64>, i: usize, center: &[f64]) -> f64 {
    center
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let d = data[(i, j)] - c;
            d * d
        })
        .sum()
}

fn nearest(data: &DMatrix<f64>, i: usize, centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(data, i, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus_seeds<R: Rng>(data: &DMatrix<f64>, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = data.nrows();
    let row = |i: usize| data.row(i).iter().copied().collect::<Vec<f64>>();
    let mut centers = vec![row(rng.random_range(0..n))];
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(data, i, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            dist.iter()
                .position(|&d| {
                    acc += d;
                    acc > target
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        centers.push(row(pick));
        let last = centers.last().expect("just pushed");
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(data, i, last));
        }
    }
    centers
}

fn lloyd(data: &DMatrix<f64>, mut centers: Vec<Vec<f64>>) -> (Vec<usize>, f64) {
    let (n, p) = data.shape();
    let k = centers.len();
    let mut labels = vec![0; n];
    for _ in 0..KMEANS_MAX_ITER {
        for (i, label) in labels.iter_mut().enumerate() {
            *label = nearest(data, i, &centers).0;
        }
        let mut sums = vec![vec![0.0; p]; k];
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for j in 0..p {
                sums[c][j] += data[(i, j)];
            }
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            let updated = if counts[c] == 0 {
                // Reseed to the point worst served by its center.
                let far = (0..n)
                    .max_by(|&x, &y| {
                        sq_dist(data, x, &centers[labels[x]]).total_cmp(&sq_dist(data, y, &centers[labels[y]]))
                    })
                    .expect("data is non-empty");
                labels[far] = c;
                data.row(far).iter().copied().collect()
            } else {
                sums[c].iter().map(|s| s / counts[c] as f64).collect::<Vec<f64>>()
            };
            shift = shift.max(
                updated
                    .iter()
                    .zip(&centers[c])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
            );
            centers[c] = updated;
        }
        if shift < KMEANS_TOL {
            break;
        }
    }
    let mut cost = 0.0;
    for (i, label) in labels.iter_mut().enumerate() {
        let (c, d) = nearest(data, i, &centers);
        *label = c;
        cost += d;
    }
    (labels, cost)
}

/// k-means++ seeding followed by Lloyd iterations; the best of ten starts
/// by within-cluster sum of squares. Every cluster is non-empty when
/// `k <= n` and the rows are distinct.
pub fn kmeans<R: Rng>(data: &DMatrix<f64>, k: usize, rng: &mut R) -> Vec<usize> {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..KMEANS_STARTS {
        let centers = plus_plus_seeds(data, k, rng);
        let (labels, cost) = lloyd(data, centers);
        if best.as_ref().is_none_or(|b| cost < b.1) {
            best = Some((labels, cost));
        }
    }
    let (mut labels, _) = best.expect("at least one start");
    fill_empty(&mut labels, k);
    labels
}

/// Moves one observation into each empty cluster, taking it from the
/// largest cluster.
fn fill_empty(labels: &mut [usize], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let largest = (0..k).max_by_key(|&c| counts[c]).expect("k > 0");
        if counts[largest] < 2 {
            return;
        }
        let donor = labels.iter().position(|&l| l == largest).expect("largest is non-empty");
        labels[donor] = empty;
    }
}
