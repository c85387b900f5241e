//! Partition agreement: adjusted and plain Rand indices, confusion tables.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Distinct values of `labels` in order of first appearance, and each
/// entry's position in that list.
fn encode<T: Eq + Hash>(labels: &[T]) -> (Vec<&T>, Vec<usize>) {
    let mut seen: HashMap<&T, usize> = HashMap::new();
    let mut order = Vec::new();
    let codes = labels
        .iter()
        .map(|l| {
            *seen.entry(l).or_insert_with(|| {
                order.push(l);
                order.len() - 1
            })
        })
        .collect();
    (order, codes)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("partitions have lengths {a} and {b}")));
    }
    Ok(())
}

fn contingency<A: Eq + Hash, B: Eq + Hash>(truth: &[A], pred: &[B]) -> Vec<Vec<u64>> {
    let (rows, r) = encode(truth);
    let (cols, c) = encode(pred);
    let mut counts = vec![vec![0u64; cols.len()]; rows.len()];
    for (&i, &j) in r.iter().zip(&c) {
        counts[i][j] += 1;
    }
    counts
}

/// Cross-tabulation of true classes (rows) against predicted clusters
/// (columns), both in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionTable {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionTable {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("truth");
        for c in &self.cols {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (name, row) in self.rows.iter().zip(&self.counts) {
            out.push_str(name);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for ConfusionTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let first = self.rows.iter().map(String::len).max().unwrap_or(0).max(5);
        let width = self
            .cols
            .iter()
            .map(String::len)
            .chain(self.counts.iter().flatten().map(|v| v.to_string().len()))
            .max()
            .unwrap_or(1);
        write!(f, "{:<first$}", "")?;
        for c in &self.cols {
            write!(f, "  {c:>width$}")?;
        }
        writeln!(f)?;
        for (name, row) in self.rows.iter().zip(&self.counts) {
            write!(f, "{name:<first$}")?;
            for v in row {
                write!(f, "  {v:>width$}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Confusion table of `truth` against `pred`.
pub fn confusion<A, B>(truth: &[A], pred: &[B]) -> Result<ConfusionTable>
where
    A: Eq + Hash + fmt::Display,
    B: Eq + Hash + fmt::Display,
{
    check_lengths(truth.len(), pred.len())?;
    let rows = encode(truth).0.iter().map(|v| v.to_string()).collect();
    let cols = encode(pred).0.iter().map(|v| v.to_string()).collect();
    Ok(ConfusionTable {
        rows,
        cols,
        counts: contingency(truth, pred),
    })
}

fn pairs(k: u64) -> f64 {
    (k * k.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index from a contingency table.
pub fn ari_from_counts(counts: &[Vec<u64>]) -> Result<f64> {
    let n: u64 = counts.iter().flatten().sum();
    if n < 2 {
        return Err(Error::Infeasible(format!("ARI needs at least 2 observations, got {n}")));
    }
    let width = counts.iter().map(Vec::len).max().unwrap_or(0);
    let index: f64 = counts.iter().flatten().map(|&v| pairs(v)).sum();
    let row_sum: f64 = counts.iter().map(|r| pairs(r.iter().sum())).sum();
    let col_sum: f64 = (0..width)
        .map(|j| pairs(counts.iter().map(|r| r.get(j).copied().unwrap_or(0)).sum()))
        .sum();
    let expected = row_sum * col_sum / pairs(n);
    let max = 0.5 * (row_sum + col_sum);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Adjusted Rand index between two partitions of the same items.
pub fn ari<A: Eq + Hash, B: Eq + Hash>(truth: &[A], pred: &[B]) -> Result<f64> {
    check_lengths(truth.len(), pred.len())?;
    if truth.len() < 2 {
        return Err(Error::Infeasible(format!("ARI needs at least 2 observations, got {}", truth.len())));
    }
    let forward = ari_from_counts(&contingency(truth, pred))?;
    let backward = ari_from_counts(&contingency(pred, truth))?;
    // Summation order differs between the two orientations.
    Ok(0.5 * (forward + backward))
}

/// Fraction of item pairs on which the two partitions agree.
pub fn rand_index<A: Eq + Hash, B: Eq + Hash>(truth: &[A], pred: &[B]) -> Result<f64> {
    check_lengths(truth.len(), pred.len())?;
    let n = truth.len() as u64;
    if n < 2 {
        return Err(Error::Infeasible(format!("Rand index needs at least 2 observations, got {n}")));
    }
    let counts = contingency(truth, pred);
    let both: f64 = counts.iter().flatten().map(|&v| pairs(v)).sum();
    let rows: f64 = counts.iter().map(|r| pairs(r.iter().sum())).sum();
    let width = counts[0].len();
    let cols: f64 = (0..width).map(|j| pairs(counts.iter().map(|r| r[j]).sum())).sum();
    let total = pairs(n);
    Ok((total + 2.0 * both - rows - cols) / total)
}
