use super::{DimMethod, FitConfig};
use crate::error::{Error, Result};
use crate::model_space::{count_params, DimensionAssignment, ModelSpec};

/// Largest `d` whose eigenvalue gap `values[d-1] - values[d]` is at least
/// `threshold` times the largest gap; 1 when the spectrum is flat.
pub fn scree_dimension(values: &[f64], threshold: f64) -> usize {
    let gaps: Vec<f64> = values.windows(2).map(|w| w[0] - w[1]).collect();
    let largest = gaps.iter().copied().fold(0.0f64, f64::max);
    if !(largest > 0.0) {
        return 1;
    }
    gaps.iter()
        .rposition(|&gap| gap / largest >= threshold)
        .map_or(1, |j| j + 1)
}

/// Profile term `-(n/2) (d log mean(top d) + (p - d) log mean(rest))`.
fn dimension_loglik(values: &[f64], d: usize, n: f64) -> f64 {
    let p = values.len();
    let a = values[..d].iter().sum::<f64>() / d as f64;
    let b = values[d..].iter().sum::<f64>() / (p - d) as f64;
    -0.5 * n * (d as f64 * a.ln() + (p - d) as f64 * b.ln())
}

/// Chooses intrinsic dimensions from per-group spectra.
///
/// `spectra[g]` is sorted descending and strictly positive; `sizes[g]` is the
/// group's membership mass. When the model shares `d`, the per-group
/// criteria are pooled with weights `sizes[g]` (for the scree rule, the
/// spectra themselves are averaged with those weights).
pub fn select_dims(spectra: &[Vec<f64>], sizes: &[f64], spec: &ModelSpec, config: &FitConfig) -> Result<DimensionAssignment> {
    let groups = spectra.len();
    if groups == 0 || sizes.len() != groups {
        return Err(Error::Shape(format!("{groups} spectra for {} group sizes", sizes.len())));
    }
    let p = spectra[0].len();
    if p < 2 {
        return Err(Error::Dimension(format!("p = {p} admits no subspace")));
    }
    if spectra.iter().any(|s| s.len() != p) {
        return Err(Error::Shape("spectra differ in length".into()));
    }
    let n: f64 = sizes.iter().sum();
    let shared = spec.dim.is_shared();

    match config.dim_method {
        DimMethod::Scree => {
            if shared {
                let pooled: Vec<f64> = (0..p)
                    .map(|j| spectra.iter().zip(sizes).map(|(s, w)| w * s[j]).sum::<f64>() / n)
                    .collect();
                DimensionAssignment::uniform(scree_dimension(&pooled, config.scree_threshold), groups, p)
            } else {
                let dims = spectra.iter().map(|s| scree_dimension(s, config.scree_threshold)).collect();
                DimensionAssignment::new(dims, p)
            }
        }
        DimMethod::Bic => {
            let log_n = n.ln();
            let penalty = |dims: Vec<usize>| -> Result<f64> {
                let assignment = DimensionAssignment::new(dims, p)?;
                Ok(count_params(spec, groups, p, &assignment, config.count_options())? as f64 * log_n)
            };
            let argmax = |scores: &[(usize, f64)]| {
                scores
                    .iter()
                    .fold((1usize, f64::NEG_INFINITY), |best, &(d, s)| if s > best.1 { (d, s) } else { best })
                    .0
            };
            if shared {
                let mut scores = Vec::with_capacity(p - 1);
                for d in 1..p {
                    let l: f64 = spectra.iter().zip(sizes).map(|(s, &w)| dimension_loglik(s, d, w)).sum();
                    scores.push((d, 2.0 * l - penalty(vec![d; groups])?));
                }
                DimensionAssignment::uniform(argmax(&scores), groups, p)
            } else {
                let mut dims = Vec::with_capacity(groups);
                for (g, s) in spectra.iter().enumerate() {
                    let mut scores = Vec::with_capacity(p - 1);
                    for d in 1..p {
                        let mut probe = vec![1; groups];
                        probe[g] = d;
                        scores.push((d, 2.0 * dimension_loglik(s, d, n) - penalty(probe)?));
                    }
                    dims.push(argmax(&scores));
                }
                DimensionAssignment::new(dims, p)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_space::parse_model;

    fn scree_config() -> FitConfig {
        FitConfig::default()
    }

    #[test]
    fn scree_picks_gap() {
        assert_eq!(scree_dimension(&[10.0, 9.5, 0.1, 0.09, 0.08], 0.2), 2);
    }

    #[test]
    fn scree_flat_spectrum() {
        assert_eq!(scree_dimension(&[1.0, 1.0, 1.0, 1.0], 0.2), 1);
    }

    #[test]
    fn scree_keeps_last_large_gap() {
        // Gaps 5, 0.5, 3, 0.01: the third gap exceeds 0.2 of the largest.
        assert_eq!(scree_dimension(&[10.0, 5.0, 4.5, 1.5, 1.49], 0.2), 3);
    }

    #[test]
    fn pooled_matches_single_group() {
        let spectrum = vec![10.0, 9.5, 0.1, 0.09, 0.08];
        let single = select_dims(&[spectrum.clone()], &[50.0], &parse_model("UUUCU").unwrap(), &scree_config()).unwrap();
        let twin = select_dims(
            &[spectrum.clone(), spectrum],
            &[25.0, 25.0],
            &parse_model("UUUCU").unwrap(),
            &scree_config(),
        )
        .unwrap();
        assert_eq!(single.dims(), &[2]);
        assert_eq!(twin.dims(), &[2, 2]);
    }

    #[test]
    fn free_dims_per_group() {
        let dims = select_dims(
            &[vec![10.0, 9.5, 0.1, 0.09], vec![8.0, 0.2, 0.1, 0.05]],
            &[30.0, 30.0],
            &parse_model("UUUUU").unwrap(),
            &scree_config(),
        )
        .unwrap();
        assert_eq!(dims.dims(), &[2, 1]);
    }

    #[test]
    fn bic_finds_clear_subspace() {
        let config = FitConfig {
            dim_method: DimMethod::Bic,
            ..FitConfig::default()
        };
        let spectrum = vec![25.0, 16.0, 0.11, 0.1, 0.09, 0.1];
        let dims = select_dims(&[spectrum], &[400.0], &parse_model("UUUUU").unwrap(), &config).unwrap();
        assert_eq!(dims.dims(), &[2]);
    }

    #[test]
    fn p_one_is_rejected() {
        let err = select_dims(&[vec![1.0]], &[10.0], &parse_model("UUUUU").unwrap(), &scree_config()).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }
}
