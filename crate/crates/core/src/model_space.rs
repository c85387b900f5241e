//! The 28 parsimonious subspace models and their free-parameter counts.
//!
//! A model code has five letters, one per parameter family, in the order
//! `(a, b, D, d, nu)`:
//!
//! - `a` (subspace eigenvalues): `U` free, `D` common across dimensions within
//!   a group, `G` common across groups, `C` common across both.
//! - `b` (noise variance), `D` (orientation), `d` (intrinsic dimension) and
//!   `nu` (degrees of freedom): `U` free per group, `C` shared by all groups.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// All legal model codes in canonical order.
pub const MODEL_CODES: [&str; 28] = [
    "UUUUU", "UCUUU", "DUUUU", "CUUUU", "DCUUU", "CCUUU", "UUUCU", "UCUCU", "DUUCU", "CUUCU",
    "DCUCU", "CCUCU", "GCCCU", "CCCCU", "UUUUC", "UCUUC", "DUUUC", "CUUUC", "DCUUC", "CCUUC",
    "UUUCC", "UCUCC", "DUUCC", "CUUCC", "DCUCC", "CCUCC", "GCCCC", "CCCCC",
];

/// Constraint on the subspace eigenvalues `a_jg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EigenConstraint {
    /// `U`: every `a_jg` free.
    Free,
    /// `D`: `a_jg = a_g`, one value per group.
    AcrossDimensions,
    /// `G`: `a_jg = a_j`, shared by all groups.
    AcrossGroups,
    /// `C`: a single value.
    Common,
}

/// Constraint on a per-group parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sharing {
    /// `U`
    PerGroup,
    /// `C`
    Shared,
}

impl Sharing {
    fn from_letter(c: char) -> Option<Self> {
        match c {
            'U' => Some(Sharing::PerGroup),
            'C' => Some(Sharing::Shared),
            _ => None,
        }
    }

    pub fn is_shared(self) -> bool {
        self == Sharing::Shared
    }
}

/// A parsed and validated model code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub a: EigenConstraint,
    pub b: Sharing,
    pub orientation: Sharing,
    pub dim: Sharing,
    pub nu: Sharing,
    index: usize,
}

impl ModelSpec {
    /// The five-letter code.
    pub fn code(&self) -> &'static str {
        MODEL_CODES[self.index]
    }

    /// Position in [`MODEL_CODES`].
    pub fn index(&self) -> usize {
        self.index
    }

    /// The same model with the degrees-of-freedom letter replaced.
    pub fn with_nu(&self, nu: Sharing) -> ModelSpec {
        let mut code: Vec<char> = self.code().chars().collect();
        code[4] = if nu.is_shared() { 'C' } else { 'U' };
        parse_model(&code.into_iter().collect::<String>()).expect("nu letter swap stays legal")
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl std::str::FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_model(s)
    }
}

/// Parses one of the 28 legal codes. Case-sensitive.
///
/// On failure the error names the first letter at which no legal code
/// matches the input prefix.
pub fn parse_model(code: &str) -> Result<ModelSpec> {
    let chars: Vec<char> = code.chars().collect();
    if chars.len() != 5 {
        return Err(Error::InvalidModelLength(code.to_string()));
    }
    let Some(index) = MODEL_CODES.iter().position(|&c| c == code) else {
        let mut position = 0;
        while position < 5
            && MODEL_CODES
                .iter()
                .any(|c| c.chars().take(position + 1).eq(chars.iter().copied().take(position + 1)))
        {
            position += 1;
        }
        return Err(Error::InvalidModel {
            code: code.to_string(),
            position: position + 1,
            letter: chars[position.min(4)],
        });
    };
    let a = match chars[0] {
        'U' => EigenConstraint::Free,
        'D' => EigenConstraint::AcrossDimensions,
        'G' => EigenConstraint::AcrossGroups,
        _ => EigenConstraint::Common,
    };
    let letter = |i: usize| Sharing::from_letter(chars[i]).expect("legal codes use U/C here");
    Ok(ModelSpec {
        a,
        b: letter(1),
        orientation: letter(2),
        dim: letter(3),
        nu: letter(4),
        index,
    })
}

/// All 28 models in canonical order.
pub fn enumerate_models() -> Vec<ModelSpec> {
    MODEL_CODES
        .iter()
        .map(|c| parse_model(c).expect("canonical codes parse"))
        .collect()
}

/// Intrinsic dimensions, one per group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionAssignment {
    dims: Vec<usize>,
}

impl DimensionAssignment {
    /// Validates `1 <= d_g <= p - 1` for every group.
    pub fn new(dims: Vec<usize>, p: usize) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Dimension("no groups".into()));
        }
        if p < 2 {
            return Err(Error::Dimension(format!("p = {p} leaves no room for a subspace")));
        }
        if let Some(bad) = dims.iter().find(|&&d| d < 1 || d >= p) {
            return Err(Error::Dimension(format!(
                "intrinsic dimension {bad} outside 1..={}",
                p - 1
            )));
        }
        Ok(DimensionAssignment { dims })
    }

    pub fn uniform(d: usize, groups: usize, p: usize) -> Result<Self> {
        Self::new(vec![d; groups], p)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn groups(&self) -> usize {
        self.dims.len()
    }

    /// `s = sum_g d_g`.
    pub fn total(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn is_uniform(&self) -> bool {
        self.dims.windows(2).all(|w| w[0] == w[1])
    }
}

/// How the mean-and-proportion block `rho` is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RhoConvention {
    /// `G p + G - 1`: means plus proportions summing to one.
    #[default]
    Standard,
    /// `G p + G + 1`, as printed in the original table caption.
    Literal,
}

impl RhoConvention {
    pub fn rho(self, groups: usize, p: usize) -> usize {
        match self {
            RhoConvention::Standard => groups * p + groups - 1,
            RhoConvention::Literal => groups * p + groups + 1,
        }
    }
}

/// Options for [`count_params`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CountOptions {
    pub rho: RhoConvention,
    /// Drop the degrees-of-freedom parameters (Gaussian limit).
    pub gaussian: bool,
}

/// Orientation parameters for one `d x p` orthonormal frame.
fn tau(d: usize, p: usize) -> usize {
    d * p - d * (d + 1) / 2
}

/// Free parameters of `spec` for `groups` components in `p` dimensions.
pub fn free_param_count(spec: &ModelSpec, groups: usize, p: usize, dims: &DimensionAssignment) -> Result<usize> {
    count_params(spec, groups, p, dims, CountOptions::default())
}

/// [`free_param_count`] with an explicit `rho` convention and Gaussian switch.
pub fn count_params(
    spec: &ModelSpec,
    groups: usize,
    p: usize,
    dims: &DimensionAssignment,
    options: CountOptions,
) -> Result<usize> {
    if groups == 0 || p == 0 {
        return Err(Error::Dimension("G and p must be positive".into()));
    }
    if dims.groups() != groups {
        return Err(Error::ConstraintViolation(format!(
            "{} dimensions supplied for G = {groups}",
            dims.groups()
        )));
    }
    if dims.dims().iter().any(|&d| d >= p) {
        return Err(Error::Dimension(format!("an intrinsic dimension reaches p = {p}")));
    }
    let common_d = spec.dim.is_shared() || spec.orientation.is_shared();
    if common_d && !dims.is_uniform() {
        return Err(Error::ConstraintViolation(format!(
            "model {} requires a common intrinsic dimension, got {:?}",
            spec.code(),
            dims.dims()
        )));
    }
    let g = groups;
    let rho = options.rho.rho(g, p);
    let d = dims.dims()[0];
    let t = tau(d, p);
    let t_bar: usize = dims.dims().iter().map(|&dg| tau(dg, p)).sum();
    let s = dims.total();

    // One closed form per model code.
    let row = match spec.code() {
        "UUUUU" => rho + t_bar + 3 * g + s,
        "UCUUU" => rho + t_bar + 2 * g + s + 1,
        "DUUUU" => rho + t_bar + 4 * g,
        "CUUUU" => rho + t_bar + 3 * g + 1,
        "DCUUU" => rho + t_bar + 3 * g + 1,
        "CCUUU" => rho + t_bar + 2 * g + 2,
        "UUUCU" => rho + g * (t + d + 2) + 1,
        "UCUCU" => rho + g * (t + d + 1) + 2,
        "DUUCU" => rho + g * (t + 2 + 1) + 1,
        "CUUCU" => rho + g * (t + 2) + 2,
        "DCUCU" => rho + g * (t + 2) + 2,
        "CCUCU" => rho + g * (t + 1) + 3,
        "GCCCU" => rho + t + d + g + 2,
        "CCCCU" => rho + t + g + 3,
        "UUUUC" => rho + t_bar + 2 * g + s + 1,
        "UCUUC" => rho + t_bar + g + s + 2,
        "DUUUC" => rho + t_bar + 3 * g + 1,
        "CUUUC" => rho + t_bar + 2 * g + 2,
        "DCUUC" => rho + t_bar + 2 * g + 2,
        "CCUUC" => rho + t_bar + g + 3,
        "UUUCC" => rho + g * (t + d + 1) + 2,
        "UCUCC" => rho + g * (t + d) + 3,
        "DUUCC" => rho + g * (t + 2) + 2,
        "CUUCC" => rho + g * (t + 1) + 3,
        "DCUCC" => rho + g * (t + 1) + 3,
        "CCUCC" => rho + g * t + 4,
        "GCCCC" => rho + t + d + 3,
        "CCCCC" => rho + t + 4,
        other => unreachable!("ModelSpec holds only legal codes, got {other}"),
    };
    if options.gaussian {
        let nu_params = if spec.nu.is_shared() { 1 } else { g };
        Ok(row - nu_params)
    } else {
        Ok(row)
    }
}
