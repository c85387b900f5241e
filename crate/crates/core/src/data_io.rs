//! CSV datasets, standardization, simulated studies, bundled fixtures and
//! model files.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ecm::{ComponentState, Diagnostics, FitResult, Responsibilities};
use crate::error::{Error, Result};
use crate::model_space::parse_model;
use crate::numerics::SymMatrix;
use crate::seeds::derive_seed;
use crate::tdist::{mixture_sample, MixtureParams, TParams};

/// A data matrix with optional class labels and column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub labels: Option<Vec<String>>,
    pub names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, labels: Option<Vec<String>>, names: Option<Vec<String>>) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(Error::Shape(format!("dataset is {n}x{p}")));
        }
        crate::numerics::ensure_finite(x.as_slice(), "dataset")?;
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Shape(format!("{} labels for {n} rows", l.len())));
            }
        }
        if let Some(names) = &names {
            if names.len() != p {
                return Err(Error::Shape(format!("{} names for {p} columns", names.len())));
            }
        }
        Ok(Dataset { x, labels, names })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Number of distinct labels, if labeled.
    pub fn classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| {
            let mut v: Vec<&String> = l.iter().collect();
            v.sort();
            v.dedup();
            v.len()
        })
    }
}

/// Which column of a CSV file holds the class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    /// Zero-based, counted over all columns.
    Index(usize),
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    /// Digits select by index, anything else by name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

/// Reads a comma-separated file; every column except the label column must
/// be numeric.
pub fn read_csv(path: impl AsRef<Path>, has_header: bool, label: Option<&LabelColumn>) -> Result<Dataset> {
    parse_csv(&fs::read_to_string(path)?, has_header, label)
}

/// [`read_csv`] on in-memory text.
pub fn parse_csv(text: &str, has_header: bool, label: Option<&LabelColumn>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let parse_err = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line() as usize);
        Error::Parse {
            line,
            message: e.to_string(),
        }
    };

    let header: Option<Vec<String>> = if has_header {
        match records.next() {
            Some(r) => Some(r.map_err(parse_err)?.iter().map(str::to_string).collect()),
            None => return Err(Error::Parse { line: 1, message: "missing header".into() }),
        }
    } else {
        None
    };

    let mut width = header.as_ref().map(Vec::len);
    let mut label_idx: Option<usize> = None;
    let resolve = |width: usize| -> Result<Option<usize>> {
        match label {
            None => Ok(None),
            Some(LabelColumn::Index(i)) if *i < width => Ok(Some(*i)),
            Some(LabelColumn::Index(i)) => Err(Error::Parse {
                line: 1,
                message: format!("label column {i} is out of range for {width} columns"),
            }),
            Some(LabelColumn::Name(name)) => match &header {
                Some(h) => h.iter().position(|c| c == name).map(Some).ok_or_else(|| Error::Parse {
                    line: 1,
                    message: format!("no column named {name:?}"),
                }),
                None => Err(Error::Parse {
                    line: 1,
                    message: format!("label column {name:?} given by name but the file has no header"),
                }),
            },
        }
    };
    if let Some(w) = width {
        label_idx = resolve(w)?;
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0usize;
    for record in records {
        let record = record.map_err(parse_err)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if rows == 0 && header.is_none() {
            label_idx = resolve(w)?;
        }
        if record.len() != w {
            return Err(Error::Parse {
                line,
                message: format!("expected {w} fields, found {}", record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            if Some(j) == label_idx {
                labels.push(cell.to_string());
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column {}: {cell:?} is not a number", j + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column {}: {cell:?} is not finite", j + 1),
                });
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Parse {
            line: if has_header { 2 } else { 1 },
            message: "no data rows".into(),
        });
    }
    let p = width.unwrap_or(0) - usize::from(label_idx.is_some());
    if p == 0 {
        return Err(Error::Parse { line: 1, message: "no feature columns".into() });
    }
    let names = header.map(|h| {
        h.into_iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != label_idx)
            .map(|(_, n)| n)
            .collect()
    });
    Dataset::new(
        DMatrix::from_row_slice(rows, p, &values),
        label_idx.map(|_| labels),
        names,
    )
}

/// CSV text of `ds`: a header when names or labels exist, features in
/// shortest round-trip form, labels last in a `label` column.
pub fn to_csv_string(ds: &Dataset) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let p = ds.p();
    if ds.names.is_some() || ds.labels.is_some() {
        let mut header: Vec<String> = match &ds.names {
            Some(n) => n.clone(),
            None => (1..=p).map(|j| format!("x{j}")).collect(),
        };
        if ds.labels.is_some() {
            header.push("label".into());
        }
        w.write_record(&header).expect("writing to memory");
    }
    for i in 0..ds.n() {
        let mut row: Vec<String> = (0..p).map(|j| format!("{:?}", ds.x[(i, j)])).collect();
        if let Some(l) = &ds.labels {
            row.push(l[i].clone());
        }
        w.write_record(&row).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv output is UTF-8")
}

pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_csv_string(ds))?;
    Ok(())
}

/// Centers every column and scales it to unit variance (divisor `n - 1`).
pub fn standardize(ds: &Dataset) -> Result<Dataset> {
    let (n, p) = ds.x.shape();
    if n < 2 {
        return Err(Error::Shape("standardizing needs at least 2 rows".into()));
    }
    let mut x = ds.x.clone();
    for j in 0..p {
        let mean = x.column(j).mean();
        let var = x.column(j).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        if !(var > 0.0) {
            let column = ds.names.as_ref().map_or_else(|| format!("{}", j + 1), |names| names[j].clone());
            return Err(Error::ZeroVariance { column });
        }
        let sd = var.sqrt();
        x.column_mut(j).apply(|v| *v = (*v - mean) / sd);
    }
    Ok(Dataset {
        x,
        labels: ds.labels.clone(),
        names: ds.names.clone(),
    })
}

/// Parameters of a simulated study.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub mixture: MixtureParams,
    /// Observations per dataset.
    pub n: usize,
    /// Number of datasets.
    pub count: usize,
    pub seed: u64,
}

impl SimSpec {
    /// Equal-weight ten-dimensional components, one per entry of `nu`, and
    /// 500 observations per dataset.
    ///
    /// Component `g` is centred at `4 g e_1` with scale 4 on its own two
    /// coordinate axes (after the first) and 0.25 elsewhere.
    pub fn with_nu(nu: &[f64]) -> Result<Self> {
        let p = 10;
        let groups = nu.len();
        if groups == 0 {
            return Err(Error::Config("at least one component is needed".into()));
        }
        let components = nu
            .iter()
            .enumerate()
            .map(|(g, &nu)| {
                let mut mu = DVector::zeros(p);
                mu[0] = SIM_SEPARATION * g as f64;
                let mut scales = vec![SIM_NOISE; p];
                for k in 0..2 {
                    scales[1 + (2 * g + k) % (p - 1)] = SIM_SIGNAL;
                }
                TParams::new(mu, SymMatrix::from_diagonal(&scales)?, nu)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SimSpec {
            mixture: MixtureParams::new(vec![1.0 / groups as f64; groups], components)?,
            n: 500,
            count: 10,
            seed: 0,
        })
    }
}

const SIM_SEPARATION: f64 = 4.0;
const SIM_SIGNAL: f64 = 4.0;
const SIM_NOISE: f64 = 0.25;

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec::with_nu(&[2.0, 3.0]).expect("default simulation is valid")
    }
}

/// `spec.count` labeled datasets; dataset `k` is drawn with seed
/// `derive_seed(spec.seed, k)`. Labels are component numbers from 1.
pub fn simulate_study(spec: &SimSpec) -> Result<Vec<Dataset>> {
    let p = spec.mixture.dim();
    (0..spec.count)
        .map(|k| {
            let (x, labels) = mixture_sample(&spec.mixture, spec.n, derive_seed(spec.seed, k as u64))?;
            Dataset::new(
                x,
                Some(labels.iter().map(|g| (g + 1).to_string()).collect()),
                Some((1..=p).map(|j| format!("x{j}")).collect()),
            )
        })
        .collect()
}

pub const SCHEMA_VERSION: &str = "1";

#[derive(Serialize, Deserialize)]
struct ComponentRecord {
    pi: f64,
    mu: Vec<f64>,
    /// Column-major `p x p`.
    orient: Vec<f64>,
    a: Vec<f64>,
    b: f64,
    d: usize,
    /// `null` in Gaussian mode.
    nu: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct DiagnosticsRecord {
    attempts: usize,
    nu_fallbacks: usize,
    dimension_rejections: usize,
    failures: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    schema_version: String,
    model_code: String,
    #[serde(rename = "G")]
    groups: usize,
    p: usize,
    gaussian_mode: bool,
    components: Vec<ComponentRecord>,
    loglik_trace: Vec<f64>,
    bic: f64,
    bic_minimized: f64,
    converged: bool,
    iterations: usize,
    n_params: usize,
    labels: Vec<usize>,
    /// Row-major `n x G`.
    z: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    diagnostics: DiagnosticsRecord,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], cols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::ModelFile(format!("{what} rows must have {cols} entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Serializes a fit as a versioned JSON document.
pub fn to_json(result: &FitResult) -> String {
    let record = ModelRecord {
        schema_version: SCHEMA_VERSION.into(),
        model_code: result.spec.code().into(),
        groups: result.groups,
        p: result.dim(),
        gaussian_mode: result.gaussian,
        components: result
            .states
            .iter()
            .map(|s| ComponentRecord {
                pi: s.pi,
                mu: s.mu.iter().copied().collect(),
                orient: s.orient.as_slice().to_vec(),
                a: s.a.clone(),
                b: s.b,
                d: s.d,
                nu: s.nu.is_finite().then_some(s.nu),
            })
            .collect(),
        loglik_trace: result.loglik_trace.clone(),
        bic: result.bic,
        bic_minimized: -result.bic,
        converged: result.converged,
        iterations: result.iterations,
        n_params: result.n_params,
        labels: result.labels.clone(),
        z: rows_of(&result.resp.z),
        u: rows_of(&result.resp.u),
        diagnostics: DiagnosticsRecord {
            attempts: result.diagnostics.attempts,
            nu_fallbacks: result.diagnostics.nu_fallbacks,
            dimension_rejections: result.diagnostics.dimension_rejections,
            failures: result.diagnostics.failures.clone(),
        },
    };
    serde_json::to_string_pretty(&record).expect("model record serializes")
}

/// Inverse of [`to_json`].
pub fn from_json(text: &str) -> Result<FitResult> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    let version = value.get("schema_version").and_then(|v| v.as_str()).unwrap_or("<missing>");
    if version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: version.to_string(),
            expected: SCHEMA_VERSION.into(),
        });
    }
    let record: ModelRecord = serde_json::from_value(value).map_err(|e| Error::ModelFile(e.to_string()))?;
    let spec = parse_model(&record.model_code)?;
    let p = record.p;
    if record.components.len() != record.groups {
        return Err(Error::ModelFile(format!(
            "{} components for G = {}",
            record.components.len(),
            record.groups
        )));
    }
    let states = record
        .components
        .into_iter()
        .map(|c| {
            if c.mu.len() != p || c.orient.len() != p * p {
                return Err(Error::ModelFile(format!("component arrays do not match p = {p}")));
            }
            let state = ComponentState {
                pi: c.pi,
                mu: DVector::from_vec(c.mu),
                orient: DMatrix::from_vec(p, p, c.orient),
                a: c.a,
                b: c.b,
                d: c.d,
                nu: c.nu.unwrap_or(f64::INFINITY),
            };
            state.validate().map_err(|e| Error::ModelFile(e.to_string()))?;
            Ok(state)
        })
        .collect::<Result<Vec<_>>>()?;
    let resp = Responsibilities {
        z: matrix_from_rows(&record.z, record.groups, "z")?,
        u: matrix_from_rows(&record.u, record.groups, "u")?,
    };
    if record.loglik_trace.is_empty() {
        return Err(Error::ModelFile("empty log-likelihood trace".into()));
    }
    Ok(FitResult {
        spec,
        groups: record.groups,
        states,
        resp,
        labels: record.labels,
        loglik_trace: record.loglik_trace,
        bic: record.bic,
        n_params: record.n_params,
        converged: record.converged,
        iterations: record.iterations,
        gaussian: record.gaussian_mode,
        diagnostics: Diagnostics {
            attempts: record.diagnostics.attempts,
            nu_fallbacks: record.diagnostics.nu_fallbacks,
            dimension_rejections: record.diagnostics.dimension_rejections,
            failures: record.diagnostics.failures,
        },
    })
}

pub fn save_model(result: &FitResult, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_json(result))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FitResult> {
    from_json(&fs::read_to_string(path)?)
}

/// Datasets shipped with the crate.
pub mod fixtures {
    use super::{parse_csv, Dataset, LabelColumn};

    pub const IRIS_CSV: &str = include_str!("../data/iris.csv");
    pub const WINE_CSV: &str = include_str!("../data/wine.csv");

    /// 150 flowers, 4 measurements, labels in `species`.
    pub fn iris() -> Dataset {
        parse_csv(IRIS_CSV, true, Some(&LabelColumn::Name("species".into()))).expect("bundled iris parses")
    }

    /// 178 wines, 13 chemical measurements, labels in `cultivar`.
    pub fn wine() -> Dataset {
        parse_csv(WINE_CSV, true, Some(&LabelColumn::Name("cultivar".into()))).expect("bundled wine parses")
    }
}
