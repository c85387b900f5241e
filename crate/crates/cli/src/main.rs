use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use thddc::data_io::{
    load_model, read_csv, save_model, simulate_study, standardize, write_csv, Dataset, LabelColumn, SimSpec,
};
use thddc::ecm::{fit, predict, DimMethod, FitConfig, FitResult, InitMethod};
use thddc::evaluation::{ari, confusion, rand_index};
use thddc::model_space::{enumerate_models, parse_model, ModelSpec, Sharing};
use thddc::selection::{grid_search, GridRequest};

#[derive(Parser)]
#[command(name = "thddc", version, about = "Subspace clustering with parsimonious multivariate-t mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model with a fixed number of components.
    Fit(FitArgs),
    /// Fit a grid of models and component counts and rank them by BIC.
    Grid(GridArgs),
    /// Assign new rows to the clusters of a saved model.
    Predict(PredictArgs),
    /// Write simulated labeled datasets.
    Simulate(SimulateArgs),
    /// Compare two label files.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV file.
    #[arg(long)]
    data: PathBuf,
    /// Label column, by header name or 0-based index.
    #[arg(long)]
    labels: Option<LabelColumn>,
    /// The first line holds data, not column names.
    #[arg(long)]
    no_header: bool,
    /// Scale every feature to mean 0 and variance 1 before fitting.
    #[arg(long)]
    standardize: bool,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let ds = read_csv(&self.data, !self.no_header, self.labels.as_ref())
            .with_context(|| format!("reading {}", self.data.display()))?;
        Ok(if self.standardize { standardize(&ds)? } else { ds })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Kmeans,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum DimArg {
    Bic,
    Scree,
}

#[derive(Args)]
struct EngineArgs {
    #[arg(long, value_enum, default_value = "kmeans")]
    init: InitArg,
    /// Independent starts [default: 1 for kmeans, 10 for random].
    #[arg(long)]
    n_init: Option<usize>,
    /// Aitken stopping threshold.
    #[arg(long, default_value_t = 1e-2)]
    epsilon: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, value_enum, default_value = "scree")]
    dim_method: DimArg,
    #[arg(long, default_value_t = 0.2)]
    scree_threshold: f64,
    /// Gaussian mixtures instead of t (the degrees-of-freedom letter is ignored).
    #[arg(long)]
    gaussian: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl EngineArgs {
    fn config(&self) -> FitConfig {
        FitConfig {
            init: match self.init {
                InitArg::Kmeans => InitMethod::KMeans,
                InitArg::Random => InitMethod::Random,
            },
            n_init: self.n_init,
            max_iter: self.max_iter,
            epsilon: self.epsilon,
            dim_method: match self.dim_method {
                DimArg::Bic => DimMethod::Bic,
                DimArg::Scree => DimMethod::Scree,
            },
            scree_threshold: self.scree_threshold,
            gaussian: self.gaussian,
            seed: self.seed,
            ..FitConfig::default()
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Five-letter model code.
    #[arg(long)]
    model: String,
    /// Number of components.
    #[arg(short = 'G', value_parser = clap::value_parser!(u64).range(1..))]
    groups: u64,
    #[command(flatten)]
    engine: EngineArgs,
    /// Write the fitted model as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the cluster of every row as CSV.
    #[arg(long)]
    labels_out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated model codes, or `all`.
    #[arg(long, default_value = "all")]
    models: String,
    /// Component counts: `3`, `1..4` or `1,2,5`.
    #[arg(short = 'G', default_value = "1..4")]
    groups: String,
    #[command(flatten)]
    engine: EngineArgs,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Record seconds per cell (makes the table run-dependent).
    #[arg(long)]
    timing: bool,
    /// Write the ranked table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the best model as JSON.
    #[arg(long)]
    best_out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model JSON written by `fit --out` or `grid --best-out`.
    #[arg(long)]
    model_file: PathBuf,
    /// Write the predicted clusters as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of datasets.
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Degrees of freedom, one per component.
    #[arg(long, value_delimiter = ',', default_value = "2,3")]
    nu: Vec<f64>,
    /// Observations per dataset.
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvaluateArgs {
    /// CSV with the reference labels.
    #[arg(long)]
    truth: PathBuf,
    /// CSV with the predicted labels.
    #[arg(long)]
    pred: PathBuf,
    /// Column of the truth file [default: last].
    #[arg(long)]
    truth_column: Option<LabelColumn>,
    /// Column of the prediction file [default: last].
    #[arg(long)]
    pred_column: Option<LabelColumn>,
    #[arg(long)]
    no_header: bool,
}

fn parse_groups(text: &str) -> Result<Vec<usize>> {
    let parse = |s: &str| -> Result<usize> {
        let g: usize = s.trim().parse().with_context(|| format!("bad component count {s:?}"))?;
        if g == 0 {
            bail!("component counts must be positive");
        }
        Ok(g)
    };
    let values = if let Some((lo, hi)) = text.split_once("..") {
        let (lo, hi) = (parse(lo)?, parse(hi)?);
        if lo > hi {
            bail!("empty range {text}");
        }
        (lo..=hi).collect()
    } else {
        text.split(',').map(parse).collect::<Result<Vec<_>>>()?
    };
    Ok(values)
}

fn parse_models(text: &str, gaussian: bool) -> Result<Vec<ModelSpec>> {
    let specs = if text.trim() == "all" {
        enumerate_models()
    } else {
        text.split(',').map(|c| parse_model(c.trim())).collect::<thddc::Result<Vec<_>>>()?
    };
    if !gaussian {
        return Ok(specs);
    }
    // The degrees-of-freedom letter has no effect in Gaussian mode.
    let mut seen = Vec::new();
    for s in specs {
        let canonical = s.with_nu(Sharing::PerGroup);
        if !seen.iter().any(|t: &ModelSpec| t.with_nu(Sharing::PerGroup) == canonical) {
            seen.push(s);
        }
    }
    Ok(seen)
}

fn warn_gaussian(engine: &EngineArgs) {
    if engine.gaussian {
        eprintln!("warning: --gaussian ignores the degrees-of-freedom letter of model codes");
    }
}

fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut text = String::from("cluster\n");
    for l in labels {
        text.push_str(&format!("{}\n", l + 1));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn summarize(result: &FitResult) {
    println!("model       {}", result.spec);
    println!("G           {}", result.groups);
    println!("dims        {:?}", result.dims());
    println!("loglik      {:.6}", result.loglik());
    println!("BIC         {:.6}", result.bic);
    println!("parameters  {}", result.n_params);
    println!("iterations  {}", result.iterations);
    println!("converged   {}", result.converged);
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    warn_gaussian(&args.engine);
    let spec = parse_model(&args.model)?;
    let ds = args.data.load()?;
    let result = fit(&ds.x, &spec, args.groups as usize, &args.engine.config())?;
    summarize(&result);
    if let Some(truth) = &ds.labels {
        println!("ARI         {:.6}", ari(truth, &result.labels)?);
    }
    if let Some(path) = &args.out {
        save_model(&result, path).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.labels_out {
        write_labels(path, &result.labels)?;
    }
    Ok(())
}

fn cmd_grid(args: GridArgs) -> Result<()> {
    warn_gaussian(&args.engine);
    let specs = parse_models(&args.models, args.engine.gaussian)?;
    let g_values = parse_groups(&args.groups)?;
    let ds = args.data.load()?;
    let mut request = GridRequest::new(specs, g_values, args.engine.config());
    request.jobs = args.jobs;
    request.timing = args.timing;
    let result = grid_search(&ds.x, &request, ds.labels.as_deref())?;

    println!("{:<6} {:>3} {:>14} {:>8} {:>9} {:>5}", "model", "G", "BIC", "ARI", "converged", "iter");
    for i in result.ranking() {
        let e = &result.entries[i];
        let ari = e.ari.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into());
        match e.fit() {
            Some(r) => println!(
                "{:<6} {:>3} {:>14.4} {:>8} {:>9} {:>5}",
                e.spec, e.groups, r.bic, ari, r.converged, r.iterations
            ),
            None => println!("{:<6} {:>3} {:>14} {:>8} {:>9} {:>5}", e.spec, e.groups, "failed", ari, "-", "-"),
        }
    }
    let best = result.best_entry();
    println!("best: {} with G={}", best.spec, best.groups);
    if let Some(path) = &args.out {
        fs::write(path, result.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.best_out {
        save_model(result.best_fit(), path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let model = load_model(&args.model_file).with_context(|| format!("reading {}", args.model_file.display()))?;
    let ds = args.data.load()?;
    let (labels, _) = predict(&model, &ds.x)?;
    let mut counts = vec![0usize; model.groups];
    for &l in &labels {
        counts[l] += 1;
    }
    for (g, c) in counts.iter().enumerate() {
        println!("cluster {}: {c}", g + 1);
    }
    if let Some(truth) = &ds.labels {
        println!("ARI {:.6}", ari(truth, &labels)?);
    }
    if let Some(path) = &args.out {
        write_labels(path, &labels)?;
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let spec = SimSpec {
        n: args.n,
        count: args.count,
        seed: args.seed,
        ..SimSpec::with_nu(&args.nu)?
    };
    if spec.n == 0 {
        bail!("--n must be positive");
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let study = simulate_study(&spec)?;
    let mut files = Vec::new();
    for (k, ds) in study.iter().enumerate() {
        let name = format!("sim_{:02}.csv", k + 1);
        write_csv(ds, args.out.join(&name))?;
        files.push(name);
    }
    let manifest = serde_json::json!({
        "count": spec.count,
        "n": spec.n,
        "p": spec.mixture.dim(),
        "seed": spec.seed,
        "proportions": spec.mixture.proportions(),
        "nu": spec.mixture.components().iter().map(|c| c.nu).collect::<Vec<_>>(),
        "mu": spec.mixture.components().iter().map(|c| c.mu.as_slice().to_vec()).collect::<Vec<_>>(),
        "sigma_diagonal": spec
            .mixture
            .components()
            .iter()
            .map(|c| c.sigma.as_matrix().diagonal().as_slice().to_vec())
            .collect::<Vec<_>>(),
        "files": files,
        "label_column": "label",
    });
    fs::write(args.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    println!("wrote {} datasets to {}", study.len(), args.out.display());
    Ok(())
}

fn read_labels(path: &Path, column: Option<&LabelColumn>, has_header: bool) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut reader = csv_reader(&text, has_header);
    let mut labels = Vec::new();
    let mut index = None;
    if has_header {
        let header = reader.headers().with_context(|| format!("reading {}", path.display()))?.clone();
        index = Some(match column {
            Some(LabelColumn::Name(name)) => header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| anyhow!("{} has no column {name:?}", path.display()))?,
            Some(LabelColumn::Index(i)) => *i,
            None => header.len().saturating_sub(1),
        });
    }
    for (row, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("reading {}", path.display()))?;
        let j = match (index, column) {
            (Some(j), _) => j,
            (None, Some(LabelColumn::Index(i))) => *i,
            (None, Some(LabelColumn::Name(_))) => bail!("a column name needs a header line"),
            (None, None) => record.len().saturating_sub(1),
        };
        let value = record
            .get(j)
            .ok_or_else(|| anyhow!("{} line {}: no column {j}", path.display(), row + 1 + usize::from(has_header)))?;
        labels.push(value.to_string());
    }
    Ok(labels)
}

fn csv_reader(text: &str, has_header: bool) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let truth = read_labels(&args.truth, args.truth_column.as_ref(), !args.no_header)?;
    let pred = read_labels(&args.pred, args.pred_column.as_ref(), !args.no_header)?;
    let table = confusion(&truth, &pred)?;
    println!("ARI         {:.6}", ari(&truth, &pred)?);
    println!("Rand index  {:.6}", rand_index(&truth, &pred)?);
    println!();
    print!("{table}");
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<thddc::Error>() {
        Some(e) if e.is_numerical() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
