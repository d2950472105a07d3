//! `mhss` command-line front-end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mhss::data::{generate_synthetic, write_beta, write_csv};
use mhss::diag::ChainMetrics;
use mhss::experiment::{
    comparison_table, diagnose_samples, load_data, prepare, run_experiment, ExperimentSpec,
};
use mhss::glm::ModelKind;
use mhss::Error;

#[derive(Parser)]
#[command(
    name = "mhss",
    version,
    about = "Exact subsampling Metropolis-Hastings for GLM posteriors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic dataset and write it as CSV.
    Generate(GenerateArgs),
    /// Fit the posterior mode and optionally write the cache file.
    FitMode(FitArgs),
    /// Run the chains of an experiment and write samples, metrics and a comparison table.
    Sample(SampleArgs),
    /// Compute metrics from samples CSV files.
    Diagnose(DiagnoseArgs),
    /// Combine metrics JSON files into one comparison table.
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value = "logistic")]
    model: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV (covariates without the intercept, then `y`).
    #[arg(long)]
    out: PathBuf,
    /// Also write the true coefficients, one per line.
    #[arg(long)]
    beta: Option<PathBuf>,
}

/// Data, prior and mode-fit settings shared by `fit-mode` and `sample`.
/// Each flag becomes an `experiment.<key>` override.
#[derive(Args)]
struct SetupArgs {
    /// INI experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key: `section.key=value` (bare keys go to `[experiment]`).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// `synthetic` or a CSV path.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    response: Option<String>,
    #[arg(long)]
    no_intercept: bool,
    #[arg(long)]
    standardize: bool,
    /// Comma-separated categorical columns.
    #[arg(long)]
    categorical: Option<String>,
    /// `full` or `sgd`.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    prior_sigma: Option<f64>,
    /// Cache sidecar file.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, env = "MHSS_OUTPUT_DIR")]
    output: Option<PathBuf>,
}

impl SetupArgs {
    fn overrides(&self) -> Vec<String> {
        let mut o = self.sets.clone();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push(format!("{k}={v}"));
            }
        };
        push("data", self.data.clone());
        push("model", self.model.clone());
        push("n", self.n.map(|v| v.to_string()));
        push("d", self.d.map(|v| v.to_string()));
        push("data_seed", self.data_seed.map(|v| v.to_string()));
        push("response", self.response.clone());
        push("intercept", self.no_intercept.then(|| "false".into()));
        push("standardize", self.standardize.then(|| "true".into()));
        push("categorical", self.categorical.clone());
        push("mode", self.mode.clone());
        push("prior_sigma", self.prior_sigma.map(|v| v.to_string()));
        push(
            "cache",
            self.cache.as_ref().map(|p| p.display().to_string()),
        );
        push(
            "output",
            self.output.as_ref().map(|p| p.display().to_string()),
        );
        o
    }

    fn text(&self) -> Result<String, Error> {
        match &self.config {
            Some(p) => Ok(fs::read_to_string(p)?),
            None => Ok(String::new()),
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    setup: SetupArgs,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    setup: SetupArgs,
    /// Add a chain per algorithm (repeatable or comma-separated).
    #[arg(long = "algorithm", value_delimiter = ',')]
    algorithms: Vec<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Scale for every chain (otherwise each algorithm's default).
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    chi: Option<f64>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(required = true)]
    samples: Vec<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(required = true)]
    metrics: Vec<PathBuf>,
    /// Write the table here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Print to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<(), Error> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::BoundViolation { .. } => 3,
        Error::Config(_)
        | Error::Invalid(_)
        | Error::Domain { .. }
        | Error::DimensionMismatch { .. }
        | Error::UnsupportedModel(_)
        | Error::Sidecar(_)
        | Error::Csv(_)
        | Error::Json(_) => 2,
        _ => 1,
    }
}

fn generate(a: &GenerateArgs) -> Result<(), Error> {
    let model = ModelKind::parse(&a.model)?;
    let s = generate_synthetic(a.n, a.d, model, a.seed)?;
    write_csv(&a.out, &s.dataset)?;
    if let Some(p) = &a.beta {
        write_beta(p, &s.beta)?;
    }
    eprintln!("wrote {} rows to {}", a.n, a.out.display());
    Ok(())
}

fn fit(a: &FitArgs) -> Result<(), Error> {
    let spec = ExperimentSpec::parse_setup(&a.setup.text()?, &a.setup.overrides())?;
    let dataset = load_data(&spec.data)?;
    let (cache, _) = prepare(
        &dataset,
        spec.prior,
        spec.mode_method,
        spec.mode_seed,
        spec.cache_file.as_deref(),
    )?;
    emit(&(serde_json::to_string(&cache.theta_hat)? + "\n"))
}

fn sample(a: &SampleArgs) -> Result<(), Error> {
    let mut overrides = Vec::new();
    if !a.algorithms.is_empty() {
        overrides.push(format!("chains={}", a.algorithms.join(",")));
    }
    overrides.extend(a.setup.overrides());
    if let Some(r) = a.replicates {
        overrides.push(format!("replicates={r}"));
    }
    let mut spec = ExperimentSpec::parse_setup(&a.setup.text()?, &overrides)?;
    if let Some(l) = a.lambda {
        for c in &mut spec.chains {
            c.config.lambda = l;
        }
    }
    // Command-line chain settings beat chain sections of the file.
    for c in &mut spec.chains {
        if let Some(v) = a.iterations {
            c.config = c.config.clone().with_iterations(v);
        }
        if let Some(v) = a.burn_in {
            c.config.burn_in = v;
        }
        if let Some(v) = a.seed {
            c.config.seed = v;
        }
        if let Some(v) = a.gamma {
            c.config.gamma = v;
        }
        if let Some(v) = a.chi {
            c.config.chi = v;
        }
    }
    let report = run_experiment(&spec)?;
    eprintln!("results in {}", spec.output_dir.display());
    emit(&fs::read_to_string(&report.comparison_file)?)
}

fn stem(p: &Path) -> String {
    let name = p
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.strip_suffix(".samples.csv")
        .unwrap_or(&name)
        .to_owned()
}

fn diagnose(a: &DiagnoseArgs) -> Result<(), Error> {
    let all: Vec<ChainMetrics> = a
        .samples
        .iter()
        .map(|p| diagnose_samples(p, &stem(p)))
        .collect::<Result<_, _>>()?;
    emit(&(serde_json::to_string_pretty(&all)? + "\n"))
}

fn compare(a: &CompareArgs) -> Result<(), Error> {
    let mut rows = Vec::new();
    for p in &a.metrics {
        let m: ChainMetrics = serde_json::from_str(&fs::read_to_string(p)?)?;
        let name = p
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let chain = name
            .strip_suffix(".metrics.json")
            .unwrap_or(&name)
            .to_owned();
        rows.push((chain, 0, m));
    }
    let table = comparison_table(&rows);
    match &a.out {
        Some(path) => fs::write(path, table)?,
        None => emit(&table)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => generate(a),
        Command::FitMode(a) => fit(a),
        Command::Sample(a) => sample(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Compare(a) => compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
