//! Experiment configuration and orchestration: data, mode fit, cache,
//! chains and result files.
//!
//! Configuration is INI-style. `[experiment]` holds the data source, mode
//! fit, prior, output and chain defaults; each `[chain.NAME]` section adds
//! one chain. `experiment.chains = MHSS1,RWM` is shorthand for default
//! chains named after their algorithms. Overrides use `section.key=value`
//! (`experiment.` may be omitted) and win over the file.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ini::Ini;
use serde::Serialize;

use crate::cv::{build_cache, CvCache};
use crate::data::{generate_synthetic, load_csv, CsvOptions};
use crate::diag::{summarize, summarize_labelled, ChainMetrics};
use crate::error::{Error, Result};
use crate::glm::{Dataset, ModelKind};
use crate::modefit::{fit_mode, hessian_at, preconditioner, Method, ModeFitConfig, Preconditioner};
use crate::par::{self, Execution};
use crate::samplers::{run_chain, Algorithm, ChainConfig, ChainOutput, Init, Prior, Proposal};
use crate::sidecar::{load_sidecar, save_sidecar};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum DataSource {
    Synthetic {
        n: usize,
        d: usize,
        model: ModelKind,
        seed: u64,
    },
    Csv {
        path: PathBuf,
        options: CsvOptions,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSpec {
    pub name: String,
    pub config: ChainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub data: DataSource,
    pub prior: Prior,
    pub mode_method: Method,
    pub mode_seed: u64,
    /// Sidecar file; read if present and matching, written otherwise.
    pub cache_file: Option<PathBuf>,
    pub chains: Vec<ChainSpec>,
    pub output_dir: PathBuf,
    pub replicates: usize,
}

type Sections = Vec<(String, Vec<(String, String)>)>;

const EXPERIMENT_KEYS: &[&str] = &[
    "data",
    "n",
    "d",
    "model",
    "data_seed",
    "response",
    "intercept",
    "standardize",
    "categorical",
    "mode",
    "mode_seed",
    "prior_sigma",
    "cache",
    "output",
    "replicates",
    "chains",
];
const CHAIN_KEYS: &[&str] = &[
    "algorithm",
    "lambda",
    "gamma",
    "iterations",
    "burn_in",
    "seed",
    "chi",
    "init",
];
const CHAIN_DEFAULT_KEYS: &[&str] = &["gamma", "iterations", "burn_in", "seed", "chi"];

fn set(sections: &mut Sections, section: &str, key: &str, value: &str) {
    let idx = match sections.iter().position(|(s, _)| s == section) {
        Some(i) => i,
        None => {
            sections.push((section.to_owned(), Vec::new()));
            sections.len() - 1
        }
    };
    let props = &mut sections[idx].1;
    match props.iter_mut().find(|(k, _)| k == key) {
        Some(kv) => kv.1 = value.to_owned(),
        None => props.push((key.to_owned(), value.to_owned())),
    }
}

/// Split `section.key=value`; a bare `key=value` targets `[experiment]`.
pub fn parse_override(s: &str) -> Result<(String, String, String)> {
    let (path, value) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{s}' is not of the form key=value")))?;
    let path = path.trim();
    let (section, key) = match path.rsplit_once('.') {
        Some((sec, key)) => (sec.to_owned(), key.to_owned()),
        None => ("experiment".to_owned(), path.to_owned()),
    };
    if key.is_empty() || section.is_empty() {
        return Err(Error::Config(format!(
            "override '{s}' has an empty section or key"
        )));
    }
    Ok((section, key, value.trim().to_owned()))
}

fn num<T: std::str::FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("[{section}] {key} = '{v}' is not a valid number")))
}

fn boolean(section: &str, key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "[{section}] {key} = '{v}' is not a boolean"
        ))),
    }
}

fn list(v: &str) -> Vec<String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

impl ExperimentSpec {
    /// Paths inside the file are relative to the working directory.
    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        Self::from_ini_str(&fs::read_to_string(path)?, overrides)
    }

    pub fn from_ini_str(text: &str, overrides: &[String]) -> Result<Self> {
        Self::parse_setup(text, overrides)?.validated()
    }

    /// Parse without requiring any chains, for commands that only need the
    /// data, prior and mode fit.
    pub fn parse_setup(text: &str, overrides: &[String]) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut sections: Sections = Vec::new();
        for (sec, props) in ini.iter() {
            let name = sec.unwrap_or("experiment");
            for (k, v) in props.iter() {
                set(&mut sections, name, k, v);
            }
        }
        for o in overrides {
            let (s, k, v) = parse_override(o)?;
            set(&mut sections, &s, &k, &v);
        }
        Self::from_sections(&sections)
    }

    pub fn from_overrides(overrides: &[String]) -> Result<Self> {
        Self::from_ini_str("", overrides)
    }

    fn from_sections(sections: &Sections) -> Result<Self> {
        let empty = Vec::new();
        let exp: BTreeMap<&str, &str> = sections
            .iter()
            .find(|(s, _)| s == "experiment")
            .map_or(&empty, |(_, p)| p)
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .collect();
        for k in exp.keys() {
            if !EXPERIMENT_KEYS.contains(k) && !CHAIN_DEFAULT_KEYS.contains(k) {
                return Err(Error::Config(format!("unknown key '{k}' in [experiment]")));
            }
        }
        let e = "experiment";
        let get = |k: &str| exp.get(k).copied();

        let model = ModelKind::parse(get("model").unwrap_or("logistic"))?;
        let data = match get("data").unwrap_or("synthetic") {
            "synthetic" => DataSource::Synthetic {
                n: num(e, "n", get("n").unwrap_or("1000"))?,
                d: num(e, "d", get("d").unwrap_or("10"))?,
                model,
                seed: num(e, "data_seed", get("data_seed").unwrap_or("0"))?,
            },
            path => DataSource::Csv {
                path: PathBuf::from(path),
                options: CsvOptions {
                    model,
                    response: get("response").unwrap_or("y").to_owned(),
                    add_intercept: boolean(e, "intercept", get("intercept").unwrap_or("true"))?,
                    standardize: boolean(e, "standardize", get("standardize").unwrap_or("false"))?,
                    categorical: list(get("categorical").unwrap_or("")),
                },
            },
        };
        let prior = match get("prior_sigma") {
            None | Some("flat") | Some("") => Prior::Flat,
            Some(v) => Prior::GaussianIso {
                sigma: num(e, "prior_sigma", v)?,
            },
        };
        prior.validate()?;
        let mode_method = match get("mode").unwrap_or("full") {
            "full" | "full_gradient" => Method::FullGradient,
            "sgd" => Method::Sgd,
            other => return Err(Error::Config(format!("unknown mode fit method '{other}'"))),
        };

        // Chain sections, preceded by any shorthand chains.
        let mut chain_sections: Vec<(String, Vec<(String, String)>)> = Vec::new();
        for name in list(get("chains").unwrap_or("")) {
            chain_sections.push((name, Vec::new()));
        }
        for (sec, props) in sections {
            if let Some(name) = sec.strip_prefix("chain.") {
                match chain_sections.iter_mut().find(|(n, _)| n == name) {
                    Some(existing) => existing.1.extend(props.iter().cloned()),
                    None => chain_sections.push((name.to_owned(), props.clone())),
                }
            } else if sec != "experiment" {
                return Err(Error::Config(format!("unknown section [{sec}]")));
            }
        }
        let mut chains = Vec::new();
        for (name, props) in chain_sections {
            if chains.iter().any(|c: &ChainSpec| c.name == name) {
                return Err(Error::Config(format!("chain '{name}' is defined twice")));
            }
            chains.push(chain_spec(&name, &props, &exp, prior)?);
        }

        Ok(ExperimentSpec {
            data,
            prior,
            mode_method,
            mode_seed: num(e, "mode_seed", get("mode_seed").unwrap_or("0"))?,
            cache_file: get("cache").filter(|s| !s.is_empty()).map(PathBuf::from),
            chains,
            output_dir: PathBuf::from(get("output").unwrap_or("mhss-out")),
            replicates: num(e, "replicates", get("replicates").unwrap_or("1"))?,
        })
    }

    fn validated(self) -> Result<Self> {
        if self.chains.is_empty() {
            return Err(Error::Config("the experiment defines no chains".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if let DataSource::Synthetic { n, d, .. } = self.data {
            if n == 0 || d == 0 {
                return Err(Error::Config(
                    "synthetic data needs n >= 1 and d >= 1".into(),
                ));
            }
        }
        for c in &self.chains {
            if c.name.is_empty() || c.name.contains(['/', '\\']) {
                return Err(Error::Config(format!(
                    "chain name '{}' is not a valid file stem",
                    c.name
                )));
            }
            c.config.validate()?;
        }
        Ok(self)
    }
}

fn chain_spec(
    name: &str,
    props: &[(String, String)],
    exp: &BTreeMap<&str, &str>,
    prior: Prior,
) -> Result<ChainSpec> {
    let section = format!("chain.{name}");
    let local: BTreeMap<&str, &str> = props
        .iter()
        .map(|(k, v)| (k.as_str(), v.as_str()))
        .collect();
    for k in local.keys() {
        if !CHAIN_KEYS.contains(k) {
            return Err(Error::Config(format!("unknown key '{k}' in [{section}]")));
        }
    }
    let get = |k: &str| {
        local.get(k).copied().or_else(|| {
            CHAIN_DEFAULT_KEYS
                .contains(&k)
                .then(|| exp.get(k).copied())
                .flatten()
        })
    };
    let algorithm = Algorithm::parse(get("algorithm").unwrap_or(name))?;
    let mut c = ChainConfig::new(algorithm);
    c.prior = prior;
    if let Some(v) = get("iterations") {
        c = c.with_iterations(num(&section, "iterations", v)?);
    }
    if let Some(v) = get("burn_in") {
        c.burn_in = num(&section, "burn_in", v)?;
    }
    if let Some(v) = get("lambda") {
        c.lambda = num(&section, "lambda", v)?;
    }
    if let Some(v) = get("gamma") {
        c.gamma = num(&section, "gamma", v)?;
    }
    if let Some(v) = get("seed") {
        c.seed = num(&section, "seed", v)?;
    }
    if let Some(v) = get("chi") {
        c.chi = num(&section, "chi", v)?;
    }
    if let Some(v) = get("init") {
        c.init = match v {
            "mode" | "at-mode" => Init::AtMode,
            pts => Init::Point(
                list(pts)
                    .iter()
                    .map(|p| num(&section, "init", p))
                    .collect::<Result<_>>()?,
            ),
        };
    }
    Ok(ChainSpec {
        name: name.to_owned(),
        config: c,
    })
}

pub fn load_data(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Synthetic { n, d, model, seed } => {
            Ok(generate_synthetic(*n, *d, *model, *seed)?.dataset)
        }
        DataSource::Csv { path, options } => Ok(load_csv(path, options)?.dataset),
    }
}

fn mode_config(method: Method, n: usize, seed: u64, prior: Prior) -> ModeFitConfig {
    let mut cfg = match method {
        Method::FullGradient => ModeFitConfig::full_gradient(),
        Method::Sgd => ModeFitConfig::sgd(n),
    };
    cfg.seed = seed;
    cfg.with_prior(prior)
}

/// Mode, cache and preconditioner, from the sidecar when it matches.
pub fn prepare(
    dataset: &Dataset,
    prior: Prior,
    method: Method,
    seed: u64,
    cache_file: Option<&Path>,
) -> Result<(CvCache, Preconditioner)> {
    if let Some(path) = cache_file.filter(|p| p.exists()) {
        if let (cache, Some(pre)) = load_sidecar(path, dataset)? {
            return Ok((cache, pre));
        }
    }
    let theta_hat = fit_mode(dataset, &mode_config(method, dataset.n(), seed, prior))?;
    let cache = build_cache(dataset, &theta_hat)?;
    let pre = preconditioner(&hessian_at(dataset, &prior, &theta_hat))?;
    if let Some(path) = cache_file {
        save_sidecar(path, dataset, &cache, Some(&pre))?;
    }
    Ok((cache, pre))
}

/// Samples CSV: `iter,theta_0,...,theta_{d-1},accepted,stage1_pass,batch`,
/// one row per retained iteration, floats with 17 significant digits.
pub fn write_samples_csv(path: &Path, out: &ChainOutput) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let mut header = vec!["iter".to_owned()];
    header.extend((0..out.d).map(|j| format!("theta_{j}")));
    header.extend(["accepted", "stage1_pass", "batch"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    for k in 0..out.n_samples() {
        let it = out.burn_in + k;
        write!(w, "{it}")?;
        for v in out.sample(k) {
            write!(w, ",{v:.16e}")?;
        }
        writeln!(
            w,
            ",{},{},{}",
            out.accept_flags[it] as u8, out.stage1_pass_flags[it] as u8, out.batch_sizes[it]
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Read a samples CSV back as a chain output covering the retained rows
/// only (burn-in zero, wall time unknown).
pub fn read_samples_csv(path: &Path) -> Result<ChainOutput> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Invalid(format!("{} is empty", path.display())))??;
    let cols: Vec<&str> = header.split(',').collect();
    let ok = cols.len() >= 4
        && cols[0] == "iter"
        && cols[cols.len() - 3..] == ["accepted", "stage1_pass", "batch"]
        && cols[1..cols.len() - 3]
            .iter()
            .enumerate()
            .all(|(j, c)| *c == format!("theta_{j}"));
    if !ok {
        return Err(Error::Invalid(format!(
            "{} does not have the samples header",
            path.display()
        )));
    }
    let d = cols.len() - 4;
    let mut out = ChainOutput {
        algorithm: Algorithm::Rwm,
        d,
        burn_in: 0,
        samples: Vec::new(),
        accept_flags: Vec::new(),
        stage1_pass_flags: Vec::new(),
        batch_sizes: Vec::new(),
        wall_time_seconds: 0.0,
        full_data_count: 0,
    };
    for (row, line) in lines.enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Invalid(format!("{} row {} is malformed", path.display(), row + 1));
        if f.len() != cols.len() {
            return Err(bad());
        }
        for v in &f[1..=d] {
            out.samples.push(v.parse().map_err(|_| bad())?);
        }
        let flag = |s: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(bad()),
        };
        out.accept_flags.push(flag(f[d + 1])?);
        out.stage1_pass_flags.push(flag(f[d + 2])?);
        out.batch_sizes.push(f[d + 3].parse().map_err(|_| bad())?);
    }
    Ok(out)
}

pub fn diagnose_samples(path: &Path, label: &str) -> Result<ChainMetrics> {
    Ok(summarize_labelled(&read_samples_csv(path)?, label))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub chain: String,
    pub replicate: usize,
    pub metrics: ChainMetrics,
    pub samples_file: PathBuf,
    pub metrics_file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub theta_hat: Vec<f64>,
    pub runs: Vec<RunResult>,
    pub comparison_file: PathBuf,
}

pub const COMPARISON_HEADER: &str =
    "algorithm,acceptance_rate,mean_batch,ess_per_second,ess_per_batch,chain,replicate";

/// Comparison table as CSV text with [`COMPARISON_HEADER`].
pub fn comparison_table(rows: &[(String, usize, ChainMetrics)]) -> String {
    let mut out = format!("{COMPARISON_HEADER}\n");
    for (chain, rep, m) in rows {
        out += &format!(
            "{},{:.6},{:.6},{:.6},{:.6},{},{}\n",
            m.algorithm,
            m.acceptance_rate,
            m.mean_batch,
            m.ess_per_second,
            m.ess_per_batch,
            chain,
            rep
        );
    }
    out
}

fn file_stem(chain: &str, rep: usize, replicates: usize) -> String {
    if replicates == 1 {
        chain.to_owned()
    } else {
        format!("{chain}.r{rep}")
    }
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let spec = spec.clone().validated()?;
    let dataset = load_data(&spec.data)?;
    let (cache, pre) = prepare(
        &dataset,
        spec.prior,
        spec.mode_method,
        spec.mode_seed,
        spec.cache_file.as_deref(),
    )?;
    fs::create_dir_all(&spec.output_dir)?;

    let jobs: Vec<(usize, usize)> = (0..spec.chains.len())
        .flat_map(|c| (0..spec.replicates).map(move |r| (c, r)))
        .collect();
    let outputs = par::map_jobs(jobs.clone(), Execution::default(), |(c, r)| {
        let mut cfg = spec.chains[c].config.clone();
        cfg.stream = r as u64;
        let proposal = Proposal::new(cfg.lambda, &pre)?;
        run_chain(&dataset, &cache, &proposal, &cfg)
    });

    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for ((c, r), out) in jobs.into_iter().zip(outputs) {
        let out = out?;
        let name = &spec.chains[c].name;
        let stem = file_stem(name, r, spec.replicates);
        let samples_file = spec.output_dir.join(format!("{stem}.samples.csv"));
        let metrics_file = spec.output_dir.join(format!("{stem}.metrics.json"));
        write_samples_csv(&samples_file, &out)?;
        let metrics = summarize(&out);
        fs::write(
            &metrics_file,
            serde_json::to_string_pretty(&metrics)? + "\n",
        )?;
        rows.push((name.clone(), r, metrics.clone()));
        runs.push(RunResult {
            chain: name.clone(),
            replicate: r,
            metrics,
            samples_file,
            metrics_file,
        });
    }
    let comparison_file = spec.output_dir.join("comparison.csv");
    fs::write(&comparison_file, comparison_table(&rows))?;
    fs::write(
        spec.output_dir.join("mode.json"),
        serde_json::to_string_pretty(&cache.theta_hat)? + "\n",
    )?;
    Ok(ExperimentReport {
        theta_hat: cache.theta_hat,
        runs,
        comparison_file,
    })
}
