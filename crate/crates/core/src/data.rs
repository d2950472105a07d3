//! Synthetic designs and CSV ingestion.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{dot, Dataset, ModelKind};
use crate::special::{norm_cdf, sigmoid, softplus};

/// A simulated dataset together with the coefficients that generated it.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub beta: Vec<f64>,
}

/// Intercept column of ones, remaining covariates iid `N(0, 1/d)`,
/// coefficients iid `N(0, 1)` and responses drawn from the model.
pub fn generate_synthetic(n: usize, d: usize, model: ModelKind, seed: u64) -> Result<Synthetic> {
    if n == 0 || d == 0 {
        return Err(Error::Invalid(
            "synthetic data needs n >= 1 and d >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let sd = 1.0 / (d as f64).sqrt();
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    let mut row = vec![1.0; d];
    for _ in 0..n {
        for v in row.iter_mut().skip(1) {
            *v = sd * rng.sample::<f64, _>(StandardNormal);
        }
        let eta = dot(&row, &beta);
        let resp = match model {
            ModelKind::Logistic => (rng.random::<f64>() < sigmoid(eta)) as u8 as f64,
            ModelKind::Probit => (rng.random::<f64>() < norm_cdf(eta)) as u8 as f64,
            ModelKind::PoissonSoftplus { rate_scale } => {
                let mean = rate_scale * softplus(eta);
                if mean > 0.0 {
                    Poisson::new(mean)
                        .map_err(|e| Error::Invalid(format!("Poisson mean {mean}: {e}")))?
                        .sample(&mut rng)
                        .floor()
                } else {
                    0.0
                }
            }
        };
        y.push(resp);
        x.extend_from_slice(&row);
    }
    Ok(Synthetic {
        dataset: Dataset::new(x, y, d, model)?,
        beta,
    })
}

/// Write covariates (without the intercept column) and the response as CSV
/// with header `x1,...,x{d-1},y`. Reading it back with an added intercept
/// reproduces the dataset exactly.
pub fn write_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = dataset.d();
    let mut header: Vec<String> = (1..d).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for i in 0..dataset.n() {
        let mut rec: Vec<String> = dataset.row(i)[1..]
            .iter()
            .map(|v| format!("{v:.16e}"))
            .collect();
        rec.push(format!("{}", dataset.y(i)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_beta(path: &Path, beta: &[f64]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for b in beta {
        writeln!(f, "{b:.16e}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub model: ModelKind,
    pub response: String,
    pub add_intercept: bool,
    pub standardize: bool,
    /// Columns to one-hot encode (levels sorted, first level dropped).
    /// Every other column must be numeric.
    pub categorical: Vec<String>,
}

impl CsvOptions {
    pub fn new(model: ModelKind, response: impl Into<String>) -> Self {
        CsvOptions {
            model,
            response: response.into(),
            add_intercept: true,
            standardize: false,
            categorical: Vec::new(),
        }
    }
}

/// A dataset read from CSV with the names of its design columns.
#[derive(Debug, Clone)]
pub struct LoadedCsv {
    pub dataset: Dataset,
    pub columns: Vec<String>,
}

pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<LoadedCsv> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let find = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| {
            Error::Invalid(format!("column '{name}' not found in {}", path.display()))
        })
    };
    let resp_col = find(&opts.response)?;
    let cat_cols: Vec<usize> = opts
        .categorical
        .iter()
        .map(|c| find(c))
        .collect::<Result<_>>()?;
    let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;

    let parse = |row: usize, col: usize, cell: &str| -> Result<f64> {
        cell.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "non-numeric cell '{cell}' in column '{}' at data row {}",
                    header[col],
                    row + 1
                ))
            })
    };

    // Design columns in file order; each expands to one or more outputs.
    enum Col {
        Numeric(usize),
        Categorical(usize, Vec<String>),
    }
    let mut cols = Vec::new();
    for c in 0..header.len() {
        if c == resp_col {
            continue;
        }
        if cat_cols.contains(&c) {
            let levels: BTreeSet<String> = records.iter().map(|r| r[c].to_owned()).collect();
            cols.push(Col::Categorical(c, levels.into_iter().collect()));
        } else {
            cols.push(Col::Numeric(c));
        }
    }

    let mut names = Vec::new();
    if opts.add_intercept {
        names.push("(intercept)".to_owned());
    }
    for col in &cols {
        match col {
            Col::Numeric(c) => names.push(header[*c].clone()),
            Col::Categorical(c, levels) => {
                names.extend(levels.iter().skip(1).map(|l| format!("{}={l}", header[*c])))
            }
        }
    }
    let d = names.len();
    if d == 0 {
        return Err(Error::Invalid("no covariate columns".into()));
    }

    let n = records.len();
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for (i, rec) in records.iter().enumerate() {
        if rec.len() != header.len() {
            return Err(Error::Invalid(format!(
                "data row {} has {} fields",
                i + 1,
                rec.len()
            )));
        }
        y.push(parse(i, resp_col, &rec[resp_col])?);
        if opts.add_intercept {
            x.push(1.0);
        }
        for col in &cols {
            match col {
                Col::Numeric(c) => x.push(parse(i, *c, &rec[*c])?),
                Col::Categorical(c, levels) => {
                    x.extend(levels.iter().skip(1).map(|l| (rec[*c] == *l) as u8 as f64))
                }
            }
        }
    }

    if opts.standardize {
        let first = opts.add_intercept as usize;
        for j in first..d {
            let mean = (0..n).map(|i| x[i * d + j]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (x[i * d + j] - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            if !(sd > 0.0) {
                return Err(Error::Invalid(format!(
                    "column '{}' is constant and cannot be standardized",
                    names[j]
                )));
            }
            for i in 0..n {
                x[i * d + j] = (x[i * d + j] - mean) / sd;
            }
        }
    }

    Ok(LoadedCsv {
        dataset: Dataset::new(x, y, d, opts.model)?,
        columns: names,
    })
}
