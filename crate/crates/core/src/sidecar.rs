//! Binary cache file holding a [`CvCache`] and, optionally, the proposal
//! preconditioner, so repeated experiments on the same data skip the mode
//! fit and the `O(n d^2)` build.
//!
//! Layout (little-endian): 8-byte magic, `u32` version, `u32` model code,
//! `f64` Poisson rate, `u64` n, `u64` d, 32-byte SHA-256 of the data, `u8`
//! preconditioner flag, then the `f64` arrays in field order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::cv::CvCache;
use crate::error::{Error, Result};
use crate::glm::{Dataset, ModelKind};
use crate::modefit::Preconditioner;

const MAGIC: &[u8; 8] = b"MHSSCACH";
const VERSION: u32 = 1;

fn model_code(model: ModelKind) -> (u32, f64) {
    match model {
        ModelKind::Logistic => (0, 0.0),
        ModelKind::Probit => (1, 0.0),
        ModelKind::PoissonSoftplus { rate_scale } => (2, rate_scale),
    }
}

/// SHA-256 over the model, shape, covariates and responses.
pub fn data_fingerprint(dataset: &Dataset) -> [u8; 32] {
    let mut h = Sha256::new();
    let (code, rate) = model_code(dataset.model());
    h.update(code.to_le_bytes());
    h.update(rate.to_le_bytes());
    h.update((dataset.n() as u64).to_le_bytes());
    h.update((dataset.d() as u64).to_le_bytes());
    for v in dataset.covariates().iter().chain(dataset.responses()) {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

fn put(w: &mut impl Write, xs: &[f64]) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_sidecar(
    path: &Path,
    dataset: &Dataset,
    cache: &CvCache,
    pre: Option<&Preconditioner>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let (code, rate) = model_code(dataset.model());
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&code.to_le_bytes())?;
    w.write_all(&rate.to_le_bytes())?;
    w.write_all(&(cache.n() as u64).to_le_bytes())?;
    w.write_all(&(cache.d() as u64).to_le_bytes())?;
    w.write_all(&data_fingerprint(dataset))?;
    w.write_all(&[pre.is_some() as u8])?;
    put(&mut w, &cache.theta_hat)?;
    put(&mut w, &cache.eta_hat)?;
    put(&mut w, &cache.dh_hat)?;
    put(&mut w, &cache.d2h_hat)?;
    put(&mut w, &cache.sum_g)?;
    put(&mut w, cache.sum_h.transpose().as_slice())?;
    put(&mut w, &cache.x_norm)?;
    put(&mut w, &cache.c1)?;
    put(&mut w, &cache.c2)?;
    put(&mut w, &[cache.c1_total, cache.c2_total])?;
    put(&mut w, &cache.x_maxabs)?;
    if let Some(p) = pre {
        put(&mut w, p.v.transpose().as_slice())?;
        put(&mut w, p.chol.transpose().as_slice())?;
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|_| Error::Sidecar("file is truncated".into()))?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn vec(&mut self, len: usize) -> Result<Vec<f64>> {
        (0..len).map(|_| self.f64()).collect()
    }

    fn matrix(&mut self, d: usize) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_row_slice(d, d, &self.vec(d * d)?))
    }
}

/// Load a cache written for exactly this dataset.
pub fn load_sidecar(path: &Path, dataset: &Dataset) -> Result<(CvCache, Option<Preconditioner>)> {
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
    };
    if &r.bytes::<8>()? != MAGIC {
        return Err(Error::Sidecar(format!(
            "{} is not a cache file",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Sidecar(format!("unsupported version {version}")));
    }
    let (code, rate) = (r.u32()?, r.f64()?);
    let (n, d) = (r.u64()? as usize, r.u64()? as usize);
    let digest = r.bytes::<32>()?;
    if (code, rate) != model_code(dataset.model()) || n != dataset.n() || d != dataset.d() {
        return Err(Error::Sidecar(
            "model or shape differs from the dataset".into(),
        ));
    }
    if digest != data_fingerprint(dataset) {
        return Err(Error::Sidecar(
            "data fingerprint differs from the dataset".into(),
        ));
    }
    let has_pre = r.bytes::<1>()?[0] != 0;
    let theta_hat = r.vec(d)?;
    let eta_hat = r.vec(n)?;
    let dh_hat = r.vec(n)?;
    let d2h_hat = r.vec(n)?;
    let sum_g = r.vec(d)?;
    let sum_h = r.matrix(d)?;
    let x_norm = r.vec(n)?;
    let c1 = r.vec(n)?;
    let c2 = r.vec(n)?;
    let c1_total = r.f64()?;
    let c2_total = r.f64()?;
    let x_maxabs = r.vec(n)?;
    let pre = if has_pre {
        Some(Preconditioner {
            v: r.matrix(d)?,
            chol: r.matrix(d)?,
        })
    } else {
        None
    };
    if r.inner.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Sidecar("trailing bytes after the cache".into()));
    }
    Ok((
        CvCache {
            theta_hat,
            eta_hat,
            dh_hat,
            d2h_hat,
            sum_g,
            sum_h,
            x_norm,
            c1,
            c2,
            c1_total,
            c2_total,
            x_maxabs,
        },
        pre,
    ))
}
