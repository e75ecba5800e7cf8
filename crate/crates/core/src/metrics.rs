//! SSIM, PSNR and Fréchet distance between feature clouds.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::discgan::StyleBank;
use crate::error::{io_err, Error, Result};
use crate::image::RgbImage;
use crate::io::{csv_float, write_csv};

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Eigenvalues below this are a numerical failure rather than rounding noise.
pub const NEGATIVE_EIGEN_TOLERANCE: f64 = 1e-6;

fn same_dims(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Dimension(format!(
            "images are {}x{} and {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    /// Zero mean squared error.
    Identical,
    Db(f64),
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Identical => None,
            Psnr::Db(v) => Some(v),
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Identical => f.write_str("identical"),
            Psnr::Db(v) => f.write_str(&csv_float(*v)),
        }
    }
}

pub fn mse(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_dims(a, b)?;
    let n = a.data().len().max(1) as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / n)
}

/// `10 log10(peak² / MSE)` over all channels.
pub fn psnr(a: &RgbImage, b: &RgbImage, peak: f64) -> Result<Psnr> {
    let m = mse(a, b)?;
    Ok(psnr_from_mse(m, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> Psnr {
    if mse == 0.0 {
        Psnr::Identical
    } else {
        Psnr::Db(10.0 * (peak * peak / mse).log10())
    }
}

/// Mean SSIM over all 8x8 windows (stride 1) of each channel, averaged over
/// channels, with peak value 1.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    ssim_with(a, b, 1.0, SSIM_WINDOW)
}

pub fn ssim_with(a: &RgbImage, b: &RgbImage, peak: f64, window: usize) -> Result<f64> {
    same_dims(a, b)?;
    let (w, h) = a.dims();
    if w < window || h < window || window == 0 {
        return Err(Error::Dimension(format!(
            "image {w}x{h} is smaller than the {window}x{window} window"
        )));
    }
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let area = (window * window) as f64;
    let per_channel: Vec<f64> = (0..3)
        .into_par_iter()
        .map(|c| {
            let xa: Vec<f64> = a.channel(c).map(f64::from).collect();
            let xb: Vec<f64> = b.channel(c).map(f64::from).collect();
            let mut total = 0.0;
            for y0 in 0..=h - window {
                for x0 in 0..=w - window {
                    let idx = |i: usize| (y0 + i / window) * w + x0 + i % window;
                    let (mut ma, mut mb) = (0.0, 0.0);
                    for i in 0..window * window {
                        ma += xa[idx(i)];
                        mb += xb[idx(i)];
                    }
                    ma /= area;
                    mb /= area;
                    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                    for i in 0..window * window {
                        let (da, db) = (xa[idx(i)] - ma, xb[idx(i)] - mb);
                        va += da * da;
                        vb += db * db;
                        cov += da * db;
                    }
                    va /= area;
                    vb /= area;
                    cov /= area;
                    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                }
            }
            total / ((w - window + 1) * (h - window + 1)) as f64
        })
        .collect();
    Ok(per_channel.iter().sum::<f64>() / 3.0)
}

/// Embedding vectors with their mean and `1/(n-1)` covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureCloud {
    pub vectors: Vec<Vec<f64>>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl FeatureCloud {
    pub fn from_vectors(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let n = vectors.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "a feature cloud needs at least 2 vectors, got {n}"
            )));
        }
        let dim = vectors[0].len();
        if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::Dimension("feature vectors must share a non-zero dimension".into()));
        }
        let mut mean = DVector::zeros(dim);
        for v in &vectors {
            mean += DVector::from_column_slice(v);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(dim, dim);
        for v in &vectors {
            let d = DVector::from_column_slice(v) - &mean;
            cov += &d * d.transpose();
        }
        cov /= (n - 1) as f64;
        Ok(Self { vectors, mean, cov })
    }

    pub fn n(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric eigendecomposition with small negative eigenvalues clipped to 0.
fn clipped_eigen(m: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let mut eig = SymmetricEigen::new(symmetrize(m));
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for v in eig.eigenvalues.iter_mut() {
        if *v < -NEGATIVE_EIGEN_TOLERANCE * scale {
            return Err(Error::Numerical(format!(
                "{what} has eigenvalue {v:e}; expected a positive semidefinite matrix"
            )));
        }
        *v = v.max(0.0);
    }
    Ok(eig)
}

/// Principal square root of a symmetric PSD matrix via eigendecomposition.
pub fn sqrtm_eigen(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = clipped_eigen(m, "matrix")?;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(symmetrize(&(&eig.eigenvectors * d * eig.eigenvectors.transpose())))
}

/// Principal square root of an SPD matrix by the coupled Newton–Schulz
/// iteration on `m / ||m||_F`.
pub fn sqrtm_newton_schulz(m: &DMatrix<f64>, max_iter: usize, tol: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Dimension(format!("{}x{} matrix is not square", n, m.ncols())));
    }
    let norm = m.norm();
    if norm == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let mut y = m / norm;
    let mut z = eye.clone();
    for _ in 0..max_iter {
        let t = (&eye * 3.0 - &z * &y) * 0.5;
        let y_next = &y * &t;
        z = &t * &z;
        let change = (&y_next - &y).norm();
        y = y_next;
        if change <= tol * y.norm() {
            return Ok(y * norm.sqrt());
        }
    }
    Err(Error::Numerical(format!(
        "Newton-Schulz square root did not converge in {max_iter} iterations"
    )))
}

/// Fréchet distance `|μr-μg|² + tr(Σr + Σg - 2 (Σr Σg)^½)` before clamping.
///
/// The trace term is evaluated from the eigenvalues of the symmetric matrix
/// `Σr^½ Σg Σr^½`, which has the same spectrum as `Σr Σg`.
pub fn fid_unclamped(real: &FeatureCloud, gen: &FeatureCloud) -> Result<f64> {
    if real.dim() != gen.dim() {
        return Err(Error::Dimension(format!(
            "feature clouds have dimensions {} and {}",
            real.dim(),
            gen.dim()
        )));
    }
    clipped_eigen(&gen.cov, "generated covariance")?;
    let root = sqrtm_eigen(&real.cov)?;
    let inner = &root * &gen.cov * &root;
    let eig = clipped_eigen(&inner, "covariance product")?;
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|v| v.sqrt()).sum();
    let diff = &real.mean - &gen.mean;
    Ok(diff.dot(&diff) + real.cov.trace() + gen.cov.trace() - 2.0 * tr_sqrt)
}

pub fn fid(real: &FeatureCloud, gen: &FeatureCloud) -> Result<f64> {
    Ok(fid_unclamped(real, gen)?.max(0.0))
}

/// Image-to-vector maps for Fréchet distance.
pub enum Embedder<'a> {
    /// Global average pooling of every style-bank scale, concatenated.
    Bank(&'a StyleBank),
    /// Box-downsampled pixels, `side x side x 3`, row-major interleaved.
    Pixels { side: usize },
}

impl Embedder<'_> {
    pub fn embed(&self, img: &RgbImage) -> Result<Vec<f64>> {
        match self {
            Embedder::Bank(bank) => {
                let mut v = Vec::new();
                for f in bank.features(&img.to_tensor())? {
                    let [_, c, h, w] = f.shape();
                    let hw = h * w;
                    v.extend((0..c).map(|ch| {
                        f.data()[ch * hw..(ch + 1) * hw].iter().map(|&x| x as f64).sum::<f64>() / hw as f64
                    }));
                }
                Ok(v)
            }
            Embedder::Pixels { side } => downsample(img, *side),
        }
    }
}

fn downsample(img: &RgbImage, side: usize) -> Result<Vec<f64>> {
    let (w, h) = img.dims();
    if side == 0 || w % side != 0 || h % side != 0 {
        return Err(Error::Dimension(format!(
            "cannot box-downsample {w}x{h} to {side}x{side}"
        )));
    }
    let (bx, by) = (w / side, h / side);
    let mut out = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            let mut acc = [0.0f64; 3];
            for yy in y * by..(y + 1) * by {
                for xx in x * bx..(x + 1) * bx {
                    let p = img.pixel(xx, yy);
                    for c in 0..3 {
                        acc[c] += p[c] as f64;
                    }
                }
            }
            out.extend(acc.iter().map(|a| a / (bx * by) as f64));
        }
    }
    Ok(out)
}

pub fn embed_images(images: &[RgbImage], embedder: &Embedder) -> Result<FeatureCloud> {
    let vectors = images
        .par_iter()
        .map(|img| embedder.embed(img))
        .collect::<Result<Vec<_>>>()?;
    FeatureCloud::from_vectors(vectors)
}

/// Reads externally computed embeddings: a text line `n dim`, a newline, then
/// `n * dim` little-endian f64 values.
pub fn decode_embeddings(bytes: &[u8], source: &str) -> Result<FeatureCloud> {
    let fail = |offset: usize, reason: String| Error::Format {
        path: source.into(),
        offset,
        reason,
    };
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| fail(bytes.len(), "missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| fail(0, "header is not text".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let parse = |i: usize| -> Option<usize> { fields.get(i)?.parse().ok() };
    let (n, dim) = match (parse(0), parse(1), fields.len()) {
        (Some(n), Some(d), 2) => (n, d),
        _ => return Err(fail(0, format!("header {header:?} is not `n dim`"))),
    };
    let payload = &bytes[nl + 1..];
    let expected = n
        .checked_mul(dim)
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| fail(0, "header sizes overflow".into()))?;
    if payload.len() != expected {
        return Err(fail(
            nl + 1 + payload.len().min(expected),
            format!("expected {expected} payload bytes, found {}", payload.len()),
        ));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    FeatureCloud::from_vectors(values.chunks(dim.max(1)).map(<[f64]>::to_vec).collect())
}

pub fn encode_embeddings(vectors: &[Vec<f64>]) -> Vec<u8> {
    let dim = vectors.first().map_or(0, Vec::len);
    let mut out = format!("{} {dim}\n", vectors.len()).into_bytes();
    for v in vectors {
        out.extend(v.iter().flat_map(|x| x.to_le_bytes()));
    }
    out
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<FeatureCloud> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_embeddings(&bytes, &path.display().to_string())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairScore {
    pub ssim: f64,
    pub psnr: Psnr,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterReport {
    pub cluster: String,
    pub pairs: Vec<PairScore>,
    pub ssim: f64,
    /// Mean dB over non-identical pairs; `Identical` when every pair is.
    pub psnr: Psnr,
    pub fid: f64,
}

/// Per-pair SSIM/PSNR of `generated[i]` against `reference[i]`, plus FID
/// between the two sets under `embedder`.
pub fn evaluate_cluster(
    cluster: &str,
    generated: &[RgbImage],
    reference: &[RgbImage],
    embedder: &Embedder,
) -> Result<ClusterReport> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::InvalidArgument(format!("cluster {cluster}: empty image set")));
    }
    if generated.len() != reference.len() {
        return Err(Error::InvalidArgument(format!(
            "cluster {cluster}: {} generated vs {} reference images",
            generated.len(),
            reference.len()
        )));
    }
    let pairs = generated
        .par_iter()
        .zip(reference)
        .map(|(g, r)| {
            Ok(PairScore {
                ssim: ssim(g, r)?,
                psnr: psnr(g, r, 1.0)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ssim_mean = pairs.iter().map(|p| p.ssim).sum::<f64>() / pairs.len() as f64;
    let finite: Vec<f64> = pairs.iter().filter_map(|p| p.psnr.db()).collect();
    let psnr_mean = if finite.is_empty() {
        Psnr::Identical
    } else {
        Psnr::Db(finite.iter().sum::<f64>() / finite.len() as f64)
    };
    let fid = fid(&embed_images(reference, embedder)?, &embed_images(generated, embedder)?)?;
    Ok(ClusterReport {
        cluster: cluster.to_string(),
        pairs,
        ssim: ssim_mean,
        psnr: psnr_mean,
        fid,
    })
}

pub const REPORT_HEADER: [&str; 3] = ["metric", "cluster", "value"];

/// `metric,cluster,value` rows: ssim, psnr and fid per cluster, then the
/// pooled FID labeled `overall` when given.
pub fn write_report(path: &Path, reports: &[ClusterReport], overall_fid: Option<f64>) -> Result<()> {
    let mut rows = Vec::new();
    for metric in ["ssim", "psnr", "fid"] {
        for r in reports {
            let value = match metric {
                "ssim" => csv_float(r.ssim),
                "psnr" => r.psnr.to_string(),
                _ => csv_float(r.fid),
            };
            rows.push(vec![metric.to_string(), r.cluster.clone(), value]);
        }
    }
    if let Some(f) = overall_fid {
        rows.push(vec!["fid".into(), "overall".into(), csv_float(f)]);
    }
    write_csv(path, &REPORT_HEADER, &rows)
}

/// One row per image pair: cluster, index, ssim, psnr.
pub fn write_pair_report(path: &Path, reports: &[ClusterReport]) -> Result<()> {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .flat_map(|r| {
            r.pairs.iter().enumerate().map(move |(i, p)| {
                vec![r.cluster.clone(), i.to_string(), csv_float(p.ssim), p.psnr.to_string()]
            })
        })
        .collect();
    write_csv(path, &["cluster", "index", "ssim", "psnr"], &rows)
}
