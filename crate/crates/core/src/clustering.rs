//! Style features and k-means clustering with elbow-based model selection.

use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::image::{check_same_dims, DepthMap, RgbImage};
use crate::io::{csv_float, write_bytes, write_csv};
use crate::rng::{derive_seed, seeded, Rng};

pub const DEFAULT_BINS: usize = 16;

/// Per-channel color histogram plus normalized mean depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleFeature {
    /// `3 * bins` values; each channel block sums to 1.
    pub histogram: Vec<f64>,
    pub mean_depth: f64,
}

impl StyleFeature {
    pub fn bins(&self) -> usize {
        self.histogram.len() / 3
    }

    /// Flat clustering vector: histogram followed by `depth_weight * mean_depth`.
    pub fn to_vector(&self, depth_weight: f64) -> Vec<f64> {
        let mut v = self.histogram.clone();
        v.push(depth_weight * self.mean_depth);
        v
    }
}

/// Histogram of each channel over `[0, 1]` in `bins` equal-width bins, plus
/// mean depth divided by `max_depth` and clamped into `[0, 1]`.
pub fn extract_style_features(img: &RgbImage, depth: &DepthMap, bins: usize, max_depth: f64) -> Result<StyleFeature> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    if !(max_depth > 0.0) {
        return Err(Error::InvalidArgument(format!("max depth {max_depth} must be positive")));
    }
    check_same_dims(img, depth)?;
    let n = (img.width() * img.height()) as f64;
    let mut histogram = vec![0.0; 3 * bins];
    for px in img.data().chunks_exact(3) {
        for (c, &v) in px.iter().enumerate() {
            let b = ((v as f64 * bins as f64) as usize).min(bins - 1);
            histogram[c * bins + b] += 1.0;
        }
    }
    histogram.iter_mut().for_each(|h| *h /= n);
    Ok(StyleFeature {
        histogram,
        mean_depth: (depth.mean() / max_depth).clamp(0.0, 1.0),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment or refinement step of the winning restart.
    pub trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid; ties go to the lowest index.
fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, p);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub fn inertia_of(points: &[Vec<f64>], centroids: &[Vec<f64>], labels: &[usize]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| sq_dist(p, &centroids[l]))
        .sum()
}

impl ClusterModel {
    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Nearest centroid of `f` in Euclidean distance, ties to the lowest index.
    pub fn assign(&self, f: &[f64]) -> Result<usize> {
        if f.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "feature has dimension {} but centroids have {}",
                f.len(),
                self.dim()
            )));
        }
        Ok(nearest(&self.centroids, f).0)
    }

    pub fn recompute_inertia(&self, points: &[Vec<f64>]) -> f64 {
        inertia_of(points, &self.centroids, &self.labels)
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == cluster).collect()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_bytes(path, text.as_bytes())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let model: Self = serde_json::from_str(&text)?;
        if model.labels.iter().any(|&l| l >= model.k) || model.centroids.len() != model.k {
            return Err(Error::InvalidArgument(format!(
                "{}: labels or centroids inconsistent with k = {}",
                path.display(),
                model.k
            )));
        }
        Ok(model)
    }
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::InvalidArgument("no points to cluster".into()))?;
    if let Some(bad) = points.iter().position(|p| p.len() != dim) {
        return Err(Error::Dimension(format!(
            "point {bad} has dimension {} but point 0 has {dim}",
            points[bad].len()
        )));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("points contain non-finite values".into()));
    }
    Ok(dim)
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            // rounding may run past the end; fall back to the last positive weight
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centroids.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn assign_all(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    points.par_iter().map(|p| nearest(centroids, p).0).collect()
}

/// Means of the assigned points; an empty cluster is moved onto the point
/// farthest from its own centroid.
fn update_centroids(points: &[Vec<f64>], labels: &[usize], old: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (sums, counts) = means(points, labels, old.len());
    let mut centroids: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .zip(old)
        .map(|((s, &c), o)| if c == 0 { o.clone() } else { s })
        .collect();
    let mut used = vec![false; points.len()];
    for j in (0..old.len()).filter(|&j| counts[j] == 0) {
        let mut far: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if used[i] {
                continue;
            }
            let d = sq_dist(p, &centroids[labels[i]]);
            if far.map_or(true, |(_, fd)| d > fd) {
                far = Some((i, d));
            }
        }
        if let Some((i, _)) = far {
            used[i] = true;
            centroids[j] = points[i].clone();
        }
    }
    centroids
}

fn means(points: &[Vec<f64>], labels: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    (sums, counts)
}

/// One sweep of single-point moves: point `x` leaves cluster `a` for `b` when
/// `n_b/(n_b+1)·|x-μ_b|² < n_a/(n_a-1)·|x-μ_a|²`, which strictly lowers the
/// inertia. Returns whether any point moved.
fn hartigan_pass(points: &[Vec<f64>], labels: &mut [usize], k: usize) -> bool {
    let (mut centroids, mut counts) = means(points, labels, k);
    let mut moved = false;
    for (i, x) in points.iter().enumerate() {
        let a = labels[i];
        if counts[a] < 2 {
            continue;
        }
        let na = counts[a] as f64;
        let leave = na / (na - 1.0) * sq_dist(x, &centroids[a]);
        let mut best: Option<(usize, f64)> = None;
        for b in (0..k).filter(|&b| b != a && counts[b] > 0) {
            let nb = counts[b] as f64;
            let join = nb / (nb + 1.0) * sq_dist(x, &centroids[b]);
            if best.map_or(true, |(_, c)| join < c) {
                best = Some((b, join));
            }
        }
        let Some((b, join)) = best else { continue };
        if join < leave * (1.0 - 1e-12) {
            let (na, nb) = (counts[a] as f64, counts[b] as f64);
            for d in 0..x.len() {
                centroids[a][d] = (centroids[a][d] * na - x[d]) / (na - 1.0);
                centroids[b][d] = (centroids[b][d] * nb + x[d]) / (nb + 1.0);
            }
            counts[a] -= 1;
            counts[b] += 1;
            labels[i] = b;
            moved = true;
        }
    }
    moved
}

/// Lloyd iterations to a fixpoint, then single-point-move refinement; the two
/// alternate until neither changes the assignment or `max_iter` is spent.
fn lloyd(points: &[Vec<f64>], init: Vec<Vec<f64>>, max_iter: usize) -> ClusterModel {
    let k = init.len();
    let mut centroids = init;
    let mut labels = assign_all(points, &centroids);
    let mut trace = vec![inertia_of(points, &centroids, &labels)];
    let mut iter = 0;
    while iter < max_iter {
        iter += 1;
        centroids = update_centroids(points, &labels, &centroids);
        let next = assign_all(points, &centroids);
        trace.push(inertia_of(points, &centroids, &next));
        let fixpoint = next == labels;
        labels = next;
        if fixpoint {
            if !hartigan_pass(points, &mut labels, k) {
                break;
            }
            centroids = means(points, &labels, k).0;
            trace.push(inertia_of(points, &centroids, &labels));
        }
    }
    let inertia = inertia_of(points, &centroids, &labels);
    ClusterModel {
        k,
        centroids,
        labels,
        inertia,
        trace,
    }
}

/// Lloyd's algorithm from `restarts` k-means++ seedings; the lowest-inertia
/// run wins (earliest on ties).
pub fn kmeans_fit(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize, restarts: usize) -> Result<ClusterModel> {
    check_points(points)?;
    if k == 0 || k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must lie in 1..={} (number of points)",
            points.len()
        )));
    }
    let mut rng = seeded(derive_seed(seed, &format!("kmeans/{k}")));
    let mut best: Option<ClusterModel> = None;
    for _ in 0..restarts.max(1) {
        let init = kmeans_pp(points, k, &mut rng);
        let model = lloyd(points, init, max_iter);
        if best.as_ref().map_or(true, |b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Inertia for every `k` in `ks` under the same restart policy.
pub fn elbow_scan(points: &[Vec<f64>], ks: &[usize], seed: u64, max_iter: usize, restarts: usize) -> Result<Vec<(usize, f64)>> {
    if ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!("k range {ks:?} must be strictly ascending")));
    }
    ks.iter()
        .map(|&k| Ok((k, kmeans_fit(points, k, seed, max_iter, restarts)?.inertia)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElbowChoice {
    pub k: usize,
    /// No interior point bends the curve (e.g. a flat curve).
    pub degenerate: bool,
}

/// `k` at the interior point with the largest second difference
/// `c[i-1] - 2 c[i] + c[i+1]`, lowest `k` on ties.
pub fn suggest_k(curve: &[(usize, f64)]) -> Result<ElbowChoice> {
    if curve.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "elbow needs at least 3 points, got {}",
            curve.len()
        )));
    }
    let mut best = (curve[1].0, f64::NEG_INFINITY);
    for w in curve.windows(3) {
        let sd = w[0].1 - 2.0 * w[1].1 + w[2].1;
        if sd > best.1 {
            best = (w[1].0, sd);
        }
    }
    let scale = curve.iter().map(|c| c.1.abs()).fold(0.0, f64::max);
    Ok(ElbowChoice {
        k: best.0,
        degenerate: best.1 <= 1e-12 * (1.0 + scale),
    })
}

pub fn write_elbow_csv(path: &Path, curve: &[(usize, f64)]) -> Result<()> {
    let rows: Vec<Vec<String>> = curve
        .iter()
        .map(|&(k, i)| vec![k.to_string(), csv_float(i)])
        .collect();
    write_csv(path, &["k", "inertia"], &rows)
}

/// One row per item: name, label, then the feature vector.
pub fn write_features_csv(path: &Path, names: &[String], points: &[Vec<f64>], labels: Option<&[usize]>) -> Result<()> {
    let dim = points.first().map_or(0, Vec::len);
    let mut header = vec!["item".to_string(), "cluster".to_string()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = names
        .iter()
        .zip(points)
        .enumerate()
        .map(|(i, (name, p))| {
            let mut row = vec![
                name.clone(),
                labels.map_or(String::new(), |l| l[i].to_string()),
            ];
            row.extend(p.iter().map(|&v| csv_float(v)));
            row
        })
        .collect();
    write_csv(path, &header, &rows)
}

/// Reads a table in the `write_features_csv` layout, ignoring the cluster
/// column. Returns item names and feature vectors in file order.
pub fn read_features_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let source = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let parse_err = |line: u64, reason: String| Error::Parse {
        path: source.clone(),
        line,
        reason,
    };
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.len() < 3 || &header[0] != "item" || &header[1] != "cluster" {
        return Err(parse_err(1, "expected header item,cluster,f0,...".into()));
    }
    let mut names = Vec::new();
    let mut points = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let v = record
            .iter()
            .skip(2)
            .map(|f| f.parse::<f64>().map_err(|e| parse_err(line, format!("{f:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(parse_err(line, "non-finite feature".into()));
        }
        names.push(record[0].to_string());
        points.push(v);
    }
    if points.is_empty() {
        return Err(parse_err(1, "no feature rows".into()));
    }
    Ok((names, points))
}

pub fn write_centroids_csv(path: &Path, model: &ClusterModel) -> Result<()> {
    let mut header = vec!["cluster".to_string()];
    header.extend((0..model.dim()).map(|i| format!("f{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = model
        .centroids
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let mut row = vec![j.to_string()];
            row.extend(c.iter().map(|&v| csv_float(v)));
            row
        })
        .collect();
    write_csv(path, &header, &rows)
}
