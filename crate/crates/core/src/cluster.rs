//! Self-training clustering: k-means initialization, Student-t soft assignment `Q`,
//! sharpened target `P`, the `KL(P‖Q)` objective and hard labels.

use std::io::Write;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{axpy, for_each_row_mut, Tensor};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("cannot form {k} clusters from {n} points")]
    TooFewPoints { n: usize, k: usize },
    #[error("cluster count must be positive")]
    ZeroClusters,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("cluster {0} has zero total assignment mass")]
    EmptyColumn(usize),
    #[error("non-finite clustering loss")]
    NonFinite,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop when the relative inertia improvement falls below this.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 20,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Tensor,
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

/// Nearest center per point (ties to the lower index) and its squared distance.
fn assign(points: &Tensor, centers: &Tensor) -> (Vec<usize>, Vec<f64>) {
    (0..points.rows())
        .into_par_iter()
        .map(|i| {
            let p = points.row(i);
            let mut best = (0, f64::INFINITY);
            for (c, center) in centers.iter_rows().enumerate() {
                let d = squared_distance(p, center);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .unzip()
}

/// Greedy k-means++: each new center is the best of `2 + ln k` D²-weighted candidates.
fn seed_centers(points: &Tensor, k: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let n = points.rows();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centers = Tensor::zeros(k, points.cols());
    let first = rng.gen_range(0..n);
    centers.row_mut(0).copy_from_slice(points.row(first));
    let mut closest: Vec<f64> = points
        .iter_rows()
        .map(|p| squared_distance(p, points.row(first)))
        .collect();

    for c in 1..k {
        let potential: f64 = closest.iter().sum();
        let candidates: Vec<usize> = if potential > 0.0 {
            let dist = WeightedIndex::new(&closest).expect("positive total weight");
            (0..trials).map(|_| dist.sample(rng)).collect()
        } else {
            (0..trials).map(|_| rng.gen_range(0..n)).collect()
        };
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for cand in candidates {
            let updated: Vec<f64> = points
                .iter_rows()
                .zip(&closest)
                .map(|(p, &d)| d.min(squared_distance(p, points.row(cand))))
                .collect();
            let pot: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|b| pot < b.1) {
                best = Some((cand, pot, updated));
            }
        }
        let (chosen, _, updated) = best.expect("at least one candidate");
        centers.row_mut(c).copy_from_slice(points.row(chosen));
        closest = updated;
    }
    centers
}

fn lloyd(points: &Tensor, mut centers: Tensor, cfg: &KMeansConfig) -> KMeansResult {
    let k = centers.rows();
    let d = points.cols();
    let (mut labels, mut dists) = assign(points, &centers);
    let mut inertia: f64 = dists.iter().sum();
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        iterations += 1;
        let mut sums = Tensor::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            axpy(sums.row_mut(c), 1.0, points.row(i));
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                let row = sums.row(c).iter().map(|v| v * inv).collect::<Vec<_>>();
                centers.row_mut(c).copy_from_slice(&row);
            } else {
                // Re-seed from the point farthest from its current center.
                let far = dists
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                    .0;
                centers.row_mut(c).copy_from_slice(points.row(far));
                dists[far] = 0.0;
            }
        }
        let (new_labels, new_dists) = assign(points, &centers);
        let new_inertia: f64 = new_dists.iter().sum();
        let unchanged = new_labels == labels;
        let improvement = inertia - new_inertia;
        labels = new_labels;
        dists = new_dists;
        let previous = inertia;
        inertia = new_inertia;
        if unchanged || improvement.abs() <= cfg.tol * previous.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    KMeansResult {
        centers,
        labels,
        inertia,
        iterations,
    }
}

/// Lloyd's algorithm from greedy k-means++ seeds; best inertia over `cfg.restarts` runs.
pub fn kmeans(
    points: &Tensor,
    k: usize,
    cfg: &KMeansConfig,
    seed: u64,
) -> Result<KMeansResult, ClusterError> {
    if k == 0 {
        return Err(ClusterError::ZeroClusters);
    }
    if points.rows() < k {
        return Err(ClusterError::TooFewPoints {
            n: points.rows(),
            k,
        });
    }
    let runs: Vec<KMeansResult> = (0..cfg.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let centers = seed_centers(points, k, &mut rng);
            lloyd(points, centers, cfg)
        })
        .collect();
    Ok(runs
        .into_iter()
        .reduce(|best, r| if r.inertia < best.inertia { r } else { best })
        .expect("at least one restart"))
}

/// `q_iu ∝ (1 + ‖z_i − μ_u‖²)⁻¹`, normalized per row.
pub fn soft_assign(z: &Tensor, mu: &Tensor) -> Result<Tensor, ClusterError> {
    if z.cols() != mu.cols() {
        return Err(ClusterError::Shape(format!(
            "embedding width {} vs center width {}",
            z.cols(),
            mu.cols()
        )));
    }
    let mut q = Tensor::zeros(z.rows(), mu.rows());
    for_each_row_mut(&mut q, |i, row| {
        let zi = z.row(i);
        for (u, o) in row.iter_mut().enumerate() {
            *o = 1.0 / (1.0 + squared_distance(zi, mu.row(u)));
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    });
    Ok(q)
}

/// `p_iu ∝ q_iu² / f_u` with cluster frequencies `f_u = Σ_i q_iu`, normalized per row.
pub fn target_distribution(q: &Tensor) -> Result<Tensor, ClusterError> {
    let k = q.cols();
    let mut freq = vec![0.0; k];
    for row in q.iter_rows() {
        for (f, v) in freq.iter_mut().zip(row) {
            *f += v;
        }
    }
    if let Some(u) = freq.iter().position(|&f| f <= 0.0) {
        return Err(ClusterError::EmptyColumn(u));
    }
    let mut p = Tensor::zeros(q.rows(), k);
    for_each_row_mut(&mut p, |i, row| {
        for ((o, &qv), &f) in row.iter_mut().zip(q.row(i)).zip(&freq) {
            *o = qv * qv / f;
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    });
    Ok(p)
}

/// `Σ_i Σ_u p_iu ln(p_iu / q_iu)` with `0 ln 0 = 0`.
pub fn kl_divergence(p: &Tensor, q: &Tensor) -> f64 {
    assert_eq!(p.shape(), q.shape());
    p.data()
        .iter()
        .zip(q.data())
        .map(|(&pv, &qv)| if pv > 0.0 { pv * (pv / qv).ln() } else { 0.0 })
        .sum()
}

#[derive(Debug, Clone)]
pub struct ClusteringLoss {
    pub loss: f64,
    pub d_embedding: Tensor,
    pub d_centers: Tensor,
}

/// `KL(P‖Q)` with `P` held constant, and its gradients w.r.t. `Z` and `μ`:
/// `∂/∂z_i = 2 Σ_u w_iu (p_iu − q_iu)(z_i − μ_u)` with `w_iu = (1 + ‖z_i − μ_u‖²)⁻¹`,
/// and `∂/∂μ_u = −2 Σ_i w_iu (p_iu − q_iu)(z_i − μ_u)`.
pub fn clustering_loss(
    p: &Tensor,
    z: &Tensor,
    mu: &Tensor,
) -> Result<ClusteringLoss, ClusterError> {
    let q = soft_assign(z, mu)?;
    if p.shape() != q.shape() {
        return Err(ClusterError::Shape(format!(
            "target {:?} vs assignment {:?}",
            p.shape(),
            q.shape()
        )));
    }
    let loss = kl_divergence(p, &q);
    if !loss.is_finite() {
        return Err(ClusterError::NonFinite);
    }
    let (n, k, d) = (z.rows(), mu.rows(), z.cols());
    // coef_iu = 2 w_iu (p_iu − q_iu)
    let mut coef = Tensor::zeros(n, k);
    for_each_row_mut(&mut coef, |i, row| {
        let zi = z.row(i);
        for (u, c) in row.iter_mut().enumerate() {
            let w = 1.0 / (1.0 + squared_distance(zi, mu.row(u)));
            *c = 2.0 * w * (p.get(i, u) - q.get(i, u));
        }
    });
    let mut d_z = Tensor::zeros(n, d);
    for_each_row_mut(&mut d_z, |i, row| {
        let zi = z.row(i);
        for u in 0..k {
            let c = coef.get(i, u);
            for ((o, &zv), &mv) in row.iter_mut().zip(zi).zip(mu.row(u)) {
                *o += c * (zv - mv);
            }
        }
    });
    let mut d_mu = Tensor::zeros(k, d);
    for_each_row_mut(&mut d_mu, |u, row| {
        let mu_u = mu.row(u);
        for i in 0..n {
            let c = coef.get(i, u);
            for ((o, &zv), &mv) in row.iter_mut().zip(z.row(i)).zip(mu_u) {
                *o -= c * (zv - mv);
            }
        }
    });
    Ok(ClusteringLoss {
        loss,
        d_embedding: d_z,
        d_centers: d_mu,
    })
}

/// Row-wise argmax; ties go to the smallest cluster index.
pub fn hard_labels(q: &Tensor) -> Vec<usize> {
    q.iter_rows()
        .map(|row| {
            let mut best = 0;
            for (u, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = u;
                }
            }
            best
        })
        .collect()
}

/// Cluster centers plus the current soft assignment and target.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub mu: Tensor,
    pub q: Tensor,
    pub p: Tensor,
    /// Iteration at which `p` was last recomputed.
    pub last_p_update: Option<usize>,
}

impl ClusterState {
    pub fn k(&self) -> usize {
        self.mu.rows()
    }
}

/// Writes a matrix as tab-separated rows after a `rows<TAB>cols` header line.
pub fn export_matrix(path: &Path, m: &Tensor) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}\t{}", m.rows(), m.cols())?;
    for row in m.iter_rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join("\t"))?;
    }
    out.flush()
}
