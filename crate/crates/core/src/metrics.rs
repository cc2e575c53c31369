//! External clustering metrics: ACC (optimal one-to-one matching), NMI, macro F1, ARI.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("prediction has {pred} labels but truth has {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("no labels to compare")]
    Empty,
}

pub const NMI_NORMALIZATION: &str = "arithmetic";
pub const FSCORE_VARIANT: &str = "macro-f1-after-acc-mapping";

/// Minimum-cost perfect assignment on a square cost matrix (row-major, `n × n`).
/// Returns `assignment[row] = column`.
pub fn hungarian(cost: &[i64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    // Potentials formulation with 1-based sentinels: u over rows, v over columns,
    // p[col] = row matched to col (0 = none).
    const INF: i64 = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

/// Contingency table between predicted clusters (rows) and true classes (columns),
/// with both label sets compressed to dense indices in ascending id order.
#[derive(Debug, Clone, PartialEq)]
pub struct Contingency {
    pub cluster_ids: Vec<usize>,
    pub class_ids: Vec<usize>,
    pub counts: Vec<Vec<u64>>,
    pub n: u64,
}

impl Contingency {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self, MetricsError> {
        if pred.len() != truth.len() {
            return Err(MetricsError::LengthMismatch {
                pred: pred.len(),
                truth: truth.len(),
            });
        }
        if pred.is_empty() {
            return Err(MetricsError::Empty);
        }
        let index = |labels: &[usize]| -> (Vec<usize>, BTreeMap<usize, usize>) {
            let ids: Vec<usize> = labels
                .iter()
                .copied()
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            let map = ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
            (ids, map)
        };
        let (cluster_ids, cmap) = index(pred);
        let (class_ids, tmap) = index(truth);
        let mut counts = vec![vec![0u64; class_ids.len()]; cluster_ids.len()];
        for (p, t) in pred.iter().zip(truth) {
            counts[cmap[p]][tmap[t]] += 1;
        }
        Ok(Self {
            cluster_ids,
            class_ids,
            counts,
            n: pred.len() as u64,
        })
    }

    fn cluster_sizes(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    fn class_sizes(&self) -> Vec<u64> {
        (0..self.class_ids.len())
            .map(|c| self.counts.iter().map(|r| r[c]).sum())
            .collect()
    }

    /// Optimal one-to-one cluster → class matching on the zero-padded square table.
    /// Returns `(matched count, per-cluster class index)`.
    fn best_matching(&self) -> (u64, Vec<Option<usize>>) {
        let (kp, kt) = (self.cluster_ids.len(), self.class_ids.len());
        let s = kp.max(kt);
        let max = self.n as i64;
        let mut cost = vec![max; s * s];
        for (r, row) in self.counts.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                cost[r * s + c] = max - v as i64;
            }
        }
        let assignment = hungarian(&cost, s);
        let mut matched = 0;
        let mut mapping = vec![None; kp];
        for r in 0..kp {
            let c = assignment[r];
            if c < kt {
                matched += self.counts[r][c];
                mapping[r] = Some(c);
            }
        }
        (matched, mapping)
    }
}

/// Best matched fraction over one-to-one cluster/class mappings, plus the mapping from
/// predicted id to class id (clusters left unmatched when there are more clusters than
/// classes are omitted).
pub fn accuracy(
    pred: &[usize],
    truth: &[usize],
) -> Result<(f64, BTreeMap<usize, usize>), MetricsError> {
    let table = Contingency::new(pred, truth)?;
    let (matched, mapping) = table.best_matching();
    let named = mapping
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| (table.cluster_ids[r], table.class_ids[c])))
        .collect();
    Ok((matched as f64 / table.n as f64, named))
}

fn entropy(sizes: &[u64], n: f64) -> f64 {
    sizes
        .iter()
        .filter(|&&s| s > 0)
        .map(|&s| {
            let p = s as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the arithmetic mean of the two entropies.
/// Two single-block partitions score 1.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64, MetricsError> {
    let table = Contingency::new(pred, truth)?;
    let n = table.n as f64;
    let a = table.cluster_sizes();
    let b = table.class_sizes();
    let mut mi = 0.0;
    for (r, row) in table.counts.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v > 0 {
                let v = v as f64;
                mi += v / n * (n * v / (a[r] as f64 * b[c] as f64)).ln();
            }
        }
    }
    let (ha, hb) = (entropy(&a, n), entropy(&b, n));
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    Ok((mi / ((ha + hb) / 2.0)).clamp(0.0, 1.0))
}

fn pairs(x: u64) -> f64 {
    (x as f64) * (x as f64 - 1.0) / 2.0
}

/// Adjusted Rand index on pair counts; 1 when the adjustment denominator vanishes.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64, MetricsError> {
    let table = Contingency::new(pred, truth)?;
    let index: f64 = table.counts.iter().flatten().map(|&v| pairs(v)).sum();
    let sum_a: f64 = table.cluster_sizes().into_iter().map(pairs).sum();
    let sum_b: f64 = table.class_sizes().into_iter().map(pairs).sum();
    let total = pairs(table.n);
    let expected = if total > 0.0 { sum_a * sum_b / total } else { 0.0 };
    let max = (sum_a + sum_b) / 2.0;
    let denom = max - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

fn macro_f1(table: &Contingency, mapping: &[Option<usize>]) -> f64 {
    let a = table.cluster_sizes();
    let b = table.class_sizes();
    let mut total = 0.0;
    for (c, &class_size) in b.iter().enumerate() {
        let cluster = mapping.iter().position(|&m| m == Some(c));
        total += match cluster {
            Some(r) if table.counts[r][c] > 0 => {
                let hit = table.counts[r][c] as f64;
                let precision = hit / a[r] as f64;
                let recall = hit / class_size as f64;
                2.0 * precision * recall / (precision + recall)
            }
            _ => 0.0,
        };
    }
    total / b.len() as f64
}

/// Macro-averaged F1 over true classes after the ACC-optimal mapping.
pub fn fscore(pred: &[usize], truth: &[usize]) -> Result<f64, MetricsError> {
    let table = Contingency::new(pred, truth)?;
    let (_, mapping) = table.best_matching();
    Ok(macro_f1(&table, &mapping))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub nmi: f64,
    pub fscore: f64,
    pub ari: f64,
    /// Predicted cluster id → class id used for ACC and F-score.
    pub mapping: BTreeMap<usize, usize>,
    pub nmi_normalization: String,
    pub fscore_variant: String,
}

impl MetricsReport {
    pub fn compute(pred: &[usize], truth: &[usize]) -> Result<Self, MetricsError> {
        let table = Contingency::new(pred, truth)?;
        let (matched, mapping) = table.best_matching();
        let named = mapping
            .iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| (table.cluster_ids[r], table.class_ids[c])))
            .collect();
        Ok(Self {
            acc: matched as f64 / table.n as f64,
            nmi: nmi(pred, truth)?,
            fscore: macro_f1(&table, &mapping),
            ari: ari(pred, truth)?,
            mapping: named,
            nmi_normalization: NMI_NORMALIZATION.to_string(),
            fscore_variant: FSCORE_VARIANT.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:>8}", "metric", "value")?;
        for (name, v) in [
            ("ACC", self.acc),
            ("NMI", self.nmi),
            ("F-score", self.fscore),
            ("ARI", self.ari),
        ] {
            writeln!(f, "{name:<8} {v:>8.4}")?;
        }
        writeln!(f, "nmi normalization: {}", self.nmi_normalization)?;
        write!(f, "f-score variant: {}", self.fscore_variant)
    }
}
