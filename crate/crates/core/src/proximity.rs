//! Transition matrix and t-order proximity `M = (B + B² + … + Bᵗ) / t`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::graph::Graph;
use crate::kernels::Csr;

/// Proximity entries below this value are dropped from the sparse result.
pub const PROXIMITY_CUTOFF: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ProximityError {
    #[error("proximity order must be at least 1")]
    ZeroOrder,
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Row-normalized adjacency: `B_ij = 1/d_i` for each edge; isolated nodes get `B_ii = 1`.
pub fn transition_matrix(g: &Graph) -> Csr {
    let rows = (0..g.n())
        .map(|i| {
            let nbrs = g.neighbors(i);
            if nbrs.is_empty() {
                vec![(i, 1.0)]
            } else {
                let w = 1.0 / nbrs.len() as f64;
                nbrs.iter().map(|&j| (j, w)).collect()
            }
        })
        .collect();
    Csr::from_rows(g.n(), rows).expect("neighbor indices are in range")
}

/// Sparse t-order proximity with the attention neighborhoods `N_i = { j : M_ij > 0 }`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityMatrix {
    order: usize,
    matrix: Csr,
    /// For each column j, the `(row, entry position)` pairs of entries in column j.
    columns: Vec<Vec<(usize, usize)>>,
}

impl ProximityMatrix {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn matrix(&self) -> &Csr {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.n_rows()
    }

    pub fn nnz(&self) -> usize {
        self.matrix.nnz()
    }

    /// Sorted neighborhood of node `i`.
    pub fn neighborhood(&self, i: usize) -> &[usize] {
        self.matrix.row_cols(i)
    }

    /// `M_ij` for `j` in [`Self::neighborhood`], same order.
    pub fn weights(&self, i: usize) -> &[f64] {
        self.matrix.row_values(i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    /// Entries in column `j` as `(row, position in the value array)`, rows ascending.
    pub fn column_entries(&self, j: usize) -> &[(usize, usize)] {
        &self.columns[j]
    }

    /// Number of nodes whose own index lies in their neighborhood.
    pub fn self_included_count(&self) -> usize {
        (0..self.n())
            .filter(|&i| self.neighborhood(i).binary_search(&i).is_ok())
            .count()
    }

    /// Writes `i<TAB>j<TAB>value` triplets, one per stored entry.
    pub fn export_triplets(&self, path: &Path) -> Result<(), ProximityError> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for i in 0..self.n() {
            for (&j, &v) in self.neighborhood(i).iter().zip(self.weights(i)) {
                writeln!(out, "{i}\t{j}\t{v}")?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Multiplies a sparse row vector by `b`, using `scratch` (length n, all zero on entry
/// and on exit) as an accumulator.
fn row_times(
    row: &[(usize, f64)],
    b: &Csr,
    scratch: &mut [f64],
    touched: &mut Vec<usize>,
) -> Vec<(usize, f64)> {
    touched.clear();
    for &(k, w) in row {
        for (&j, &v) in b.row_cols(k).iter().zip(b.row_values(k)) {
            if scratch[j] == 0.0 {
                touched.push(j);
            }
            scratch[j] += w * v;
        }
    }
    touched.sort_unstable();
    touched
        .iter()
        .map(|&j| (j, std::mem::take(&mut scratch[j])))
        .collect()
}

pub fn proximity(g: &Graph, t: usize) -> Result<ProximityMatrix, ProximityError> {
    if t == 0 {
        return Err(ProximityError::ZeroOrder);
    }
    let b = transition_matrix(g);
    let n = g.n();
    let inv_t = 1.0 / t as f64;

    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0.0; n], Vec::new()),
            |(scratch, touched), i| {
                let mut power: Vec<(usize, f64)> = b
                    .row_cols(i)
                    .iter()
                    .copied()
                    .zip(b.row_values(i).iter().copied())
                    .collect();
                let mut total: Vec<(usize, f64)> = power.clone();
                for _ in 1..t {
                    power = row_times(&power, &b, scratch, touched);
                    total = merge_add(&total, &power);
                }
                total
                    .into_iter()
                    .map(|(j, v)| (j, v * inv_t))
                    .filter(|&(_, v)| v >= PROXIMITY_CUTOFF)
                    .collect()
            },
        )
        .collect();

    let matrix = Csr::from_rows(n, rows).expect("indices in range");
    Ok(ProximityMatrix {
        order: t,
        columns: matrix.transpose_positions(),
        matrix,
    })
}

/// Sum of two sorted sparse vectors.
fn merge_add(a: &[(usize, f64)], b: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut x, mut y) = (0, 0);
    while x < a.len() && y < b.len() {
        match a[x].0.cmp(&b[y].0) {
            std::cmp::Ordering::Less => {
                out.push(a[x]);
                x += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[y]);
                y += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push((a[x].0, a[x].1 + b[y].1));
                x += 1;
                y += 1;
            }
        }
    }
    out.extend_from_slice(&a[x..]);
    out.extend_from_slice(&b[y..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Tensor;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new(edges.iter().copied(), Tensor::zeros(n, 1), None).unwrap()
    }

    #[test]
    fn path_transition() {
        let b = transition_matrix(&graph(3, &[(0, 1), (1, 2)]));
        let dense = b.to_dense();
        assert_eq!(
            dense,
            vec![
                vec![0.0, 1.0, 0.0],
                vec![0.5, 0.0, 0.5],
                vec![0.0, 1.0, 0.0]
            ]
        );
    }

    #[test]
    fn isolated_node_gets_self_loop() {
        let b = transition_matrix(&graph(3, &[(0, 1)]));
        assert_eq!(b.get(2, 2), 1.0);
        let m = proximity(&graph(3, &[(0, 1)]), 3).unwrap();
        assert_eq!(m.neighborhood(2), &[2]);
        assert_eq!(m.get(2, 2), 1.0);
    }

    #[test]
    fn triangle_transition() {
        let b = transition_matrix(&graph(3, &[(0, 1), (1, 2), (0, 2)]));
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 0.0 } else { 0.5 };
                assert_eq!(b.get(i, j), expected);
            }
        }
    }

    #[test]
    fn path_second_order() {
        let m = proximity(&graph(3, &[(0, 1), (1, 2)]), 2).unwrap();
        let expect = [
            ((0, 1), 0.5),
            ((0, 2), 0.25),
            ((0, 0), 0.25),
            ((1, 1), 0.5),
            ((1, 0), 0.25),
            ((1, 2), 0.25),
        ];
        for ((i, j), v) in expect {
            assert!((m.get(i, j) - v).abs() < 1e-15, "M[{i}][{j}]");
        }
        assert_eq!(m.neighborhood(1), &[0, 1, 2]);
    }

    #[test]
    fn first_order_is_transition() {
        let g = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 0), (1, 4)]);
        let m = proximity(&g, 1).unwrap();
        assert_eq!(m.matrix(), &transition_matrix(&g));
    }

    #[test]
    fn second_order_contains_self() {
        let g = graph(4, &[(0, 1), (2, 3), (1, 2)]);
        let m = proximity(&g, 2).unwrap();
        for i in 0..4 {
            assert!(m.neighborhood(i).contains(&i));
        }
        assert_eq!(m.self_included_count(), 4);
    }

    #[test]
    fn zero_order_rejected() {
        assert!(matches!(
            proximity(&graph(2, &[(0, 1)]), 0),
            Err(ProximityError::ZeroOrder)
        ));
    }

    #[test]
    fn export_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        proximity(&graph(2, &[(0, 1)]), 1)
            .unwrap()
            .export_triplets(&p)
            .unwrap();
        assert_eq!(fs::read_to_string(p).unwrap(), "0\t1\t1\n1\t0\t1\n");
    }
}
