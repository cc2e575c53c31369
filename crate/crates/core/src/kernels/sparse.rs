use super::KernelError;

/// Compressed sparse row matrix. Column indices within a row are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Builds from per-row `(col, value)` lists. Rows are sorted; duplicate columns are summed.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self, KernelError> {
        let n_rows = rows.len();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            let start = col_idx.len();
            for (j, v) in row {
                if j >= n_cols {
                    return Err(KernelError::Shape(format!(
                        "row {i}: column {j} out of range for {n_cols} columns"
                    )));
                }
                if col_idx.len() > start && *col_idx.last().unwrap() == j {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    pub fn row_cols(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_range(i)]
    }

    pub fn row_values(&self, i: usize) -> &[f64] {
        &self.values[self.row_range(i)]
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row_values(i).iter().sum()
    }

    /// Entry lookup by binary search; 0 when absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let cols = self.row_cols(i);
        match cols.binary_search(&j) {
            Ok(pos) => self.row_values(i)[pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (i, row) in out.iter_mut().enumerate() {
            for k in self.row_range(i) {
                row[self.col_idx[k]] = self.values[k];
            }
        }
        out
    }

    /// Same sparsity pattern with new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, KernelError> {
        if values.len() != self.nnz() {
            return Err(KernelError::Shape(format!(
                "{} values for a pattern with {} entries",
                values.len(),
                self.nnz()
            )));
        }
        Ok(Self {
            values,
            ..self.clone()
        })
    }

    /// Transposed pattern: for every stored entry `(i, j)` in `self`, a list of `(i, k)`
    /// grouped by `j`, where `k` is the entry's position in `self`.
    pub fn transpose_positions(&self) -> Vec<Vec<(usize, usize)>> {
        let mut out = vec![Vec::new(); self.n_cols];
        for i in 0..self.n_rows {
            for k in self.row_range(i) {
                out[self.col_idx[k]].push((i, k));
            }
        }
        out
    }
}

/// Row-wise softmax restricted to each row's stored entries.
///
/// `row_ptr` delimits rows inside `logits`. Every row must be nonempty.
pub fn masked_row_softmax(row_ptr: &[usize], logits: &[f64]) -> Result<Vec<f64>, KernelError> {
    let mut out = vec![0.0; logits.len()];
    for i in 0..row_ptr.len().saturating_sub(1) {
        let range = row_ptr[i]..row_ptr[i + 1];
        if range.is_empty() {
            return Err(KernelError::EmptyRow(i));
        }
        let row = &logits[range.clone()];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut out[range];
        let mut sum = 0.0;
        for (o, &l) in dst.iter_mut().zip(row) {
            *o = (l - max).exp();
            sum += *o;
        }
        for o in dst.iter_mut() {
            *o /= sum;
        }
    }
    Ok(out)
}

/// Backward of [`masked_row_softmax`]: dℓ_ij = α_ij (dα_ij − Σ_r α_ir dα_ir).
pub fn masked_row_softmax_backward(row_ptr: &[usize], alpha: &[f64], d_alpha: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; alpha.len()];
    for i in 0..row_ptr.len().saturating_sub(1) {
        let range = row_ptr[i]..row_ptr[i + 1];
        let a = &alpha[range.clone()];
        let g = &d_alpha[range.clone()];
        let inner: f64 = a.iter().zip(g).map(|(x, y)| x * y).sum();
        for ((o, &ai), &gi) in out[range].iter_mut().zip(a).zip(g) {
            *o = ai * (gi - inner);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csr_sorts_and_merges() {
        let m = Csr::from_rows(3, vec![vec![(2, 1.0), (0, 2.0), (2, 0.5)], vec![]]).unwrap();
        assert_eq!(m.row_cols(0), &[0, 2]);
        assert_eq!(m.row_values(0), &[2.0, 1.5]);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.nnz(), 2);
        assert!(Csr::from_rows(2, vec![vec![(5, 1.0)]]).is_err());
    }

    #[test]
    fn equal_logits_give_uniform_rows() {
        let out = masked_row_softmax(&[0, 4], &[0.3; 4]).unwrap();
        for v in out {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn single_entry_row_is_one() {
        assert_eq!(masked_row_softmax(&[0, 1], &[-123.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn matches_direct_formula() {
        let logits = [1.0, 2.0, 3.0];
        let out = masked_row_softmax(&[0, 3], &logits).unwrap();
        let z: f64 = logits.iter().map(|l: &f64| l.exp()).sum();
        for (o, l) in out.iter().zip(logits) {
            assert!((o - l.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let out = masked_row_softmax(&[0, 2], &[1000.0, 999.0]).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_row_is_an_error() {
        assert!(matches!(
            masked_row_softmax(&[0, 1, 1], &[0.0]),
            Err(KernelError::EmptyRow(1))
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let row_ptr = [0, 3, 5];
        let logits = [0.2, -1.0, 0.7, 2.0, 1.5];
        let weights = [0.3, -0.4, 1.1, 0.5, -2.0];
        let f = |l: &[f64]| -> f64 {
            masked_row_softmax(&row_ptr, l)
                .unwrap()
                .iter()
                .zip(weights)
                .map(|(a, w)| a * w)
                .sum()
        };
        let alpha = masked_row_softmax(&row_ptr, &logits).unwrap();
        let grad = masked_row_softmax_backward(&row_ptr, &alpha, &weights);
        let eps = 1e-6;
        for k in 0..logits.len() {
            let mut p = logits;
            p[k] += eps;
            let mut m = logits;
            m[k] -= eps;
            let fd = (f(&p) - f(&m)) / (2.0 * eps);
            assert!((fd - grad[k]).abs() < 1e-9, "{k}: {fd} vs {}", grad[k]);
        }
    }
}
