use rand::Rng;

use super::DenseMatrix;
use crate::error::{Error, Result};
use crate::par;

/// Compressed sparse row matrix. Column indices are sorted and unique within a
/// row, and only nonzero values are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds from `(row, col, value)` triplets. Duplicate positions are summed
    /// and resulting zeros dropped.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(i, j, v) in triplets {
            if i >= rows || j >= cols {
                return Err(Error::shape(
                    "SparseMatrix::from_triplets",
                    format!("entry ({i}, {j}) outside {rows}x{cols}"),
                ));
            }
            sorted.push((i, j, v));
        }
        sorted.sort_by_key(|e| (e.0, e.1));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(sorted.len());
        for (i, j, v) in sorted {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => merged.push((i, j, v)),
            }
        }
        merged.retain(|t| t.2 != 0.0);
        Ok(Self::from_sorted_unique(rows, cols, merged))
    }

    fn from_sorted_unique(rows: usize, cols: usize, entries: Vec<(usize, usize, f64)>) -> Self {
        let mut indptr = vec![0usize; rows + 1];
        for &(i, _, _) in &entries {
            indptr[i + 1] += 1;
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        let indices = entries.iter().map(|t| t.1).collect();
        let values = entries.iter().map(|t| t.2).collect();
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    /// Builds directly from per-row `(col, value)` lists that are already
    /// sorted by column, unique and nonzero.
    pub(crate) fn from_rows_unchecked(rows: usize, cols: usize, per_row: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for row in per_row {
            for (j, v) in row {
                debug_assert!(v != 0.0 && j < cols);
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        let per_row = (0..m.rows())
            .map(|i| {
                m.row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(j, &v)| (j, v))
                    .collect()
            })
            .collect();
        Self::from_rows_unchecked(m.rows(), m.cols(), per_row)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[s..e], &self.values[s..e])
    }

    /// Offset of row `i`'s first entry in the flat value array.
    #[inline]
    pub fn row_offset(&self, i: usize) -> usize {
        self.indptr[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Flat index of `(i, j)` if stored.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (cols, _) = self.row(i);
        cols.binary_search(&j).ok().map(|k| self.indptr[i] + k)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        self.iter().collect()
    }

    /// Row index of each stored entry, aligned with `values()`.
    pub fn row_of_entries(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.rows {
            out.extend(std::iter::repeat_n(i, self.indptr[i + 1] - self.indptr[i]));
        }
        out
    }

    /// Same sparsity pattern with new values; zero values are kept in place so
    /// the pattern stays aligned. Use [`SparseMatrix::pruned`] to drop them.
    pub fn with_values(&self, values: Vec<f64>) -> SparseMatrix {
        assert_eq!(values.len(), self.nnz());
        SparseMatrix {
            rows: self.rows,
            cols: self.cols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values,
        }
    }

    /// Drops stored zeros.
    pub fn pruned(&self) -> SparseMatrix {
        let per_row = (0..self.rows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter()
                    .zip(vals)
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(&j, &v)| (j, v))
                    .collect()
            })
            .collect();
        SparseMatrix::from_rows_unchecked(self.rows, self.cols, per_row)
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> SparseMatrix {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
            .pruned()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.rows, self.cols);
        for (i, j, v) in self.iter() {
            m.set(i, j, v);
        }
        m
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.cols];
        for (i, j, v) in self.iter() {
            per_row[j].push((i, v));
        }
        SparseMatrix::from_rows_unchecked(self.cols, self.rows, per_row)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).1.iter().sum()).collect()
    }

    /// Divides each row by its sum; empty rows are left empty.
    pub fn row_normalized(&self) -> SparseMatrix {
        let sums = self.row_sums();
        let values = self
            .iter()
            .map(|(i, _, v)| if sums[i] != 0.0 { v / sums[i] } else { v })
            .collect();
        self.with_values(values)
    }

    /// `self * b`, row-parallel.
    pub fn matmul_dense(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != b.rows() {
            return Err(Error::shape(
                "sparse matmul",
                format!(
                    "{}x{} times {}x{}",
                    self.rows,
                    self.cols,
                    b.rows(),
                    b.cols()
                ),
            ));
        }
        let n = b.cols();
        let mut out = DenseMatrix::zeros(self.rows, n);
        par::for_each_row(out.data_mut(), n, |i, out_row| {
            let (cols, vals) = self.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                for (o, &x) in out_row.iter_mut().zip(b.row(k)) {
                    *o += a * x;
                }
            }
        });
        Ok(out)
    }

    /// `self^T * b`.
    pub fn t_matmul_dense(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        self.transpose().matmul_dense(b)
    }

    /// Inverted dropout on stored values: each entry survives with probability
    /// `1 - rate` and is rescaled by `1 / (1 - rate)`.
    pub fn dropout<R: Rng>(&self, rate: f64, rng: &mut R) -> SparseMatrix {
        if rate <= 0.0 {
            return self.clone();
        }
        let keep = 1.0 - rate;
        let values = self
            .values
            .iter()
            .map(|&v| if rng.gen::<f64>() < keep { v / keep } else { 0.0 })
            .collect();
        self.with_values(values).pruned()
    }

    /// Union of the patterns of `self` and `other`, with values summed.
    pub fn add(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "sparse add",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        let mut triplets = self.triplets();
        triplets.extend(other.iter());
        SparseMatrix::from_triplets(self.rows, self.cols, &triplets)
    }

    /// Dot product of row `i` of `self` with row `j` of `other`.
    pub fn row_dot(&self, i: usize, other: &SparseMatrix, j: usize) -> f64 {
        let (ca, va) = self.row(i);
        let (cb, vb) = other.row(j);
        let (mut p, mut q, mut acc) = (0, 0, 0.0);
        while p < ca.len() && q < cb.len() {
            match ca[p].cmp(&cb[q]) {
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
                std::cmp::Ordering::Equal => {
                    acc += va[p] * vb[q];
                    p += 1;
                    q += 1;
                }
            }
        }
        acc
    }

    /// `||row_i - row_j||^2`, summed over the union of both patterns.
    pub fn row_sq_dist(&self, i: usize, j: usize) -> f64 {
        let (ca, va) = self.row(i);
        let (cb, vb) = self.row(j);
        let (mut p, mut q, mut acc) = (0, 0, 0.0);
        while p < ca.len() || q < cb.len() {
            let d = if q == cb.len() || (p < ca.len() && ca[p] < cb[q]) {
                p += 1;
                va[p - 1]
            } else if p == ca.len() || cb[q] < ca[p] {
                q += 1;
                -vb[q - 1]
            } else {
                p += 1;
                q += 1;
                va[p - 1] - vb[q - 1]
            };
            acc += d * d;
        }
        acc
    }

    pub fn scale(&self, s: f64) -> SparseMatrix {
        self.map_values(|v| v * s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_merge_duplicates_and_drop_zeros() {
        let s = SparseMatrix::from_triplets(2, 2, &[(1, 0, 1.0), (0, 1, 2.0), (1, 0, 0.5), (0, 0, 0.0)])
            .unwrap();
        assert_eq!(s.triplets(), vec![(0, 1, 2.0), (1, 0, 1.5)]);
        assert_eq!(s.get(1, 0), 1.5);
        assert_eq!(s.get(0, 0), 0.0);
    }

    #[test]
    fn out_of_range_triplet() {
        assert!(SparseMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn sparse_product_matches_dense() {
        let s = SparseMatrix::from_triplets(3, 2, &[(0, 1, 2.0), (2, 0, -1.0), (2, 1, 3.0)]).unwrap();
        let b = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let dense = s.to_dense().matmul(&b).unwrap();
        assert_eq!(s.matmul_dense(&b).unwrap(), dense);
        let c = DenseMatrix::from_rows(&[[1.0], [2.0], [3.0]]);
        assert_eq!(
            s.t_matmul_dense(&c).unwrap(),
            s.to_dense().transpose().matmul(&c).unwrap()
        );
    }

    #[test]
    fn transpose_round_trip() {
        let s = SparseMatrix::from_triplets(2, 3, &[(0, 2, 1.0), (1, 0, 4.0), (1, 2, 5.0)]).unwrap();
        assert_eq!(s.transpose().transpose(), s);
        assert_eq!(s.transpose().to_dense(), s.to_dense().transpose());
    }
}
