//! Compressed sparse row storage for superoperators.

use faer::sparse::{SparseColMat, Triplet};
use num_complex::Complex64 as C64;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<C64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// exact zeros after summation are dropped.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, C64)>,
    ) -> Self {
        let mut entries: Vec<(usize, usize, C64)> = triplets.into_iter().collect();
        for &(r, c, _) in &entries {
            assert!(r < n_rows && c < n_cols, "triplet ({r}, {c}) out of bounds");
        }
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut k = 0;
        while k < entries.len() {
            let (r, c, mut v) = entries[k];
            k += 1;
            while k < entries.len() && entries[k].0 == r && entries[k].1 == c {
                v += entries[k].2;
                k += 1;
            }
            if v.re == 0.0 && v.im == 0.0 {
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
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

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.n_rows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.row(r)
            .find(|&(col, _)| col == c)
            .map(|(_, v)| v)
            .unwrap_or_default()
    }

    pub fn matvec_into(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *out = acc;
        }
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.n_rows];
        self.matvec_into(x, &mut y);
        y
    }

    /// Row vector times matrix, `xᵀ A`.
    pub fn vecmat(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.n_rows);
        let mut y = vec![C64::new(0.0, 0.0); self.n_cols];
        for (r, xr) in x.iter().enumerate() {
            for (c, v) in self.row(r) {
                y[c] += xr * v;
            }
        }
        y
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn to_faer(&self) -> SparseColMat<usize, C64> {
        let triplets: Vec<Triplet<usize, usize, C64>> =
            self.triplets().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        SparseColMat::try_new_from_triplets(self.n_rows, self.n_cols, &triplets)
            .expect("triplets are deduplicated and in bounds")
    }
}

/// Sparse `A ⊗ B` from entry lists; `db` is the dimension of `B`.
pub fn kron_triplets(a: &[(usize, usize, C64)], b: &[(usize, usize, C64)], db: usize) -> Vec<(usize, usize, C64)> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &(ra, ca, va) in a {
        for &(rb, cb, vb) in b {
            out.push((ra * db + rb, ca * db + cb, va * vb));
        }
    }
    out
}

pub fn identity_triplets(n: usize) -> Vec<(usize, usize, C64)> {
    (0..n).map(|i| (i, i, C64::new(1.0, 0.0))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_triplets(
            2,
            2,
            [
                (0, 1, C64::new(1.0, 0.0)),
                (0, 1, C64::new(0.5, 1.0)),
                (1, 0, C64::new(1.0, 0.0)),
                (1, 0, C64::new(-1.0, 0.0)),
            ],
        );
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 1), C64::new(1.5, 1.0));
        assert_eq!(m.get(1, 0), C64::new(0.0, 0.0));
    }

    #[test]
    fn matvec_and_vecmat_agree_with_dense() {
        let m = CsrMatrix::from_triplets(
            3,
            3,
            [
                (0, 0, C64::new(2.0, 0.0)),
                (0, 2, C64::new(0.0, 1.0)),
                (1, 1, C64::new(-1.0, 0.0)),
                (2, 0, C64::new(3.0, -1.0)),
            ],
        );
        let x = [C64::new(1.0, 0.0), C64::new(2.0, 0.0), C64::new(0.0, 1.0)];
        let y = m.matvec(&x);
        assert_eq!(y[0], C64::new(2.0, 0.0) + C64::new(0.0, 1.0) * C64::new(0.0, 1.0));
        assert_eq!(y[1], C64::new(-2.0, 0.0));
        assert_eq!(y[2], C64::new(3.0, -1.0));
        let z = m.vecmat(&x);
        assert_eq!(z[0], C64::new(2.0, 0.0) + C64::new(0.0, 1.0) * C64::new(3.0, -1.0));
        assert_eq!(z[2], C64::new(0.0, 1.0));
    }
}
