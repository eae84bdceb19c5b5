//! Small dense helpers on top of faer.

use faer::{Mat, MatRef};

pub(crate) fn hadamard(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    debug_assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * b[(i, j)])
}

pub(crate) fn select_rows(m: MatRef<'_, f64>, idx: &[usize]) -> Mat<f64> {
    Mat::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

pub(crate) fn select_cols(m: MatRef<'_, f64>, idx: &[usize]) -> Mat<f64> {
    Mat::from_fn(m.nrows(), idx.len(), |i, j| m[(i, idx[j])])
}

pub(crate) fn select(m: MatRef<'_, f64>, rows: &[usize], cols: &[usize]) -> Mat<f64> {
    Mat::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub(crate) fn column(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

pub(crate) fn to_vec(m: MatRef<'_, f64>) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, 0)]).collect()
}

pub(crate) fn add_diag(m: &mut Mat<f64>, c: f64) {
    for i in 0..m.nrows().min(m.ncols()) {
        m[(i, i)] += c;
    }
}

pub(crate) fn mean_diag(m: MatRef<'_, f64>) -> f64 {
    let n = m.nrows().min(m.ncols());
    if n == 0 {
        return 0.0;
    }
    (0..n).map(|i| m[(i, i)]).sum::<f64>() / n as f64
}

pub(crate) fn max_asymmetry(m: MatRef<'_, f64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        for i in (j + 1)..m.nrows() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub(crate) fn max_abs(m: MatRef<'_, f64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            worst = worst.max(m[(i, j)].abs());
        }
    }
    worst
}

/// Row sums as an `n x 1` matrix.
pub(crate) fn row_sums(m: MatRef<'_, f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), 1, |i, _| (0..m.ncols()).map(|j| m[(i, j)]).sum())
}
