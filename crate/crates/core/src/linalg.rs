//! Dense matmul kernels for the hot paths, backed by faer.
//!
//! ndarray's default backend peaks well below what the training loops need on
//! wide matrices, so the three product shapes the model uses are routed
//! through faer's sequential GEMM. Sequential on purpose: parallelism in this
//! crate lives at the trial/run level, and a fixed accumulation order keeps
//! every product bit-reproducible.

use faer::linalg::matmul::matmul;
use faer::{Accum, MatMut, MatRef, Par};
use ndarray::{Array2, ArrayView2};

fn as_faer<'a>(a: &ArrayView2<'a, f64>) -> MatRef<'a, f64> {
    let (rows, cols) = a.dim();
    let slice = a
        .to_slice()
        .expect("matmul operands must be standard-layout");
    MatRef::from_row_major_slice(slice, rows, cols)
}

fn product(rows: usize, cols: usize, fill: impl FnOnce(MatMut<'_, f64>)) -> Array2<f64> {
    let mut out = Array2::zeros((rows, cols));
    {
        let slice = out.as_slice_mut().expect("freshly allocated is contiguous");
        fill(MatMut::from_row_major_slice_mut(slice, rows, cols));
    }
    out
}

/// `a @ b`
pub(crate) fn matmul_nn(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>) -> Array2<f64> {
    assert_eq!(a.ncols(), b.nrows(), "inner dimensions must agree");
    product(a.nrows(), b.ncols(), |dst| {
        matmul(dst, Accum::Replace, as_faer(a), as_faer(b), 1.0, Par::Seq)
    })
}

/// `a @ b.T`
pub(crate) fn matmul_nt(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>) -> Array2<f64> {
    assert_eq!(a.ncols(), b.ncols(), "inner dimensions must agree");
    product(a.nrows(), b.nrows(), |dst| {
        matmul(
            dst,
            Accum::Replace,
            as_faer(a),
            as_faer(b).transpose(),
            1.0,
            Par::Seq,
        )
    })
}

/// `a.T @ b`
pub(crate) fn matmul_tn(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>) -> Array2<f64> {
    assert_eq!(a.nrows(), b.nrows(), "inner dimensions must agree");
    product(a.ncols(), b.ncols(), |dst| {
        matmul(
            dst,
            Accum::Replace,
            as_faer(a).transpose(),
            as_faer(b),
            1.0,
            Par::Seq,
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn toy(rows: usize, cols: usize, offset: f64) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |(i, j)| {
            offset + (i as f64 * 0.7 - j as f64 * 1.3).sin()
        })
    }

    fn max_rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
            .fold(0.0, f64::max)
    }

    #[test]
    fn products_match_ndarray_reference() {
        let a = toy(37, 19, 0.2);
        let b = toy(19, 23, -0.1);
        assert!(max_rel_err(&matmul_nn(&a.view(), &b.view()), &a.dot(&b)) < 1e-13);

        let c = toy(23, 19, 0.4);
        assert!(max_rel_err(&matmul_nt(&a.view(), &c.view()), &a.dot(&c.t())) < 1e-13);

        let d = toy(37, 11, -0.3);
        assert!(max_rel_err(&matmul_tn(&a.view(), &d.view()), &a.t().dot(&d)) < 1e-13);
    }

    #[test]
    fn degenerate_shapes() {
        let a = toy(1, 1, 1.0);
        let b = toy(1, 1, 2.0);
        let c = matmul_nn(&a.view(), &b.view());
        assert_eq!(c[[0, 0]], a[[0, 0]] * b[[0, 0]]);

        let row = toy(1, 5, 0.0);
        let col = toy(5, 1, 0.5);
        let dot = matmul_nn(&row.view(), &col.view());
        assert_eq!(dot.dim(), (1, 1));
    }
}
