//! Strided matrix products backed by `matrixmultiply`.

use crate::tensor::Tensor;
use crate::{Result, TensorError};

/// Row/column strides of a row-major `rows × cols` matrix, optionally viewed transposed.
#[derive(Clone, Copy)]
struct View {
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl View {
    fn of(rows: usize, cols: usize, transposed: bool) -> Self {
        if transposed {
            View {
                rows: cols,
                cols: rows,
                rs: 1,
                cs: cols,
            }
        } else {
            View {
                rows,
                cols,
                rs: cols,
                cs: 1,
            }
        }
    }
}

/// `c = op(a) · op(b) + beta · c` for one pair of matrices.
fn gemm(a: &[f64], va: View, b: &[f64], vb: View, beta: f64, c: &mut [f64]) {
    let (m, k, n) = (va.rows, va.cols, vb.cols);
    assert_eq!(vb.rows, k);
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() == m * n);
    // SAFETY: the asserts above guarantee every strided access stays inside
    // `a`, `b` and `c`; `c` is uniquely borrowed and does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            va.rs as isize,
            va.cs as isize,
            b.as_ptr(),
            vb.rs as isize,
            vb.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Batched product over identical leading extents, with optional transposition
/// of the last two axes of either operand.
pub(crate) fn bmm(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Result<Tensor> {
    let mismatch = || TensorError::ShapeMismatch {
        op: "matmul",
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    if a.rank() < 2 || a.rank() != b.rank() {
        return Err(mismatch());
    }
    let r = a.rank();
    let (sa, sb) = (a.shape(), b.shape());
    if sa[..r - 2] != sb[..r - 2] {
        return Err(mismatch());
    }
    let va = View::of(sa[r - 2], sa[r - 1], ta);
    let vb = View::of(sb[r - 2], sb[r - 1], tb);
    if va.cols != vb.rows {
        return Err(mismatch());
    }
    let batch: usize = sa[..r - 2].iter().product();
    let (m, n) = (va.rows, vb.cols);
    let (a_step, b_step) = (sa[r - 2] * sa[r - 1], sb[r - 2] * sb[r - 1]);
    let mut out = vec![0.0; batch * m * n];
    for i in 0..batch {
        gemm(
            &a.data()[i * a_step..(i + 1) * a_step],
            va,
            &b.data()[i * b_step..(i + 1) * b_step],
            vb,
            0.0,
            &mut out[i * m * n..(i + 1) * m * n],
        );
    }
    let mut shape = sa[..r - 2].to_vec();
    shape.extend([m, n]);
    Ok(Tensor::from_parts(shape, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn transposed_views_agree_with_naive_product() {
        let a = Tensor::from_fn([3, 4], |i| (i as f64 * 0.37).sin()).unwrap();
        let b = Tensor::from_fn([4, 5], |i| (i as f64 * 0.11).cos()).unwrap();
        let want = naive(&a, &b);
        let at = a.permute(&[1, 0]).unwrap();
        let bt = b.permute(&[1, 0]).unwrap();
        for (x, tx, y, ty) in [
            (&a, false, &b, false),
            (&at, true, &b, false),
            (&a, false, &bt, true),
            (&at, true, &bt, true),
        ] {
            let c = bmm(x, tx, y, ty).unwrap();
            for (u, v) in c.data().iter().zip(&want) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }
}
