//! Dense matrix-vector kernels. Matrices are `out × in`, row-major.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::real::Real;

#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let mut acc = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub fn norm<F: Real>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

/// `out = W x`
pub fn matvec_into<F: Real>(w: &Tensor<F>, x: &[F], out: &mut [F]) {
    let cols = w.cols();
    debug_assert_eq!(cols, x.len());
    debug_assert_eq!(w.rows(), out.len());
    for (o, row) in out.iter_mut().zip(w.data().chunks_exact(cols)) {
        *o = dot(row, x);
    }
}

/// `out += W x`
pub fn matvec_acc<F: Real>(w: &Tensor<F>, x: &[F], out: &mut [F]) {
    let cols = w.cols();
    for (o, row) in out.iter_mut().zip(w.data().chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `dx += Wᵀ dy`
pub fn matvec_t_acc<F: Real>(w: &Tensor<F>, dy: &[F], dx: &mut [F]) {
    let cols = w.cols();
    for (&g, row) in dy.iter().zip(w.data().chunks_exact(cols)) {
        if g == F::zero() {
            continue;
        }
        for (d, &wij) in dx.iter_mut().zip(row) {
            *d += g * wij;
        }
    }
}

/// `dW += dy xᵀ`
pub fn outer_acc<F: Real>(dw: &mut Tensor<F>, dy: &[F], x: &[F]) {
    let cols = dw.cols();
    for (&g, row) in dy.iter().zip(dw.data_mut().chunks_exact_mut(cols)) {
        if g == F::zero() {
            continue;
        }
        for (d, &xj) in row.iter_mut().zip(x) {
            *d += g * xj;
        }
    }
}

/// Projection into the joint space: `W x`.
pub fn joint_project<F: Real>(x: &[F], w: &Tensor<F>) -> Result<Vec<F>> {
    if w.dims().len() != 2 {
        return Err(Error::dim("projection rank", 2, w.dims().len()));
    }
    if w.cols() != x.len() {
        return Err(Error::dim("projection input", w.cols(), x.len()));
    }
    let mut out = vec![F::zero(); w.rows()];
    matvec_into(w, x, &mut out);
    Ok(out)
}

/// Backward of [`joint_project`]: accumulates `dy xᵀ` into `dw` and returns
/// `Wᵀ dy`.
pub fn joint_project_backward<F: Real>(
    x: &[F],
    w: &Tensor<F>,
    dy: &[F],
    dw: &mut Tensor<F>,
) -> Vec<F> {
    outer_acc(dw, dy, x);
    let mut dx = vec![F::zero(); x.len()];
    matvec_t_acc(w, dy, &mut dx);
    dx
}
