//! Per-unit video transform `v̄ = dropout(relu(W v + b))`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::linalg::{matvec_acc, matvec_t_acc, outer_acc};
use crate::nn::tensor::Tensor;
use crate::real::Real;

/// Draws an inverted-dropout mask of length `len`: each entry is `0` with
/// probability `rate` and `1 / (1 − rate)` otherwise.
pub fn sample_dropout_mask<F: Real, R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<F> {
    if rate <= 0.0 {
        return vec![F::one(); len];
    }
    let keep = F::of(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                F::zero()
            } else {
                keep
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct FcCache<F> {
    pre: Vec<F>,
    mask: Option<Vec<F>>,
}

/// Forward pass. `mask` is `None` in eval mode (dropout is the identity).
pub fn fc_video_transform<F: Real>(
    v: &[F],
    w: &Tensor<F>,
    b: &Tensor<F>,
    mask: Option<&[F]>,
) -> Result<(Vec<F>, FcCache<F>)> {
    if v.len() != w.cols() {
        return Err(Error::dim("fc input", w.cols(), v.len()));
    }
    if b.numel() != w.rows() {
        return Err(Error::dim("fc bias", w.rows(), b.numel()));
    }
    if let Some(m) = mask {
        if m.len() != w.rows() {
            return Err(Error::dim("dropout mask", w.rows(), m.len()));
        }
    }
    let mut pre = b.data().to_vec();
    matvec_acc(w, v, &mut pre);
    let out = pre
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let a = u.max(F::zero());
            mask.map_or(a, |m| a * m[i])
        })
        .collect();
    Ok((
        out,
        FcCache {
            pre,
            mask: mask.map(<[F]>::to_vec),
        },
    ))
}

/// Backward pass: accumulates into `dw`, `db` and returns `∂/∂v`.
pub fn fc_video_backward<F: Real>(
    v: &[F],
    w: &Tensor<F>,
    cache: &FcCache<F>,
    dout: &[F],
    dw: &mut Tensor<F>,
    db: &mut Tensor<F>,
) -> Vec<F> {
    let du: Vec<F> = dout
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            if cache.pre[i] > F::zero() {
                cache.mask.as_ref().map_or(g, |m| g * m[i])
            } else {
                F::zero()
            }
        })
        .collect();
    outer_acc(dw, &du, v);
    for (d, &g) in db.data_mut().iter_mut().zip(&du) {
        *d += g;
    }
    let mut dv = vec![F::zero(); v.len()];
    matvec_t_acc(w, &du, &mut dv);
    dv
}
