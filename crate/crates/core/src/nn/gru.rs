//! Sentence encoder: word-embedding lookup followed by a GRU.
//!
//! ```text
//! z  = σ(Wz x + Uz h + bz)
//! r  = σ(Wr x + Ur h + br)
//! h̃  = tanh(Wh x + Uh (r ⊙ h) + bh)
//! h' = (1 − z) ⊙ h + z ⊙ h̃
//! ```
//!
//! The sentence feature is the final hidden state, starting from `h0 = 0`.

use crate::error::{Error, Result};
use crate::nn::linalg::{matvec_acc, matvec_t_acc, outer_acc};
use crate::nn::params::{GruParams, ModelParams};
use crate::real::Real;

#[inline]
fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

#[derive(Debug, Clone)]
struct GruStep<F> {
    token: usize,
    h_prev: Vec<F>,
    z: Vec<F>,
    r: Vec<F>,
    cand: Vec<F>,
    rh: Vec<F>,
}

/// Activations retained for backpropagation through time.
#[derive(Debug, Clone)]
pub struct GruCache<F> {
    steps: Vec<GruStep<F>>,
}

impl<F> GruCache<F> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// One GRU step from hidden state `h` on input `x`.
fn gru_step<F: Real>(gru: &GruParams<F>, x: &[F], h: &[F], token: usize) -> GruStep<F> {
    let t = h.len();
    let mut az = gru.bz.data().to_vec();
    matvec_acc(&gru.wz, x, &mut az);
    matvec_acc(&gru.uz, h, &mut az);
    let mut ar = gru.br.data().to_vec();
    matvec_acc(&gru.wr, x, &mut ar);
    matvec_acc(&gru.ur, h, &mut ar);
    let z: Vec<F> = az.into_iter().map(sigmoid).collect();
    let r: Vec<F> = ar.into_iter().map(sigmoid).collect();
    let rh: Vec<F> = (0..t).map(|i| r[i] * h[i]).collect();
    let mut ah = gru.bh.data().to_vec();
    matvec_acc(&gru.wh, x, &mut ah);
    matvec_acc(&gru.uh, &rh, &mut ah);
    let cand = ah.into_iter().map(F::tanh).collect();
    GruStep {
        token,
        h_prev: h.to_vec(),
        z,
        r,
        cand,
        rh,
    }
}

impl<F: Real> GruStep<F> {
    fn output(&self) -> Vec<F> {
        self.h_prev
            .iter()
            .zip(&self.z)
            .zip(&self.cand)
            .map(|((&h, &z), &c)| (F::one() - z) * h + z * c)
            .collect()
    }
}

/// Runs the GRU over `tokens` from an explicit initial hidden state.
pub fn run_gru<F: Real>(
    params: &ModelParams<F>,
    tokens: &[usize],
    h0: &[F],
) -> Result<(Vec<F>, GruCache<F>)> {
    let dims = params.dims();
    if tokens.is_empty() {
        return Err(Error::InvalidInput("empty token sequence".into()));
    }
    if h0.len() != dims.text_dim {
        return Err(Error::dim("initial hidden state", dims.text_dim, h0.len()));
    }
    if let Some(&bad) = tokens.iter().find(|&&id| id >= dims.vocab_size) {
        return Err(Error::InvalidInput(format!(
            "token id {bad} out of range for vocabulary of {}",
            dims.vocab_size
        )));
    }
    let mut h = h0.to_vec();
    let mut steps = Vec::with_capacity(tokens.len());
    for &tok in tokens {
        let step = gru_step(&params.gru, params.emb.row(tok), &h, tok);
        h = step.output();
        steps.push(step);
    }
    Ok((h, GruCache { steps }))
}

/// Encodes a sentence into its text feature `w` (length `T`).
pub fn embed_sentence<F: Real>(
    tokens: &[usize],
    params: &ModelParams<F>,
) -> Result<(Vec<F>, GruCache<F>)> {
    let h0 = vec![F::zero(); params.dims().text_dim];
    run_gru(params, tokens, &h0)
}

/// Backpropagation through time. Accumulates into the GRU and embedding
/// gradients of `grads` and returns the gradient w.r.t. the initial hidden
/// state.
pub fn embed_sentence_backward<F: Real>(
    params: &ModelParams<F>,
    cache: &GruCache<F>,
    dh_final: &[F],
    grads: &mut ModelParams<F>,
) -> Vec<F> {
    let gru = &params.gru;
    let t = dh_final.len();
    let mut dh = dh_final.to_vec();
    let one = F::one();
    for step in cache.steps.iter().rev() {
        let x = params.emb.row(step.token);
        let mut dh_prev = vec![F::zero(); t];
        let mut daz = vec![F::zero(); t];
        let mut dah = vec![F::zero(); t];
        for i in 0..t {
            let (z, c, hp) = (step.z[i], step.cand[i], step.h_prev[i]);
            let dz = dh[i] * (c - hp);
            let dc = dh[i] * z;
            dh_prev[i] = dh[i] * (one - z);
            daz[i] = dz * z * (one - z);
            dah[i] = dc * (one - c * c);
        }
        let g = &mut grads.gru;
        outer_acc(&mut g.wh, &dah, x);
        outer_acc(&mut g.uh, &dah, &step.rh);
        add(g.bh.data_mut(), &dah);
        let mut drh = vec![F::zero(); t];
        matvec_t_acc(&gru.uh, &dah, &mut drh);
        let mut dar = vec![F::zero(); t];
        for i in 0..t {
            let r = step.r[i];
            dar[i] = drh[i] * step.h_prev[i] * r * (one - r);
            dh_prev[i] += drh[i] * r;
        }
        outer_acc(&mut g.wz, &daz, x);
        outer_acc(&mut g.uz, &daz, &step.h_prev);
        add(g.bz.data_mut(), &daz);
        outer_acc(&mut g.wr, &dar, x);
        outer_acc(&mut g.ur, &dar, &step.h_prev);
        add(g.br.data_mut(), &dar);
        matvec_t_acc(&gru.uz, &daz, &mut dh_prev);
        matvec_t_acc(&gru.ur, &dar, &mut dh_prev);

        let dx = grads.emb.row_mut(step.token);
        matvec_t_acc(&gru.wz, &daz, dx);
        matvec_t_acc(&gru.wr, &dar, dx);
        matvec_t_acc(&gru.wh, &dah, dx);
        dh = dh_prev;
    }
    dh
}

fn add<F: Real>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
