//! Text-guided temporal attention.
//!
//! Every temporal unit `v_k` of a video is mapped by the FC transform to
//! `v̄_k`, compared with the sentence feature `w` by cosine similarity, and
//! the similarities are normalized over time with a softmax. The attention
//! weights pool the *raw* unit features into a sentence-specific video
//! feature `f = Σ_k a_k v_k`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::fc::{fc_video_backward, fc_video_transform, FcCache};
use crate::nn::linalg::{dot, norm};
use crate::nn::params::ModelParams;
use crate::nn::tensor::Tensor;
use crate::real::Real;

/// Cosine similarity. `degenerate` is set when either input has zero norm,
/// in which case `value` is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine<F> {
    pub value: F,
    pub degenerate: bool,
}

pub fn cosine<F: Real>(a: &[F], b: &[F]) -> Result<Cosine<F>> {
    if a.len() != b.len() {
        return Err(Error::dim("cosine operands", a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == F::zero() || nb == F::zero() {
        return Ok(Cosine {
            value: F::zero(),
            degenerate: true,
        });
    }
    Ok(Cosine {
        value: dot(a, b) / (na * nb),
        degenerate: false,
    })
}

/// Accumulates `dc · ∂cos(a, b)/∂a` into `da` and likewise for `b`.
pub fn cosine_backward<F: Real>(a: &[F], b: &[F], dc: F, da: &mut [F], db: &mut [F]) {
    let (na, nb) = (norm(a), norm(b));
    if na == F::zero() || nb == F::zero() || dc == F::zero() {
        return;
    }
    let inv = F::one() / (na * nb);
    let c = dot(a, b) * inv;
    let (ka, kb) = (c / (na * na), c / (nb * nb));
    for i in 0..a.len() {
        da[i] += dc * (b[i] * inv - ka * a[i]);
        db[i] += dc * (a[i] * inv - kb * b[i]);
    }
}

/// Per-unit similarities `s_k = cos(w, v̄_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityRow<F>(pub Vec<F>);

pub fn similarity_row<F: Real>(w: &[F], transformed: &Tensor<F>) -> Result<SimilarityRow<F>> {
    if transformed.cols() != w.len() {
        return Err(Error::dim("transformed unit features", w.len(), transformed.cols()));
    }
    (0..transformed.rows())
        .map(|k| cosine(w, transformed.row(k)).map(|c| c.value))
        .collect::<Result<_>>()
        .map(SimilarityRow)
}

/// Softmax along the temporal axis, with max subtraction.
pub fn temporal_softmax<F: Real>(s: &[F]) -> Result<Vec<F>> {
    if s.is_empty() {
        return Err(Error::InvalidInput("softmax over zero units".into()));
    }
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("similarity row".into()));
    }
    let max = s.iter().copied().fold(F::neg_infinity(), F::max);
    let e: Vec<F> = s.iter().map(|&x| (x - max).exp()).collect();
    let total: F = e.iter().copied().sum();
    Ok(e.into_iter().map(|x| x / total).collect())
}

/// `∂L/∂s_k = a_k (∂L/∂a_k − Σ_j a_j ∂L/∂a_j)`
pub fn temporal_softmax_backward<F: Real>(a: &[F], da: &[F]) -> Vec<F> {
    let inner = dot(a, da);
    a.iter().zip(da).map(|(&ak, &g)| ak * (g - inner)).collect()
}

/// `f = Σ_k a_k v_k` over the raw unit features (`nv × V`).
pub fn attention_pool<F: Real>(weights: &[F], units: &Tensor<F>) -> Result<Vec<F>> {
    if weights.len() != units.rows() {
        return Err(Error::dim("attention weights", units.rows(), weights.len()));
    }
    let mut f = vec![F::zero(); units.cols()];
    for (k, &a) in weights.iter().enumerate() {
        for (fi, &v) in f.iter_mut().zip(units.row(k)) {
            *fi += a * v;
        }
    }
    Ok(f)
}

/// Returns `(∂L/∂a, ∂L/∂units)`.
pub fn attention_pool_backward<F: Real>(
    weights: &[F],
    units: &Tensor<F>,
    df: &[F],
) -> (Vec<F>, Tensor<F>) {
    let da = (0..units.rows()).map(|k| dot(units.row(k), df)).collect();
    let mut dunits = Tensor::zeros(units.dims());
    for (k, &a) in weights.iter().enumerate() {
        for (d, &g) in dunits.row_mut(k).iter_mut().zip(df) {
            *d = a * g;
        }
    }
    (da, dunits)
}

/// FC transform of every unit. `masks` (`nv × T`) enables training-mode
/// dropout; `None` is eval mode.
pub fn transform_units<F: Real>(
    units: &Tensor<F>,
    params: &ModelParams<F>,
    masks: Option<&Tensor<F>>,
) -> Result<(Tensor<F>, Vec<FcCache<F>>)> {
    let t = params.fc_w.rows();
    if let Some(m) = masks {
        if m.rows() != units.rows() {
            return Err(Error::dim("dropout masks", units.rows(), m.rows()));
        }
    }
    let mut out = Tensor::zeros(&[units.rows(), t]);
    let mut caches = Vec::with_capacity(units.rows());
    for k in 0..units.rows() {
        let mask = masks.map(|m| m.row(k));
        let (vbar, cache) = fc_video_transform(units.row(k), &params.fc_w, &params.fc_b, mask)?;
        out.row_mut(k).copy_from_slice(&vbar);
        caches.push(cache);
    }
    Ok((out, caches))
}

#[derive(Debug, Clone)]
pub struct TgaCache<F> {
    transformed: Tensor<F>,
    fc: Vec<FcCache<F>>,
}

#[derive(Debug, Clone)]
pub struct TgaOutput<F> {
    /// Sentence-specific pooled video feature `f` (length `V`).
    pub pooled: Vec<F>,
    /// Attention weights over units.
    pub weights: Vec<F>,
    pub similarities: SimilarityRow<F>,
    pub cache: TgaCache<F>,
}

/// Attention and pooling for pre-transformed units.
pub fn attend<F: Real>(
    w: &[F],
    transformed: &Tensor<F>,
    units: &Tensor<F>,
) -> Result<(Vec<F>, Vec<F>, SimilarityRow<F>)> {
    let s = similarity_row(w, transformed)?;
    let a = temporal_softmax(&s.0)?;
    let f = attention_pool(&a, units)?;
    Ok((f, a, s))
}

/// Full text-guided feature for one (sentence, video) pair.
pub fn text_guided_feature<F: Real>(
    w: &[F],
    units: &Tensor<F>,
    params: &ModelParams<F>,
    masks: Option<&Tensor<F>>,
) -> Result<TgaOutput<F>> {
    if units.cols() != params.fc_w.cols() {
        return Err(Error::dim("video feature_dim", params.fc_w.cols(), units.cols()));
    }
    let (transformed, fc) = transform_units(units, params, masks)?;
    let (pooled, weights, similarities) = attend(w, &transformed, units)?;
    Ok(TgaOutput {
        pooled,
        weights,
        similarities,
        cache: TgaCache { transformed, fc },
    })
}

/// Backward of [`text_guided_feature`] given `∂L/∂f`. Accumulates into the
/// FC gradients and returns `∂L/∂w`. Video features are constants.
pub fn text_guided_feature_backward<F: Real>(
    w: &[F],
    units: &Tensor<F>,
    params: &ModelParams<F>,
    out: &TgaOutput<F>,
    dpooled: &[F],
    grads: &mut ModelParams<F>,
) -> Vec<F> {
    let (da, _) = attention_pool_backward(&out.weights, units, dpooled);
    let ds = temporal_softmax_backward(&out.weights, &da);
    let mut dw = vec![F::zero(); w.len()];
    let mut dvbar = vec![F::zero(); w.len()];
    for (k, &g) in ds.iter().enumerate() {
        if g == F::zero() {
            continue;
        }
        dvbar.iter_mut().for_each(|x| *x = F::zero());
        let vbar = out.cache.transformed.row(k);
        cosine_backward(w, vbar, g, &mut dw, &mut dvbar);
        fc_video_backward(
            units.row(k),
            &params.fc_w,
            &out.cache.fc[k],
            &dvbar,
            &mut grads.fc_w,
            &mut grads.fc_b,
        );
    }
    dw
}

/// Attention weights of one (video, sentence) pair, as exported for
/// inspection and used for localization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub query_id: String,
    pub video_id: String,
    pub weights: Vec<f64>,
}

impl AttentionTrace {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(query_id: &str, video_id: &str, weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if weights.is_empty()
            || (sum - 1.0).abs() > Self::SUM_TOLERANCE
            || weights.iter().any(|&x| !(0.0..=1.0).contains(&x))
        {
            return Err(Error::InvalidInput(format!(
                "attention weights for {query_id} do not form a distribution (sum {sum})"
            )));
        }
        Ok(AttentionTrace {
            query_id: query_id.to_string(),
            video_id: video_id.to_string(),
            weights,
        })
    }

    pub fn from_real<F: Real>(query_id: &str, video_id: &str, weights: &[F]) -> Result<Self> {
        Self::new(query_id, video_id, weights.iter().map(|x| x.as_f64()).collect())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// One JSON object per line.
pub fn write_traces_jsonl(traces: &[AttentionTrace], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for t in traces {
        let line = serde_json::to_string(t).expect("trace serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// `unit_index,weight` rows with a header.
pub fn write_trace_csv(trace: &AttentionTrace, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "unit_index,weight")?;
        for (k, w) in trace.weights.iter().enumerate() {
            writeln!(out, "{k},{w}")?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}
