//! Joint-space projections and the bidirectional triplet ranking loss over
//! in-batch negatives.
//!
//! For a batch of positive pairs with joint points `v_p = Wv f` and
//! `t_p = Wt w` and similarity `S = cos`:
//!
//! ```text
//! L = Σ_i [ Σ_{j ∈ neg(i)} max(0, Δ − S(v_i, t_i) + S(v_i, t_j))
//!         + Σ_{j ∈ neg(i)} max(0, Δ − S(t_i, v_i) + S(t_i, v_j)) ]
//! ```
//!
//! The loss is the raw sum; it is not normalized by batch size.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    cosine, cosine_backward, text_guided_feature, text_guided_feature_backward, Cosine,
};
use crate::error::{Error, Result};
use crate::nn::fc::sample_dropout_mask;
use crate::nn::gru::{embed_sentence, embed_sentence_backward};
use crate::nn::linalg::{joint_project, joint_project_backward};
use crate::nn::params::ModelParams;
use crate::nn::tensor::Tensor;
use crate::real::Real;

/// Which batch entries count as negatives for an anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativePolicy {
    /// Entries that share the anchor's video are not negatives.
    #[default]
    ExcludeSameVideo,
    /// Every entry whose (video, query) differs from the anchor's.
    Strict,
}

/// Identity of a positive pair inside a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairKey<'a> {
    pub video_id: &'a str,
    pub query_id: &'a str,
}

impl NegativePolicy {
    pub fn is_negative(self, anchor: PairKey<'_>, other: PairKey<'_>) -> bool {
        match self {
            NegativePolicy::ExcludeSameVideo => anchor.video_id != other.video_id,
            NegativePolicy::Strict => anchor != other,
        }
    }
}

/// `S(v_p, t_p)`, cosine in the joint space.
pub fn joint_similarity<F: Real>(vp: &[F], tp: &[F]) -> Result<Cosine<F>> {
    cosine(vp, tp)
}

#[derive(Debug, Clone)]
pub struct JointPoints<F> {
    pub vp: Vec<Vec<F>>,
    pub tp: Vec<Vec<F>>,
}

/// Loss and `∂L/∂S` for a square table `sim[i][j] = S(v_i, t_j)`.
#[derive(Debug, Clone)]
pub struct TableLoss<F> {
    pub loss: F,
    pub dsim: Vec<Vec<F>>,
    pub active_terms: usize,
}

fn check_batch(n: usize, margin: f64) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "triplet loss needs at least 2 pairs, got {n}"
        )));
    }
    if !(margin >= 0.0) {
        return Err(Error::InvalidInput(format!("margin must be >= 0, got {margin}")));
    }
    Ok(())
}

/// Hinge terms evaluated on a precomputed similarity table. The hinge
/// subgradient at exactly zero is taken as zero.
pub fn triplet_loss_from_table<F: Real>(
    sim: &[Vec<F>],
    keys: &[PairKey<'_>],
    margin: f64,
    policy: NegativePolicy,
) -> Result<TableLoss<F>> {
    let n = sim.len();
    check_batch(n, margin)?;
    if keys.len() != n || sim.iter().any(|r| r.len() != n) {
        return Err(Error::dim("similarity table", n, keys.len()));
    }
    let delta = F::of(margin);
    let mut loss = F::zero();
    let mut dsim = vec![vec![F::zero(); n]; n];
    let mut active = 0;
    for i in 0..n {
        let pos = sim[i][i];
        // video anchor i against texts j
        for j in 0..n {
            if !policy.is_negative(keys[i], keys[j]) {
                continue;
            }
            let h = delta - pos + sim[i][j];
            if h > F::zero() {
                loss += h;
                dsim[i][i] -= F::one();
                dsim[i][j] += F::one();
                active += 1;
            }
        }
        // text anchor i against videos j
        for j in 0..n {
            if !policy.is_negative(keys[i], keys[j]) {
                continue;
            }
            let h = delta - pos + sim[j][i];
            if h > F::zero() {
                loss += h;
                dsim[i][i] -= F::one();
                dsim[j][i] += F::one();
                active += 1;
            }
        }
    }
    Ok(TableLoss {
        loss,
        dsim,
        active_terms: active,
    })
}

#[derive(Debug, Clone)]
pub struct TripletOutput<F> {
    pub loss: F,
    pub d_vp: Vec<Vec<F>>,
    pub d_tp: Vec<Vec<F>>,
    pub active_terms: usize,
}

pub fn triplet_loss<F: Real>(
    points: &JointPoints<F>,
    keys: &[PairKey<'_>],
    margin: f64,
    policy: NegativePolicy,
) -> Result<TripletOutput<F>> {
    let n = points.vp.len();
    check_batch(n, margin)?;
    if points.tp.len() != n {
        return Err(Error::dim("text joint points", n, points.tp.len()));
    }
    let sim = points
        .vp
        .iter()
        .map(|v| {
            points
                .tp
                .iter()
                .map(|t| joint_similarity(v, t).map(|c| c.value))
                .collect::<Result<Vec<F>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let table = triplet_loss_from_table(&sim, keys, margin, policy)?;
    let mut d_vp: Vec<Vec<F>> = points.vp.iter().map(|v| vec![F::zero(); v.len()]).collect();
    let mut d_tp: Vec<Vec<F>> = points.tp.iter().map(|t| vec![F::zero(); t.len()]).collect();
    for i in 0..n {
        for j in 0..n {
            let g = table.dsim[i][j];
            if g != F::zero() {
                cosine_backward(&points.vp[i], &points.tp[j], g, &mut d_vp[i], &mut d_tp[j]);
            }
        }
    }
    Ok(TripletOutput {
        loss: table.loss,
        d_vp,
        d_tp,
        active_terms: table.active_terms,
    })
}

/// One positive (video, sentence) pair of a training batch. The pair
/// carries no temporal annotation.
#[derive(Debug, Clone, Copy)]
pub struct BatchEntry<'a, F> {
    pub query_id: &'a str,
    pub video_id: &'a str,
    pub tokens: &'a [usize],
    pub units: &'a Tensor<F>,
}

impl<'a, F> BatchEntry<'a, F> {
    pub fn key(&self) -> PairKey<'a> {
        PairKey {
            video_id: self.video_id,
            query_id: self.query_id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub margin: f64,
    pub policy: NegativePolicy,
}

/// Dropout applied to the FC transform during a batch forward.
pub enum Dropout<'a, R: ?Sized> {
    Off,
    On { rate: f64, rng: &'a mut R },
}

#[derive(Debug, Clone)]
pub struct BatchResult<F> {
    pub loss: F,
    pub grads: ModelParams<F>,
    pub active_terms: usize,
}

/// Full forward and backward over a batch: sentence encoding, text-guided
/// pooling, both joint projections and the triplet loss. Dropout masks are
/// drawn in batch order, unit by unit.
pub fn batch_forward<F: Real, R: Rng + ?Sized>(
    batch: &[BatchEntry<'_, F>],
    params: &ModelParams<F>,
    cfg: &LossConfig,
    dropout: Dropout<'_, R>,
) -> Result<BatchResult<F>> {
    check_batch(batch.len(), cfg.margin)?;
    let text_dim = params.dims().text_dim;
    let masks: Vec<Option<Tensor<F>>> = match dropout {
        Dropout::On { rate, rng } if rate > 0.0 => batch
            .iter()
            .map(|e| {
                let rows: Vec<Vec<F>> = (0..e.units.rows())
                    .map(|_| sample_dropout_mask(text_dim, rate, rng))
                    .collect();
                Tensor::from_rows(&rows).map(Some)
            })
            .collect::<Result<_>>()?,
        _ => vec![None; batch.len()],
    };

    let mut sentences = Vec::with_capacity(batch.len());
    let mut pooled = Vec::with_capacity(batch.len());
    let mut points = JointPoints {
        vp: Vec::with_capacity(batch.len()),
        tp: Vec::with_capacity(batch.len()),
    };
    for (e, mask) in batch.iter().zip(&masks) {
        let (w, gru_cache) = embed_sentence(e.tokens, params)?;
        let tga = text_guided_feature(&w, e.units, params, mask.as_ref())?;
        points.vp.push(joint_project(&tga.pooled, &params.wv)?);
        points.tp.push(joint_project(&w, &params.wt)?);
        sentences.push((w, gru_cache));
        pooled.push(tga);
    }
    let keys: Vec<PairKey<'_>> = batch.iter().map(BatchEntry::key).collect();
    let out = triplet_loss(&points, &keys, cfg.margin, cfg.policy)?;
    if !out.loss.is_finite() {
        return Err(Error::NonFinite("batch loss".into()));
    }

    let mut grads = params.zeros_like();
    for (i, e) in batch.iter().enumerate() {
        let (w, gru_cache) = &sentences[i];
        let tga = &pooled[i];
        let mut dw = joint_project_backward(w, &params.wt, &out.d_tp[i], &mut grads.wt);
        let df = joint_project_backward(&tga.pooled, &params.wv, &out.d_vp[i], &mut grads.wv);
        let dw_att = text_guided_feature_backward(w, e.units, params, tga, &df, &mut grads);
        for (a, b) in dw.iter_mut().zip(dw_att) {
            *a += b;
        }
        embed_sentence_backward(params, gru_cache, &dw, &mut grads);
    }
    Ok(BatchResult {
        loss: out.loss,
        grads,
        active_terms: out.active_terms,
    })
}

/// Forward-only loss of a batch in eval mode.
pub fn batch_loss<F: Real>(
    batch: &[BatchEntry<'_, F>],
    params: &ModelParams<F>,
    cfg: &LossConfig,
) -> Result<F> {
    check_batch(batch.len(), cfg.margin)?;
    let mut points = JointPoints {
        vp: Vec::with_capacity(batch.len()),
        tp: Vec::with_capacity(batch.len()),
    };
    for e in batch {
        let (w, _) = embed_sentence(e.tokens, params)?;
        let tga = text_guided_feature(&w, e.units, params, None)?;
        points.vp.push(joint_project(&tga.pooled, &params.wv)?);
        points.tp.push(joint_project(&w, &params.wt)?);
    }
    let keys: Vec<PairKey<'_>> = batch.iter().map(BatchEntry::key).collect();
    Ok(triplet_loss(&points, &keys, cfg.margin, cfg.policy)?.loss)
}
