//! Batch-wise training with in-batch negatives, a step learning-rate
//! schedule and model selection by validation recall.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{attend, transform_units};
use crate::dataio::manifest::{Dataset, SentenceQuery, Split};
use crate::error::{Error, Result};
use crate::loss::{batch_forward, joint_similarity, BatchEntry, Dropout, LossConfig, NegativePolicy};
use crate::nn::adam::{Adam, AdamConfig};
use crate::nn::gru::embed_sentence;
use crate::nn::linalg::joint_project;
use crate::nn::params::{ModelDims, ModelParams};
use crate::nn::tensor::Tensor;
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub margin: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub word_dim: usize,
    pub text_dim: usize,
    pub joint_dim: usize,
    pub dropout: f64,
    pub negatives: NegativePolicy,
    /// Adds video-to-text R@{1,5,10} to the validation recall sum.
    pub bidirectional_val: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            lr_decay_every: 15,
            lr_decay_factor: 10.0,
            margin: 0.1,
            batch_size: 128,
            max_epochs: 30,
            seed: 0,
            word_dim: 300,
            text_dim: 1024,
            joint_dim: 1024,
            dropout: 0.5,
            negatives: NegativePolicy::ExcludeSameVideo,
            bidirectional_val: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("train config: {m}")));
        if !(self.lr > 0.0) || !(self.lr_decay_factor > 0.0) || self.lr_decay_every == 0 {
            return bad("lr, lr_decay_factor and lr_decay_every must be positive");
        }
        if !(0.0..=2.0).contains(&self.margin) {
            return bad("margin must lie in [0, 2]");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.word_dim == 0 || self.text_dim == 0 || self.joint_dim == 0 {
            return bad("model dimensions must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    /// Learning rate used during (0-based) `epoch`:
    /// `lr / decay^⌊epoch / every⌋`.
    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        self.lr / self.lr_decay_factor.powi((epoch / self.lr_decay_every) as i32)
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            margin: self.margin,
            policy: self.negatives,
        }
    }
}

/// A training pair. There is deliberately no field for temporal
/// annotation, so training code cannot observe it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainPair {
    pub query_id: String,
    pub video_id: String,
    pub tokens: Vec<usize>,
}

impl From<&SentenceQuery> for TrainPair {
    fn from(q: &SentenceQuery) -> Self {
        TrainPair {
            query_id: q.id.clone(),
            video_id: q.video_id.clone(),
            tokens: q.tokens.clone(),
        }
    }
}

/// Sentences and videos of one split, ready for retrieval scoring.
#[derive(Debug, Clone)]
pub struct RetrievalSet<F> {
    pub pairs: Vec<TrainPair>,
    /// Sorted by ascending video id.
    pub videos: Vec<(String, Tensor<F>)>,
}

impl<F: Real> RetrievalSet<F> {
    pub fn from_dataset(ds: &Dataset, split: Split) -> Self {
        let pairs: Vec<TrainPair> = ds.manifest.queries_in(split).map(TrainPair::from).collect();
        let mut videos: Vec<(String, Tensor<F>)> = ds
            .videos_in(split)
            .into_iter()
            .map(|v| (v.video_id.clone(), v.units.cast()))
            .collect();
        videos.sort_by(|a, b| a.0.cmp(&b.0));
        RetrievalSet { pairs, videos }
    }
}

/// Everything the training loop may read.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub train: Vec<TrainPair>,
    pub videos: HashMap<String, Tensor<f32>>,
    pub val: RetrievalSet<f32>,
}

impl TrainingData {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let train: Vec<TrainPair> = ds
            .manifest
            .queries_in(Split::Train)
            .map(TrainPair::from)
            .collect();
        let videos = ds
            .videos_in(Split::Train)
            .into_iter()
            .map(|v| (v.video_id.clone(), v.units.clone()))
            .collect();
        TrainingData {
            vocab_size: ds.vocab_size(),
            feature_dim: ds.feature_dim(),
            train,
            videos,
            val: RetrievalSet::from_dataset(ds, Split::Val),
        }
    }

    pub fn model_dims(&self, cfg: &TrainConfig) -> ModelDims {
        ModelDims {
            vocab_size: self.vocab_size,
            word_dim: cfg.word_dim,
            text_dim: cfg.text_dim,
            feature_dim: self.feature_dim,
            joint_dim: cfg.joint_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallTriple {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
}

impl RecallTriple {
    pub fn sum(&self) -> f64 {
        self.r1 + self.r5 + self.r10
    }

    fn from_ranks(ranks: &[usize]) -> Self {
        let n = ranks.len() as f64;
        let at = |k: usize| ranks.iter().filter(|&&r| r < k).count() as f64 / n;
        RecallTriple {
            r1: at(1),
            r5: at(5),
            r10: at(10),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecall {
    pub text_to_video: RecallTriple,
    pub video_to_text: Option<RecallTriple>,
    pub sum: f64,
}

/// `scores[j][i]`: sentence `j` against video `i`, with the video pooled
/// by that sentence's attention.
pub fn retrieval_scores<F: Real>(
    params: &ModelParams<F>,
    set: &RetrievalSet<F>,
) -> Result<Vec<Vec<f64>>> {
    let transformed = set
        .videos
        .par_iter()
        .map(|(_, units)| transform_units(units, params, None).map(|(t, _)| t))
        .collect::<Result<Vec<_>>>()?;
    set.pairs
        .par_iter()
        .map(|p| {
            let (w, _) = embed_sentence(&p.tokens, params)?;
            let tp = joint_project(&w, &params.wt)?;
            set.videos
                .iter()
                .zip(&transformed)
                .map(|((_, units), vbar)| {
                    let (f, _, _) = attend(&w, vbar, units)?;
                    let vp = joint_project(&f, &params.wv)?;
                    Ok(joint_similarity(&vp, &tp)?.value.as_f64())
                })
                .collect()
        })
        .collect()
}

/// Text-to-video retrieval recall over a split; ties are broken by
/// ascending video id (and query id for the reverse direction).
pub fn validate_retrieval<F: Real>(
    params: &ModelParams<F>,
    set: &RetrievalSet<F>,
    bidirectional: bool,
) -> Result<RetrievalRecall> {
    if set.pairs.is_empty() || set.videos.is_empty() {
        return Err(Error::InvalidInput("validation split is empty".into()));
    }
    let scores = retrieval_scores(params, set)?;
    let video_index: HashMap<&str, usize> = set
        .videos
        .iter()
        .enumerate()
        .map(|(i, (id, _))| (id.as_str(), i))
        .collect();
    let mut ranks = Vec::with_capacity(set.pairs.len());
    for (j, p) in set.pairs.iter().enumerate() {
        let own = *video_index.get(p.video_id.as_str()).ok_or_else(|| Error::Unknown {
            kind: "video",
            id: p.video_id.clone(),
        })?;
        let s = scores[j][own];
        // videos are id-sorted, so a lower index wins ties
        let rank = scores[j]
            .iter()
            .enumerate()
            .filter(|&(i, &x)| x > s || (x == s && i < own))
            .count();
        ranks.push(rank);
    }
    let t2v = RecallTriple::from_ranks(&ranks);

    let v2t = if bidirectional {
        let mut order: Vec<usize> = (0..set.pairs.len()).collect();
        order.sort_by(|&a, &b| set.pairs[a].query_id.cmp(&set.pairs[b].query_id));
        let mut vranks = Vec::with_capacity(set.videos.len());
        for (i, (vid, _)) in set.videos.iter().enumerate() {
            let mut ranked = order.clone();
            ranked.sort_by(|&a, &b| scores[b][i].total_cmp(&scores[a][i]));
            if let Some(r) = ranked.iter().position(|&j| &set.pairs[j].video_id == vid) {
                vranks.push(r);
            }
        }
        Some(RecallTriple::from_ranks(&vranks))
    } else {
        None
    };
    let sum = t2v.sum() + v2t.map_or(0.0, |r| r.sum());
    Ok(RetrievalRecall {
        text_to_video: t2v,
        video_to_text: v2t,
        sum,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub batches: usize,
    pub val_recall: RetrievalRecall,
    pub val_recall_sum: f64,
    /// Not serialized: runlog.json must be reproducible byte for byte.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_recall_sum: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: ModelParams<f32>,
    pub last: ModelParams<f32>,
    pub log: RunLog,
}

/// Trains from scratch. One seeded stream drives initialization, shuffling
/// and dropout. The partial final batch of every epoch is dropped.
pub fn train(
    data: &TrainingData,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::InvalidInput("train split is empty".into()));
    }
    if data.train.len() < cfg.batch_size {
        return Err(Error::InvalidInput(format!(
            "train split has {} pairs, fewer than batch_size {}",
            data.train.len(),
            cfg.batch_size
        )));
    }
    if data.val.pairs.is_empty() {
        return Err(Error::InvalidInput("val split is empty".into()));
    }
    let entries: Vec<BatchEntry<'_, f32>> = data
        .train
        .iter()
        .map(|p| {
            let units = data.videos.get(&p.video_id).ok_or_else(|| Error::Unknown {
                kind: "video",
                id: p.video_id.clone(),
            })?;
            Ok(BatchEntry {
                query_id: &p.query_id,
                video_id: &p.video_id,
                tokens: &p.tokens,
                units,
            })
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::<f32>::init(&data.model_dims(cfg), &mut rng)?;
    let mut opt = Adam::new(
        &params,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let loss_cfg = cfg.loss_config();
    let mut order: Vec<usize> = (0..entries.len()).collect();
    let mut best = params.clone();
    let mut log = RunLog::default();

    for epoch in 0..cfg.max_epochs {
        let started = Instant::now();
        let lr = cfg.lr_for_epoch(epoch);
        opt.set_lr(lr);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks_exact(cfg.batch_size).enumerate() {
            let batch: Vec<BatchEntry<'_, f32>> = chunk.iter().map(|&i| entries[i]).collect();
            let dropout = Dropout::On {
                rate: cfg.dropout,
                rng: &mut rng,
            };
            let res = batch_forward(&batch, &params, &loss_cfg, dropout).map_err(|e| match e {
                Error::NonFinite(what) => {
                    Error::NonFinite(format!("{what} at epoch {epoch}, batch {b}"))
                }
                other => other,
            })?;
            opt.step(&mut params, &res.grads)
                .map_err(|e| Error::NonFinite(format!("{e} at epoch {epoch}, batch {b}")))?;
            loss_sum += res.loss as f64;
            batches += 1;
        }
        let val_recall = validate_retrieval(&params, &data.val, cfg.bidirectional_val)?;
        let record = EpochRecord {
            epoch,
            lr,
            mean_loss: loss_sum / batches as f64,
            batches,
            val_recall,
            val_recall_sum: val_recall.sum,
            wall_time_secs: started.elapsed().as_secs_f64(),
        };
        if log.best_val_recall_sum.is_none_or(|b| record.val_recall_sum > b) {
            log.best_val_recall_sum = Some(record.val_recall_sum);
            log.best_epoch = Some(epoch);
            best = params.clone();
        }
        on_epoch(&record);
        log.epochs.push(record);
    }
    Ok(TrainOutcome {
        best,
        last: params,
        log,
    })
}
