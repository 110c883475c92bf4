//! Test-time moment localization and metrics.
//!
//! Candidates come from sliding windows over the unit axis or from all
//! contiguous segment spans. Each candidate is scored by the mean (or sum)
//! of the sentence's attention weights over its units; R@K at an IoU
//! threshold and mIoU are computed against the annotated moment.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{attend, transform_units, AttentionTrace};
use crate::dataio::manifest::{Dataset, Moment, SentenceQuery, Split};
use crate::error::{Error, Result};
use crate::nn::gru::embed_sentence;
use crate::nn::params::ModelParams;
use crate::nn::tensor::Tensor;
use crate::real::Real;
use crate::trainer::{validate_retrieval, RetrievalRecall, RetrievalSet};

/// Temporal IoU of two half-open unit intervals.
pub fn iou(a: Moment, b: Moment) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput(format!("empty interval in IoU: {a} vs {b}")));
    }
    let inter = a.end.min(b.end).saturating_sub(a.start.max(b.start));
    Ok(inter as f64 / (a.len() + b.len() - inter) as f64)
}

/// Sliding-window candidates in unit coordinates, sorted by (start, end).
///
/// For each window of `L = window / unit_duration` units, starts are
/// multiples of `max(1, round(stride_fraction · L))`, plus one window
/// right-aligned at the video end when the tiling leaves a tail. A video
/// shorter than a window yields the whole video for that length.
pub fn sliding_window_candidates(
    num_units: usize,
    unit_duration_frames: u32,
    window_frames: &[u32],
    stride_fraction: f64,
) -> Result<Vec<Moment>> {
    if window_frames.is_empty() {
        return Err(Error::InvalidInput("window list is empty".into()));
    }
    if !(stride_fraction > 0.0 && stride_fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "stride fraction must lie in (0, 1], got {stride_fraction}"
        )));
    }
    if num_units == 0 || unit_duration_frames == 0 {
        return Err(Error::InvalidInput("video has no units".into()));
    }
    let mut out = Vec::new();
    for &w in window_frames {
        if w == 0 || w % unit_duration_frames != 0 {
            return Err(Error::InvalidInput(format!(
                "window of {w} frames is not a positive multiple of the {unit_duration_frames}-frame unit"
            )));
        }
        let len = (w / unit_duration_frames) as usize;
        if len >= num_units {
            out.push(Moment::new(0, num_units));
            continue;
        }
        let stride = ((stride_fraction * len as f64).round() as usize).max(1);
        let mut start = 0;
        while start + len <= num_units {
            out.push(Moment::new(start, start + len));
            start += stride;
        }
        if (start - stride) + len < num_units {
            out.push(Moment::new(num_units - len, num_units));
        }
    }
    out.sort_by_key(|m| (m.start, m.end));
    out.dedup();
    Ok(out)
}

/// All contiguous spans `[i, j)` of `num_segments` segments,
/// `n(n+1)/2` in total, sorted by (start, end).
pub fn didemo_candidates(num_segments: usize) -> Vec<Moment> {
    let mut out = Vec::with_capacity(num_segments * (num_segments + 1) / 2);
    for i in 0..num_segments {
        for j in i + 1..=num_segments {
            out.push(Moment::new(i, j));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreRule {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentCandidate {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

impl MomentCandidate {
    pub fn moment(&self) -> Moment {
        Moment::new(self.start, self.end)
    }
}

/// Descending score, then earlier start, then shorter length.
fn rank_order(a: &MomentCandidate, b: &MomentCandidate) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.start.cmp(&b.start))
        .then((a.end - a.start).cmp(&(b.end - b.start)))
}

/// Scores candidates against an attention trace and ranks them.
pub fn score_candidates(
    weights: &[f64],
    candidates: &[Moment],
    rule: ScoreRule,
) -> Result<Vec<MomentCandidate>> {
    let mut out = Vec::with_capacity(candidates.len());
    for c in candidates {
        if c.is_empty() || c.end > weights.len() {
            return Err(Error::InvalidInput(format!(
                "candidate {c} does not fit a trace of {} units",
                weights.len()
            )));
        }
        let sum: f64 = weights[c.start..c.end].iter().sum();
        let score = match rule {
            ScoreRule::Mean => sum / c.len() as f64,
            ScoreRule::Sum => sum,
        };
        if !score.is_finite() {
            return Err(Error::NonFinite(format!("score of candidate {c}")));
        }
        out.push(MomentCandidate {
            start: c.start,
            end: c.end,
            score,
        });
    }
    out.sort_by(rank_order);
    Ok(out)
}

/// Reassigns the scores of a ranked list to random candidates and re-ranks.
pub fn shuffle_scores<R: rand::Rng + ?Sized>(
    ranked: &[MomentCandidate],
    rng: &mut R,
) -> Vec<MomentCandidate> {
    let mut scores: Vec<f64> = ranked.iter().map(|c| c.score).collect();
    scores.shuffle(rng);
    let mut out: Vec<MomentCandidate> = ranked
        .iter()
        .zip(scores)
        .map(|(c, score)| MomentCandidate { score, ..*c })
        .collect();
    out.sort_by(rank_order);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Protocol {
    SlidingWindow { windows: Vec<u32>, stride_fraction: f64 },
    Didemo,
}

impl Protocol {
    pub fn candidates(&self, num_units: usize, unit_duration_frames: u32) -> Result<Vec<Moment>> {
        match self {
            Protocol::SlidingWindow {
                windows,
                stride_fraction,
            } => sliding_window_candidates(num_units, unit_duration_frames, windows, *stride_fraction),
            Protocol::Didemo => Ok(didemo_candidates(num_units)),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::SlidingWindow {
                windows,
                stride_fraction,
            } => {
                let w: Vec<String> = windows.iter().map(|w| w.to_string()).collect();
                write!(f, "sliding_window(windows={}, stride={stride_fraction})", w.join(","))
            }
            Protocol::Didemo => write!(f, "didemo"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolKind {
    SlidingWindow,
    Didemo,
}

impl FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sliding_window" => Ok(ProtocolKind::SlidingWindow),
            "didemo" => Ok(ProtocolKind::Didemo),
            _ => Err(Error::InvalidInput(format!(
                "unknown protocol {s:?} (expected sliding_window or didemo)"
            ))),
        }
    }
}

/// One query's ranked candidates next to its annotated moment.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRanking {
    pub query_id: String,
    pub gt: Moment,
    pub ranked: Vec<MomentCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallAtK {
    pub k: usize,
    /// Percentage in [0, 100].
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub iou: f64,
    pub recalls: Vec<RecallAtK>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub num_queries: usize,
    pub rows: Vec<RecallRow>,
    pub miou: f64,
}

impl Metrics {
    pub fn recall(&self, k: usize, tau: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.iou == tau)?
            .recalls
            .iter()
            .find(|r| r.k == k)
            .map(|r| r.recall)
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let Some(first) = self.rows.first() else {
            return writeln!(f, "mIoU {:.4}", self.miou);
        };
        write!(f, "{:>8}", "IoU")?;
        for r in &first.recalls {
            write!(f, " {:>8}", format!("R@{}", r.k))?;
        }
        writeln!(f)?;
        for row in &self.rows {
            write!(f, "{:>8}", format!("{}", row.iou))?;
            for r in &row.recalls {
                write!(f, " {:>8.2}", r.recall)?;
            }
            writeln!(f)?;
        }
        writeln!(f, "mIoU {:.4} over {} queries", self.miou, self.num_queries)
    }
}

fn check_ks_taus(ks: &[usize], taus: &[f64]) -> Result<()> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidInput("K values must be a non-empty list of positive integers".into()));
    }
    if taus.is_empty() || taus.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::InvalidInput("IoU thresholds must be a non-empty list in [0, 1]".into()));
    }
    Ok(())
}

/// R@K (percent) for every (K, τ) and mIoU of the top-1 candidates.
pub fn compute_metrics(rankings: &[QueryRanking], ks: &[usize], taus: &[f64]) -> Result<Metrics> {
    check_ks_taus(ks, taus)?;
    if rankings.is_empty() {
        return Err(Error::InvalidInput("no queries to evaluate".into()));
    }
    let kmax = *ks.iter().max().unwrap_or(&1);
    // IoUs of the top kmax candidates, computed once per query
    let ious: Vec<Vec<f64>> = rankings
        .iter()
        .map(|q| {
            if q.ranked.is_empty() {
                return Err(Error::InvalidInput(format!("query {} has no candidates", q.query_id)));
            }
            q.ranked.iter().take(kmax).map(|c| iou(c.moment(), q.gt)).collect()
        })
        .collect::<Result<_>>()?;
    let n = rankings.len() as f64;
    let rows = taus
        .iter()
        .map(|&tau| RecallRow {
            iou: tau,
            recalls: ks
                .iter()
                .map(|&k| {
                    let hits = ious
                        .iter()
                        .filter(|q| q.iter().take(k).any(|&v| v >= tau))
                        .count();
                    RecallAtK {
                        k,
                        recall: 100.0 * hits as f64 / n,
                    }
                })
                .collect(),
        })
        .collect();
    let miou = ious.iter().map(|q| q[0]).sum::<f64>() / n;
    Ok(Metrics {
        num_queries: rankings.len(),
        rows,
        miou,
    })
}

/// Metrics of randomly re-assigned scores, averaged over `trials` seeded
/// shuffles of every query's candidate scores.
pub fn shuffled_baseline(
    rankings: &[QueryRanking],
    ks: &[usize],
    taus: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Metrics> {
    if trials == 0 {
        return Err(Error::InvalidInput("baseline needs at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc: Option<Metrics> = None;
    for _ in 0..trials {
        let shuffled: Vec<QueryRanking> = rankings
            .iter()
            .map(|q| QueryRanking {
                query_id: q.query_id.clone(),
                gt: q.gt,
                ranked: shuffle_scores(&q.ranked, &mut rng),
            })
            .collect();
        let m = compute_metrics(&shuffled, ks, taus)?;
        match acc.as_mut() {
            None => acc = Some(m),
            Some(a) => {
                for (ra, rm) in a.rows.iter_mut().zip(&m.rows) {
                    for (x, y) in ra.recalls.iter_mut().zip(&rm.recalls) {
                        x.recall += y.recall;
                    }
                }
                a.miou += m.miou;
            }
        }
    }
    let mut m = acc.expect("trials > 0");
    let t = trials as f64;
    for row in &mut m.rows {
        for r in &mut row.recalls {
            r.recall /= t;
        }
    }
    m.miou /= t;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub protocol: Protocol,
    pub ks: Vec<usize>,
    pub taus: Vec<f64>,
    pub rule: ScoreRule,
    /// Shuffled-score baseline trials; 0 skips the baseline.
    pub baseline_trials: usize,
    pub seed: u64,
    /// Also run sentence-to-video retrieval over the split.
    pub retrieval: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            protocol: Protocol::SlidingWindow {
                windows: vec![128, 256],
                stride_fraction: 0.5,
            },
            ks: vec![1, 5, 10],
            taus: vec![0.3, 0.5, 0.7],
            rule: ScoreRule::Mean,
            baseline_trials: 5,
            seed: 0,
            retrieval: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub rank: usize,
    pub start: usize,
    pub end: usize,
    pub score: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_id: String,
    pub video_id: String,
    pub gt: Moment,
    pub num_candidates: usize,
    pub top: Vec<ScoredCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub protocol: Protocol,
    pub score_rule: ScoreRule,
    pub metrics: Metrics,
    pub baseline: Option<Metrics>,
    /// Sentence-to-video retrieval over the split, both directions.
    pub retrieval: Option<RetrievalRecall>,
    pub queries: Vec<QueryResult>,
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidInput(format!("serializing report: {e}")))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Flat `query_id,rank,start,end,score,iou` table.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut body = String::from("query_id,rank,start,end,score,iou\n");
        for q in &self.queries {
            for c in &q.top {
                body.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    q.query_id, c.rank, c.start, c.end, c.score, c.iou
                ));
            }
        }
        w.write_all(body.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// Eval-mode attention trace of one query over its own video.
pub fn query_trace<F: Real>(
    params: &ModelParams<F>,
    query: &SentenceQuery,
    units: &Tensor<F>,
    transformed: Option<&Tensor<F>>,
) -> Result<AttentionTrace> {
    let (w, _) = embed_sentence(&query.tokens, params)?;
    let owned;
    let vbar = match transformed {
        Some(t) => t,
        None => {
            owned = transform_units(units, params, None)?.0;
            &owned
        }
    };
    let (_, a, _) = attend(&w, vbar, units)?;
    AttentionTrace::from_real(&query.id, &query.video_id, &a)
}

/// Localizes one query: its trace and all candidates, ranked.
pub fn localize<F: Real>(
    params: &ModelParams<F>,
    ds: &Dataset,
    query_id: &str,
    protocol: &Protocol,
    rule: ScoreRule,
) -> Result<(AttentionTrace, Vec<MomentCandidate>, u32)> {
    let q = ds.query(query_id).ok_or_else(|| Error::Unknown {
        kind: "query",
        id: query_id.to_string(),
    })?;
    let video = ds.video(&q.video_id).ok_or_else(|| Error::Unknown {
        kind: "video",
        id: q.video_id.clone(),
    })?;
    let units: Tensor<F> = video.units.cast();
    let trace = query_trace(params, q, &units, None)?;
    let cands = protocol.candidates(video.num_units(), video.unit_duration_frames)?;
    let ranked = score_candidates(&trace.weights, &cands, rule)?;
    Ok((trace, ranked, video.unit_duration_frames))
}

/// Ranks candidates for every query of `split` and assembles the report.
/// A pure function of its inputs; dropout is never applied.
pub fn evaluate<F: Real>(
    params: &ModelParams<F>,
    ds: &Dataset,
    split: Split,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    check_ks_taus(&cfg.ks, &cfg.taus)?;
    let queries = ds.queries(split);
    if queries.is_empty() {
        return Err(Error::InvalidInput(format!("split {split} has no queries")));
    }
    if let Some(q) = queries.iter().find(|q| q.gt_moment.is_none()) {
        return Err(Error::MissingGroundTruth(q.id.clone()));
    }
    params.validate()?;

    let videos = ds.videos_in(split);
    // per video: raw units, eval-mode transform, candidates
    type Prepared<F> = (Tensor<F>, Tensor<F>, Vec<Moment>);
    let prepared: HashMap<&str, Prepared<F>> = videos
        .par_iter()
        .map(|v| {
            let units: Tensor<F> = v.units.cast();
            let (vbar, _) = transform_units(&units, params, None)?;
            let cands = cfg.protocol.candidates(v.num_units(), v.unit_duration_frames)?;
            Ok((v.video_id.as_str(), (units, vbar, cands)))
        })
        .collect::<Result<_>>()?;

    let rankings: Vec<QueryRanking> = queries
        .par_iter()
        .map(|q| {
            let (units, vbar, cands) = prepared.get(q.video_id.as_str()).ok_or_else(|| Error::Unknown {
                kind: "video",
                id: q.video_id.clone(),
            })?;
            let trace = query_trace(params, q, units, Some(vbar))?;
            let gt = q.gt_moment.expect("checked above");
            if gt.is_empty() || gt.end > units.rows() {
                return Err(Error::InvalidInput(format!(
                    "query {} has moment {gt} outside its {}-unit video",
                    q.id,
                    units.rows()
                )));
            }
            Ok(QueryRanking {
                query_id: q.id.clone(),
                gt,
                ranked: score_candidates(&trace.weights, cands, cfg.rule)?,
            })
        })
        .collect::<Result<_>>()?;

    let metrics = compute_metrics(&rankings, &cfg.ks, &cfg.taus)?;
    let baseline = match cfg.baseline_trials {
        0 => None,
        t => Some(shuffled_baseline(&rankings, &cfg.ks, &cfg.taus, t, cfg.seed)?),
    };
    let retrieval = if cfg.retrieval {
        Some(validate_retrieval(params, &RetrievalSet::from_dataset(ds, split), true)?)
    } else {
        None
    };

    let kmax = cfg.ks.iter().copied().max().unwrap_or(1);
    let results = rankings
        .iter()
        .zip(&queries)
        .map(|(r, q)| {
            let top = r
                .ranked
                .iter()
                .take(kmax)
                .enumerate()
                .map(|(i, c)| {
                    Ok(ScoredCandidate {
                        rank: i + 1,
                        start: c.start,
                        end: c.end,
                        score: c.score,
                        iou: iou(c.moment(), r.gt)?,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(QueryResult {
                query_id: r.query_id.clone(),
                video_id: q.video_id.clone(),
                gt: r.gt,
                num_candidates: r.ranked.len(),
                top,
            })
        })
        .collect::<Result<_>>()?;

    Ok(EvalReport {
        split,
        protocol: cfg.protocol.clone(),
        score_rule: cfg.rule,
        metrics,
        baseline,
        retrieval,
        queries: results,
    })
}
