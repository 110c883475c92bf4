//! Synthetic datasets with planted moments.
//!
//! Each query's tokens map to a concept vector `c` (the mean of fixed
//! random per-token concept vectors). Units inside the query's planted
//! moment carry `M·c + noise`; every other unit is pure noise. The noise
//! variance is chosen so that the mean planted signal power per dimension
//! divided by the noise variance equals `signal_to_noise`. Ground-truth
//! intervals are recorded only in `gt_moment`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::features::{write_features, VideoFeatures};
use crate::dataio::manifest::{
    Dataset, DatasetManifest, Moment, SentenceQuery, Split, VideoEntry, Vocabulary,
};
use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

fn default_unit_duration() -> u32 {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_videos: SplitCounts,
    pub units_per_video: usize,
    pub feature_dim: usize,
    pub vocab_size: usize,
    pub sentence_length: usize,
    pub moments_per_video: usize,
    /// Inclusive `(min, max)` moment length in units.
    pub moment_length_range: (usize, usize),
    pub signal_to_noise: f64,
    pub seed: u64,
    #[serde(default = "default_unit_duration")]
    pub unit_duration_frames: u32,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(format!("infeasible synthetic config: {m}")));
        let (lo, hi) = self.moment_length_range;
        if self.units_per_video == 0
            || self.feature_dim == 0
            || self.vocab_size == 0
            || self.sentence_length == 0
            || self.unit_duration_frames == 0
        {
            return bad("sizes must be positive".into());
        }
        if self.moments_per_video == 0 {
            return bad("moments_per_video must be at least 1".into());
        }
        if lo == 0 || lo > hi {
            return bad(format!("moment_length_range ({lo}, {hi}) is empty"));
        }
        if hi > self.units_per_video {
            return bad(format!(
                "moment length {hi} exceeds {} units",
                self.units_per_video
            ));
        }
        if self.moments_per_video * hi > self.units_per_video {
            return bad(format!(
                "{} disjoint moments of up to {hi} units do not fit in {} units",
                self.moments_per_video, self.units_per_video
            ));
        }
        if !(self.signal_to_noise > 0.0 && self.signal_to_noise.is_finite()) {
            return bad("signal_to_noise must be positive".into());
        }
        Ok(())
    }
}

/// Summary of the planted ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthStats {
    pub videos: usize,
    pub planted_moments: usize,
    pub per_split: Vec<(Split, usize)>,
    pub mean_moment_length: f64,
    pub noise_std: f64,
}

impl SynthStats {
    pub fn from_dataset(ds: &Dataset, noise_std: f64) -> Self {
        let moments: Vec<Moment> = ds
            .manifest
            .queries
            .iter()
            .filter_map(|q| q.gt_moment)
            .collect();
        let per_split = Split::ALL
            .iter()
            .map(|&s| (s, ds.manifest.queries_in(s).filter(|q| q.gt_moment.is_some()).count()))
            .collect();
        let mean = if moments.is_empty() {
            0.0
        } else {
            moments.iter().map(|m| m.len() as f64).sum::<f64>() / moments.len() as f64
        };
        SynthStats {
            videos: ds.videos.len(),
            planted_moments: moments.len(),
            per_split,
            mean_moment_length: mean,
            noise_std,
        }
    }
}

/// Disjoint moments with random lengths and random gaps.
fn place_moments<R: Rng>(cfg: &SyntheticConfig, rng: &mut R) -> Vec<Moment> {
    let (lo, hi) = cfg.moment_length_range;
    let lengths: Vec<usize> = (0..cfg.moments_per_video)
        .map(|_| rng.random_range(lo..=hi))
        .collect();
    let slack = cfg.units_per_video - lengths.iter().sum::<usize>();
    let mut cuts: Vec<usize> = (0..cfg.moments_per_video)
        .map(|_| rng.random_range(0..=slack))
        .collect();
    cuts.sort_unstable();
    let mut moments = Vec::with_capacity(lengths.len());
    let mut pos = 0;
    let mut prev_cut = 0;
    for (len, cut) in lengths.into_iter().zip(cuts) {
        pos += cut - prev_cut;
        prev_cut = cut;
        moments.push(Moment::new(pos, pos + len));
        pos += len;
    }
    moments
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

struct Planted {
    split: Split,
    video_id: String,
    moments: Vec<(Moment, Vec<usize>, Vec<f64>)>,
}

/// Generates the dataset in memory and writes `manifest.json`,
/// `vocab.json` and `features/*.tgaf` under `out_dir`. The output is a
/// pure function of `cfg`.
pub fn generate_synthetic(cfg: &SyntheticConfig, out_dir: &Path) -> Result<(Dataset, SynthStats)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.feature_dim;
    let concept_dim = dim;

    let token_concepts: Vec<Vec<f64>> = (0..cfg.vocab_size)
        .map(|_| (0..concept_dim).map(|_| gaussian(&mut rng)).collect())
        .collect();
    let scale = 1.0 / (concept_dim as f64).sqrt();
    let mixing: Vec<Vec<f64>> = (0..dim)
        .map(|_| (0..concept_dim).map(|_| gaussian(&mut rng) * scale).collect())
        .collect();

    let mut planted = Vec::with_capacity(cfg.num_videos.total());
    let mut signal_power = 0.0;
    let mut signal_count = 0usize;
    for split in Split::ALL {
        for i in 0..cfg.num_videos.get(split) {
            let video_id = format!("{split}{i:04}");
            let moments = place_moments(cfg, &mut rng)
                .into_iter()
                .map(|m| {
                    let tokens: Vec<usize> = (0..cfg.sentence_length)
                        .map(|_| rng.random_range(0..cfg.vocab_size))
                        .collect();
                    let mut concept = vec![0.0; concept_dim];
                    for &t in &tokens {
                        for (c, &x) in concept.iter_mut().zip(&token_concepts[t]) {
                            *c += x / tokens.len() as f64;
                        }
                    }
                    let signal: Vec<f64> = mixing
                        .iter()
                        .map(|row| row.iter().zip(&concept).map(|(a, b)| a * b).sum())
                        .collect();
                    signal_power += signal.iter().map(|x| x * x).sum::<f64>() / dim as f64;
                    signal_count += 1;
                    (m, tokens, signal)
                })
                .collect();
            planted.push(Planted {
                split,
                video_id,
                moments,
            });
        }
    }
    let noise_std = if signal_count == 0 {
        1.0
    } else {
        (signal_power / signal_count as f64 / cfg.signal_to_noise).sqrt()
    };

    let feature_dir = out_dir.join("features");
    fs::create_dir_all(&feature_dir).map_err(|e| Error::io(&feature_dir, e))?;
    let vocab = Vocabulary::from_tokens((0..cfg.vocab_size).map(|i| format!("w{i}")).collect())?;
    vocab.save(&out_dir.join("vocab.json"))?;

    let mut entries = Vec::with_capacity(planted.len());
    let mut queries = Vec::new();
    let mut videos = Vec::with_capacity(planted.len());
    for p in &planted {
        let mut data = Vec::with_capacity(cfg.units_per_video * dim);
        for k in 0..cfg.units_per_video {
            let signal = p.moments.iter().find(|(m, _, _)| m.contains(k)).map(|x| &x.2);
            for d in 0..dim {
                let noise = noise_std * gaussian(&mut rng);
                let s = signal.map_or(0.0, |s| s[d]);
                data.push((s + noise) as f32);
            }
        }
        let units = Tensor::from_vec(&[cfg.units_per_video, dim], data)?;
        let rel = format!("features/{}.tgaf", p.video_id);
        write_features(&units, &out_dir.join(&rel))?;
        entries.push(VideoEntry {
            id: p.video_id.clone(),
            features: rel,
            num_units: cfg.units_per_video,
            unit_duration_frames: cfg.unit_duration_frames,
        });
        for (j, (m, tokens, _)) in p.moments.iter().enumerate() {
            queries.push(SentenceQuery {
                id: format!("{}_q{j}", p.video_id),
                video_id: p.video_id.clone(),
                tokens: tokens.clone(),
                gt_moment: Some(*m),
                split: p.split,
            });
        }
        videos.push(VideoFeatures {
            video_id: p.video_id.clone(),
            units,
            unit_duration_frames: cfg.unit_duration_frames,
        });
    }
    let manifest = DatasetManifest {
        feature_dim: dim,
        vocabulary: "vocab.json".into(),
        videos: entries,
        queries,
        root: out_dir.to_path_buf(),
        vocab_size: cfg.vocab_size,
    };
    manifest.write(&out_dir.join("manifest.json"))?;
    let ds = Dataset::new(manifest, vocab, videos);
    let stats = SynthStats::from_dataset(&ds, noise_std);
    Ok((ds, stats))
}
