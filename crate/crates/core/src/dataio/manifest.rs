//! Dataset manifest and vocabulary.
//!
//! `manifest.json`:
//!
//! ```json
//! {"feature_dim": 64, "vocabulary": "vocab.json",
//!  "videos": [{"id": "v0", "features": "features/v0.tgaf", "num_units": 16, "unit_duration_frames": 16}],
//!  "queries": [{"id": "q0", "video_id": "v0", "tokens": [3, 1], "gt_moment": [2, 5], "split": "train"}]}
//! ```
//!
//! `vocab.json` maps token strings to dense ids starting at 0. Paths are
//! relative to the manifest's directory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::features::{read_feature_header, read_features, VideoFeatures};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!("unknown split `{other}`"))),
        }
    }
}

/// Half-open interval `[start, end)` in unit coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Moment {
    pub start: usize,
    pub end: usize,
}

impl Moment {
    pub fn new(start: usize, end: usize) -> Self {
        Moment { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, unit: usize) -> bool {
        self.start <= unit && unit < self.end
    }
}

impl From<[usize; 2]> for Moment {
    fn from([start, end]: [usize; 2]) -> Self {
        Moment { start, end }
    }
}

impl From<Moment> for [usize; 2] {
    fn from(m: Moment) -> Self {
        [m.start, m.end]
    }
}

impl fmt::Display for Moment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub id: String,
    pub features: String,
    pub num_units: usize,
    pub unit_duration_frames: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceQuery {
    pub id: String,
    pub video_id: String,
    pub tokens: Vec<usize>,
    /// Evaluation-only temporal annotation.
    pub gt_moment: Option<Moment>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Whitespace tokenization against the vocabulary.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|t| {
                self.id(t).ok_or_else(|| Error::Unknown {
                    kind: "token",
                    id: t.to_string(),
                })
            })
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: BTreeMap<String, usize> =
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let mut tokens = vec![None; map.len()];
        for (tok, id) in map {
            match tokens.get_mut(id) {
                Some(slot @ None) => *slot = Some(tok),
                _ => {
                    return Err(Error::Integrity {
                        path: path.to_path_buf(),
                        id: tok,
                        message: format!("token id {id} is not dense from 0 or is repeated"),
                    })
                }
            }
        }
        Vocabulary::from_tokens(tokens.into_iter().map(Option::unwrap).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let map: BTreeMap<&str, usize> = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        let text = serde_json::to_string_pretty(&map).expect("vocab serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub feature_dim: usize,
    pub vocabulary: String,
    pub videos: Vec<VideoEntry>,
    pub queries: Vec<SentenceQuery>,
    /// Directory the relative paths resolve against.
    #[serde(skip)]
    pub root: PathBuf,
    #[serde(skip)]
    pub vocab_size: usize,
}

impl DatasetManifest {
    pub fn vocabulary_path(&self) -> PathBuf {
        self.root.join(&self.vocabulary)
    }

    pub fn feature_path(&self, video: &VideoEntry) -> PathBuf {
        self.root.join(&video.features)
    }

    pub fn queries_in(&self, split: Split) -> impl Iterator<Item = &SentenceQuery> {
        self.queries.iter().filter(move |q| q.split == split)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Referential and shape checks that need no file access.
    pub fn validate_structure(&self, path: &Path) -> Result<()> {
        let integrity = |id: &str, message: String| Error::Integrity {
            path: path.to_path_buf(),
            id: id.to_string(),
            message,
        };
        if self.feature_dim == 0 {
            return Err(integrity("feature_dim", "must be positive".into()));
        }
        let mut units = HashMap::with_capacity(self.videos.len());
        for v in &self.videos {
            if v.num_units == 0 {
                return Err(integrity(&v.id, "video has no units".into()));
            }
            if v.unit_duration_frames == 0 {
                return Err(integrity(&v.id, "unit_duration_frames must be positive".into()));
            }
            if units.insert(v.id.as_str(), v.num_units).is_some() {
                return Err(integrity(&v.id, "duplicate video id".into()));
            }
        }
        let mut seen = HashSet::with_capacity(self.queries.len());
        for q in &self.queries {
            if !seen.insert(q.id.as_str()) {
                return Err(integrity(&q.id, "duplicate query id".into()));
            }
            let n = *units.get(q.video_id.as_str()).ok_or_else(|| {
                integrity(
                    &q.video_id,
                    format!("query {} references an unknown video", q.id),
                )
            })?;
            if q.tokens.is_empty() {
                return Err(integrity(&q.id, "query has no tokens".into()));
            }
            if let Some(&bad) = q.tokens.iter().find(|&&t| t >= self.vocab_size) {
                return Err(integrity(
                    &q.id,
                    format!("token id {bad} >= vocabulary size {}", self.vocab_size),
                ));
            }
            if let Some(m) = q.gt_moment {
                if m.start >= m.end || m.end > n {
                    return Err(integrity(
                        &q.id,
                        format!("gt_moment {m} invalid for a video of {n} units"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Parses and fully validates a manifest, including the headers of all
/// referenced feature files. `path` may also be the dataset directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let path = &resolve_manifest_path(path);
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    manifest.root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let vocab = Vocabulary::load(&manifest.vocabulary_path())?;
    manifest.vocab_size = vocab.len();
    manifest.validate_structure(path)?;
    manifest.videos.par_iter().try_for_each(|v| {
        let fpath = manifest.feature_path(v);
        let (n, d) = read_feature_header(&fpath)?;
        if n != v.num_units || d != manifest.feature_dim {
            return Err(Error::Integrity {
                path: fpath,
                id: v.id.clone(),
                message: format!(
                    "header is {n}x{d}, manifest declares {}x{}",
                    v.num_units, manifest.feature_dim
                ),
            });
        }
        Ok(())
    })?;
    Ok(manifest)
}

/// A manifest together with its vocabulary and all feature matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub vocab: Vocabulary,
    /// Parallel to `manifest.videos`.
    pub videos: Vec<VideoFeatures>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(manifest: DatasetManifest, vocab: Vocabulary, videos: Vec<VideoFeatures>) -> Self {
        let index = videos
            .iter()
            .enumerate()
            .map(|(i, v)| (v.video_id.clone(), i))
            .collect();
        Dataset {
            manifest,
            vocab,
            videos,
            index,
        }
    }

    pub fn video(&self, id: &str) -> Option<&VideoFeatures> {
        self.index.get(id).map(|&i| &self.videos[i])
    }

    pub fn query(&self, id: &str) -> Option<&SentenceQuery> {
        self.manifest.queries.iter().find(|q| q.id == id)
    }

    pub fn queries(&self, split: Split) -> Vec<&SentenceQuery> {
        self.manifest.queries_in(split).collect()
    }

    /// Videos referenced by at least one query of `split`, in manifest order.
    pub fn videos_in(&self, split: Split) -> Vec<&VideoFeatures> {
        let ids: HashSet<&str> = self
            .manifest
            .queries_in(split)
            .map(|q| q.video_id.as_str())
            .collect();
        self.videos
            .iter()
            .filter(|v| ids.contains(v.video_id.as_str()))
            .collect()
    }

    pub fn feature_dim(&self) -> usize {
        self.manifest.feature_dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }
}

/// Loads a manifest and every feature file it references.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest = load_manifest(path)?;
    let vocab = Vocabulary::load(&manifest.vocabulary_path())?;
    let videos = manifest
        .videos
        .par_iter()
        .map(|v| {
            Ok(VideoFeatures {
                video_id: v.id.clone(),
                units: read_features(&manifest.feature_path(v))?,
                unit_duration_frames: v.unit_duration_frames,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(manifest, vocab, videos))
}

/// Accepts either a manifest file or a directory containing `manifest.json`.
pub fn resolve_manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("manifest.json")
    } else {
        path.to_path_buf()
    }
}
