#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tga_core::dataio::{
    generate_synthetic, write_features, Dataset, DatasetManifest, Moment, SentenceQuery, Split,
    SplitCounts, SyntheticConfig, VideoEntry, Vocabulary,
};
use tga_core::nn::{ModelDims, ModelParams, Tensor};

pub fn tga(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tga"))
        .args(args)
        .output()
        .expect("tga binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

pub fn small_synth_config(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        num_videos: SplitCounts {
            train: 12,
            val: 6,
            test: 6,
        },
        units_per_video: 10,
        feature_dim: 8,
        vocab_size: 20,
        sentence_length: 3,
        moments_per_video: 2,
        moment_length_range: (2, 3),
        signal_to_noise: 8.0,
        seed,
        unit_duration_frames: 16,
    }
}

pub fn write_config(cfg: &SyntheticConfig, path: &Path) {
    std::fs::write(path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
}

pub fn small_synth(dir: &Path, seed: u64) -> Dataset {
    generate_synthetic(&small_synth_config(seed), dir).unwrap().0
}

/// Feature dimension of [`crafted_dataset`]; dimension 0 flags moment units.
pub const CRAFTED_DIM: usize = 4;

/// A dataset whose moment units carry a 1 in feature 0 and nothing else
/// does, one query per moment, all in `split`.
pub fn crafted_dataset(dir: &Path, split: Split, videos: &[(usize, Vec<Moment>)]) -> PathBuf {
    std::fs::create_dir_all(dir.join("features")).unwrap();
    Vocabulary::from_tokens(vec!["a".into(), "b".into()])
        .unwrap()
        .save(&dir.join("vocab.json"))
        .unwrap();
    let mut entries = Vec::new();
    let mut queries = Vec::new();
    for (i, (n, moments)) in videos.iter().enumerate() {
        let id = format!("c{i:03}");
        let mut data = vec![0.0f32; n * CRAFTED_DIM];
        for k in 0..*n {
            data[k * CRAFTED_DIM + 1] = 0.5;
            if moments.iter().any(|m| m.contains(k)) {
                data[k * CRAFTED_DIM] = 1.0;
            }
        }
        let rel = format!("features/{id}.tgaf");
        write_features(&Tensor::from_vec(&[*n, CRAFTED_DIM], data).unwrap(), &dir.join(&rel)).unwrap();
        entries.push(VideoEntry {
            id: id.clone(),
            features: rel,
            num_units: *n,
            unit_duration_frames: 16,
        });
        for (j, m) in moments.iter().enumerate() {
            queries.push(SentenceQuery {
                id: format!("{id}_q{j}"),
                video_id: id.clone(),
                tokens: vec![0, 1],
                gt_moment: Some(*m),
                split,
            });
        }
    }
    let manifest = DatasetManifest {
        feature_dim: CRAFTED_DIM,
        vocabulary: "vocab.json".into(),
        videos: entries,
        queries,
        root: dir.to_path_buf(),
        vocab_size: 2,
    };
    manifest.write(&dir.join("manifest.json")).unwrap();
    dir.to_path_buf()
}

/// A model whose sentence feature is a fixed vector along text dimension 0
/// and whose transform maps feature 0 onto that dimension, so attention
/// peaks exactly on the flagged units.
pub fn crafted_params() -> ModelParams<f32> {
    let dims = ModelDims {
        vocab_size: 2,
        word_dim: 2,
        text_dim: 3,
        feature_dim: CRAFTED_DIM,
        joint_dim: 2,
    };
    let mut p = ModelParams::<f32>::zeros(&dims);
    p.gru.bz.data_mut().fill(20.0);
    p.gru.bh.data_mut()[0] = 3.0;
    p.fc_w.row_mut(0)[0] = 1.0;
    p.wv.row_mut(0)[0] = 1.0;
    p.wt.row_mut(0)[0] = 1.0;
    p
}
