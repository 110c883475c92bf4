mod common;

use std::fs;

use common::*;
use tga_core::attention::AttentionTrace;
use tga_core::dataio::{load_dataset, load_manifest, save_checkpoint, Moment, Split};
use tga_core::eval::EvalReport;
use tga_core::trainer::RunLog;

#[test]
fn synth_output_loads_and_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("synth.json");
    write_config(&small_synth_config(3), &cfg_path);
    let out = dir.path().join("data");
    let o = tga(&["synth", "--config", path_str(&cfg_path), "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = load_manifest(&out).unwrap();
    let planted = m.queries.iter().filter(|q| q.gt_moment.is_some()).count();
    assert_eq!(planted, 2 * 24);
    assert!(stdout(&o).contains(&format!("planted_moments {planted} ")));
    assert!(stdout(&o).contains("seed 3"));
}

#[test]
fn synth_seed_flag_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("synth.json");
    write_config(&small_synth_config(0), &cfg_path);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = tga(&["synth", "--config", path_str(&cfg_path), "--out", path_str(&out), "--seed", "9"]);
        assert!(o.status.success());
        let mut files: Vec<(String, Vec<u8>)> = walk(&out)
            .into_iter()
            .map(|p| (p.strip_prefix(&out).unwrap().display().to_string(), fs::read(&p).unwrap()))
            .collect();
        files.sort();
        files
    };
    assert_eq!(run("a"), run("b"));
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn infeasible_synth_config_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_synth_config(0);
    cfg.moments_per_video = 5;
    cfg.moment_length_range = (3, 3);
    let cfg_path = dir.path().join("synth.json");
    write_config(&cfg, &cfg_path);
    let o = tga(&["synth", "--config", path_str(&cfg_path), "--out", path_str(&dir.path().join("d"))]);
    assert_eq!(o.status.code(), Some(2));
}

fn train_args<'a>(data: &'a str, out: &'a str, epochs: &'a str) -> Vec<&'a str> {
    vec![
        "train", "--data", data, "--out", out, "--epochs", epochs, "--batch", "4", "--word-dim", "6",
        "--text-dim", "8", "--joint-dim", "8", "--lr-decay-every", "4",
    ]
}

#[test]
fn zero_epochs_writes_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    small_synth(&data, 1);
    let out = dir.path().join("run");
    let o = tga(&train_args(path_str(&data), path_str(&out), "0"));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("best.tgac").exists() && out.join("last.tgac").exists());
    assert_eq!(fs::read(out.join("best.tgac")).unwrap(), fs::read(out.join("last.tgac")).unwrap());
    let log: RunLog = serde_json::from_str(&fs::read_to_string(out.join("runlog.json")).unwrap()).unwrap();
    assert!(log.epochs.is_empty());
    assert_eq!(log.best_epoch, None);
}

#[test]
fn runlog_records_schedule_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    small_synth(&data, 2);
    let a = dir.path().join("a");
    let oa = tga(&train_args(path_str(&data), path_str(&a), "10"));
    assert!(oa.status.success(), "{}", stderr(&oa));
    let text = fs::read_to_string(a.join("runlog.json")).unwrap();
    let best = fs::read(a.join("best.tgac")).unwrap();
    let ob = tga(&train_args(path_str(&data), path_str(&a), "10"));
    assert_eq!(stdout(&oa), stdout(&ob));
    assert_eq!(text, fs::read_to_string(a.join("runlog.json")).unwrap());
    assert_eq!(best, fs::read(a.join("best.tgac")).unwrap());
    let log: RunLog = serde_json::from_str(&text).unwrap();
    assert_eq!(log.epochs.len(), 10);
    for e in &log.epochs {
        let expect = 1e-3 / 10f64.powi((e.epoch / 4) as i32);
        assert_eq!(e.lr, expect, "epoch {}", e.epoch);
    }
    assert!(!text.contains("wall"));
}

#[test]
fn train_on_dataset_without_val_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = crafted_dataset(
        dir.path(),
        Split::Train,
        &[(6, vec![Moment::new(0, 2)]), (6, vec![Moment::new(1, 3)])],
    );
    let o = tga(&["train", "--data", path_str(&data), "--out", path_str(&dir.path().join("r")), "--batch", "2", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn crafted_model_localizes_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let moments = [(0, 4), (5, 10), (11, 14), (2, 5), (9, 13), (0, 3)];
    let videos: Vec<(usize, Vec<Moment>)> =
        moments.iter().map(|&(s, e)| (16, vec![Moment::new(s, e)])).collect();
    let data = crafted_dataset(&dir.path().join("data"), Split::Test, &videos);
    let ckpt = dir.path().join("crafted.tgac");
    save_checkpoint(&crafted_params(), &ckpt).unwrap();
    let o = tga(&[
        "eval", "--data", path_str(&data), "--ckpt", path_str(&ckpt), "--windows", "48,64,80", "--stride",
        "0.25", "--iou", "0.5", "--k", "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: EvalReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report.metrics.recall(1, 0.5), Some(100.0));
    let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("query_id,rank,start,end,score,iou\n"));
    assert_eq!(csv.lines().count(), 1 + moments.len());
}

#[test]
fn didemo_protocol_has_21_candidates_on_six_segments() {
    let dir = tempfile::tempdir().unwrap();
    let videos: Vec<(usize, Vec<Moment>)> = (0..4).map(|i| (6, vec![Moment::new(i, i + 1)])).collect();
    let data = crafted_dataset(&dir.path().join("data"), Split::Test, &videos);
    let ckpt = dir.path().join("m.tgac");
    save_checkpoint(&crafted_params(), &ckpt).unwrap();
    let o = tga(&["eval", "--data", path_str(&data), "--ckpt", path_str(&ckpt), "--protocol", "didemo", "--iou", "1.0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: EvalReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(report.queries.iter().all(|q| q.num_candidates == 21));
    assert_eq!(report.metrics.recall(1, 1.0), Some(100.0));
    assert_eq!(report.metrics.miou, 1.0);
}

#[test]
fn eval_without_ground_truth_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = crafted_dataset(&dir.path().join("data"), Split::Test, &[(6, vec![Moment::new(0, 2)])]);
    let mpath = data.join("manifest.json");
    let text = fs::read_to_string(&mpath).unwrap().replace("\"gt_moment\": [\n        0,\n        2\n      ],", "");
    fs::write(&mpath, text).unwrap();
    assert!(load_dataset(&data).unwrap().queries(Split::Test)[0].gt_moment.is_none());
    let ckpt = dir.path().join("m.tgac");
    save_checkpoint(&crafted_params(), &ckpt).unwrap();
    let o = tga(&["eval", "--data", path_str(&data), "--ckpt", path_str(&ckpt)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("c000_q0"), "{}", stderr(&o));
}

#[test]
fn malformed_flag_list_is_usage_error() {
    let o = tga(&["eval", "--data", "d", "--ckpt", "c", "--iou", "0.3,high"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn localize_ranks_tightest_cover_and_dumps_trace() {
    let dir = tempfile::tempdir().unwrap();
    let data = crafted_dataset(&dir.path().join("data"), Split::Test, &[(8, vec![Moment::new(5, 6)])]);
    let ckpt = dir.path().join("m.tgac");
    save_checkpoint(&crafted_params(), &ckpt).unwrap();
    let trace = dir.path().join("trace.json");
    let args = [
        "localize", "--data", path_str(&data), "--ckpt", path_str(&ckpt), "--query-id", "c000_q0",
        "--protocol", "didemo", "--top", "3", "--dump-trace", path_str(&trace),
    ];
    let a = tga(&args);
    let b = tga(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    let first = stdout(&a).lines().find(|l| l.starts_with("1 ")).unwrap().to_string();
    // 5 units of 16 frames at 25 fps
    assert_eq!(first.split(' ').collect::<Vec<_>>()[..3], ["1", "5", "6"]);
    assert!(first.ends_with(" 3.20 3.84"), "{first}");
    let t: AttentionTrace = serde_json::from_str(&fs::read_to_string(&trace).unwrap()).unwrap();
    assert_eq!(t.len(), 8);
    assert!((t.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
}

#[test]
fn localize_unknown_query_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = crafted_dataset(&dir.path().join("data"), Split::Test, &[(8, vec![Moment::new(5, 6)])]);
    let ckpt = dir.path().join("m.tgac");
    save_checkpoint(&crafted_params(), &ckpt).unwrap();
    let o = tga(&["localize", "--data", path_str(&data), "--ckpt", path_str(&ckpt), "--query-id", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_exit_codes() {
    let ok = tga(&["gradcheck", "--seed", "1"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    let lines = stdout(&ok).lines().filter(|l| l.ends_with(" ok")).count();
    assert_eq!(lines, 14);
    let fail = tga(&["gradcheck", "--tolerance", "0"]);
    assert_eq!(fail.status.code(), Some(3));
    assert!(stdout(&fail).contains("FAIL"));
}

#[test]
fn corrupt_checkpoint_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = crafted_dataset(&dir.path().join("data"), Split::Test, &[(8, vec![Moment::new(5, 6)])]);
    let ckpt = dir.path().join("m.tgac");
    save_checkpoint(&crafted_params(), &ckpt).unwrap();
    let bytes = fs::read(&ckpt).unwrap();
    fs::write(&ckpt, &bytes[..bytes.len() - 7]).unwrap();
    let o = tga(&["eval", "--data", path_str(&data), "--ckpt", path_str(&ckpt)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("truncated"), "{}", stderr(&o));
}
