//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use tga_core::attention::{similarity_row, temporal_softmax};
use tga_core::dataio::{generate_synthetic, load_dataset, Moment, Split, SplitCounts, SyntheticConfig};
use tga_core::eval::{
    compute_metrics, didemo_candidates, evaluate, score_candidates, shuffled_baseline,
    sliding_window_candidates, EvalConfig, EvalReport, Metrics, Protocol, QueryRanking, ScoreRule,
};
use tga_core::loss::{triplet_loss, triplet_loss_from_table, JointPoints, NegativePolicy, PairKey};
use tga_core::nn::{ModelParams, Tensor};
use tga_core::trainer::{train, RunLog, TrainConfig, TrainingData};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient fidelity", gradient_fidelity),
        ("attention invariants", attention_invariants),
        ("loss properties", loss_properties),
        ("planted-moment localization", planted_localization),
        ("candidate enumeration", candidate_enumeration),
        ("metric oracle equivalence", metric_oracle),
        ("random baseline", random_baseline),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} [{name}]: PASS ({detail}; {secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} [{name}]: FAIL ({detail}; {secs:.1}s)", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 8 acceptance criteria passed");
}

fn gradient_fidelity() -> Outcome {
    let started = Instant::now();
    let o = tga(&["gradcheck", "--seed", "0", "--tolerance", "1e-4"]);
    let secs = started.elapsed().as_secs_f64();
    let out = stdout(&o);
    let ok_lines = out.lines().filter(|l| l.ends_with(" ok")).count();
    check(o.status.code() == Some(0), || format!("exit {:?}: {}", o.status.code(), out))?;
    check(ok_lines == 14, || format!("{ok_lines} of 14 tensors reported ok"))?;
    check(secs < 60.0, || format!("took {secs:.1}s"))?;
    let worst = out
        .lines()
        .filter_map(|l| l.split("max_rel_err=").nth(1))
        .filter_map(|r| r.split_whitespace().next()?.parse::<f64>().ok())
        .fold(0.0f64, f64::max);
    Ok(format!("14/14 tensors, worst relative error {worst:.2e}"))
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn attention_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let instances = 1000;
    let mut perturbations = 0;
    for inst in 0..instances {
        let units = rng.random_range(1..30);
        let dim = rng.random_range(2..16);
        let w = random_vec(&mut rng, dim, 1.0);
        let rows: Vec<Vec<f64>> = (0..units)
            .map(|_| random_vec(&mut rng, dim, 1.0).into_iter().map(|x| x.max(0.0)).collect())
            .collect();
        let vbar = Tensor::from_rows(&rows).unwrap();
        let s = similarity_row(&w, &vbar).unwrap().0;
        let a = temporal_softmax(&s).unwrap();
        let sum: f64 = a.iter().sum();
        check((sum - 1.0).abs() <= 1e-6, || format!("instance {inst}: weights sum to {sum}"))?;

        let c = rng.random_range(-50.0..50.0);
        let shifted: Vec<f64> = s.iter().map(|x| x + c).collect();
        let a2 = temporal_softmax(&shifted).unwrap();
        let d = max_abs_diff(&a, &a2);
        check(d <= 1e-9, || format!("instance {inst}: shift by {c} moved weights by {d:e}"))?;

        let alpha = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled: Vec<f64> = w.iter().map(|x| x * alpha).collect();
        let a3 = temporal_softmax(&similarity_row(&scaled, &vbar).unwrap().0).unwrap();
        let d = max_abs_diff(&a, &a3);
        check(d <= 1e-9, || format!("instance {inst}: scaling w by {alpha} moved weights by {d:e}"))?;

        for _ in 0..3 {
            let k = rng.random_range(0..units);
            let delta = rng.random_range(1e-3..1.0);
            let mut up = s.clone();
            up[k] += delta;
            let b = temporal_softmax(&up).unwrap();
            perturbations += 1;
            check(units == 1 || b[k] > a[k], || format!("instance {inst}: raising s[{k}] did not raise a[{k}]"))?;
            for j in (0..units).filter(|&j| j != k) {
                check(b[j] <= a[j], || format!("instance {inst}: raising s[{k}] raised a[{j}]"))?;
            }
        }
    }
    Ok(format!("{instances} instances, {perturbations} perturbations"))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Every (anchor, negative) triple listed explicitly, then hinged.
fn brute_loss(sim: &[Vec<f64>], videos: &[usize], queries: &[usize], margin: f64, strict: bool) -> (f64, Vec<Vec<f64>>) {
    let n = sim.len();
    let neg = |i: usize, j: usize| {
        if strict {
            (videos[i], queries[i]) != (videos[j], queries[j])
        } else {
            videos[i] != videos[j]
        }
    };
    // (positive cell, negative cell)
    let mut triples = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if neg(i, j) {
                triples.push(((i, i), (i, j)));
                triples.push(((i, i), (j, i)));
            }
        }
    }
    let mut loss = 0.0;
    let mut grad = vec![vec![0.0; n]; n];
    for ((pi, pj), (ni, nj)) in triples {
        let h = margin - sim[pi][pj] + sim[ni][nj];
        if h > 0.0 {
            loss += h;
            grad[pi][pj] -= 1.0;
            grad[ni][nj] += 1.0;
        }
    }
    (loss, grad)
}

fn loss_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ids: Vec<String> = (0..4).map(|i| format!("x{i}")).collect();

    // margin satisfied: positives at 1, negatives well below 1 - margin
    for n in 2..=4 {
        let margin = 0.1;
        let sim: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { rng.random_range(-1.0..0.85) }).collect())
            .collect();
        let keys: Vec<PairKey<'_>> = ids[..n].iter().map(|id| PairKey { video_id: id, query_id: id }).collect();
        let l = triplet_loss_from_table(&sim, &keys, margin, NegativePolicy::ExcludeSameVideo).unwrap();
        check(l.loss == 0.0 && l.active_terms == 0, || format!("n={n}: loss {} on satisfied margins", l.loss))?;
    }

    // monotone in margin
    for t in 0..100 {
        let n = 4;
        let sim: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut rng, n, 1.0)).collect();
        let keys: Vec<PairKey<'_>> = ids.iter().map(|id| PairKey { video_id: id, query_id: id }).collect();
        let mut prev = -1.0;
        for step in 0..=20 {
            let margin = step as f64 * 0.1;
            let l = triplet_loss_from_table(&sim, &keys, margin, NegativePolicy::ExcludeSameVideo).unwrap().loss;
            check(l >= prev, || format!("table {t}: loss fell from {prev} to {l} at margin {margin}"))?;
            prev = l;
        }
    }

    // brute force over every sub-batch of size 2..=4 of 100 seeded tables
    let mut batches = 0;
    for t in 0..100 {
        let dim = 5;
        let vp: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, dim, 1.0)).collect();
        let tp: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, dim, 1.0)).collect();
        let videos: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
        let queries: Vec<usize> = (0..4).collect();
        let margin = rng.random_range(0.0..1.0);
        for mask in 0u32..16 {
            let idx: Vec<usize> = (0..4).filter(|b| mask & (1 << b) != 0).collect();
            if idx.len() < 2 {
                continue;
            }
            let vid_names: Vec<String> = idx.iter().map(|&i| format!("v{}", videos[i])).collect();
            let q_names: Vec<String> = idx.iter().map(|&i| format!("q{}", queries[i])).collect();
            let keys: Vec<PairKey<'_>> = vid_names
                .iter()
                .zip(&q_names)
                .map(|(v, q)| PairKey { video_id: v, query_id: q })
                .collect();
            let sub_v: Vec<usize> = idx.iter().map(|&i| videos[i]).collect();
            let sub_q: Vec<usize> = idx.iter().map(|&i| queries[i]).collect();
            let sim: Vec<Vec<f64>> = idx
                .iter()
                .map(|&i| idx.iter().map(|&j| naive_cosine(&vp[i], &tp[j])).collect())
                .collect();
            for (policy, strict) in [(NegativePolicy::ExcludeSameVideo, false), (NegativePolicy::Strict, true)] {
                let (want, want_grad) = brute_loss(&sim, &sub_v, &sub_q, margin, strict);
                let table = triplet_loss_from_table(&sim, &keys, margin, policy).unwrap();
                let points = JointPoints {
                    vp: idx.iter().map(|&i| vp[i].clone()).collect(),
                    tp: idx.iter().map(|&i| tp[i].clone()).collect(),
                };
                let full = triplet_loss(&points, &keys, margin, policy).unwrap();
                check((table.loss - want).abs() <= 1e-9, || format!("table {t} mask {mask}: {} vs {want}", table.loss))?;
                check((full.loss - want).abs() <= 1e-9, || format!("table {t} mask {mask}: {} vs {want}", full.loss))?;
                for (r, g) in table.dsim.iter().zip(&want_grad) {
                    check(max_abs_diff(r, g) <= 1e-9, || format!("table {t} mask {mask}: subgradient differs"))?;
                }
                batches += 1;
            }
        }
    }
    Ok(format!("100 margin sweeps, {batches} brute-force sub-batches"))
}

/// Sliding windows of 3, 4 and 5 units at a one-unit stride.
fn planted_protocol() -> Protocol {
    Protocol::SlidingWindow {
        windows: vec![48, 64, 80],
        stride_fraction: 0.25,
    }
}

fn planted_localization() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let synth = SyntheticConfig {
        num_videos: SplitCounts {
            train: 200,
            val: 50,
            test: 50,
        },
        units_per_video: 16,
        feature_dim: 64,
        vocab_size: 100,
        sentence_length: 4,
        moments_per_video: 2,
        moment_length_range: (3, 5),
        signal_to_noise: 8.0,
        seed: 7,
        unit_duration_frames: 16,
    };
    let (ds, _) = generate_synthetic(&synth, dir.path()).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        lr: 1e-3,
        margin: 0.1,
        lr_decay_every: 15,
        lr_decay_factor: 10.0,
        max_epochs: 30,
        batch_size: 16,
        text_dim: 256,
        joint_dim: 256,
        ..TrainConfig::default()
    };
    let out = train(&TrainingData::from_dataset(&ds), &cfg, |_| {}).map_err(|e| e.to_string())?;
    let eval_cfg = EvalConfig {
        protocol: planted_protocol(),
        ks: vec![1],
        taus: vec![0.5],
        rule: ScoreRule::Mean,
        baseline_trials: 20,
        seed: 0,
        retrieval: false,
    };
    let report = evaluate(&out.best, &ds, Split::Test, &eval_cfg).map_err(|e| e.to_string())?;
    let r1 = report.metrics.recall(1, 0.5).unwrap();
    let base = report.baseline.as_ref().and_then(|b| b.recall(1, 0.5)).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let detail = format!("R@1 IoU>=0.5 {r1:.1}, shuffled baseline {base:.2}, ratio {:.2}, best epoch {:?}", r1 / base, out.log.best_epoch);
    check(r1 >= 60.0, || format!("{detail}: below 60"))?;
    check(r1 >= 3.0 * base, || format!("{detail}: below 3x baseline"))?;
    check(secs < 300.0, || format!("{detail}: took {secs:.0}s"))?;
    Ok(detail)
}

fn candidate_enumeration() -> Outcome {
    check(didemo_candidates(6).len() == 21, || "didemo_candidates(6) is not 21".into())?;
    for n in 1..=12 {
        let mut oracle = BTreeSet::new();
        for a in 0..=n {
            for b in 0..=n {
                if a < b {
                    oracle.insert((a, b));
                }
            }
        }
        let got: Vec<(usize, usize)> = didemo_candidates(n).iter().map(|m| (m.start, m.end)).collect();
        let set: BTreeSet<_> = got.iter().copied().collect();
        check(set == oracle && got.len() == n * (n + 1) / 2, || format!("didemo_candidates({n}) mismatch"))?;
    }
    let sw = sliding_window_candidates(16, 16, &[128, 256], 0.5).map_err(|e| e.to_string())?;
    let want = vec![Moment::new(0, 8), Moment::new(0, 16), Moment::new(4, 12), Moment::new(8, 16)];
    check(sw == want, || format!("sliding windows {sw:?}"))?;
    Ok("n(n+1)/2 for n in 1..=12, 21 for 6 segments, 4 sliding windows".into())
}

fn naive_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let mut inter = 0;
    let mut union = 0;
    for u in a.0.min(b.0)..a.1.max(b.1) {
        let ina = u >= a.0 && u < a.1;
        let inb = u >= b.0 && u < b.1;
        if ina && inb {
            inter += 1;
        }
        if ina || inb {
            union += 1;
        }
    }
    inter as f64 / union as f64
}

/// Returns (R@K table indexed [tau][k], mIoU) from ranked (start, end) lists.
fn naive_metrics(preds: &[(Vec<(usize, usize)>, (usize, usize))], ks: &[usize], taus: &[f64]) -> (Vec<Vec<f64>>, f64) {
    let mut table = vec![vec![0.0; ks.len()]; taus.len()];
    for (ti, &tau) in taus.iter().enumerate() {
        for (ki, &k) in ks.iter().enumerate() {
            let mut hits = 0;
            for (ranked, gt) in preds {
                let mut hit = false;
                for c in ranked.iter().take(k) {
                    if naive_iou(*c, *gt) >= tau {
                        hit = true;
                    }
                }
                if hit {
                    hits += 1;
                }
            }
            table[ti][ki] = hits as f64 * 100.0 / preds.len() as f64;
        }
    }
    let mut miou = 0.0;
    for (ranked, gt) in preds {
        miou += naive_iou(ranked[0], *gt);
    }
    (table, miou / preds.len() as f64)
}

fn compare(m: &Metrics, naive: &(Vec<Vec<f64>>, f64), what: &str) -> Result<(), String> {
    for (row, want) in m.rows.iter().zip(&naive.0) {
        for (r, w) in row.recalls.iter().zip(want) {
            check((r.recall - w).abs() <= 1e-12, || format!("{what}: R@{} IoU {} {} vs {w}", r.k, row.iou, r.recall))?;
        }
    }
    check((m.miou - naive.1).abs() <= 1e-12, || format!("{what}: mIoU {} vs {}", m.miou, naive.1))
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ks = [1, 3, 5, 10];
    let taus = [0.1, 0.3, 0.5, 0.7, 1.0];
    for set in 0..50 {
        let nq = rng.random_range(1..60);
        let mut rankings = Vec::new();
        let mut preds = Vec::new();
        for q in 0..nq {
            let n = rng.random_range(2..20);
            let trace: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let cands = if rng.random_bool(0.5) {
                didemo_candidates(n)
            } else {
                sliding_window_candidates(n, 16, &[32, 64, 96], rng.random_range(0.2..1.0)).unwrap()
            };
            let s = rng.random_range(0..n);
            let gt = Moment::new(s, rng.random_range(s + 1..=n));
            let ranked = score_candidates(&trace, &cands, ScoreRule::Mean).map_err(|e| e.to_string())?;
            preds.push((ranked.iter().map(|c| (c.start, c.end)).collect(), (gt.start, gt.end)));
            rankings.push(QueryRanking {
                query_id: format!("q{q}"),
                gt,
                ranked,
            });
        }
        let m = compute_metrics(&rankings, &ks, &taus).map_err(|e| e.to_string())?;
        compare(&m, &naive_metrics(&preds, &ks, &taus), &format!("set {set}"))?;
    }

    // the same oracle applied to a full evaluate() run
    let dir = tempfile::tempdir().unwrap();
    let ds = small_synth(dir.path(), 12);
    let params = ModelParams::<f32>::init(
        &TrainingData::from_dataset(&ds).model_dims(&TrainConfig {
            word_dim: 6,
            text_dim: 8,
            joint_dim: 8,
            ..TrainConfig::default()
        }),
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap();
    let cfg = EvalConfig {
        protocol: Protocol::Didemo,
        ks: ks.to_vec(),
        taus: taus.to_vec(),
        baseline_trials: 0,
        retrieval: false,
        ..EvalConfig::default()
    };
    let report = evaluate(&params, &ds, Split::Test, &cfg).map_err(|e| e.to_string())?;
    let preds: Vec<_> = report
        .queries
        .iter()
        .map(|q| (q.top.iter().map(|c| (c.start, c.end)).collect(), (q.gt.start, q.gt.end)))
        .collect();
    compare(&report.metrics, &naive_metrics(&preds, &ks, &taus), "evaluate")?;
    Ok("50 random prediction sets and one evaluate run match to 1e-12".into())
}

fn random_baseline() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cands = didemo_candidates(6);
    let rankings: Vec<QueryRanking> = (0..10_000)
        .map(|q| {
            let trace: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
            QueryRanking {
                query_id: format!("q{q}"),
                gt: cands[rng.random_range(0..cands.len())],
                ranked: score_candidates(&trace, &cands, ScoreRule::Mean).unwrap(),
            }
        })
        .collect();
    let m = shuffled_baseline(&rankings, &[1], &[1.0], 1, 8).map_err(|e| e.to_string())?;
    let r1 = m.recall(1, 1.0).unwrap();
    let expect = 100.0 / 21.0;
    let detail = format!("R@1 {r1:.2} vs {expect:.2} over 10^4 queries");
    check((r1 - expect).abs() <= 0.5, || detail.clone())?;
    Ok(detail)
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    small_synth(&data, 21);
    let run = |name: &str| -> Result<(Vec<u8>, String), String> {
        let out = dir.path().join(name);
        let o = tga(&[
            "train", "--data", path_str(&data), "--out", path_str(&out), "--epochs", "6", "--batch", "4",
            "--word-dim", "8", "--text-dim", "12", "--joint-dim", "12", "--seed", "3", "--bidirectional-val",
        ]);
        check(o.status.success(), || format!("train failed: {}", stderr(&o)))?;
        Ok((fs::read(out.join("best.tgac")).unwrap(), fs::read_to_string(out.join("runlog.json")).unwrap()))
    };
    let (ckpt_a, log_a) = run("a")?;
    let (ckpt_b, log_b) = run("b")?;
    check(ckpt_a == ckpt_b, || "best.tgac differs between runs".into())?;
    check(log_a == log_b, || "runlog.json differs between runs".into())?;

    let ckpt = dir.path().join("a").join("best.tgac");
    let o = tga(&["eval", "--data", path_str(&data), "--ckpt", path_str(&ckpt), "--split", "val", "--protocol", "didemo"]);
    check(o.status.success(), || format!("eval failed: {}", stderr(&o)))?;
    let report: EvalReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a").join("report.json")).unwrap()).unwrap();
    let log: RunLog = serde_json::from_str(&log_a).unwrap();
    let in_run = log.best_val_recall_sum.ok_or("no best epoch recorded")?;
    let reloaded = report.retrieval.ok_or("no retrieval in report")?.sum;
    check(in_run.to_bits() == reloaded.to_bits(), || format!("in-run {in_run} vs reloaded {reloaded}"))?;
    load_dataset(&data).map_err(|e| e.to_string())?;
    Ok(format!("identical checkpoints and run logs; val recall sum {in_run} reproduced"))
}
