//! Acceptance criteria P1-P9. Runs as its own harness so that every
//! criterion prints one PASS/FAIL/SKIP line with its runtime. Pass criterion
//! names (e.g. `P5`) as arguments to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use ndarray::{s, Array1, Array2, Array3, Array4, Array5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use stressseq::backbone::{BackboneConfig, BackboneName, FeatureExtractor};
use stressseq::ingest::{scan_dataset, write_manifest, ImageRecord};
use stressseq::models::Pipeline;
use stressseq::report::{confusion_matrix, mean_std, precision_recall_f1};
use stressseq::sequencer::{build_sequences, folds_to_json, sequences_to_json, stratified_kfold, Grouping};
use stressseq::synthgen::{generate, SynthConfig};
use stressseq::temporal::{backward, cell_step, forward, forward_with_cache, LstmState, LstmWeights};
use stressseq::trainer::{evaluate, extract_all, lr_at, prepare, run_cv, Dataset, Inputs, LrSchedule, Model, TrainConfig};

enum Outcome {
    Pass(String),
    Skip(String),
}

type Check = fn() -> Result<Outcome, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(elapsed <= limit, || format!("{what} took {elapsed:.1?}, limit {limit:?}"))
}

// ---------------------------------------------------------------- P1, P2

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Element-by-element cell update with explicit loops.
fn scalar_step(w: &LstmWeights<f64>, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hd = h.len();
    let pre = |wh: &Array2<f64>, wx: &Array2<f64>, b: &Array1<f64>, j: usize| {
        let mut z = b[j];
        for k in 0..hd {
            z += wh[[j, k]] * h[k];
        }
        for (k, xv) in x.iter().enumerate() {
            z += wx[[j, k]] * xv;
        }
        z
    };
    let mut h_new = vec![0.0; hd];
    let mut c_new = vec![0.0; hd];
    for j in 0..hd {
        let f = sig(pre(&w.w_fh, &w.w_fx, &w.b_f, j));
        let i = sig(pre(&w.w_ih, &w.w_ix, &w.b_i, j));
        let g = pre(&w.w_ch, &w.w_cx, &w.b_c, j).tanh();
        let o = sig(pre(&w.w_oh, &w.w_ox, &w.b_o, j));
        c_new[j] = f * c[j] + i * g;
        h_new[j] = o * c_new[j].tanh();
    }
    (h_new, c_new)
}

fn random_seq(b: usize, t: usize, d: usize, rng: &mut impl Rng) -> Array3<f64> {
    Array3::from_shape_simple_fn((b, t, d), || rng.random_range(-1.0..1.0))
}

/// Loss `sum(r * h_T)` for a fixed projection `r`.
fn projected(w: &LstmWeights<f64>, xs: &Array3<f64>, r: &Array2<f64>) -> f64 {
    (forward(w, xs, None).unwrap() * r).sum()
}

fn p1() -> Result<Outcome, String> {
    let start = Instant::now();
    let mut max_err: f64 = 0.0;
    let mut max_grad_rel: f64 = 0.0;
    let mut configs = 0;
    let hs = [1, 2, 8];
    let ds = [1, 3, 16];
    let ts = [1, 2, 5];
    for seed in 0..50u64 {
        let (h, d, t) = (hs[seed as usize % 3], ds[(seed / 3) as usize % 3], ts[(seed / 9) as usize % 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let w = LstmWeights::<f64>::random(h, d, 0.5, &mut rng);
        let b = 2;
        let xs = random_seq(b, t, d, &mut rng);

        // Forward against the scalar recurrence, per batch row.
        let got = forward(&w, &xs, None).map_err(|e| e.to_string())?;
        for row in 0..b {
            let (mut hv, mut cv) = (vec![0.0; h], vec![0.0; h]);
            for step in 0..t {
                let x: Vec<f64> = xs.slice(s![row, step, ..]).to_vec();
                let state = LstmState {
                    h: Array1::from(hv.clone()),
                    c: Array1::from(cv.clone()),
                };
                let (next, _) = cell_step(&w, &Array1::from(x.clone()), &state).map_err(|e| e.to_string())?;
                (hv, cv) = scalar_step(&w, &x, &hv, &cv);
                for j in 0..h {
                    max_err = max_err.max((next.h[j] - hv[j]).abs()).max((next.c[j] - cv[j]).abs());
                }
            }
            for j in 0..h {
                max_err = max_err.max((got[[row, j]] - hv[j]).abs());
            }
        }

        // Gradients against central differences.
        let r = Array2::from_shape_simple_fn((b, h), || rng.random_range(-1.0..1.0));
        let (_, cache) = forward_with_cache(&w, &xs, None).map_err(|e| e.to_string())?;
        let grads = backward(&w, Some(&cache), &r).map_err(|e| e.to_string())?;
        let eps = 1e-6;
        let rel = |analytic: f64, numeric: f64| (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
        let mut analytic = Vec::new();
        grads.weights.for_each(|name, g| analytic.push((name.to_string(), g.to_owned())));
        for (name, g) in &analytic {
            for idx in 0..g.len() {
                let bump = |delta: f64| {
                    let mut wp = w.clone();
                    wp.for_each_mut(|n, mut a| {
                        if n == name {
                            let v = a.iter_mut().nth(idx).expect("index in range");
                            *v += delta;
                        }
                    });
                    projected(&wp, &xs, &r)
                };
                let numeric = (bump(eps) - bump(-eps)) / (2.0 * eps);
                let a = *g.iter().nth(idx).expect("index in range");
                max_grad_rel = max_grad_rel.max(rel(a, numeric));
            }
        }
        for idx in 0..xs.len() {
            let bump = |delta: f64| {
                let mut xp = xs.clone();
                *xp.iter_mut().nth(idx).expect("index in range") += delta;
                projected(&w, &xp, &r)
            };
            let numeric = (bump(eps) - bump(-eps)) / (2.0 * eps);
            let a = *grads.xs.iter().nth(idx).expect("index in range");
            max_grad_rel = max_grad_rel.max(rel(a, numeric));
        }
        configs += 1;
    }
    let elapsed = start.elapsed();
    ensure(max_err <= 1e-10, || format!("forward max-abs error {max_err:e} > 1e-10"))?;
    ensure(max_grad_rel <= 1e-4, || format!("gradient relative error {max_grad_rel:e} > 1e-4"))?;
    within(elapsed, Duration::from_secs(30), "P1")?;
    Ok(Outcome::Pass(format!(
        "{configs} configs, forward max-abs {max_err:.1e}, gradient max-rel {max_grad_rel:.1e}"
    )))
}

fn p2() -> Result<Outcome, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_h: f64 = 0.0;
    for n in 0..1000 {
        let (h, d) = (1 + n % 8, 1 + n % 5);
        let scale = rng.random_range(0.05..2.0);
        let w = LstmWeights::<f64>::random(h, d, scale, &mut rng);
        let x = Array1::from_shape_simple_fn(d, || rng.random_range(-1.0..1.0));
        let prev = LstmState {
            h: Array1::from_shape_simple_fn(h, || rng.random_range(-0.99..0.99)),
            c: Array1::from_shape_simple_fn(h, || rng.random_range(-3.0..3.0)),
        };
        let (next, gates) = cell_step(&w, &x, &prev).map_err(|e| e.to_string())?;
        for g in [&gates.f, &gates.i, &gates.o] {
            ensure(g.iter().all(|&v| v > 0.0 && v < 1.0), || format!("step {n}: gate outside (0, 1): {g}"))?;
        }
        worst_h = next.h.iter().fold(worst_h, |m, v| m.max(v.abs()));
        ensure(next.h.iter().all(|v| v.abs() < 1.0), || format!("step {n}: |h| >= 1"))?;
    }
    within(start.elapsed(), Duration::from_secs(5), "P2")?;
    Ok(Outcome::Pass(format!("1000 cell steps, max |h| {worst_h:.4}")))
}

// ---------------------------------------------------------------- P3

fn p3() -> Result<Outcome, String> {
    let start = Instant::now();
    let classes = ["high", "low", "medium"];
    let day0 = NaiveDate::from_ymd_opt(2016, 4, 1).expect("valid date");
    let mut records = Vec::new();
    for class in classes {
        for i in 0..504u32 {
            let box_id = 1 + i % 9;
            records.push(ImageRecord {
                path: PathBuf::from(format!("{class}/box{box_id:02}_{i:04}.png")),
                label: class.to_string(),
                date: day0 + chrono::Days::new(u64::from(i / 9)),
                box_id: Some(box_id),
                modality: None,
            });
        }
    }
    let set = build_sequences(&records, 5, Grouping::ClassOnly, 1).map_err(|e| e.to_string())?;
    // Oracle: windows of length L over n ordered items number n - L + 1.
    let per_class = 504 - 5 + 1;
    for k in 0..3 {
        let n = set.samples.iter().filter(|s| s.label_index == k).count();
        ensure(n == per_class, || format!("class {k}: {n} sequences, expected {per_class}"))?;
    }
    ensure(set.samples.len() == 3 * per_class, || format!("{} sequences in total", set.samples.len()))?;
    let labels = set.labels();
    let folds = stratified_kfold(&labels, 5, 42).map_err(|e| e.to_string())?;
    let mut seen = vec![0usize; labels.len()];
    for f in &folds {
        ensure(f.val_ids.len() == 300, || format!("fold {}: {} validation samples", f.fold_index, f.val_ids.len()))?;
        for k in 0..3 {
            let n = f.val_ids.iter().filter(|&&i| labels[i] == k).count();
            ensure(n == 100, || format!("fold {}: class {k} has {n} validation samples", f.fold_index))?;
        }
        ensure(f.train_ids.iter().all(|i| !f.val_ids.contains(i)), || "train/val overlap".into())?;
        ensure(f.train_ids.len() + f.val_ids.len() == labels.len(), || "fold does not cover all samples".into())?;
        for &i in &f.val_ids {
            seen[i] += 1;
        }
    }
    ensure(seen.iter().all(|&n| n == 1), || "validation sets do not partition the samples".into())?;
    within(start.elapsed(), Duration::from_secs(5), "P3")?;
    Ok(Outcome::Pass("500 sequences per class, 1500 total; 5 folds of 300 (100 per class)".into()))
}

// ---------------------------------------------------------------- P4

fn p4() -> Result<Outcome, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..20u64 {
        let side = rng.random_range(8..48);
        let (b, t) = (rng.random_range(1..4), rng.random_range(1..6));
        let fx = FeatureExtractor::tiny_cnn(side, case);
        let x = Array5::from_shape_simple_fn((b, t, side, side, 3), || rng.random_range(0.0f32..1.0));
        let td = fx.extract_timedistributed(&x).map_err(|e| e.to_string())?;
        for bi in 0..b {
            for ti in 0..t {
                let frame: Array4<f32> = x.slice(s![bi, ti..ti + 1, .., .., ..]).to_owned();
                let one = fx.extract(&frame).map_err(|e| e.to_string())?;
                ensure(td.slice(s![bi, ti, ..]) == one.row(0), || {
                    format!("case {case}: frame ({bi}, {ti}) differs for shape ({b}, {t}, {side})")
                })?;
            }
        }
    }
    within(start.elapsed(), Duration::from_secs(20), "P4")?;
    Ok(Outcome::Pass("20 random shapes, exact equality".into()))
}

// ---------------------------------------------------------------- shared

fn scratch() -> tempfile::TempDir {
    tempfile::tempdir().expect("temporary directory")
}

fn synth(cfg: &SynthConfig, dir: &Path) -> Result<Vec<ImageRecord>, String> {
    generate(cfg, dir).map_err(|e| e.to_string())?;
    Ok(scan_dataset(dir, None).map_err(|e| e.to_string())?.records)
}

fn tiny(cfg: TrainConfig, side: usize) -> TrainConfig {
    TrainConfig {
        backbone: BackboneConfig {
            name: BackboneName::TinyCnn,
            weights_path: None,
        },
        image_side: side,
        ..cfg
    }
}

// ---------------------------------------------------------------- P5

fn p5() -> Result<Outcome, String> {
    let start = Instant::now();
    let dir = scratch();
    let synth_cfg = SynthConfig::default();
    let records = synth(&synth_cfg, &dir.path().join("data"))?;
    let side = synth_cfg.image_side;

    let mut st = tiny(TrainConfig::spatiotemporal(), side);
    st.grouping = Grouping::ClassBoxModality;
    st.standardize_features = true;
    let st_report = run_cv(&records, &st, &dir.path().join("st"), "p5-st").map_err(|e| e.to_string())?;
    let st_acc = st_report.aggregate.test_accuracy.mean;
    let st_time = start.elapsed();

    let sp = tiny(TrainConfig::spatial(), side);
    let sp_report = run_cv(&records, &sp, &dir.path().join("sp"), "p5-sp").map_err(|e| e.to_string())?;
    let sp_acc = sp_report.aggregate.test_accuracy.mean;
    let elapsed = start.elapsed();

    let detail = format!(
        "spatio-temporal {st_acc:.4} ({st_time:.0?}), spatial {sp_acc:.4} ({:.0?})",
        elapsed - st_time
    );
    ensure(st_acc >= 0.90, || format!("spatio-temporal fold-mean accuracy below 0.90: {detail}"))?;
    ensure(sp_acc <= 0.50, || format!("spatial fold-mean accuracy above 0.50: {detail}"))?;
    within(elapsed, Duration::from_secs(600), "P5")?;
    Ok(Outcome::Pass(detail))
}

// ---------------------------------------------------------------- P6

fn p6() -> Result<Outcome, String> {
    let start = Instant::now();
    let dir = scratch();
    let synth_cfg = SynthConfig {
        boxes_per_class: 3,
        dates: 8,
        image_side: 32,
        ..SynthConfig::default()
    };
    let records = synth(&synth_cfg, &dir.path().join("data"))?;
    let mut worst: f64 = 0.0;
    for pipeline in [Pipeline::SpatioTemporal, Pipeline::Spatial] {
        let mut cfg = tiny(TrainConfig::for_pipeline(pipeline), 32);
        cfg.epochs = 4;
        cfg.folds = 3;
        cfg.batch_size = 8;
        cfg.standardize_features = pipeline == Pipeline::SpatioTemporal;
        let run_dir = dir.path().join(pipeline.to_string());
        let report = run_cv(&records, &cfg, &run_dir, "p6").map_err(|e| e.to_string())?;

        // Rebuild the data the run used and re-evaluate every checkpoint.
        let prepared = prepare(&records, &cfg).map_err(|e| e.to_string())?;
        let (mut base, _) = FeatureExtractor::from_config(&cfg.backbone, 32, cfg.seed).map_err(|e| e.to_string())?;
        let features;
        let images;
        let inputs = match pipeline {
            Pipeline::SpatioTemporal => {
                features = extract_all(&base, &records).map_err(|e| e.to_string())?;
                Inputs::Features {
                    features: &features,
                    frames: &prepared.frames,
                }
            }
            Pipeline::Spatial => {
                base.set_freeze(3).map_err(|e| e.to_string())?;
                let ids: Vec<usize> = (0..records.len()).collect();
                images = stressseq::sequencer::load_image_batch(&records, &ids, 32).map_err(|e| e.to_string())?;
                Inputs::Images(&images)
            }
        };
        let data = Dataset {
            inputs,
            labels: &prepared.labels,
        };
        for (fold, split) in report.folds.iter().zip(&prepared.folds) {
            let min = fold.history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
            ensure(fold.history[fold.epoch - 1].val_loss == min, || {
                format!("{pipeline} fold {}: checkpoint epoch {} is not the val_loss minimum", fold.fold + 1, fold.epoch)
            })?;
            let mut model = Model::build(base.clone(), &cfg, prepared.classes.len(), 0).map_err(|e| e.to_string())?;
            let frozen = model.backbone().frozen_checksum();
            let ckpt = PathBuf::from(fold.checkpoint.as_ref().ok_or("no checkpoint recorded")?);
            model.load_checkpoint(&ckpt).map_err(|e| e.to_string())?;
            ensure(model.backbone().frozen_checksum() == frozen, || {
                format!("{pipeline} fold {}: frozen backbone values changed", fold.fold + 1)
            })?;
            let again = evaluate(&model, &data, &split.val_ids).map_err(|e| e.to_string())?;
            let err = (again.loss - min).abs();
            worst = worst.max(err);
            ensure(err <= 1e-6, || format!("{pipeline} fold {}: restored val_loss off by {err:e}", fold.fold + 1))?;
        }
    }
    let cfg = TrainConfig::spatial();
    ensure(cfg.lr_schedule == LrSchedule::ExponentialStaircase, || "spatial default schedule is not staircase".into())?;
    let spe = 7;
    let before = lr_at(spe * 10 - 1, &cfg, spe);
    let after = lr_at(spe * 10, &cfg, spe);
    ensure(lr_at(0, &cfg, spe) == 0.001 && before == 0.001, || format!("lr before the first drop is {before}"))?;
    ensure((after - 0.0009).abs() < 1e-15, || format!("lr after the first drop is {after}"))?;
    within(start.elapsed(), Duration::from_secs(120), "P6")?;
    Ok(Outcome::Pass(format!(
        "checkpoints at val_loss minimum, restore error {worst:.1e}, frozen layers unchanged, lr 0.001 -> {after}"
    )))
}

// ---------------------------------------------------------------- P7

fn p7() -> Result<Outcome, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..100 {
        let c = rng.random_range(2..6);
        let n = rng.random_range(1..120);
        let y_true: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let y_pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let cm = confusion_matrix(&y_true, &y_pred, c).map_err(|e| e.to_string())?;
        let r = precision_recall_f1(&cm).map_err(|e| e.to_string())?;
        let mut f1s = Vec::new();
        for j in 0..c {
            for i in 0..c {
                let count = (0..n).filter(|&k| y_true[k] == i && y_pred[k] == j).count() as u64;
                ensure(cm[i][j] == count, || format!("trial {trial}: cm[{i}][{j}]"))?;
            }
            let tp = (0..n).filter(|&k| y_true[k] == j && y_pred[k] == j).count() as f64;
            let pp = y_pred.iter().filter(|&&p| p == j).count() as f64;
            let ap = y_true.iter().filter(|&&t| t == j).count() as f64;
            let p = if pp > 0.0 { tp / pp } else { 0.0 };
            let rc = if ap > 0.0 { tp / ap } else { 0.0 };
            let f = if p + rc > 0.0 { 2.0 * p * rc / (p + rc) } else { 0.0 };
            let s = &r.per_class[j];
            ensure((s.precision - p).abs() < 1e-12 && (s.recall - rc).abs() < 1e-12 && (s.f1 - f).abs() < 1e-12, || {
                format!("trial {trial}: class {j} scores differ")
            })?;
            f1s.push(f);
        }
        let macro_f1 = f1s.iter().sum::<f64>() / c as f64;
        ensure((r.macro_f1 - macro_f1).abs() < 1e-12, || format!("trial {trial}: macro F1"))?;
    }
    let s = mean_std(&[0.9867, 0.98, 0.9867, 0.98, 0.99]);
    ensure(format!("{:.4}", s.mean) == "0.9847", || format!("mean {}", s.mean))?;
    ensure(format!("{:.4}", s.std) == "0.0045", || format!("std {}", s.std))?;
    within(start.elapsed(), Duration::from_secs(5), "P7")?;
    Ok(Outcome::Pass(format!("100 labelings match; fold mean {:.4} std {:.4}", s.mean, s.std)))
}

// ---------------------------------------------------------------- P8

fn tree_digest(root: &Path) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
                let rel = path.strip_prefix(root).expect("under root").display().to_string();
                let hex: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
                out.push((rel, hex));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn p8() -> Result<Outcome, String> {
    let start = Instant::now();
    let dir = scratch();
    let synth_cfg = SynthConfig {
        boxes_per_class: 3,
        dates: 7,
        image_side: 24,
        ..SynthConfig::default()
    };
    let mut runs = Vec::new();
    for run in 0..2 {
        let root = dir.path().join(format!("run{run}"));
        let data = root.join("data");
        let records = synth(&synth_cfg, &data)?;
        // Paths differ between the two roots; compare them relative to it.
        let relative: Vec<ImageRecord> = records
            .iter()
            .map(|r| ImageRecord {
                path: r.path.strip_prefix(&data).expect("under data").to_path_buf(),
                ..r.clone()
            })
            .collect();
        let manifest = root.join("manifest.csv");
        write_manifest(&relative, &manifest).map_err(|e| e.to_string())?;
        let mut cfg = tiny(TrainConfig::spatiotemporal(), 24);
        cfg.sequence_length = 3;
        cfg.epochs = 1;
        cfg.folds = 3;
        let prepared = prepare(&relative, &cfg).map_err(|e| e.to_string())?;
        let set = build_sequences(&relative, 3, cfg.grouping, 1).map_err(|e| e.to_string())?;
        let report = run_cv(&records, &cfg, &root.join("out"), "p8").map_err(|e| e.to_string())?;
        runs.push((
            tree_digest(&data)?,
            std::fs::read(&manifest).map_err(|e| e.to_string())?,
            sequences_to_json(&set.samples, &relative).map_err(|e| e.to_string())?,
            folds_to_json(&prepared.folds).map_err(|e| e.to_string())?,
            report.folds.iter().map(|f| f.eval_ids.clone()).collect::<Vec<_>>(),
        ));
    }
    let (a, b) = (&runs[0], &runs[1]);
    ensure(a.0 == b.0, || "synthetic datasets differ".into())?;
    ensure(a.1 == b.1, || "manifests differ".into())?;
    ensure(a.2 == b.2, || "sequences differ".into())?;
    ensure(a.3 == b.3, || "fold splits differ".into())?;
    ensure(a.4 == b.4, || "evaluation order differs".into())?;
    within(start.elapsed(), Duration::from_secs(60), "P8")?;
    Ok(Outcome::Pass(format!(
        "{} files byte-identical; manifests, sequences, folds and evaluation order identical",
        a.0.len()
    )))
}

// ---------------------------------------------------------------- P9

fn p9() -> Result<Outcome, String> {
    let Some(data) = std::env::var_os("STRESSSEQ_DATA_DIR").map(PathBuf::from) else {
        return Ok(Outcome::Skip("STRESSSEQ_DATA_DIR not set".into()));
    };
    let Some(weights) = std::env::var_os("STRESSSEQ_WEIGHTS").map(PathBuf::from).filter(|p| p.is_file()) else {
        return Ok(Outcome::Skip("STRESSSEQ_WEIGHTS does not name a weights file".into()));
    };
    if !data.is_dir() {
        return Ok(Outcome::Skip(format!("{} is not a directory", data.display())));
    }
    let records = scan_dataset(&data, None).map_err(|e| e.to_string())?.records;
    let dir = scratch();
    let backbone = BackboneConfig {
        name: BackboneName::MobileNetV2Pretrained,
        weights_path: Some(weights),
    };
    let mut results = Vec::new();
    for (pipeline, target, tol) in [(Pipeline::SpatioTemporal, 98.47, 2.0), (Pipeline::Spatial, 80.49, 3.0)] {
        let cfg = TrainConfig {
            backbone: backbone.clone(),
            ..TrainConfig::for_pipeline(pipeline)
        };
        let report = run_cv(&records, &cfg, &dir.path().join(pipeline.to_string()), "p9").map_err(|e| e.to_string())?;
        let acc = 100.0 * report.aggregate.test_accuracy.mean;
        ensure((acc - target).abs() <= tol, || format!("{pipeline}: mean test accuracy {acc:.2}, expected {target} ± {tol}"))?;
        results.push(format!("{pipeline} {acc:.2}"));
    }
    Ok(Outcome::Pass(results.join(", ")))
}

fn main() {
    let criteria: [(&str, &str, Check); 9] = [
        ("P1", "LSTM matches scalar oracle and finite differences", p1),
        ("P2", "gate ranges and hidden-state bound", p2),
        ("P3", "sequencing arithmetic and stratified folds", p3),
        ("P4", "time-distributed extraction equals per-frame loop", p4),
        ("P5", "temporal vs spatial separation on synthetic data", p5),
        ("P6", "checkpointing, frozen layers, staircase schedule", p6),
        ("P7", "metrics against brute force and fold aggregate", p7),
        ("P8", "determinism of data, splits and evaluation order", p8),
        ("P9", "full-data accuracy (optional)", p9),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, title, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(Outcome::Pass(detail)) => println!("{id} PASS [{secs:.1}s] {title}: {detail}"),
            Ok(Outcome::Skip(why)) => println!("{id} SKIP [{secs:.1}s] {title}: {why}"),
            Err(why) => {
                failed += 1;
                println!("{id} FAIL [{secs:.1}s] {title}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
