use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use serde::Serialize;

use m2unet::arch::{audit, build_m2unet, m2unet_spec, ModelGraph, DEFAULT_DECODER_T};
use m2unet::bench::{bench_forward, write_bench_csv};
use m2unet::data::{make_validation, synthetic_sample, DatasetDir, Sample};
use m2unet::io::{
    load_graph, read_image, read_mask, save_weights, write_image, write_overlay, write_prob_map,
};
use m2unet::metrics::{
    aggregate, confusion, default_thresholds, dice_score, evaluate_image, pr_curve,
    write_metrics_csv, write_pr_csv, AggregateMetrics, CropMode, EvalOptions,
};
use m2unet::train::{init_scratch, train as run_training, write_history_csv, TrainConfig};
use m2unet::Tensor;

use crate::{BenchArgs, EvalArgs, InspectArgs, SegmentArgs, TrainArgs};

/// An error that carries its own exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for CliError {}

fn fail(code: u8, msg: impl Into<String>) -> anyhow::Error {
    CliError {
        code,
        msg: msg.into(),
    }
    .into()
}

fn parse_resolution(s: &str) -> Result<(usize, usize)> {
    let parsed = s
        .split_once(['x', 'X'])
        .and_then(|(h, w)| Some((h.trim().parse().ok()?, w.trim().parse().ok()?)));
    match parsed {
        Some((h, w)) if h > 0 && w > 0 && h % 16 == 0 && w % 16 == 0 => Ok((h, w)),
        Some(_) => Err(fail(
            1,
            format!("resolution {s} must be positive multiples of 16"),
        )),
        None => Err(fail(1, format!("resolution {s:?} is not of the form HxW"))),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn to_rgb(t: Tensor<f32>) -> Tensor<f32> {
    if t.channels() == 3 {
        return t;
    }
    let [n, _, h, w] = t.shape();
    Tensor::from_fn([n, 3, h, w], |i, _, y, x| t.at(i, 0, y, x))
}

fn next_multiple(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

/// Probability map for an RGB image, optionally zero-padded to the next
/// multiple of 16 and cropped back.
fn predict(
    g: &ModelGraph<f32>,
    image: &Tensor<f32>,
    pad: bool,
) -> Result<(Tensor<f32>, Option<(usize, usize)>)> {
    let (h, w) = (image.height(), image.width());
    let m = g.plan().required_multiple;
    if h % m == 0 && w % m == 0 {
        return Ok((g.forward(image)?, None));
    }
    if !pad {
        return Err(fail(
            1,
            format!("input is {h}x{w}; sides must be multiples of {m} (use --pad)"),
        ));
    }
    let (ph, pw) = (next_multiple(h, m), next_multiple(w, m));
    let prob = g.forward(&image.pad_bottom_right(ph, pw)?)?;
    Ok((prob.window(0, 0, h, w)?, Some((ph, pw))))
}

fn binarize(prob: &Tensor<f32>, threshold: f64) -> Tensor<f32> {
    prob.map(|p| if p as f64 >= threshold { 1.0 } else { 0.0 })
}

/// Dice-optimal threshold over the pooled pixels of every listed image in
/// a dataset directory.
fn optimal_threshold(g: &ModelGraph<f32>, dir: &Path) -> Result<f64> {
    let ds = DatasetDir::open(dir, None)?;
    let mut ids: Vec<String> = ds.spec.train_ids.clone();
    ids.extend(
        ds.spec
            .test_ids
            .iter()
            .filter(|i| !ds.spec.train_ids.contains(i))
            .cloned(),
    );
    if ids.is_empty() {
        return Err(fail(1, format!("{} lists no images", dir.display())));
    }
    let (mut probs, mut gts) = (Vec::new(), Vec::new());
    for id in &ids {
        let s = ds.load(id)?;
        let (p, _) = predict(g, &s.image, true)?;
        probs.extend_from_slice(p.data());
        gts.extend_from_slice(s.mask.data());
    }
    let best = pr_curve(&probs, &gts, &default_thresholds())?.best;
    info!(
        "optimal threshold {:.4} (pooled dice {:.4}) over {} images",
        best.threshold,
        best.dice,
        ids.len()
    );
    Ok(best.threshold)
}

#[derive(Serialize)]
struct SegmentReport {
    input: PathBuf,
    weights: PathBuf,
    height: usize,
    width: usize,
    padded_to: Option<(usize, usize)>,
    threshold: f64,
    dice: Option<f64>,
    prob_map: PathBuf,
    binary_map: PathBuf,
    overlay: PathBuf,
}

pub fn segment(a: SegmentArgs) -> Result<()> {
    let (g, _) = load_graph(&a.weights)?;
    let image = to_rgb(read_image(&a.input)?);
    let (h, w) = (image.height(), image.width());
    let threshold = match &a.optimal_from {
        Some(dir) => optimal_threshold(&g, dir)?,
        None => a.threshold,
    };
    if !(0.0..=1.0).contains(&threshold) {
        return Err(fail(1, format!("threshold {threshold} outside [0, 1]")));
    }
    let (prob, padded_to) = predict(&g, &image, a.pad)?;
    std::fs::create_dir_all(&a.output)?;
    let stem = a
        .input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string();
    let prob_path = a.output.join(format!("{stem}_prob.png"));
    let bin_path = a.output.join(format!("{stem}_binary.png"));
    let overlay_path = a.output.join(format!("{stem}_overlay.png"));
    let binary = binarize(&prob, threshold);
    write_prob_map(&prob_path, &prob)?;
    write_prob_map(&bin_path, &binary)?;
    let dice = match &a.gt {
        Some(gt_path) => {
            let gt = read_mask(gt_path)?;
            if gt.shape() != binary.shape() {
                return Err(fail(
                    2,
                    format!(
                        "ground truth is {:?}, prediction {:?}",
                        gt.shape(),
                        binary.shape()
                    ),
                ));
            }
            write_overlay(&overlay_path, &binary, &gt)?;
            let d = dice_score(&confusion(prob.data(), gt.data(), threshold, 0)?);
            info!("dice {d:.6} at threshold {threshold}");
            Some(d)
        }
        None => {
            // predicted vessels in white over the input
            let over = Tensor::from_fn([1, 3, h, w], |_, c, y, x| {
                if binary.at(0, 0, y, x) == 1.0 {
                    1.0
                } else {
                    image.at(0, c, y, x)
                }
            });
            write_image(&overlay_path, &over)?;
            None
        }
    };
    let report = SegmentReport {
        input: a.input,
        weights: a.weights,
        height: h,
        width: w,
        padded_to,
        threshold,
        dice,
        prob_map: prob_path,
        binary_map: bin_path,
        overlay: overlay_path,
    };
    write_json(&a.output.join("segment.json"), &report)?;
    info!("wrote {}", a.output.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainReport {
    dataset: String,
    train_ids: Vec<String>,
    val_ids: Vec<String>,
    epochs_run: usize,
    best_epoch: usize,
    best_val_dice: Option<f64>,
    diverged: bool,
    checkpoint: PathBuf,
    history: PathBuf,
    config: TrainConfig,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let ds = DatasetDir::resolve(&a.dataset, None)?;
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    let (tr_ids, val_ids) = make_validation(&ds.spec.train_ids, cfg.validation_k, cfg.seed)?;
    if tr_ids.is_empty() {
        return Err(fail(
            2,
            format!("{} has no training images", ds.dir.display()),
        ));
    }
    info!(
        "{}: {} training, {} validation images; lr {}, weight decay {}, w {}",
        ds.spec.kind.name(),
        tr_ids.len(),
        val_ids.len(),
        cfg.lr,
        cfg.weight_decay,
        cfg.jaccard_weight
    );
    let tr: Vec<Sample> = ds.load_all(&tr_ids)?;
    let val: Vec<Sample> = ds.load_all(&val_ids)?;
    let (h, w) = tr[0].hw();
    let mut g = ModelGraph::from_spec(m2unet_spec(cfg.t_decoder), [3, h, w])?;
    cfg.initialise(&mut g)?;
    let outcome = run_training(g, &tr, &val, ds.spec.batch_size, &cfg, |_| {})?;
    std::fs::create_dir_all(&a.out)?;
    let ckpt = a.out.join("best.m2uw");
    let hist = a.out.join("history.csv");
    save_weights(&outcome.best, &ckpt, Some(serde_json::to_value(&cfg)?))?;
    write_history_csv(&hist, &outcome.history)?;
    let report = TrainReport {
        dataset: ds.spec.kind.name().to_string(),
        train_ids: tr_ids,
        val_ids,
        epochs_run: outcome.history.len(),
        best_epoch: outcome.best_epoch,
        best_val_dice: outcome.best_val_dice,
        diverged: outcome.diverged,
        checkpoint: ckpt,
        history: hist,
        config: cfg,
    };
    write_json(&a.out.join("train.json"), &report)?;
    info!(
        "best epoch {} (val dice {}), checkpoint {}",
        report.best_epoch,
        report
            .best_val_dice
            .map(|d| format!("{d:.4}"))
            .unwrap_or_else(|| "n/a".into()),
        report.checkpoint.display()
    );
    if outcome.diverged {
        return Err(fail(
            3,
            "training diverged; the last good checkpoint was saved",
        ));
    }
    Ok(())
}

fn find_prediction(dir: &Path, id: &str) -> Option<PathBuf> {
    let mut hits: Vec<PathBuf> = std::fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("");
            stem == id || stem.starts_with(&format!("{id}_"))
        })
        .collect();
    hits.sort();
    hits.into_iter().next()
}

#[derive(Serialize)]
struct EvalReport {
    dataset: String,
    split: String,
    threshold: f64,
    crop_mode: CropMode,
    n_cropped_per_image: u64,
    skipped: Vec<String>,
    aggregate: AggregateMetrics,
    pooled_optimal_threshold: f64,
    pooled_optimal_dice: f64,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let ds = DatasetDir::resolve(&a.dataset, None)?;
    let ids = if a.split == "train" {
        &ds.spec.train_ids
    } else {
        &ds.spec.test_ids
    };
    if ids.is_empty() {
        return Err(fail(
            2,
            format!("{} split of {} is empty", a.split, ds.dir.display()),
        ));
    }
    let model = match &a.weights {
        Some(p) => Some(load_graph(p)?.0),
        None => None,
    };
    let opts = EvalOptions {
        threshold: a.threshold,
        crop_mode: if a.crop_mode == "exclude" {
            CropMode::Exclude
        } else {
            CropMode::ScoreZero
        },
        ..EvalOptions::default()
    };
    let n_cropped = ds.spec.n_cropped();
    let (mut rows, mut counts, mut skipped) = (Vec::new(), Vec::new(), Vec::new());
    let (mut all_p, mut all_g) = (Vec::new(), Vec::new());
    for id in ids {
        let gt = match ds.load_mask(id) {
            Ok(m) => m,
            Err(e) => {
                warn!("skipping {id}: {e}");
                skipped.push(id.clone());
                continue;
            }
        };
        let prob = match (&model, &a.predictions) {
            (Some(g), _) => predict(g, &ds.load_image(id)?, true)?.0,
            (None, Some(dir)) => {
                let path = find_prediction(dir, id).ok_or_else(|| {
                    fail(2, format!("no prediction for {id} in {}", dir.display()))
                })?;
                let p = read_image(&path)?;
                let p =
                    Tensor::from_fn([1, 1, p.height(), p.width()], |_, _, y, x| p.at(0, 0, y, x));
                let (h, w) = (p.height(), p.width());
                let (gh, gw) = (gt.height(), gt.width());
                if (h, w) != (gh, gw) && ds.spec.native_hw == Some((h, w)) {
                    let (y0, x0) = ds.spec.crop_origin;
                    p.window(y0, x0, gh, gw)?
                } else {
                    p
                }
            }
            (None, None) => unreachable!("clap requires --weights or --predictions"),
        };
        if prob.shape() != gt.shape() {
            return Err(fail(
                2,
                format!(
                    "{id}: prediction {:?} vs ground truth {:?}",
                    prob.shape(),
                    gt.shape()
                ),
            ));
        }
        let (row, c, _) = evaluate_image(id, prob.data(), gt.data(), n_cropped, &opts)?;
        info!(
            "{id}: dice {:.4} acc {:.4} auc {:.4}",
            row.dice, row.accuracy, row.auc
        );
        rows.push(row);
        counts.push(c);
        all_p.extend_from_slice(prob.data());
        all_g.extend_from_slice(gt.data());
    }
    if rows.is_empty() {
        return Err(fail(2, "every image was skipped"));
    }
    std::fs::create_dir_all(&a.out)?;
    let pooled = pr_curve(&all_p, &all_g, &opts.thresholds)?;
    write_metrics_csv(a.out.join("metrics.csv"), &rows)?;
    write_pr_csv(a.out.join("pr.csv"), &pooled.points)?;
    let report = EvalReport {
        dataset: ds.spec.kind.name().to_string(),
        split: a.split,
        threshold: a.threshold,
        crop_mode: opts.crop_mode,
        n_cropped_per_image: n_cropped,
        skipped,
        aggregate: aggregate(&rows, &counts)?,
        pooled_optimal_threshold: pooled.best.threshold,
        pooled_optimal_dice: pooled.best.dice,
    };
    write_json(&a.out.join("eval.json"), &report)?;
    let ag = &report.aggregate;
    info!(
        "{} images: mean dice {:.4}, accuracy {:.4}, auc {:.4}; pooled optimal threshold {:.4} (dice {:.4})",
        ag.images, ag.mean_dice, ag.mean_accuracy, ag.mean_auc, report.pooled_optimal_threshold, report.pooled_optimal_dice
    );
    Ok(())
}

pub fn inspect(a: InspectArgs) -> Result<()> {
    let (h, w) = parse_resolution(&a.resolution)?;
    let report = audit(&m2unet_spec(a.t_decoder), h, w)?;
    println!("{report}");
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    if a.t_decoder == DEFAULT_DECODER_T {
        let bad = report.canonical_mismatches();
        if !bad.is_empty() {
            return Err(fail(
                3,
                format!(
                    "audit deviates from the canonical counts: {}",
                    bad.join("; ")
                ),
            ));
        }
    }
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let (h, w) = parse_resolution(&a.resolution)?;
    if a.repeats == 0 {
        return Err(fail(1, "--repeats must be at least 1"));
    }
    let g = match &a.weights {
        Some(p) => load_graph(p)?.0,
        None => {
            let mut g = build_m2unet([3, h, w], DEFAULT_DECODER_T)?;
            init_scratch(&mut g, 0);
            g
        }
    };
    let image = synthetic_sample("bench", h, w, 0).image;
    let (stats, _) = bench_forward(&g, &image, a.warmup, a.repeats)?;
    println!(
        "{}x{} threads {}: median {:.4} s, p95 {:.4} s, min {:.4} s, max {:.4} s, {:.3} GMAdds/s",
        h,
        w,
        stats.threads,
        stats.median_s,
        stats.p95_s,
        stats.min_s,
        stats.max_s,
        stats.madds_per_s / 1e9
    );
    if let Some(out) = &a.out {
        write_bench_csv(out, &stats)?;
    }
    Ok(())
}
