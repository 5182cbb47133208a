//! Evaluation metrics on probability maps: confusion counts, Dice,
//! precision/recall curves, crop-adjusted accuracy and ROC AuC.
//!
//! Pixels removed by a preprocessing crop are genuine background; they are
//! counted as true negatives (`n_cropped`) so figures stay comparable with
//! full-frame evaluations.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-truth pixels at or above this value are vessel.
const GT_POSITIVE: f32 = 0.5;

const CHUNK: usize = 1 << 14;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub n_cropped: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self {
            tp,
            fp,
            tn,
            fn_,
            n_cropped: 0,
        }
    }

    pub fn with_cropped(mut self, n_cropped: u64) -> Self {
        self.n_cropped = n_cropped;
        self
    }

    pub fn evaluated(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `tp / (tp + fp)`; 1 when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    /// `tp / (tp + fn)`; 1 when there are no positives.
    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
            n_cropped: self.n_cropped + o.n_cropped,
        }
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

fn check_pair(prob: &[f32], gt: &[f32]) -> Result<()> {
    if prob.len() != gt.len() {
        return Err(Error::invalid(format!(
            "prediction has {} pixels, ground truth {}",
            prob.len(),
            gt.len()
        )));
    }
    if prob.is_empty() {
        return Err(Error::invalid("no pixels to evaluate"));
    }
    if let Some(p) = prob.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// Confusion counts of `prob ≥ threshold` against `gt`.
pub fn confusion(
    prob: &[f32],
    gt: &[f32],
    threshold: f64,
    n_cropped: u64,
) -> Result<ConfusionCounts> {
    check_pair(prob, gt)?;
    let c: ConfusionCounts = prob
        .par_chunks(CHUNK)
        .zip(gt.par_chunks(CHUNK))
        .map(|(p, g)| {
            let mut c = ConfusionCounts::default();
            for (p, g) in p.iter().zip(g) {
                match (*p as f64 >= threshold, *g >= GT_POSITIVE) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => c.tn += 1,
                }
            }
            c
        })
        .reduce(ConfusionCounts::default, |a, b| a + b);
    Ok(c.with_cropped(n_cropped))
}

/// `2·tp / (2·tp + fn + fp)`; 1 when there is nothing to find and nothing
/// was predicted.
pub fn dice_score(c: &ConfusionCounts) -> f64 {
    let den = 2 * c.tp + c.fn_ + c.fp;
    if den == 0 {
        1.0
    } else {
        (2 * c.tp) as f64 / den as f64
    }
}

/// `(tp + tn + n_cropped) / (evaluated + n_cropped)`.
pub fn accuracy_adjusted(c: &ConfusionCounts) -> f64 {
    let total = c.evaluated() + c.n_cropped;
    if total == 0 {
        return 1.0;
    }
    (c.tp + c.tn + c.n_cropped) as f64 / total as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub dice: f64,
}

impl PrPoint {
    fn from_counts(threshold: f64, c: &ConfusionCounts) -> Self {
        Self {
            threshold,
            precision: c.precision(),
            recall: c.recall(),
            dice: dice_score(c),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    /// Highest-Dice point; ties go to the lowest threshold.
    pub best: PrPoint,
}

/// `count` uniform thresholds strictly inside (0, 1): `i / (count + 1)`.
pub fn uniform_thresholds(count: usize) -> Vec<f64> {
    (1..=count).map(|i| i as f64 / (count + 1) as f64).collect()
}

/// The default 255-point grid `i / 256`.
pub fn default_thresholds() -> Vec<f64> {
    uniform_thresholds(255)
}

/// Precision, recall and Dice at every threshold, from one pass over the
/// pixels.
pub fn pr_curve(prob: &[f32], gt: &[f32], thresholds: &[f64]) -> Result<PrCurve> {
    if thresholds.is_empty() {
        return Err(Error::usage("empty threshold list"));
    }
    if thresholds.iter().any(|t| !(0.0..=1.0).contains(t))
        || thresholds.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::usage(
            "thresholds must be strictly increasing in [0, 1]",
        ));
    }
    check_pair(prob, gt)?;
    let k = thresholds.len();
    // hist[j] counts pixels whose score clears exactly the first j thresholds
    let (pos_hist, neg_hist) = prob
        .par_chunks(CHUNK)
        .zip(gt.par_chunks(CHUNK))
        .map(|(p, g)| {
            let mut pos = vec![0u64; k + 1];
            let mut neg = vec![0u64; k + 1];
            for (p, g) in p.iter().zip(g) {
                let j = thresholds.partition_point(|t| *t <= *p as f64);
                if *g >= GT_POSITIVE {
                    pos[j] += 1;
                } else {
                    neg[j] += 1;
                }
            }
            (pos, neg)
        })
        .reduce(
            || (vec![0u64; k + 1], vec![0u64; k + 1]),
            |(mut a, mut b), (c, d)| {
                a.iter_mut().zip(c).for_each(|(x, y)| *x += y);
                b.iter_mut().zip(d).for_each(|(x, y)| *x += y);
                (a, b)
            },
        );
    let total_pos: u64 = pos_hist.iter().sum();
    let total_neg: u64 = neg_hist.iter().sum();
    let mut points = Vec::with_capacity(k);
    // positives at threshold i are pixels with j > i
    let (mut tp, mut fp) = (total_pos - pos_hist[0], total_neg - neg_hist[0]);
    for (i, &t) in thresholds.iter().enumerate() {
        let c = ConfusionCounts::new(tp, fp, total_neg - fp, total_pos - tp);
        points.push(PrPoint::from_counts(t, &c));
        tp -= pos_hist[i + 1];
        fp -= neg_hist[i + 1];
    }
    let best = points
        .iter()
        .fold(None::<PrPoint>, |best, p| match best {
            Some(b) if b.dice >= p.dice => Some(b),
            _ => Some(*p),
        })
        .expect("non-empty");
    Ok(PrCurve { points, best })
}

/// How cropped pixels enter the ROC computation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CropMode {
    /// Cropped pixels are extra negatives with score 0.
    #[default]
    ScoreZero,
    /// Cropped pixels are left out.
    Exclude,
}

/// Area under the ROC curve by the trapezoid rule over all distinct
/// scores.
pub fn roc_auc(prob: &[f32], gt: &[f32], n_cropped: u64, mode: CropMode) -> Result<f64> {
    check_pair(prob, gt)?;
    let mut pairs: Vec<(f32, bool)> = prob
        .iter()
        .zip(gt)
        .map(|(p, g)| (*p, *g >= GT_POSITIVE))
        .collect();
    pairs.par_sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
    // (positives, negatives) per distinct score, highest score first
    let mut groups: Vec<(f32, u64, u64)> = Vec::new();
    for (s, pos) in pairs {
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                if pos {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s, pos as u64, (!pos) as u64)),
        }
    }
    if mode == CropMode::ScoreZero && n_cropped > 0 {
        match groups.last_mut() {
            Some(g) if g.0 == 0.0 => g.2 += n_cropped,
            _ => groups.push((0.0, 0, n_cropped)),
        }
    }
    let p_total: u64 = groups.iter().map(|g| g.1).sum();
    let n_total: u64 = groups.iter().map(|g| g.2).sum();
    if p_total == 0 || n_total == 0 {
        return Err(Error::usage(
            "ROC AuC needs at least one vessel and one background pixel",
        ));
    }
    let mut tp = 0u64;
    let mut twice_area = 0u128;
    for (_, p, n) in groups {
        // trapezoid in count units: n · (2·tp + p)
        twice_area += n as u128 * (2 * tp + p) as u128;
        tp += p;
    }
    Ok(twice_area as f64 / (2.0 * p_total as f64 * n_total as f64))
}

/// Per-image evaluation row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub dice: f64,
    pub accuracy: f64,
    pub auc: f64,
    pub optimal_threshold: f64,
    pub optimal_dice: f64,
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub threshold: f64,
    pub thresholds: Vec<f64>,
    pub crop_mode: CropMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            thresholds: default_thresholds(),
            crop_mode: CropMode::ScoreZero,
        }
    }
}

/// Evaluates one probability map. Also returns its confusion counts at the
/// fixed threshold and its PR curve.
pub fn evaluate_image(
    id: &str,
    prob: &[f32],
    gt: &[f32],
    n_cropped: u64,
    opts: &EvalOptions,
) -> Result<(ImageMetrics, ConfusionCounts, PrCurve)> {
    let c = confusion(prob, gt, opts.threshold, n_cropped)?;
    let curve = pr_curve(prob, gt, &opts.thresholds)?;
    let auc = roc_auc(prob, gt, n_cropped, opts.crop_mode)?;
    Ok((
        ImageMetrics {
            id: id.to_string(),
            dice: dice_score(&c),
            accuracy: accuracy_adjusted(&c),
            auc,
            optimal_threshold: curve.best.threshold,
            optimal_dice: curve.best.dice,
        },
        c,
        curve,
    ))
}

/// Dataset-level summary: per-image means plus Dice over pooled counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub images: usize,
    pub mean_dice: f64,
    pub mean_accuracy: f64,
    pub mean_auc: f64,
    pub mean_optimal_dice: f64,
    pub pooled_dice: f64,
    pub pooled: ConfusionCounts,
}

pub fn aggregate(rows: &[ImageMetrics], counts: &[ConfusionCounts]) -> Result<AggregateMetrics> {
    if rows.is_empty() {
        return Err(Error::invalid("no images were evaluated"));
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&ImageMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let pooled: ConfusionCounts = counts.iter().copied().sum();
    Ok(AggregateMetrics {
        images: rows.len(),
        mean_dice: mean(|r| r.dice),
        mean_accuracy: mean(|r| r.accuracy),
        mean_auc: mean(|r| r.auc),
        mean_optimal_dice: mean(|r| r.optimal_dice),
        pooled_dice: dice_score(&pooled),
        pooled,
    })
}

fn write_rows<S: Serialize>(path: &Path, rows: impl IntoIterator<Item = S>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: `id, dice, accuracy, auc, optimal_threshold, optimal_dice`.
pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[ImageMetrics]) -> Result<()> {
    write_rows(path.as_ref(), rows)
}

/// Columns: `threshold, precision, recall, dice`.
pub fn write_pr_csv(path: impl AsRef<Path>, points: &[PrPoint]) -> Result<()> {
    write_rows(path.as_ref(), points)
}

pub fn read_pr_csv(path: impl AsRef<Path>) -> Result<Vec<PrPoint>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::load(path, e.to_string()))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<PrPoint>, _>>()
        .map_err(|e| Error::load(path, e.to_string()))
}
