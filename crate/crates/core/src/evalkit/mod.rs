//! Proposal-quality metrics: recall against the number of proposals, AUC,
//! proposals needed for a target recall, recall against the IoU threshold and
//! average recall, plus per-GT hit records.
//!
//! A GT box is hit at rank `r` when proposal `r` (0-based) is the first of
//! its image with IoU at or above the threshold. There is no one-to-one
//! matching: one proposal may hit several GT boxes.

mod plot;
mod report;

pub use plot::{svg_line_plot, Series};
pub use report::{dump_reports, read_curve_csv, write_curve_csv, DensityImage};

use serde::{Deserialize, Serialize};

use crate::dataio::ImageRecord;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::par;

/// Formulas stamped into every report.
pub const AUC_LOG_FORMULA: &str =
    "auc_log = sum_{k=1}^{K-1} recall(k) * log10((k+1)/k) / log10(K): exact area under the right-continuous step curve on a log10(k) axis over [1, K], normalized to [0, 1]";
pub const AUC_LINEAR_FORMULA: &str =
    "auc_linear = sum_{k=1}^{K-1} recall(k) / (K-1): exact area under the step curve on a linear k axis over [1, K], normalized to [0, 1]";

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn recall_ious() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Ground-truth selection for an evaluation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GtFilter {
    /// Keep only these categories.
    pub categories: Option<Vec<u32>>,
    /// Keep only boxes with area below this.
    pub max_area: Option<f64>,
}

impl GtFilter {
    pub fn keeps(&self, category: u32, b: &BBox) -> bool {
        self.categories.as_ref().is_none_or(|c| c.contains(&category))
            && self.max_area.is_none_or(|a| b.area() < a)
    }
}

/// One image's ranked proposals and (filtered) ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalImage {
    pub image_id: String,
    pub proposals: Vec<BBox>,
    pub gt: Vec<BBox>,
    pub categories: Vec<u32>,
}

/// Pair GT records with proposal records by image id and apply `filter`.
/// Every GT image must have a proposal record.
pub fn build_eval_set(
    gt: &[ImageRecord],
    proposals: &[ImageRecord],
    filter: &GtFilter,
) -> Result<Vec<EvalImage>> {
    let by_id: std::collections::HashMap<&str, &ImageRecord> =
        proposals.iter().map(|r| (r.image_id.as_str(), r)).collect();
    gt.iter()
        .map(|g| {
            let p = by_id.get(g.image_id.as_str()).ok_or_else(|| {
                Error::Data(format!("image {:?} has ground truth but no proposals", g.image_id))
            })?;
            let (boxes, cats): (Vec<BBox>, Vec<u32>) = g
                .boxes
                .iter()
                .enumerate()
                .map(|(i, b)| (*b, g.category(i)))
                .filter(|(b, c)| filter.keeps(*c, b))
                .unzip();
            Ok(EvalImage {
                image_id: g.image_id.clone(),
                proposals: p.boxes.clone(),
                gt: boxes,
                categories: cats,
            })
        })
        .collect()
}

/// First proposal rank hitting each GT box at `threshold`.
pub fn hit_ranks(proposals: &[BBox], gt: &[BBox], threshold: f64) -> Vec<Option<usize>> {
    gt.iter()
        .map(|g| proposals.iter().position(|p| iou(p, g) >= threshold))
        .collect()
}

fn all_hit_ranks(images: &[EvalImage], threshold: f64) -> Vec<Vec<Option<usize>>> {
    par::map_indexed(images.len(), |i| {
        hit_ranks(&images[i].proposals, &images[i].gt, threshold)
    })
}

fn total_gt(images: &[EvalImage]) -> usize {
    images.iter().map(|i| i.gt.len()).sum()
}

fn ratio(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Fraction of GT boxes hit by one of the top `k` proposals of their image.
pub fn recall_at_k(images: &[EvalImage], k: usize, threshold: f64) -> f64 {
    let hits = all_hit_ranks(images, threshold)
        .iter()
        .flatten()
        .filter(|r| r.is_some_and(|r| r < k))
        .count();
    ratio(hits, total_gt(images))
}

/// Recall for every `k` in `1..=k_max` (element `k - 1`).
pub fn recall_curve(images: &[EvalImage], threshold: f64, k_max: usize) -> Vec<f64> {
    let mut first_hit = vec![0usize; k_max];
    for r in all_hit_ranks(images, threshold).iter().flatten().flatten() {
        if *r < k_max {
            first_hit[*r] += 1;
        }
    }
    let total = total_gt(images);
    let mut acc = 0;
    first_hit
        .iter()
        .map(|&h| {
            acc += h;
            ratio(acc, total)
        })
        .collect()
}

/// Constant-recall runs `(recall, k_start, k_end)`, `k_end` exclusive.
fn runs(curve: &[f64]) -> Vec<(f64, usize, usize)> {
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    for (i, &r) in curve.iter().enumerate() {
        let k = i + 1;
        match out.last_mut() {
            Some(last) if last.0 == r => last.2 = k + 1,
            _ => out.push((r, k, k + 1)),
        }
    }
    out
}

/// Area under the step curve on a log10 axis, normalized by log10(K_max).
/// A one-point curve returns its only value.
pub fn auc_log(curve: &[f64]) -> f64 {
    let k_max = curve.len();
    match k_max {
        0 => 0.0,
        1 => curve[0],
        _ => {
            let area: f64 = runs(curve)
                .into_iter()
                .map(|(r, a, b)| {
                    let b = b.min(k_max);
                    if b > a {
                        r * ((b as f64).log10() - (a as f64).log10())
                    } else {
                        0.0
                    }
                })
                .sum();
            (area / (k_max as f64).log10()).clamp(0.0, 1.0)
        }
    }
}

/// Area under the step curve on a linear axis, normalized by K_max - 1.
pub fn auc_linear(curve: &[f64]) -> f64 {
    let k_max = curve.len();
    match k_max {
        0 => 0.0,
        1 => curve[0],
        _ => {
            let area: f64 = runs(curve)
                .into_iter()
                .map(|(r, a, b)| r * (b.min(k_max) - a) as f64)
                .sum();
            (area / (k_max - 1) as f64).clamp(0.0, 1.0)
        }
    }
}

/// Recall at `k` for each threshold, and their mean (average recall).
pub fn recall_vs_iou(images: &[EvalImage], k: usize, thresholds: &[f64]) -> (Vec<f64>, f64) {
    let r: Vec<f64> = thresholds.iter().map(|&t| recall_at_k(images, k, t)).collect();
    let ar = if r.is_empty() {
        0.0
    } else {
        r.iter().sum::<f64>() / r.len() as f64
    };
    (r, ar)
}

/// Smallest `k` with `recall(k) >= target`, or `None` when never reached.
pub fn proposals_for_recall(curve: &[f64], target: f64) -> Option<usize> {
    curve.iter().position(|&r| r >= target).map(|i| i + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Thresholds for full recall-vs-k curves; the first is the primary one.
    pub ious: Vec<f64>,
    pub k_max: usize,
    /// Proposal budget for the recall-vs-IoU curve.
    pub k_fixed: usize,
    pub filter: GtFilter,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ious: vec![0.7, 0.5],
            k_max: 1000,
            k_fixed: 1000,
            filter: GtFilter::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub iou: f64,
    /// Recall at k = 1..=k_max.
    pub recall: Vec<f64>,
    pub auc_log: f64,
    pub auc_linear: f64,
    /// Proposals needed for 25%, 50% and 75% recall.
    pub needed: [Option<usize>; 3],
}

impl CurveReport {
    pub fn recall_at(&self, k: usize) -> f64 {
        match k {
            0 => 0.0,
            _ => self.recall[(k - 1).min(self.recall.len() - 1)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HitStatus {
    Hit,
    Miss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitRecord {
    pub image_id: String,
    pub gt_index: usize,
    pub category: u32,
    pub gt: BBox,
    pub status: HitStatus,
    /// Best-overlapping proposal among the top `k_max`.
    pub best_index: Option<usize>,
    pub best_box: Option<BBox>,
    pub best_iou: f64,
    /// Rank of the first hit at the primary threshold (0-based).
    pub hit_rank: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub images: usize,
    pub gt_boxes: usize,
    pub curves: Vec<CurveReport>,
    pub iou_thresholds: Vec<f64>,
    pub recall_vs_iou: Vec<f64>,
    pub average_recall: f64,
    pub hits: Vec<HitRecord>,
    pub auc_log_formula: String,
    pub auc_linear_formula: String,
}

impl EvalReport {
    pub fn curve(&self, iou: f64) -> Option<&CurveReport> {
        self.curves.iter().find(|c| (c.iou - iou).abs() < 1e-12)
    }
}

/// Check the monotonicity invariants of a finished report.
pub fn check_report(r: &EvalReport) -> Result<()> {
    for c in &r.curves {
        if c.recall.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::State(format!("recall decreases in k at IoU {}", c.iou)));
        }
    }
    let mut by_iou: Vec<&CurveReport> = r.curves.iter().collect();
    by_iou.sort_by(|a, b| a.iou.total_cmp(&b.iou));
    for w in by_iou.windows(2) {
        if w[0].recall.iter().zip(&w[1].recall).any(|(lo, hi)| hi > lo) {
            return Err(Error::State(format!(
                "recall increases from IoU {} to {}",
                w[0].iou, w[1].iou
            )));
        }
    }
    if r.recall_vs_iou.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::State("recall-vs-IoU curve increases".into()));
    }
    Ok(())
}

pub fn evaluate(images: &[EvalImage], cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.k_max == 0 || cfg.k_fixed == 0 {
        return Err(Error::Config("k_max and k_fixed must be at least 1".into()));
    }
    if cfg.ious.is_empty() || cfg.ious.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::Config("IoU thresholds must lie in (0, 1]".into()));
    }
    let curves = cfg
        .ious
        .iter()
        .map(|&t| {
            let recall = recall_curve(images, t, cfg.k_max);
            CurveReport {
                iou: t,
                auc_log: auc_log(&recall),
                auc_linear: auc_linear(&recall),
                needed: [0.25, 0.5, 0.75].map(|q| proposals_for_recall(&recall, q)),
                recall,
            }
        })
        .collect();
    let thresholds = recall_ious();
    let (rvi, ar) = recall_vs_iou(images, cfg.k_fixed, &thresholds);
    let primary = cfg.ious[0];
    let hits = par::map_indexed(images.len(), |i| {
        let im = &images[i];
        let top = &im.proposals[..im.proposals.len().min(cfg.k_max)];
        im.gt
            .iter()
            .enumerate()
            .map(|(g, gb)| {
                let mut best: Option<(usize, f64)> = None;
                let mut first = None;
                for (r, p) in top.iter().enumerate() {
                    let v = iou(p, gb);
                    if best.is_none_or(|(_, bv)| v > bv) {
                        best = Some((r, v));
                    }
                    if first.is_none() && v >= primary {
                        first = Some(r);
                    }
                }
                HitRecord {
                    image_id: im.image_id.clone(),
                    gt_index: g,
                    category: im.categories.get(g).copied().unwrap_or(0),
                    gt: *gb,
                    status: if first.is_some() { HitStatus::Hit } else { HitStatus::Miss },
                    best_index: best.map(|b| b.0),
                    best_box: best.map(|b| top[b.0]),
                    best_iou: best.map_or(0.0, |b| b.1),
                    hit_rank: first,
                }
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    let report = EvalReport {
        config: cfg.clone(),
        images: images.len(),
        gt_boxes: total_gt(images),
        curves,
        iou_thresholds: thresholds,
        recall_vs_iou: rvi,
        average_recall: ar,
        hits,
        auc_log_formula: AUC_LOG_FORMULA.into(),
        auc_linear_formula: AUC_LINEAR_FORMULA.into(),
    };
    check_report(&report)?;
    Ok(report)
}
