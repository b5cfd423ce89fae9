//! Recall metrics against nested-loop reference computations.

use deepbox::evalkit::{
    auc_linear, auc_log, proposals_for_recall, recall_at_k, recall_curve, recall_ious, recall_vs_iou,
    EvalImage,
};
use deepbox::reference;
use deepbox::BBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INSTANCES: usize = 200;
pub const MAX_BOXES: usize = 20;
const K_MAX: usize = 25;
/// AUC sums the same terms in a different order than the reference.
pub const AUC_TOL: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct MetricResult {
    pub instances: usize,
    pub comparisons: usize,
    pub mismatches: Vec<String>,
    pub max_auc_diff: f64,
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    // integer corners on a small canvas make exact-threshold IoUs common
    let x0 = rng.random_range(0..16) as f64;
    let y0 = rng.random_range(0..16) as f64;
    let w = rng.random_range(1..=8) as f64;
    let h = rng.random_range(1..=8) as f64;
    BBox::new(x0, y0, x0 + w, y0 + h).unwrap()
}

/// One instance: 1-3 images, at most `MAX_BOXES` GT boxes and at most
/// `MAX_BOXES` proposals per image.
pub fn instance(rng: &mut ChaCha8Rng) -> Vec<EvalImage> {
    let images = rng.random_range(1..=3);
    let mut gt_left = MAX_BOXES;
    (0..images)
        .map(|i| {
            let ng = rng.random_range(0..=gt_left.min(8));
            gt_left -= ng;
            let np = rng.random_range(0..=MAX_BOXES);
            let gt: Vec<BBox> = (0..ng).map(|_| random_box(rng)).collect();
            let mut proposals: Vec<BBox> = (0..np).map(|_| random_box(rng)).collect();
            // seed a few near-copies of GT so high thresholds get hits
            for g in gt.iter().take(2) {
                if proposals.len() < MAX_BOXES && rng.random_bool(0.5) {
                    let pos = rng.random_range(0..=proposals.len());
                    proposals.insert(pos, g.translated(rng.random_range(0..=1) as f64, 0.0).unwrap());
                }
            }
            EvalImage {
                image_id: format!("i{i}"),
                categories: vec![0; gt.len()],
                proposals,
                gt,
            }
        })
        .collect()
}

pub fn check(seed: u64) -> MetricResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = MetricResult::default();
    let thresholds = recall_ious();
    for n in 0..INSTANCES {
        let images = instance(&mut rng);
        let pairs: Vec<(Vec<BBox>, Vec<BBox>)> =
            images.iter().map(|i| (i.proposals.clone(), i.gt.clone())).collect();
        let eq = |what: &str, a: f64, b: f64, res: &mut MetricResult| {
            res.comparisons += 1;
            if a.to_bits() != b.to_bits() {
                res.mismatches.push(format!("instance {n}: {what}: {a} vs {b}"));
            }
        };
        for &t in thresholds.iter().chain(&[0.0, 1.0]) {
            for k in [0, 1, 2, 3, 5, 10, 20, 25] {
                eq(&format!("recall@{k}@{t}"), recall_at_k(&images, k, t), reference::recall_at_k(&pairs, k, t), &mut res);
            }
            let curve = recall_curve(&images, t, K_MAX);
            let want = reference::recall_curve(&pairs, t, K_MAX);
            for (k, (a, b)) in curve.iter().zip(&want).enumerate() {
                eq(&format!("curve[{}]@{t}", k + 1), *a, *b, &mut res);
            }
            for (a, b) in [(auc_log(&curve), reference::auc_log(&want)), (auc_linear(&curve), reference::auc_linear(&want))] {
                res.comparisons += 1;
                let d = (a - b).abs();
                res.max_auc_diff = res.max_auc_diff.max(d);
                if d > AUC_TOL {
                    res.mismatches.push(format!("instance {n}: auc@{t}: {a} vs {b}"));
                }
            }
            for target in [0.0, 0.25, 0.5, 0.75, 1.0] {
                res.comparisons += 1;
                let a = proposals_for_recall(&curve, target);
                let b = reference::proposals_for_recall(&pairs, t, K_MAX, target);
                if a != b {
                    res.mismatches.push(format!("instance {n}: proposals_for_recall({target})@{t}: {a:?} vs {b:?}"));
                }
            }
        }
        for k in [1, 5, 20] {
            let (r, ar) = recall_vs_iou(&images, k, &thresholds);
            let want: Vec<f64> = thresholds.iter().map(|&t| reference::recall_at_k(&pairs, k, t)).collect();
            for (t, (a, b)) in thresholds.iter().zip(r.iter().zip(&want)) {
                eq(&format!("recall_vs_iou k={k} t={t}"), *a, *b, &mut res);
            }
            let want_ar = want.iter().sum::<f64>() / want.len() as f64;
            eq(&format!("average recall k={k}"), ar, want_ar, &mut res);
        }
        res.instances += 1;
    }
    res
}

pub fn run(seed: u64) -> Result<String, String> {
    let r = check(seed);
    let line = format!(
        "{} instances, {} comparisons, {} mismatches, max AUC diff {:.1e}",
        r.instances,
        r.comparisons,
        r.mismatches.len(),
        r.max_auc_diff
    );
    if r.instances >= INSTANCES && r.mismatches.is_empty() {
        Ok(line)
    } else {
        Err(format!("{line}; first: {}", r.mismatches.first().cloned().unwrap_or_default()))
    }
}
