//! Rerank a proposal pool by network objectness.

use serde::{Deserialize, Serialize};

use crate::dataio::ImageRecord;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::netdef::{crop_batch, forward_scores, NetParams};
use crate::raster::Image;
use crate::roipool::{forward_objectness_fast, ScaleSet};

/// How many proposals are scored when no cutoff is given.
pub const DEFAULT_TOP_K: usize = 2048;

const CROP_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorePath {
    /// Crop, warp and run the whole net once per box.
    Crop,
    /// One trunk pass per scale, RoI-pooled features per box.
    Fast,
}

impl ScorePath {
    pub fn name(self) -> &'static str {
        match self {
            ScorePath::Crop => "crop",
            ScorePath::Fast => "fast",
        }
    }
}

impl std::str::FromStr for ScorePath {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crop" => Ok(ScorePath::Crop),
            "fast" => Ok(ScorePath::Fast),
            _ => Err(Error::Config(format!("unknown score path {s:?}, expected crop or fast"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RerankResult {
    pub image_id: String,
    /// Output position -> input index. The scored prefix comes first.
    pub order: Vec<usize>,
    /// Objectness of the first `scores.len()` entries of `order`, descending.
    pub scores: Vec<f64>,
    pub path: ScorePath,
    /// Number of proposals that were scored.
    pub top_k: usize,
}

impl RerankResult {
    /// Reorder a record's boxes (and parallel fields) and attach the scores.
    pub fn apply(&self, record: &ImageRecord) -> ImageRecord {
        let pick = |v: &[f64]| -> Vec<f64> {
            if v.is_empty() {
                Vec::new()
            } else {
                self.order.iter().map(|&i| v[i]).collect()
            }
        };
        ImageRecord {
            image_id: record.image_id.clone(),
            boxes: self.order.iter().map(|&i| record.boxes[i]).collect(),
            scores: pick(&record.scores),
            categories: if record.categories.is_empty() {
                Vec::new()
            } else {
                self.order.iter().map(|&i| record.categories[i]).collect()
            },
            objectness: Some(self.scores.clone()),
            ranker: Some(format!("deepbox-{}", self.path.name())),
        }
    }
}

/// Stable descending order of `scores`, followed by the unscored indices
/// `scores.len()..total` in their original order.
pub fn rank_by_scores(scores: &[f64], total: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.extend(scores.len()..total);
    order
}

fn check_boxes(image: &Image, boxes: &[BBox]) -> Result<()> {
    let (w, h) = (image.width() as f64, image.height() as f64);
    for (i, b) in boxes.iter().enumerate() {
        if b.x_min() < 0.0 || b.y_min() < 0.0 || !b.is_inside(w, h) {
            return Err(Error::at_box(
                i,
                Error::Data(format!("{:?} lies outside the {}x{} image", b.to_array(), w, h)),
            ));
        }
    }
    Ok(())
}

fn offset_box_error(e: Error, offset: usize) -> Error {
    match e {
        Error::AtBox { index, source } => Error::AtBox {
            index: index + offset,
            source,
        },
        e => e,
    }
}

/// Objectness of every box, in input order.
pub fn score_boxes(
    params: &NetParams<f32>,
    image: &Image,
    boxes: &[BBox],
    path: ScorePath,
    scales: &ScaleSet,
) -> Result<Vec<f64>> {
    check_boxes(image, boxes)?;
    match path {
        ScorePath::Fast => forward_objectness_fast(params, image, boxes, scales),
        ScorePath::Crop => {
            let mut out = Vec::with_capacity(boxes.len());
            for (ci, chunk) in boxes.chunks(CROP_CHUNK).enumerate() {
                let items: Vec<(&Image, BBox)> = chunk.iter().map(|b| (image, *b)).collect();
                let x = crop_batch(params, &items).map_err(|e| offset_box_error(e, ci * CROP_CHUNK))?;
                out.extend(forward_scores(params, x)?);
            }
            Ok(out)
        }
    }
}

/// Score the first `top_k` proposals (all when `None`) and sort them by
/// objectness. Ties keep source order; the unscored tail follows unchanged.
pub fn rerank(
    params: &NetParams<f32>,
    image: &Image,
    record: &ImageRecord,
    top_k: Option<usize>,
    path: ScorePath,
    scales: &ScaleSet,
) -> Result<RerankResult> {
    let n = record.boxes.len();
    let k = top_k.unwrap_or(n).min(n);
    let scores = score_boxes(params, image, &record.boxes[..k], path, scales)?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::at_box(i, Error::Data("non-finite objectness".into())));
    }
    let order = rank_by_scores(&scores, n);
    let sorted = order[..k].iter().map(|&i| scores[i]).collect();
    Ok(RerankResult {
        image_id: record.image_id.clone(),
        order,
        scores: sorted,
        path,
        top_k: k,
    })
}

/// Largest |crop score - fast score| over `boxes`. Each box gets its own
/// single-scale pyramid that maps its shorter side onto the crop side, so a
/// whole-image box on a square image sees the same pixels on both paths.
pub fn score_consistency_check(params: &NetParams<f32>, image: &Image, boxes: &[BBox]) -> Result<f64> {
    let crop = score_boxes(params, image, boxes, ScorePath::Crop, &ScaleSet::default())?;
    let s = params.config.input_side as f64;
    let short = image.width().min(image.height()) as f64;
    let mut worst = 0.0f64;
    for (i, (b, c)) in boxes.iter().zip(&crop).enumerate() {
        let size = (short * s / b.width().min(b.height())).round().max(1.0) as usize;
        let scales = ScaleSet::single(size, s * s)?;
        let fast = forward_objectness_fast(params, image, std::slice::from_ref(b), &scales)
            .map_err(|e| offset_box_error(e, i))?;
        worst = worst.max((c - fast[0]).abs());
    }
    Ok(worst)
}
