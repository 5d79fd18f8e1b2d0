//! Patch-based scoring of whole images and manifests.

use std::fmt::Write as _;
use std::path::Path;

use crate::datamodel::Manifest;
use crate::encoders::Embedding;
use crate::error::{Error, Result};
use crate::imaging::{load_image, Image};
use crate::metrics::{MetricReport, RmaeMode};
use crate::model::Model;

/// Crop offsets for one image. Aggregation is always the arithmetic mean.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchPlan {
    pub crop_side: usize,
    pub stride: usize,
    pub crops: Vec<(usize, usize)>,
}

fn axis_offsets(len: usize, crop: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..).map(|i| i * stride).take_while(|&o| o + crop <= len).collect();
    if out.last().map_or(true, |&o| o + crop < len) {
        out.push(len - crop);
    }
    out
}

impl PatchPlan {
    /// Tiles a `width × height` image; both sides must be at least `crop_side`.
    /// A final edge-aligned crop covers any remainder.
    pub fn new(width: usize, height: usize, crop_side: usize, stride: usize) -> Result<Self> {
        if crop_side == 0 || stride == 0 || stride > crop_side {
            return Err(Error::Invalid(format!(
                "patch plan needs 0 < stride <= crop_side, got stride {stride}, crop {crop_side}"
            )));
        }
        if width < crop_side || height < crop_side {
            return Err(Error::shape(
                "patch plan image",
                format!("at least {crop_side}x{crop_side}"),
                format!("{width}x{height}"),
            ));
        }
        let xs = axis_offsets(width, crop_side, stride);
        let ys = axis_offsets(height, crop_side, stride);
        let crops = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
        Ok(PatchPlan {
            crop_side,
            stride,
            crops,
        })
    }

    pub fn len(&self) -> usize {
        self.crops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.crops.is_empty()
    }
}

/// Anything that maps an encoder-sized crop to a complexity score.
pub trait CropScorer {
    fn crop_side(&self) -> usize;
    fn score_crop(&self, crop: &Image) -> Result<f64>;
}

/// A model with its level embeddings computed once.
pub struct ModelScorer<'m> {
    model: &'m Model,
    levels: Vec<Embedding>,
}

impl<'m> ModelScorer<'m> {
    pub fn new(model: &'m Model) -> Result<Self> {
        Ok(ModelScorer {
            levels: model.level_embeddings()?,
            model,
        })
    }
}

impl CropScorer for ModelScorer<'_> {
    fn crop_side(&self) -> usize {
        use crate::encoders::DualEncoder;
        self.model.encoder.config().input_side
    }

    fn score_crop(&self, crop: &Image) -> Result<f64> {
        self.model.score_crop_with(crop, &self.levels)
    }
}

/// Upscales so the shorter side reaches `side`, keeping the aspect ratio.
fn ensure_min_side(image: &Image, side: usize) -> Image {
    let short = image.width().min(image.height());
    if short >= side {
        return image.clone();
    }
    let scale = side as f64 / short as f64;
    let w = ((image.width() as f64 * scale).round() as usize).max(side);
    let h = ((image.height() as f64 * scale).round() as usize).max(side);
    log::info!(
        "upscaling {}x{} image to {w}x{h} for {side}px crops",
        image.width(),
        image.height()
    );
    image.resize(w, h)
}

/// Mean crop score of `image` under non-overlapping tiling with the given stride.
pub fn score_image(scorer: &dyn CropScorer, image: &Image, stride: Option<usize>) -> Result<f64> {
    let side = scorer.crop_side();
    let image = ensure_min_side(image, side);
    let plan = PatchPlan::new(image.width(), image.height(), side, stride.unwrap_or(side))?;
    score_with_plan(scorer, &image, &plan)
}

pub fn score_with_plan(scorer: &dyn CropScorer, image: &Image, plan: &PatchPlan) -> Result<f64> {
    let mut sum = 0.0;
    for &(x, y) in &plan.crops {
        sum += scorer.score_crop(&image.crop(x, y, plan.crop_side, plan.crop_side)?)?;
    }
    Ok(sum / plan.len() as f64)
}

/// Scores attached to ids; `missing` lists unreadable images.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    pub scores: Vec<(String, f64)>,
    pub missing: Vec<String>,
    pub report: Option<MetricReport>,
}

impl ScoreSet {
    pub fn is_partial(&self) -> bool {
        !self.missing.is_empty()
    }

    /// `(ground truth, prediction)` pairs against the manifest MOS.
    pub fn pairs(&self, manifest: &Manifest) -> Vec<(f64, f64)> {
        self.scores
            .iter()
            .filter_map(|(id, s)| manifest.get(id).map(|r| (r.mos, *s)))
            .collect()
    }

    /// `image_id<TAB>score` lines followed by `#` metric trailers.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, s) in &self.scores {
            let _ = writeln!(out, "{id}\t{s:.9}");
        }
        if let Some(r) = &self.report {
            for line in r.to_kv_block().lines() {
                let _ = writeln!(out, "# {line}");
            }
        }
        for id in &self.missing {
            let _ = writeln!(out, "# missing = {id}");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Reads `image_id<TAB>score` lines, skipping `#` trailers.
pub fn parse_scores(text: &str, path: &Path) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let (id, score) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected image_id<TAB>score".into()))?;
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad score {score:?}")))?;
        out.push((id.to_string(), score));
    }
    Ok(out)
}

/// Scores every record in `ids` (or the whole manifest), in manifest order.
pub fn score_manifest(
    scorer: &dyn CropScorer,
    manifest: &Manifest,
    ids: Option<&[String]>,
    stride: Option<usize>,
    mode: RmaeMode,
) -> Result<ScoreSet> {
    let records = match ids {
        Some(ids) => manifest.select(ids),
        None => manifest.records.iter().collect(),
    };
    let mut scores = Vec::new();
    let mut missing = Vec::new();
    let (mut pred, mut gt) = (Vec::new(), Vec::new());
    for r in records {
        let image = match load_image(&manifest.resolve(r)) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {}: {e}", r.image_id);
                missing.push(r.image_id.clone());
                continue;
            }
        };
        let s = score_image(scorer, &image, stride)?;
        scores.push((r.image_id.clone(), s));
        pred.push(s);
        gt.push(r.mos);
    }
    let report = if pred.len() >= 2 {
        Some(MetricReport::compute(&pred, &gt, mode)?)
    } else {
        None
    };
    Ok(ScoreSet {
        scores,
        missing,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_size_has_one_crop() {
        let p = PatchPlan::new(64, 64, 64, 64).unwrap();
        assert_eq!(p.crops, vec![(0, 0)]);
    }

    #[test]
    fn remainder_gets_edge_crop() {
        let p = PatchPlan::new(100, 64, 64, 64).unwrap();
        assert_eq!(p.crops, vec![(0, 0), (36, 0)]);
    }

    #[test]
    fn multiples_tile_exactly() {
        let p = PatchPlan::new(192, 128, 64, 64).unwrap();
        assert_eq!(p.len(), 6);
    }

    #[test]
    fn rejects_bad_stride_and_small_image() {
        assert!(PatchPlan::new(64, 64, 64, 65).is_err());
        assert!(PatchPlan::new(63, 64, 64, 64).is_err());
    }
}
