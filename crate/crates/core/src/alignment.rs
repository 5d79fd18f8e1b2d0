//! Similarity, scoring and loss math for both branches.
//!
//! Complexity branch: each image is compared with every level prompt, the
//! similarities are softmax-normalized across levels, and the anchor level's
//! probability is the predicted complexity. Alignment branch: each image is
//! compared with its own scene description, and the diagonal similarities are
//! softmax-normalized across the batch and regressed towards one.
//!
//! All math is `f64`. [`tape`] builds the same computations on an
//! [`autograd::Graph`](crate::autograd::Graph) for training.

use std::fmt;
use std::str::FromStr;

use crate::autograd::softmax_in_place;
use crate::encoders::Embedding;
use crate::error::{Error, Result};
use crate::tensor::{dot, norm};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Weight of the alignment loss.
    pub alpha: f64,
    /// Weight of the complexity loss.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.1,
            beta: 0.9,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite() && alpha >= 0.0 && beta >= 0.0) {
            return Err(Error::Invalid(format!(
                "loss weights must be finite and >= 0, got ({alpha}, {beta})"
            )));
        }
        Ok(LossWeights { alpha, beta })
    }
}

/// Which level's probability is read off as the complexity score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Anchor {
    /// The most complex level (last prompt).
    #[default]
    Highest,
    /// 1-based level index.
    Level(usize),
}

impl Anchor {
    /// 0-based index into `levels` prompts.
    pub fn resolve(self, levels: usize) -> Result<usize> {
        match self {
            Anchor::Highest if levels > 0 => Ok(levels - 1),
            Anchor::Level(k) if (1..=levels).contains(&k) => Ok(k - 1),
            _ => Err(Error::Invalid(format!(
                "anchor {self} out of range for {levels} levels"
            ))),
        }
    }
}

impl fmt::Display for Anchor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Anchor::Highest => f.write_str("highest"),
            Anchor::Level(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for Anchor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "highest" => Ok(Anchor::Highest),
            other => other
                .parse::<usize>()
                .ok()
                .filter(|&k| k >= 1)
                .map(Anchor::Level)
                .ok_or_else(|| Error::Invalid(format!("bad anchor {s:?}"))),
        }
    }
}

/// Ground-truth alignment levels: all ones.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignTarget {
    pub g_align: Vec<f64>,
}

impl AlignTarget {
    pub fn ones(n: usize) -> Self {
        AlignTarget {
            g_align: vec![1.0; n],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchScores {
    /// `N × K` for the complexity branch, `N × 1` for scene similarities.
    pub similarities: Vec<Vec<f64>>,
    pub predictions: Vec<f64>,
}

impl BatchScores {
    pub fn batch_size(&self) -> usize {
        self.predictions.len()
    }
}

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape("cosine_similarity", a.dim(), b.dim()));
    }
    let (na, nb) = (norm(&a.vec), norm(&b.vec));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(&a.vec, &b.vec) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Invalid("softmax of empty vector".into()));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    let mut out = scores.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

fn check_levels(n: usize) -> Result<()> {
    if ![3, 5, 7].contains(&n) {
        return Err(Error::Invalid(format!("expected 3, 5 or 7 level prompts, got {n}")));
    }
    Ok(())
}

pub fn complexity_scores(
    img_embeds: &[Embedding],
    level_embeds: &[Embedding],
    anchor: Anchor,
) -> Result<BatchScores> {
    check_levels(level_embeds.len())?;
    let a = anchor.resolve(level_embeds.len())?;
    let mut similarities = Vec::with_capacity(img_embeds.len());
    let mut predictions = Vec::with_capacity(img_embeds.len());
    for img in img_embeds {
        let row = level_embeds
            .iter()
            .map(|lvl| cosine_similarity(img, lvl))
            .collect::<Result<Vec<_>>>()?;
        predictions.push(softmax(&row)?[a]);
        similarities.push(row);
    }
    Ok(BatchScores {
        similarities,
        predictions,
    })
}

fn mse(q: &[f64], g: &[f64]) -> Result<f64> {
    if q.len() != g.len() {
        return Err(Error::shape("loss inputs", q.len(), g.len()));
    }
    if q.is_empty() {
        return Err(Error::Invalid("loss over empty batch".into()));
    }
    if q.iter().chain(g).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("loss input"));
    }
    Ok(q.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / q.len() as f64)
}

pub fn complexity_loss(q: &[f64], g: &[f64]) -> Result<f64> {
    mse(q, g)
}

/// Pairs image `i` with scene text `i` and softmaxes the diagonal over the batch.
pub fn alignment_scores(img_embeds: &[Embedding], scene_embeds: &[Embedding]) -> Result<BatchScores> {
    if img_embeds.is_empty() {
        return Err(Error::Invalid("alignment over empty batch".into()));
    }
    if img_embeds.len() != scene_embeds.len() {
        return Err(Error::shape("alignment pairs", img_embeds.len(), scene_embeds.len()));
    }
    let diag = img_embeds
        .iter()
        .zip(scene_embeds)
        .map(|(i, s)| cosine_similarity(i, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchScores {
        predictions: softmax(&diag)?,
        similarities: diag.into_iter().map(|s| vec![s]).collect(),
    })
}

pub fn alignment_loss(q_align: &[f64], target: &AlignTarget) -> Result<f64> {
    mse(q_align, &target.g_align)
}

pub fn combined_loss(l_a: f64, l_c: f64, w: LossWeights) -> Result<f64> {
    if !(l_a.is_finite() && l_c.is_finite()) {
        return Err(Error::NonFinite("combined loss input"));
    }
    if l_a < 0.0 || l_c < 0.0 {
        return Err(Error::Invalid(format!("negative loss input ({l_a}, {l_c})")));
    }
    Ok(w.alpha * l_a + w.beta * l_c)
}

/// Scene-text scoring regressed straight onto complexity (single-branch
/// baseline). Numerically the same as [`alignment_scores`]; its predictions
/// are compared with complexity ground truth instead of ones.
pub fn direct_scene_scores(
    img_embeds: &[Embedding],
    scene_embeds: &[Embedding],
) -> Result<BatchScores> {
    alignment_scores(img_embeds, scene_embeds)
}

/// Graph versions of the branch computations used during training.
pub mod tape {
    use crate::autograd::{Graph, NodeId};
    use crate::error::{Error, Result};

    fn cos(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
        g.cosine(a, b).ok_or(Error::ZeroNorm)
    }

    /// Returns `(q row node, loss node)` for the complexity branch.
    pub fn complexity_branch(
        g: &mut Graph,
        images: &[NodeId],
        levels: &[NodeId],
        anchor: usize,
        mos: &[f64],
    ) -> Result<(NodeId, NodeId)> {
        let mut qs = Vec::with_capacity(images.len());
        for &img in images {
            let sims = levels
                .iter()
                .map(|&l| cos(g, img, l))
                .collect::<Result<Vec<_>>>()?;
            let row = g.concat_cols(&sims);
            let probs = g.softmax_rows(row);
            qs.push(g.pick(probs, 0, anchor));
        }
        let q = g.concat_cols(&qs);
        let loss = g.mse_target(q, mos.to_vec());
        Ok((q, loss))
    }

    /// Returns `(q row node, loss node)` for the alignment branch with the
    /// given target (ones for alignment, MOS for the direct baseline).
    pub fn scene_branch(
        g: &mut Graph,
        images: &[NodeId],
        scenes: &[NodeId],
        target: Vec<f64>,
    ) -> Result<(NodeId, NodeId)> {
        let sims = images
            .iter()
            .zip(scenes)
            .map(|(&i, &s)| cos(g, i, s))
            .collect::<Result<Vec<_>>>()?;
        let row = g.concat_cols(&sims);
        let q = g.softmax_rows(row);
        let loss = g.mse_target(q, target);
        Ok((q, loss))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec())
    }

    fn unit(dim: usize, k: usize) -> Embedding {
        let mut v = vec![0.0; dim];
        v[k] = 1.0;
        Embedding::new(v)
    }

    #[test]
    fn cosine_basic_cases() {
        assert!((cosine_similarity(&e(&[3., -1., 2.]), &e(&[3., -1., 2.])).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&e(&[1., 0.]), &e(&[0., 1.])).unwrap(), 0.0);
        assert!(matches!(
            cosine_similarity(&e(&[0., 0.]), &e(&[1., 0.])),
            Err(Error::ZeroNorm)
        ));
        assert!(cosine_similarity(&e(&[1., 0.]), &e(&[1., 0., 0.])).is_err());
    }

    #[test]
    fn softmax_uniform_and_rejects_nan() {
        assert_eq!(softmax(&[0.0; 5]).unwrap(), vec![0.2; 5]);
        assert!(softmax(&[1.0, f64::NAN]).is_err());
        assert!(softmax(&[f64::INFINITY]).is_err());
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn complexity_equal_similarities_give_one_fifth() {
        let levels: Vec<Embedding> = (0..5).map(|_| e(&[1.0, 1.0])).collect();
        for anchor in [Anchor::Level(1), Anchor::Level(3), Anchor::Highest] {
            let s = complexity_scores(&[e(&[2.0, 2.0])], &levels, anchor).unwrap();
            assert!((s.predictions[0] - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn complexity_requires_valid_levels_and_anchor() {
        let levels: Vec<Embedding> = (0..4).map(|k| unit(4, k)).collect();
        assert!(complexity_scores(&[unit(4, 0)], &levels, Anchor::Highest).is_err());
        let levels: Vec<Embedding> = (0..3).map(|k| unit(4, k)).collect();
        assert!(complexity_scores(&[unit(4, 0)], &levels, Anchor::Level(4)).is_err());
        assert!(complexity_scores(&[unit(5, 0)], &levels, Anchor::Level(1)).is_err());
    }

    #[test]
    fn raising_anchor_similarity_raises_q() {
        let levels: Vec<Embedding> = (0..5).map(|k| unit(6, k)).collect();
        let low = complexity_scores(&[e(&[0.1, 0.2, 0.3, 0.4, 0.5, 1.0])], &levels, Anchor::Highest)
            .unwrap();
        let high = complexity_scores(&[e(&[0.1, 0.2, 0.3, 0.4, 0.9, 1.0])], &levels, Anchor::Highest)
            .unwrap();
        assert!(high.predictions[0] > low.predictions[0]);
    }

    #[test]
    fn losses_trivial_cases() {
        assert_eq!(complexity_loss(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!(complexity_loss(&[0.3], &[0.3, 0.7]).is_err());
        assert_eq!(alignment_loss(&[1.0], &AlignTarget::ones(1)).unwrap(), 0.0);
        assert!(alignment_loss(&[1.0, 0.0], &AlignTarget::ones(1)).is_err());
    }

    #[test]
    fn alignment_singleton_and_uniform() {
        let s = alignment_scores(&[e(&[1.0, 2.0])], &[e(&[-3.0, 0.5])]).unwrap();
        assert_eq!(s.predictions, vec![1.0]);
        let imgs: Vec<Embedding> = (0..4).map(|_| e(&[1.0, 0.0])).collect();
        let s = alignment_scores(&imgs, &imgs).unwrap();
        assert_eq!(s.predictions, vec![0.25; 4]);
        assert!(alignment_scores(&[], &[]).is_err());
    }

    #[test]
    fn combined_loss_cases() {
        assert!((combined_loss(1.0, 1.0, LossWeights::default()).unwrap() - 1.0).abs() < 1e-15);
        let w = LossWeights::new(0.0, 0.9).unwrap();
        assert_eq!(combined_loss(0.37, 0.5, w).unwrap(), 0.9 * 0.5);
        assert_eq!(combined_loss(0.0, 0.0, LossWeights::default()).unwrap(), 0.0);
        assert!(combined_loss(-0.1, 0.0, LossWeights::default()).is_err());
        assert!(LossWeights::new(-1.0, 1.0).is_err());
    }

    #[test]
    fn direct_matches_alignment_numerically() {
        let imgs = vec![e(&[1.0, 0.3]), e(&[0.2, 1.0]), e(&[0.5, 0.5])];
        let scenes = vec![e(&[0.9, 0.1]), e(&[0.0, 1.0]), e(&[1.0, -0.4])];
        let a = alignment_scores(&imgs, &scenes).unwrap();
        let d = direct_scene_scores(&imgs, &scenes).unwrap();
        assert_eq!(a, d);
        let g = [0.2, 0.5, 0.9];
        assert_ne!(
            complexity_loss(&d.predictions, &g).unwrap(),
            alignment_loss(&a.predictions, &AlignTarget::ones(3)).unwrap()
        );
    }

    #[test]
    fn anchor_parsing() {
        assert_eq!("highest".parse::<Anchor>().unwrap(), Anchor::Highest);
        assert_eq!("1".parse::<Anchor>().unwrap(), Anchor::Level(1));
        assert!("0".parse::<Anchor>().is_err());
        assert_eq!(Anchor::Highest.resolve(7).unwrap(), 6);
    }
}
