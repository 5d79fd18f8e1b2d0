use std::path::{Path, PathBuf};

use cmssa::alignment::Anchor;
use cmssa::datamodel::Manifest;
use cmssa::encoders::{EncoderConfig, PromptBank, PromptLevels, ToyEncoder};
use cmssa::imaging::Image;
use cmssa::inference::{score_image, score_manifest, CropScorer, ModelScorer, PatchPlan};
use cmssa::metrics::RmaeMode;
use cmssa::model::Model;

/// Solid grey images whose pixel level encodes the record index.
fn grey_manifest(dir: &Path, raws: &[f64]) -> Manifest {
    let rows: Vec<(String, PathBuf, f64, Option<String>)> = raws
        .iter()
        .enumerate()
        .map(|(i, &raw)| {
            let rel = PathBuf::from(format!("g{i}.png"));
            let v = (i as f32 + 1.0) / 255.0;
            Image::filled(8, 8, [v; 3]).save_png(&dir.join(&rel)).unwrap();
            (format!("g{i}"), rel, raw, None)
        })
        .collect();
    Manifest::from_rows("grey", dir, 0.0, 10.0, rows).unwrap()
}

/// Recovers the record index from the pixel level and returns `f(mos)`.
struct ByIndex {
    mos: Vec<f64>,
    f: fn(f64) -> f64,
}

impl CropScorer for ByIndex {
    fn crop_side(&self) -> usize {
        8
    }

    fn score_crop(&self, crop: &Image) -> cmssa::Result<f64> {
        let i = (crop.get(0, 0)[0] * 255.0).round() as usize - 1;
        Ok((self.f)(self.mos[i]))
    }
}

fn by_index(m: &Manifest, f: fn(f64) -> f64) -> ByIndex {
    ByIndex {
        mos: m.records.iter().map(|r| r.mos).collect(),
        f,
    }
}

const RAWS: [f64; 6] = [1.0, 7.5, 3.0, 9.0, 0.5, 5.0];

#[test]
fn exact_scorer_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let m = grey_manifest(dir.path(), &RAWS);
    let s = score_manifest(&by_index(&m, |x| x), &m, None, None, RmaeMode::Root).unwrap();
    let r = s.report.clone().unwrap();
    assert_eq!((r.srcc, r.plcc, r.rmse, r.rmae), (1.0, 1.0, 0.0, 0.0));
    assert!(!s.is_partial());
}

#[test]
fn inverted_scorer_has_negative_rank_correlation() {
    let dir = tempfile::tempdir().unwrap();
    let m = grey_manifest(dir.path(), &RAWS);
    let s = score_manifest(&by_index(&m, |x| 1.0 - x), &m, None, None, RmaeMode::Root).unwrap();
    assert_eq!(s.report.unwrap().srcc, -1.0);
}

#[test]
fn constant_scorer_is_flagged_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let m = grey_manifest(dir.path(), &RAWS);
    let s = score_manifest(&by_index(&m, |_| 0.4), &m, None, None, RmaeMode::Root).unwrap();
    let r = s.report.unwrap();
    assert!(r.degenerate());
    assert_eq!((r.srcc, r.plcc), (0.0, 0.0));
}

#[test]
fn unreadable_images_are_missing_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let m = grey_manifest(dir.path(), &RAWS);
    std::fs::remove_file(dir.path().join("g2.png")).unwrap();
    std::fs::write(dir.path().join("g4.png"), b"not a png").unwrap();
    let s = score_manifest(&by_index(&m, |x| x), &m, None, None, RmaeMode::Root).unwrap();
    assert_eq!(s.missing, vec!["g2".to_string(), "g4".to_string()]);
    assert!(s.is_partial());
    assert_eq!(s.scores.len(), 4);
    assert_eq!(s.report.as_ref().unwrap().n, 4);
    assert!(s.to_text().contains("# missing = g4"));
}

#[test]
fn subset_scoring_follows_manifest_order() {
    let dir = tempfile::tempdir().unwrap();
    let m = grey_manifest(dir.path(), &RAWS);
    let ids = vec!["g3".to_string(), "g0".to_string()];
    let s = score_manifest(&by_index(&m, |x| x), &m, Some(&ids), None, RmaeMode::Root).unwrap();
    let got: Vec<&str> = s.scores.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(got, ["g0", "g3"]);
}

/// A model whose image embedding does not depend on pixels: every patch
/// weight is zero, so only biases and positions reach the class token.
fn blind_model() -> Model {
    let cfg = EncoderConfig::default();
    let mut enc = ToyEncoder::init(cfg, 5).unwrap();
    let idx = enc.params().layout().index_of("img.patch.w").unwrap();
    for v in enc.params_mut().tensors_mut()[idx].data_mut() {
        *v = 0.0;
    }
    Model::new(enc, PromptBank::init(PromptLevels::Five, cfg.token_dim, 5), Anchor::Highest).unwrap()
}

fn noisy(side: usize, seed: u32) -> Image {
    let mut img = Image::filled(side, side, [0.0; 3]);
    let mut s = seed;
    for y in 0..side {
        for x in 0..side {
            s = s.wrapping_mul(1_103_515_245).wrapping_add(12345);
            let v = (s >> 16) as f32 / 65536.0;
            img.set(x, y, [v, 1.0 - v, v * 0.5]);
        }
    }
    img
}

#[test]
fn input_independent_model_scores_alike_for_any_crop_count() {
    let model = blind_model();
    let scorer = ModelScorer::new(&model).unwrap();
    let one = score_image(&scorer, &noisy(64, 1), None).unwrap();
    let sixteen = score_image(&scorer, &noisy(256, 2), None).unwrap();
    assert!((one - sixteen).abs() < 1e-12, "{one} vs {sixteen}");
    assert_eq!(PatchPlan::new(256, 256, 64, 64).unwrap().len(), 16);
}

#[test]
fn crop_sized_image_is_one_crop() {
    let plan = PatchPlan::new(64, 64, 64, 64).unwrap();
    assert_eq!(plan.crops, vec![(0, 0)]);
    let model = Model::new(
        ToyEncoder::init(EncoderConfig::default(), 9).unwrap(),
        PromptBank::init(PromptLevels::Five, 32, 9),
        Anchor::Highest,
    )
    .unwrap();
    let scorer = ModelScorer::new(&model).unwrap();
    let img = noisy(64, 3);
    assert_eq!(score_image(&scorer, &img, None).unwrap(), scorer.score_crop(&img).unwrap());
}

#[test]
fn plan_covers_every_pixel() {
    for (w, h, stride) in [(100, 70, 64), (64, 200, 32), (129, 129, 64), (65, 64, 1)] {
        let plan = PatchPlan::new(w, h, 64, stride).unwrap();
        let mut covered = vec![false; w * h];
        for &(x, y) in &plan.crops {
            for yy in y..y + 64 {
                for xx in x..x + 64 {
                    covered[yy * w + xx] = true;
                }
            }
        }
        assert!(covered.iter().all(|c| *c), "{w}x{h} stride {stride}");
    }
    assert!(PatchPlan::new(100, 100, 64, 65).is_err());
    assert!(PatchPlan::new(32, 100, 64, 64).is_err());
}

#[test]
fn small_images_are_upscaled_before_tiling() {
    let model = blind_model();
    let scorer = ModelScorer::new(&model).unwrap();
    let s = score_image(&scorer, &noisy(20, 4), None).unwrap();
    assert!(s > 0.0 && s < 1.0);
}
