//! Procedural fixture datasets: random rectangles and texture patches, scored
//! by edge density, with templated scene descriptions.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datamodel::Manifest;
use crate::error::{Error, Result};
use crate::imaging::Image;

/// Luminance step above which a pixel counts as an edge.
pub const EDGE_THRESHOLD: f32 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub name: String,
    pub count: usize,
    pub side: usize,
    pub max_rects: usize,
    pub rect_size: (usize, usize),
    pub max_textures: usize,
    pub texture_size: (usize, usize),
    /// Stripe or checker period range in pixels.
    pub texture_period: (usize, usize),
    /// Probability that a texture patch is periodic; the rest are random
    /// blocks of palette colours.
    pub periodic_share: f64,
    /// Number of grey levels in the palette, spread over `luma_range`.
    pub palette_levels: usize,
    pub luma_range: (f32, f32),
    /// Uniform per-pixel noise amplitude.
    pub noise: f32,
}

impl SynthParams {
    /// Default fixture: a few flat rectangles and many fine random-block
    /// texture patches, so edge density tracks how much texture is present.
    pub fn variant_a(count: usize) -> Self {
        SynthParams {
            name: "synthetic-a".into(),
            count,
            side: 64,
            max_rects: 4,
            rect_size: (6, 28),
            max_textures: 8,
            texture_size: (8, 24),
            texture_period: (2, 4),
            periodic_share: 0.0,
            palette_levels: 7,
            luma_range: (0.1, 0.9),
            noise: 0.0,
        }
    }

    /// Shifted distribution: larger shapes, mostly striped textures, lower
    /// contrast and pixel noise.
    pub fn variant_b(count: usize) -> Self {
        SynthParams {
            name: "synthetic-b".into(),
            count,
            side: 64,
            max_rects: 5,
            rect_size: (14, 40),
            max_textures: 6,
            texture_size: (6, 16),
            texture_period: (2, 4),
            periodic_share: 0.8,
            palette_levels: 5,
            luma_range: (0.25, 0.75),
            noise: 0.04,
        }
    }
}

const NUMBER_WORDS: [&str; 13] = [
    "no", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
    "twelve",
];

fn count_phrase(n: usize, singular: &str, plural: &str) -> String {
    let word = NUMBER_WORDS.get(n).copied().unwrap_or("many");
    format!("{word} {}", if n == 1 { singular } else { plural })
}

fn region(x: f32, y: f32) -> &'static str {
    let h = if x < 1.0 / 3.0 {
        0
    } else if x < 2.0 / 3.0 {
        1
    } else {
        2
    };
    let v = if y < 1.0 / 3.0 {
        0
    } else if y < 2.0 / 3.0 {
        1
    } else {
        2
    };
    [
        ["upper left", "top", "upper right"],
        ["left", "center", "right"],
        ["lower left", "bottom", "lower right"],
    ][v][h]
}

fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// A slightly tinted grey from the palette, different from `avoid`.
fn palette_colour(rng: &mut ChaCha8Rng, p: &SynthParams, avoid: Option<usize>) -> (usize, [f32; 3]) {
    let n = p.palette_levels.max(2);
    let level = loop {
        let l = rng.gen_range(0..n);
        if Some(l) != avoid {
            break l;
        }
    };
    let (lo, hi) = p.luma_range;
    let luma = lo + (hi - lo) * level as f32 / (n - 1) as f32;
    let tint: f32 = rng.gen_range(-0.03..=0.03);
    (level, [luma + tint, luma - tint * 0.5, luma - tint * 0.5])
}

fn luminance(p: [f32; 3]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

/// Fraction of pixels whose forward-difference luminance gradient exceeds
/// [`EDGE_THRESHOLD`].
pub fn edge_density(img: &Image) -> f64 {
    let (w, h) = (img.width(), img.height());
    if w < 2 || h < 2 {
        return 0.0;
    }
    let mut edges = 0usize;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let l = luminance(img.get(x, y));
            let gx = luminance(img.get(x + 1, y)) - l;
            let gy = luminance(img.get(x, y + 1)) - l;
            if (gx * gx + gy * gy).sqrt() > EDGE_THRESHOLD {
                edges += 1;
            }
        }
    }
    edges as f64 / ((w - 1) * (h - 1)) as f64
}

/// One generated image with its description.
pub struct SynthItem {
    pub image: Image,
    pub description: String,
}

pub fn generate_item(p: &SynthParams, rng: &mut ChaCha8Rng) -> SynthItem {
    let side = p.side;
    let (bg_level, bg) = palette_colour(rng, p, None);
    let mut img = Image::filled(side, side, bg);
    let n_rects = rng.gen_range(0..=p.max_rects);
    let n_tex = rng.gen_range(0..=p.max_textures);
    let mut rect_regions = Vec::new();
    let mut tex_regions = Vec::new();

    let place = |rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)| {
        let w = rng.gen_range(lo..=hi.min(side));
        let h = rng.gen_range(lo..=hi.min(side));
        let x = rng.gen_range(0..=side - w);
        let y = rng.gen_range(0..=side - h);
        (x, y, w, h)
    };
    for _ in 0..n_rects {
        let (x, y, w, h) = place(rng, p.rect_size);
        let (_, c) = palette_colour(rng, p, Some(bg_level));
        for yy in y..y + h {
            for xx in x..x + w {
                img.set(xx, yy, c);
            }
        }
        rect_regions.push(region((x + w / 2) as f32 / side as f32, (y + h / 2) as f32 / side as f32));
    }
    for _ in 0..n_tex {
        let (x, y, w, h) = place(rng, p.texture_size);
        let (la, a) = palette_colour(rng, p, None);
        let (_, b) = palette_colour(rng, p, Some(la));
        let period = rng.gen_range(p.texture_period.0..=p.texture_period.1).max(2);
        let cell = (period / 2).max(1);
        let kind = if rng.gen_bool(p.periodic_share) { rng.gen_range(0..3) } else { 3 };
        for yy in y..y + h {
            for xx in x..x + w {
                let colour = match kind {
                    0 | 1 | 2 => {
                        let on = match kind {
                            0 => (xx / cell) % 2 == 0,
                            1 => (yy / cell) % 2 == 0,
                            _ => ((xx + yy) / cell) % 2 == 0,
                        };
                        if on {
                            a
                        } else {
                            b
                        }
                    }
                    _ if (xx - x) % cell == 0 && (yy - y) % cell == 0 => palette_colour(rng, p, None).1,
                    // Inside a block: copy its top-left pixel.
                    _ => img.get(x + (xx - x) / cell * cell, y + (yy - y) / cell * cell),
                };
                img.set(xx, yy, colour);
            }
        }
        tex_regions.push(region((x + w / 2) as f32 / side as f32, (y + h / 2) as f32 / side as f32));
    }
    for yy in 0..side {
        for xx in 0..side {
            let mut px = img.get(xx, yy);
            for c in &mut px {
                let n = if p.noise > 0.0 {
                    rng.gen_range(-p.noise..=p.noise)
                } else {
                    0.0
                };
                *c = quantize(*c + n);
            }
            img.set(xx, yy, px);
        }
    }

    let mut d = String::from("a flat background with ");
    d.push_str(&count_phrase(n_rects, "rectangle", "rectangles"));
    if let Some(r) = rect_regions.first() {
        let _ = write!(d, " mostly near the {r}");
    }
    d.push_str(" and ");
    d.push_str(&count_phrase(n_tex, "textured patch", "textured patches"));
    if let Some(r) = tex_regions.first() {
        let _ = write!(d, " around the {r}");
    }
    SynthItem {
        image: img,
        description: d,
    }
}

/// Files written by [`generate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthPaths {
    pub manifest: PathBuf,
    pub sidecar: PathBuf,
}

/// Writes `images/`, `manifest.tsv` (edge density in percent, with the
/// observed min and max as the declared range) and `scenes.tsv` under `dir`.
pub fn generate(dir: &Path, p: &SynthParams, seed: u64) -> Result<SynthPaths> {
    if p.count == 0 || p.side < 2 {
        return Err(Error::Invalid("synthetic set needs count >= 1 and side >= 2".into()));
    }
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(p.count);
    let mut sidecar = format!("# caption_source = template\n# generator = {}\n", p.name);
    for i in 0..p.count {
        let item = generate_item(p, &mut rng);
        let id = format!("{}_{i:04}", p.name.replace('-', "_"));
        let rel = PathBuf::from("images").join(format!("{id}.png"));
        item.image.save_png(&dir.join(&rel))?;
        let raw = (edge_density(&item.image) * 100.0 * 1e6).round() / 1e6;
        let _ = writeln!(sidecar, "{id}\t{}", item.description);
        rows.push((id, rel, raw, None));
    }
    // The declared range is the observed one, so MOS spans [0, 1].
    let lo = rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    let hi = if hi > lo { hi } else { lo + 1.0 };
    let manifest = Manifest::from_rows(p.name.clone(), dir, lo, hi, rows)?;
    let paths = SynthPaths {
        manifest: dir.join("manifest.tsv"),
        sidecar: dir.join("scenes.tsv"),
    };
    manifest.save(&paths.manifest)?;
    std::fs::write(&paths.sidecar, sidecar).map_err(|e| Error::io(&paths.sidecar, e))?;
    Ok(paths)
}
