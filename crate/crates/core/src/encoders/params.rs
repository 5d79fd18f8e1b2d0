use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tokenizer::VOCAB_SIZE;
use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Image,
    Text,
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Uniform(f64),
    Ones,
    Zeros,
}

#[derive(Clone, Debug)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub group: ParamGroup,
    init: Init,
}

#[derive(Clone, Debug)]
pub(crate) struct BlockLayout {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub ff1_w: usize,
    pub ff1_b: usize,
    pub ff2_w: usize,
    pub ff2_b: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct TowerLayout {
    pub blocks: Vec<BlockLayout>,
    pub ln_g: usize,
    pub ln_b: usize,
    pub proj: usize,
}

/// Names, shapes and positions of every encoder tensor for one config.
#[derive(Clone, Debug)]
pub struct Layout {
    pub(crate) specs: Vec<ParamSpec>,
    pub(crate) patch_w: usize,
    pub(crate) patch_b: usize,
    pub(crate) class_token: usize,
    pub(crate) image_pos: usize,
    pub(crate) image: TowerLayout,
    pub(crate) token_embed: usize,
    pub(crate) text_pos: usize,
    pub(crate) text: TowerLayout,
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, group: ParamGroup, init: Init) -> usize {
        self.specs.push(ParamSpec {
            name,
            rows,
            cols,
            group,
            init,
        });
        self.specs.len() - 1
    }

    fn weight(&mut self, name: String, rows: usize, cols: usize, group: ParamGroup) -> usize {
        self.add(name, rows, cols, group, Init::Uniform(1.0 / (rows as f64).sqrt()))
    }

    fn tower(&mut self, prefix: &str, cfg: &EncoderConfig, dim: usize, group: ParamGroup) -> TowerLayout {
        let hidden = EncoderConfig::hidden_dim(dim);
        let blocks = (0..cfg.depth)
            .map(|i| {
                let p = format!("{prefix}.block{i}");
                BlockLayout {
                    ln1_g: self.add(format!("{p}.ln1.g"), 1, dim, group, Init::Ones),
                    ln1_b: self.add(format!("{p}.ln1.b"), 1, dim, group, Init::Zeros),
                    wq: self.weight(format!("{p}.attn.wq"), dim, dim, group),
                    wk: self.weight(format!("{p}.attn.wk"), dim, dim, group),
                    wv: self.weight(format!("{p}.attn.wv"), dim, dim, group),
                    wo: self.weight(format!("{p}.attn.wo"), dim, dim, group),
                    ln2_g: self.add(format!("{p}.ln2.g"), 1, dim, group, Init::Ones),
                    ln2_b: self.add(format!("{p}.ln2.b"), 1, dim, group, Init::Zeros),
                    ff1_w: self.weight(format!("{p}.ff1.w"), dim, hidden, group),
                    ff1_b: self.add(format!("{p}.ff1.b"), 1, hidden, group, Init::Zeros),
                    ff2_w: self.weight(format!("{p}.ff2.w"), hidden, dim, group),
                    ff2_b: self.add(format!("{p}.ff2.b"), 1, dim, group, Init::Zeros),
                }
            })
            .collect();
        TowerLayout {
            blocks,
            ln_g: self.add(format!("{prefix}.ln_out.g"), 1, dim, group, Init::Ones),
            ln_b: self.add(format!("{prefix}.ln_out.b"), 1, dim, group, Init::Zeros),
            proj: self.weight(format!("{prefix}.proj"), dim, cfg.shared_dim, group),
        }
    }
}

impl Layout {
    pub fn new(cfg: &EncoderConfig) -> Layout {
        use ParamGroup::{Image, Text};
        let mut b = Builder { specs: Vec::new() };
        let dv = cfg.patch_dim;
        let dl = cfg.token_dim;
        let token_scale = Init::Uniform(1.0 / (dv as f64).sqrt());
        let patch_w = b.weight("img.patch.w".into(), cfg.patch_pixels(), dv, Image);
        let patch_b = b.add("img.patch.b".into(), 1, dv, Image, Init::Zeros);
        let class_token = b.add("img.class_token".into(), 1, dv, Image, token_scale);
        let image_pos = b.add("img.pos".into(), cfg.patch_count + 1, dv, Image, token_scale);
        let image = b.tower("img", cfg, dv, Image);
        let text_scale = Init::Uniform(1.0 / (dl as f64).sqrt());
        let token_embed = b.add("txt.token_embed".into(), VOCAB_SIZE, dl, Text, text_scale);
        let text_pos = b.add("txt.pos".into(), cfg.max_text_len, dl, Text, text_scale);
        let text = b.tower("txt", cfg, dl, Text);
        Layout {
            specs: b.specs,
            patch_w,
            patch_b,
            class_token,
            image_pos,
            image,
            token_embed,
            text_pos,
            text,
        }
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.specs[index].name
    }

    pub fn shape(&self, index: usize) -> (usize, usize) {
        (self.specs[index].rows, self.specs[index].cols)
    }

    pub fn group(&self, index: usize) -> ParamGroup {
        self.specs[index].group
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }
}

/// All trainable encoder tensors for one [`EncoderConfig`].
#[derive(Clone, Debug)]
pub struct EncoderParameters {
    config: EncoderConfig,
    layout: Layout,
    tensors: Vec<Tensor>,
}

impl PartialEq for EncoderParameters {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.tensors == other.tensors
    }
}

impl EncoderParameters {
    /// Deterministic in `seed`. Weight matrices are uniform in
    /// `±1/sqrt(fan_in)`; token, class and position tables in `±1/sqrt(dim)`;
    /// layer-norm gains start at one and biases at zero.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout
            .specs
            .iter()
            .map(|s| match s.init {
                Init::Uniform(a) => Tensor::from_vec(
                    s.rows,
                    s.cols,
                    (0..s.rows * s.cols).map(|_| rng.gen_range(-a..a)).collect(),
                )
                .expect("spec shape"),
                Init::Ones => Tensor::filled(s.rows, s.cols, 1.0),
                Init::Zeros => Tensor::zeros(s.rows, s.cols),
            })
            .collect();
        Ok(EncoderParameters {
            config,
            layout,
            tensors,
        })
    }

    /// Assembles parameters from tensors in layout order, checking every shape.
    pub fn from_tensors(config: EncoderConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if tensors.len() != layout.len() {
            return Err(Error::shape("encoder parameters", layout.len(), tensors.len()));
        }
        for (i, t) in tensors.iter().enumerate() {
            if t.shape() != layout.shape(i) {
                return Err(Error::shape(
                    "encoder parameter",
                    format!("{} {:?}", layout.name(i), layout.shape(i)),
                    format!("{:?}", t.shape()),
                ));
            }
        }
        Ok(EncoderParameters {
            config,
            layout,
            tensors,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_in_seed() {
        let cfg = EncoderConfig::default();
        let a = EncoderParameters::init(cfg, 5).unwrap();
        let b = EncoderParameters::init(cfg, 5).unwrap();
        let c = EncoderParameters::init(cfg, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.tensors().iter().any(|t| t.data().iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn init_entries_are_bounded() {
        let cfg = EncoderConfig::default();
        let p = EncoderParameters::init(cfg, 1).unwrap();
        let w = &p.tensors()[p.layout().patch_w];
        let bound = 1.0 / (cfg.patch_pixels() as f64).sqrt();
        assert!(w.data().iter().all(|v| v.abs() < bound));
        let mean = w.data().iter().sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < bound / 20.0);
    }

    #[test]
    fn names_are_unique() {
        let layout = Layout::new(&EncoderConfig::default());
        let mut names: Vec<&str> = (0..layout.len()).map(|i| layout.name(i)).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), layout.len());
    }

    #[test]
    fn from_tensors_rejects_bad_shape() {
        let cfg = EncoderConfig::default();
        let mut t = EncoderParameters::init(cfg, 1).unwrap().tensors().to_vec();
        t[0] = Tensor::zeros(1, 1);
        assert!(matches!(
            EncoderParameters::from_tensors(cfg, t),
            Err(Error::Shape { .. })
        ));
    }
}
