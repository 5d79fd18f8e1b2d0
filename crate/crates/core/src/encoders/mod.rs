//! Image and text encoders mapping into a shared embedding space.
//!
//! The toy encoder pair is a pair of small pre-norm transformers: the image
//! side prepends a class token to the patch embeddings and projects the final
//! class token; the text side projects the final (end-sentinel) token.

mod checkpoint;
mod params;
mod prompt;
mod tokenizer;
mod toy;

pub use checkpoint::{Container, Entry, FloatWidth, FORMAT_VERSION};
pub use params::{EncoderParameters, Layout, ParamGroup};
pub use prompt::{PromptBank, PromptLevels, CONTEXT_LEN};
pub use tokenizer::{tokenize, Tokenized, BOS, EOS, VOCAB_BUCKETS, VOCAB_SIZE};
pub use toy::{backbone_adapter, image_graph, text_graph, ToyEncoder};
pub(crate) use toy::{graph_params, tokenize_for};

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EncoderConfig {
    /// Transformer blocks per encoder.
    pub depth: usize,
    /// Image patches per input; must be a perfect square.
    pub patch_count: usize,
    pub patch_dim: usize,
    pub token_dim: usize,
    /// Maximum text sequence length including sentinels and context tokens.
    pub max_text_len: usize,
    pub shared_dim: usize,
    /// Edge of the square encoder input, in pixels.
    pub input_side: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            depth: 2,
            patch_count: 16,
            patch_dim: 32,
            token_dim: 32,
            max_text_len: 32,
            shared_dim: 64,
            input_side: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("depth", self.depth),
            ("patch_count", self.patch_count),
            ("patch_dim", self.patch_dim),
            ("token_dim", self.token_dim),
            ("max_text_len", self.max_text_len),
            ("shared_dim", self.shared_dim),
            ("input_side", self.input_side),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Invalid(format!("encoder {name} must be >= 1")));
        }
        let grid = self.grid();
        if grid * grid != self.patch_count {
            return Err(Error::Invalid(format!(
                "patch_count {} is not a perfect square",
                self.patch_count
            )));
        }
        if self.input_side % grid != 0 {
            return Err(Error::Invalid(format!(
                "input_side {} not divisible by patch grid {grid}",
                self.input_side
            )));
        }
        if self.max_text_len < 2 {
            return Err(Error::Invalid("max_text_len must fit both sentinels".into()));
        }
        Ok(())
    }

    /// Patches per side.
    pub fn grid(&self) -> usize {
        (self.patch_count as f64).sqrt().round() as usize
    }

    /// Flattened RGB values per patch.
    pub fn patch_pixels(&self) -> usize {
        let p = self.input_side / self.grid();
        p * p * 3
    }

    pub fn hidden_dim(dim: usize) -> usize {
        4 * dim
    }
}

/// A vector in the shared image/text space.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub vec: Vec<f64>,
}

impl Embedding {
    pub fn new(vec: Vec<f64>) -> Self {
        Embedding { vec }
    }

    pub fn dim(&self) -> usize {
        self.vec.len()
    }

    pub(crate) fn from_tensor(t: &Tensor) -> Result<Self> {
        if !t.is_finite() {
            return Err(Error::NonFinite("embedding"));
        }
        Ok(Embedding {
            vec: t.data().to_vec(),
        })
    }
}

/// Anything that can embed images and texts into the same space.
pub trait DualEncoder {
    fn config(&self) -> &EncoderConfig;

    /// `image` must already be `input_side × input_side`.
    fn encode_image(&self, image: &Image) -> Result<Embedding>;

    fn encode_text(&self, text: &str, bank: Option<&PromptBank>) -> Result<Embedding>;
}
