use std::path::Path;

use super::params::{BlockLayout, TowerLayout};
use super::tokenizer::{tokenize, Tokenized, BOS, EOS};
use super::{
    Container, DualEncoder, Embedding, EncoderConfig, EncoderParameters, Layout, PromptBank,
    CONTEXT_LEN,
};
use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::tensor::Tensor;

fn block(g: &mut Graph, b: &BlockLayout, x: NodeId, dim: usize) -> NodeId {
    let (ln1_g, ln1_b) = (g.param(b.ln1_g), g.param(b.ln1_b));
    let h = g.layer_norm(x, ln1_g, ln1_b);
    let (wq, wk, wv, wo) = (g.param(b.wq), g.param(b.wk), g.param(b.wv), g.param(b.wo));
    let q = g.matmul(h, wq);
    let k = g.matmul(h, wk);
    let v = g.matmul(h, wv);
    let kt = g.transpose(k);
    let scores = g.matmul(q, kt);
    let scores = g.scale(scores, 1.0 / (dim as f64).sqrt());
    let attn = g.softmax_rows(scores);
    let mixed = g.matmul(attn, v);
    let out = g.matmul(mixed, wo);
    let x = g.add(x, out);

    let (ln2_g, ln2_b) = (g.param(b.ln2_g), g.param(b.ln2_b));
    let h = g.layer_norm(x, ln2_g, ln2_b);
    let (w1, b1, w2, b2) = (g.param(b.ff1_w), g.param(b.ff1_b), g.param(b.ff2_w), g.param(b.ff2_b));
    let f = g.matmul(h, w1);
    let f = g.add_row(f, b1);
    let f = g.gelu(f);
    let f = g.matmul(f, w2);
    let f = g.add_row(f, b2);
    g.add(x, f)
}

fn tower(g: &mut Graph, t: &TowerLayout, mut x: NodeId, dim: usize, pooled_row: usize) -> NodeId {
    for b in &t.blocks {
        x = block(g, b, x, dim);
    }
    let pooled = g.gather(x, &[pooled_row]);
    let (ln_g, ln_b) = (g.param(t.ln_g), g.param(t.ln_b));
    let pooled = g.layer_norm(pooled, ln_g, ln_b);
    let proj = g.param(t.proj);
    g.matmul(pooled, proj)
}

/// Image encoder on the tape. `patches` is the `M × patch_pixels` input;
/// the class token is prepended, and the projected final class token
/// (`1 × D`) is returned.
pub fn image_graph(g: &mut Graph, layout: &Layout, cfg: &EncoderConfig, patches: NodeId) -> NodeId {
    let (w, b) = (g.param(layout.patch_w), g.param(layout.patch_b));
    let e = g.matmul(patches, w);
    let e = g.add_row(e, b);
    let cls = g.param(layout.class_token);
    let seq = g.concat_rows(&[cls, e]);
    let pos = g.param(layout.image_pos);
    let seq = g.add(seq, pos);
    tower(g, &layout.image, seq, cfg.patch_dim, 0)
}

/// Text encoder on the tape. With `context`, the learnable tokens sit
/// between the begin sentinel and the words.
pub fn text_graph(
    g: &mut Graph,
    layout: &Layout,
    cfg: &EncoderConfig,
    tokens: &Tokenized,
    context: Option<NodeId>,
) -> NodeId {
    let table = g.param(layout.token_embed);
    let mut ids = tokens.words.clone();
    ids.push(EOS);
    let seq = match context {
        Some(ctx) => {
            let bos = g.gather(table, &[BOS]);
            let words = g.gather(table, &ids);
            g.concat_rows(&[bos, ctx, words])
        }
        None => {
            ids.insert(0, BOS);
            g.gather(table, &ids)
        }
    };
    let len = g.value(seq).rows();
    let pos_table = g.param(layout.text_pos);
    let positions: Vec<usize> = (0..len).collect();
    let pos = g.gather(pos_table, &positions);
    let seq = g.add(seq, pos);
    tower(g, &layout.text, seq, cfg.token_dim, len - 1)
}

/// Word budget for one text once sentinels and context are accounted for.
pub(crate) fn word_budget(cfg: &EncoderConfig, with_context: bool) -> Result<usize> {
    let reserved = 2 + if with_context { CONTEXT_LEN } else { 0 };
    cfg.max_text_len.checked_sub(reserved).ok_or_else(|| {
        Error::Invalid(format!(
            "max_text_len {} cannot hold {reserved} reserved tokens",
            cfg.max_text_len
        ))
    })
}

/// Tokenizes with the encoder's budget, warning on truncation.
pub(crate) fn tokenize_for(cfg: &EncoderConfig, text: &str, with_context: bool) -> Result<Tokenized> {
    let t = tokenize(text, word_budget(cfg, with_context)?);
    if t.truncated {
        log::warn!(
            "text truncated to {} tokens: {:?}",
            cfg.max_text_len,
            text.chars().take(60).collect::<String>()
        );
    }
    Ok(t)
}

/// Parameter list for a graph: encoder tensors in layout order, then the
/// prompt context when present (at index `params.len()`).
pub(crate) fn graph_params<'a>(
    params: &'a EncoderParameters,
    bank: Option<&'a PromptBank>,
) -> Vec<&'a Tensor> {
    let mut out: Vec<&Tensor> = params.tensors().iter().collect();
    if let Some(b) = bank {
        out.push(&b.context);
    }
    out
}

pub(crate) fn check_image(cfg: &EncoderConfig, image: &Image) -> Result<()> {
    if image.width() != cfg.input_side || image.height() != cfg.input_side {
        return Err(Error::shape(
            "encode_image",
            format!("{0}x{0}", cfg.input_side),
            format!("{}x{}", image.width(), image.height()),
        ));
    }
    Ok(())
}

pub(crate) fn check_bank(cfg: &EncoderConfig, bank: &PromptBank) -> Result<()> {
    if bank.token_dim() != cfg.token_dim {
        return Err(Error::shape("prompt context width", cfg.token_dim, bank.token_dim()));
    }
    Ok(())
}

/// The desk-scale encoder pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyEncoder {
    params: EncoderParameters,
}

impl ToyEncoder {
    pub fn new(params: EncoderParameters) -> Self {
        ToyEncoder { params }
    }

    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        Ok(ToyEncoder::new(EncoderParameters::init(config, seed)?))
    }

    pub fn params(&self) -> &EncoderParameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut EncoderParameters {
        &mut self.params
    }

    pub fn into_params(self) -> EncoderParameters {
        self.params
    }

    pub fn to_container(&self, width: super::FloatWidth) -> Container {
        let mut c = Container::new(*self.params.config(), width);
        self.params.write_into(&mut c);
        c
    }

    pub fn export(&self, path: &Path, width: super::FloatWidth) -> Result<()> {
        self.to_container(width).save(path)
    }
}

impl DualEncoder for ToyEncoder {
    fn config(&self) -> &EncoderConfig {
        self.params.config()
    }

    fn encode_image(&self, image: &Image) -> Result<Embedding> {
        let cfg = self.params.config();
        check_image(cfg, image)?;
        let patches = image.patches(cfg.grid())?;
        let mut g = Graph::new(graph_params(&self.params, None));
        let input = g.input(patches);
        let out = image_graph(&mut g, self.params.layout(), cfg, input);
        Embedding::from_tensor(g.value(out))
    }

    fn encode_text(&self, text: &str, bank: Option<&PromptBank>) -> Result<Embedding> {
        let cfg = self.params.config();
        if let Some(b) = bank {
            check_bank(cfg, b)?;
        }
        let tokens = tokenize_for(cfg, text, bank.is_some())?;
        let mut g = Graph::new(graph_params(&self.params, bank));
        let ctx = bank.map(|_| g.param(self.params.len()));
        let out = text_graph(&mut g, self.params.layout(), cfg, &tokens, ctx);
        Embedding::from_tensor(g.value(out))
    }
}

/// Loads an exported encoder checkpoint as a ready encoder pair.
pub fn backbone_adapter(path: &Path) -> Result<ToyEncoder> {
    let c = Container::load(path)?;
    Ok(ToyEncoder::new(EncoderParameters::read_from(&c)?))
}

impl EncoderParameters {
    pub fn write_into(&self, c: &mut Container) {
        for (i, t) in self.tensors().iter().enumerate() {
            c.push(self.layout().name(i), super::Entry::Array(t.clone()));
        }
    }

    pub fn read_from(c: &Container) -> Result<Self> {
        let config = c.config;
        config.validate()?;
        let img = c.array("img.proj")?;
        let txt = c.array("txt.proj")?;
        if img.cols() != txt.cols() {
            return Err(Error::Invalid(format!(
                "dimension mismatch: image head D={} but text head D={}",
                img.cols(),
                txt.cols()
            )));
        }
        if img.cols() != config.shared_dim {
            return Err(Error::shape("projection width", config.shared_dim, img.cols()));
        }
        let layout = Layout::new(&config);
        let tensors = (0..layout.len())
            .map(|i| c.array(layout.name(i)).cloned())
            .collect::<Result<Vec<_>>>()?;
        EncoderParameters::from_tensors(config, tensors)
    }
}
