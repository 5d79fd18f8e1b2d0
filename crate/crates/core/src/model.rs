//! A trained model: encoder pair, prompt bank and anchor, saved as one
//! checkpoint container.

use std::path::Path;

use crate::alignment::{complexity_scores, Anchor};
use crate::encoders::{
    Container, DualEncoder, Embedding, EncoderParameters, Entry, FloatWidth, PromptBank, ToyEncoder,
};
use crate::error::{Error, Result};
use crate::imaging::Image;

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub encoder: ToyEncoder,
    pub bank: PromptBank,
    pub anchor: Anchor,
}

impl Model {
    pub fn new(encoder: ToyEncoder, bank: PromptBank, anchor: Anchor) -> Result<Self> {
        if bank.token_dim() != encoder.config().token_dim {
            return Err(Error::shape(
                "prompt context width",
                encoder.config().token_dim,
                bank.token_dim(),
            ));
        }
        anchor.resolve(bank.level_prompts.len())?;
        Ok(Model {
            encoder,
            bank,
            anchor,
        })
    }

    /// Embeddings of every level prompt, with the learned context.
    pub fn level_embeddings(&self) -> Result<Vec<Embedding>> {
        self.bank
            .level_prompts
            .iter()
            .map(|p| self.encoder.encode_text(p, Some(&self.bank)))
            .collect()
    }

    /// Complexity score of one encoder-sized crop, given precomputed level
    /// embeddings.
    pub fn score_crop_with(&self, crop: &Image, levels: &[Embedding]) -> Result<f64> {
        let img = self.encoder.encode_image(crop)?;
        Ok(complexity_scores(&[img], levels, self.anchor)?.predictions[0])
    }

    pub fn write_into(&self, c: &mut Container) {
        self.encoder.params().write_into(c);
        write_bank(&self.bank, c);
        c.push("model.anchor", Entry::Text(self.anchor.to_string()));
    }

    pub fn read_from(c: &Container) -> Result<Self> {
        let params = EncoderParameters::read_from(c)?;
        let bank = read_bank(c)?;
        let anchor = c.text("model.anchor")?.parse()?;
        Model::new(ToyEncoder::new(params), bank, anchor)
    }

    pub fn save(&self, path: &Path, width: FloatWidth) -> Result<()> {
        let mut c = Container::new(*self.encoder.config(), width);
        self.write_into(&mut c);
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Model::read_from(&Container::load(path)?)
    }
}

pub(crate) fn write_bank(bank: &PromptBank, c: &mut Container) {
    c.push("bank.context", Entry::Array(bank.context.clone()));
    c.push("bank.levels", Entry::Text(bank.level_prompts.join("\n")));
}

pub(crate) fn read_bank(c: &Container) -> Result<PromptBank> {
    let context = c.array("bank.context")?.clone();
    let levels = c.text("bank.levels")?.lines().map(str::to_string).collect();
    PromptBank::from_parts(context, levels)
}
