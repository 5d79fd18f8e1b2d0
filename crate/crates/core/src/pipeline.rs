//! Training loop wiring both branches into one weighted objective.
//!
//! Each step encodes the batch images once. The complexity branch compares
//! them with the level prompts (with learned context) against the MOS; the
//! alignment branch compares each image with its scene description against
//! an all-ones target. The step loss is `alpha * L_A + beta * L_C`.

use std::fmt::{self, Write as _};
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::alignment::{tape, Anchor, LossWeights};
use crate::autograd::{Gradients, Graph, NodeId};
use crate::datamodel::{Manifest, Split};
use crate::encoders::{graph_params, tokenize_for};
use crate::encoders::{
    image_graph, text_graph, Container, EncoderConfig, EncoderParameters, Entry, FloatWidth,
    PromptBank, PromptLevels, ToyEncoder,
};
use crate::error::{Error, Result};
use crate::imaging::load_image;
use crate::model::{read_bank, write_bank, Model};
use crate::optim::Adam;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum TrainableScope {
    /// Encoder parameters and the prompt context.
    #[default]
    All,
    PromptsOnly,
}

impl fmt::Display for TrainableScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainableScope::All => "all",
            TrainableScope::PromptsOnly => "prompts_only",
        })
    }
}

impl FromStr for TrainableScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => Ok(TrainableScope::All),
            "prompts_only" => Ok(TrainableScope::PromptsOnly),
            other => Err(Error::Invalid(format!("unknown trainable scope {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub weights: LossWeights,
    pub branch_c_enabled: bool,
    pub branch_a_enabled: bool,
    pub anchor: Anchor,
    pub prompt_levels: PromptLevels,
    pub seed: u64,
    pub trainable_scope: TrainableScope,
}

impl Default for TrainConfig {
    /// Full-scale profile: batch 64, lr 1e-4, 50 epochs, both branches.
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 1e-4,
            epochs: 50,
            weights: LossWeights::default(),
            branch_c_enabled: true,
            branch_a_enabled: true,
            anchor: Anchor::Highest,
            prompt_levels: PromptLevels::Five,
            seed: 0,
            trainable_scope: TrainableScope::All,
        }
    }
}

impl TrainConfig {
    /// Desk-scale profile for the synthetic fixture: batch 16, 20 epochs.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 20,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.branch_c_enabled && !self.branch_a_enabled {
            return Err(Error::Invalid("at least one branch must be enabled".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Invalid("batch_size and epochs must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Invalid(format!("bad learning rate {}", self.learning_rate)));
        }
        LossWeights::new(self.weights.alpha, self.weights.beta)?;
        self.anchor.resolve(self.prompt_levels.count())?;
        Ok(())
    }

    /// `key = value` lines, one per field, in a fixed order.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "alpha = {}", self.weights.alpha);
        let _ = writeln!(s, "beta = {}", self.weights.beta);
        let _ = writeln!(s, "branch_c_enabled = {}", self.branch_c_enabled);
        let _ = writeln!(s, "branch_a_enabled = {}", self.branch_a_enabled);
        let _ = writeln!(s, "anchor = {}", self.anchor);
        let _ = writeln!(s, "prompt_levels = {}", self.prompt_levels);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "trainable_scope = {}", self.trainable_scope);
        s
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        hex::encode(&digest[..8])
    }
}

/// One training item with its image already cut into encoder patches.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image_id: String,
    pub patches: Tensor,
    pub mos: f64,
    pub scene_text: String,
}

/// Loads, fits and patchifies the listed records, in manifest order.
pub fn prepare_samples(manifest: &Manifest, ids: &[String], cfg: &EncoderConfig) -> Result<Vec<Sample>> {
    manifest
        .select(ids)
        .into_iter()
        .map(|r| {
            let img = load_image(&manifest.resolve(r))?.fit_square(cfg.input_side);
            Ok(Sample {
                image_id: r.image_id.clone(),
                patches: img.patches(cfg.grid())?,
                mos: r.mos,
                scene_text: r.scene_text.clone(),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub total: f64,
    pub align: f64,
    pub complexity: f64,
}

impl LogRow {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.epoch, self.step, self.total, self.align, self.complexity
        )
    }
}

/// Losses and predictions of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchEval {
    pub total: f64,
    /// Zero when the alignment branch is disabled.
    pub align: f64,
    /// Zero when the complexity branch is disabled.
    pub complexity: f64,
    pub q_complexity: Vec<f64>,
    pub q_align: Vec<f64>,
}

struct BatchGraph<'p> {
    graph: Graph<'p>,
    total: NodeId,
    align: Option<NodeId>,
    complexity: Option<NodeId>,
    q_complexity: Option<NodeId>,
    q_align: Option<NodeId>,
}

fn build_batch<'p>(
    config: &TrainConfig,
    params: &'p EncoderParameters,
    bank: &'p PromptBank,
    batch: &[&Sample],
) -> Result<BatchGraph<'p>> {
    let cfg = params.config();
    let layout = params.layout();
    let mut g = Graph::new(graph_params(params, Some(bank)));
    let images: Vec<NodeId> = batch
        .iter()
        .map(|s| {
            let input = g.input(s.patches.clone());
            image_graph(&mut g, layout, cfg, input)
        })
        .collect();

    let (mut complexity, mut q_complexity) = (None, None);
    if config.branch_c_enabled {
        let ctx = g.param(params.len());
        let levels = bank
            .level_prompts
            .iter()
            .map(|p| {
                let tokens = tokenize_for(cfg, p, true)?;
                Ok(text_graph(&mut g, layout, cfg, &tokens, Some(ctx)))
            })
            .collect::<Result<Vec<_>>>()?;
        let anchor = config.anchor.resolve(levels.len())?;
        let mos: Vec<f64> = batch.iter().map(|s| s.mos).collect();
        let (q, loss) = tape::complexity_branch(&mut g, &images, &levels, anchor, &mos)?;
        complexity = Some(loss);
        q_complexity = Some(q);
    }

    let (mut align, mut q_align) = (None, None);
    if config.branch_a_enabled {
        let scenes = batch
            .iter()
            .map(|s| {
                let tokens = tokenize_for(cfg, &s.scene_text, false)?;
                Ok(text_graph(&mut g, layout, cfg, &tokens, None))
            })
            .collect::<Result<Vec<_>>>()?;
        let (q, loss) = tape::scene_branch(&mut g, &images, &scenes, vec![1.0; batch.len()])?;
        align = Some(loss);
        q_align = Some(q);
    }

    let w = config.weights;
    let total = match (align, complexity) {
        (Some(a), Some(c)) => {
            let a = g.scale(a, w.alpha);
            let c = g.scale(c, w.beta);
            g.add(a, c)
        }
        (None, Some(c)) => g.scale(c, w.beta),
        (Some(a), None) => g.scale(a, w.alpha),
        (None, None) => unreachable!("validated: one branch enabled"),
    };
    Ok(BatchGraph {
        graph: g,
        total,
        align,
        complexity,
        q_complexity,
        q_align,
    })
}

impl BatchGraph<'_> {
    fn eval(&self) -> BatchEval {
        let val = |n: Option<NodeId>| n.map_or(0.0, |n| self.graph.value(n).item());
        let vec = |n: Option<NodeId>| n.map_or_else(Vec::new, |n| self.graph.value(n).data().to_vec());
        BatchEval {
            total: self.graph.value(self.total).item(),
            align: val(self.align),
            complexity: val(self.complexity),
            q_complexity: vec(self.q_complexity),
            q_align: vec(self.q_align),
        }
    }
}

/// Forward pass only.
pub fn evaluate_batch(
    config: &TrainConfig,
    params: &EncoderParameters,
    bank: &PromptBank,
    batch: &[&Sample],
) -> Result<BatchEval> {
    Ok(build_batch(config, params, bank, batch)?.eval())
}

/// Forward and backward pass. Gradient indices follow the graph parameter
/// order: encoder tensors, then the prompt context at `params.len()`.
pub fn batch_gradients(
    config: &TrainConfig,
    params: &EncoderParameters,
    bank: &PromptBank,
    batch: &[&Sample],
) -> Result<(BatchEval, Gradients)> {
    let bg = build_batch(config, params, bank, batch)?;
    let grads = bg.graph.backward(bg.total);
    Ok((bg.eval(), grads))
}

/// Epoch permutation; depends only on the seed, the epoch and `n`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mix = seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix));
    order
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    /// Completed steps.
    pub step: usize,
    pub last: Option<LogRow>,
}

pub struct Trainer {
    config: TrainConfig,
    params: EncoderParameters,
    bank: PromptBank,
    optimizer: Adam,
    state: TrainState,
    log: Vec<LogRow>,
}

impl Trainer {
    pub fn new(config: TrainConfig, params: EncoderParameters, bank: PromptBank) -> Result<Self> {
        config.validate()?;
        if bank.levels() != config.prompt_levels {
            return Err(Error::Invalid(format!(
                "prompt bank has {} levels, config asks for {}",
                bank.levels(),
                config.prompt_levels
            )));
        }
        if bank.token_dim() != params.config().token_dim {
            return Err(Error::shape("prompt context width", params.config().token_dim, bank.token_dim()));
        }
        let shapes = params
            .tensors()
            .iter()
            .chain(std::iter::once(&bank.context))
            .map(Tensor::shape);
        let optimizer = Adam::new(config.learning_rate, shapes);
        Ok(Trainer {
            config,
            params,
            bank,
            optimizer,
            state: TrainState::default(),
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &EncoderParameters {
        &self.params
    }

    pub fn bank(&self) -> &PromptBank {
        &self.bank
    }

    pub fn state(&self) -> TrainState {
        self.state
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    pub fn is_done(&self) -> bool {
        self.state.epoch >= self.config.epochs
    }

    fn trainable_mask(&self) -> Vec<bool> {
        let n = self.params.len();
        (0..=n)
            .map(|i| match self.config.trainable_scope {
                TrainableScope::All => true,
                TrainableScope::PromptsOnly => i == n,
            })
            .collect()
    }

    /// Checks the data against the branch configuration.
    pub fn check_samples(&self, samples: &[Sample]) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::Invalid("no training samples".into()));
        }
        if self.config.branch_a_enabled {
            if let Some(s) = samples.iter().find(|s| s.scene_text.trim().is_empty()) {
                return Err(Error::Invalid(format!(
                    "alignment branch enabled but {} has no scene text",
                    s.image_id
                )));
            }
        }
        Ok(())
    }

    /// One optimizer step on `batch`.
    pub fn step(&mut self, batch: &[&Sample]) -> Result<LogRow> {
        let (eval, grads) = batch_gradients(&self.config, &self.params, &self.bank, batch)?;
        if !eval.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: self.state.epoch,
                step: self.state.step,
            });
        }
        let grads = grads.into_params();
        let mask = self.trainable_mask();
        let mut targets: Vec<&mut Tensor> = self.params.tensors_mut().iter_mut().collect();
        targets.push(&mut self.bank.context);
        self.optimizer.step(&mut targets, &grads, &mask);
        let row = LogRow {
            epoch: self.state.epoch,
            step: self.state.step,
            total: eval.total,
            align: eval.align,
            complexity: eval.complexity,
        };
        self.state.step += 1;
        self.state.last = Some(row);
        self.log.push(row);
        Ok(row)
    }

    pub fn train_epoch(&mut self, samples: &[Sample]) -> Result<Vec<LogRow>> {
        self.check_samples(samples)?;
        let order = epoch_order(self.config.seed, self.state.epoch, samples.len());
        let mut rows = Vec::new();
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            rows.push(self.step(&batch)?);
        }
        self.state.epoch += 1;
        Ok(rows)
    }

    /// Runs the remaining epochs.
    pub fn run(&mut self, samples: &[Sample]) -> Result<()> {
        self.check_samples(samples)?;
        while !self.is_done() {
            self.train_epoch(samples)?;
            if let Some(last) = self.state.last {
                log::info!(
                    "epoch {}/{}: L={:.5} L_A={:.5} L_C={:.5}",
                    self.state.epoch,
                    self.config.epochs,
                    last.total,
                    last.align,
                    last.complexity
                );
            }
        }
        Ok(())
    }

    pub fn into_model(self) -> Result<Model> {
        Model::new(ToyEncoder::new(self.params), self.bank, self.config.anchor)
    }

    pub fn model(&self) -> Result<Model> {
        Model::new(
            ToyEncoder::new(self.params.clone()),
            self.bank.clone(),
            self.config.anchor,
        )
    }

    /// Full-precision checkpoint including optimizer moments and counters.
    pub fn checkpoint(&self) -> Container {
        let mut c = Container::new(*self.params.config(), FloatWidth::F64);
        self.params.write_into(&mut c);
        write_bank(&self.bank, &mut c);
        c.push("model.anchor", Entry::Text(self.config.anchor.to_string()));
        c.push("train.config_hash", Entry::Text(self.config.hash()));
        c.push("train.epoch", Entry::Int(self.state.epoch as u64));
        c.push("train.step", Entry::Int(self.state.step as u64));
        c.push("train.adam_t", Entry::Int(self.optimizer.t));
        if let Some(last) = self.state.last {
            c.push("train.last_total", Entry::Real(last.total));
            c.push("train.last_align", Entry::Real(last.align));
            c.push("train.last_complexity", Entry::Real(last.complexity));
        }
        for (i, (m, v)) in self.optimizer.m.iter().zip(&self.optimizer.v).enumerate() {
            c.push(format!("adam.m.{i}"), Entry::Array(m.clone()));
            c.push(format!("adam.v.{i}"), Entry::Array(v.clone()));
        }
        c
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    /// Restores a trainer; `config` must hash to the value recorded at save time.
    pub fn from_checkpoint(c: &Container, config: TrainConfig) -> Result<Self> {
        let recorded = c.text("train.config_hash")?;
        if recorded != config.hash() {
            return Err(Error::ConfigMismatch {
                found: recorded.to_string(),
                expected: config.hash(),
            });
        }
        let params = EncoderParameters::read_from(c)?;
        let bank = read_bank(c)?;
        let mut t = Trainer::new(config, params, bank)?;
        for i in 0..t.optimizer.m.len() {
            let (m, v) = (c.array(&format!("adam.m.{i}"))?, c.array(&format!("adam.v.{i}"))?);
            if m.shape() != t.optimizer.m[i].shape() || v.shape() != t.optimizer.v[i].shape() {
                return Err(Error::shape("optimizer moment", format!("{:?}", t.optimizer.m[i].shape()), format!("{:?}", m.shape())));
            }
            t.optimizer.m[i] = m.clone();
            t.optimizer.v[i] = v.clone();
        }
        t.optimizer.t = c.int("train.adam_t")?;
        t.state.epoch = c.int("train.epoch")? as usize;
        t.state.step = c.int("train.step")? as usize;
        if let (Ok(total), Ok(align), Ok(complexity)) = (
            c.real("train.last_total"),
            c.real("train.last_align"),
            c.real("train.last_complexity"),
        ) {
            t.state.last = Some(LogRow {
                epoch: t.state.epoch.saturating_sub(1),
                step: t.state.step.saturating_sub(1),
                total,
                align,
                complexity,
            });
        }
        Ok(t)
    }

    pub fn load_checkpoint(path: &Path, config: TrainConfig) -> Result<Self> {
        Trainer::from_checkpoint(&Container::load(path)?, config)
    }
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<LogRow>,
}

/// Trains on the split's training ids from freshly supplied parameters.
pub fn train(
    config: &TrainConfig,
    manifest: &Manifest,
    split: &Split,
    params: EncoderParameters,
    bank: PromptBank,
) -> Result<TrainOutcome> {
    let unknown = split.unknown_ids(manifest);
    if !unknown.is_empty() {
        return Err(Error::Invalid(format!(
            "split names {} ids missing from manifest {} (first: {})",
            unknown.len(),
            manifest.name,
            unknown[0]
        )));
    }
    let encoder = *params.config();
    let mut trainer = Trainer::new(config.clone(), params, bank)?;
    let samples = prepare_samples(manifest, &split.train_ids, &encoder)?;
    trainer.run(&samples)?;
    let log = trainer.log().to_vec();
    Ok(TrainOutcome {
        model: trainer.into_model()?,
        log,
    })
}

/// Encoder parameters and prompt bank initialised from `config.seed`.
pub fn initial_parts(encoder: EncoderConfig, config: &TrainConfig) -> Result<(EncoderParameters, PromptBank)> {
    let params = EncoderParameters::init(encoder, config.seed)?;
    let bank = PromptBank::init(config.prompt_levels, encoder.token_dim, config.seed);
    Ok((params, bank))
}

/// [`train`] from parameters initialised by [`initial_parts`].
pub fn train_fresh(
    config: &TrainConfig,
    manifest: &Manifest,
    split: &Split,
    encoder: EncoderConfig,
) -> Result<TrainOutcome> {
    let (params, bank) = initial_parts(encoder, config)?;
    train(config, manifest, split, params, bank)
}

/// Training log text: config echoed as `#` lines, then one row per step.
pub fn format_log(config: &TrainConfig, rows: &[LogRow]) -> String {
    let mut out = String::new();
    for line in config.canonical().lines() {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str("epoch\tstep\tL\tL_A\tL_C\n");
    for r in rows {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

pub fn write_log(path: &Path, config: &TrainConfig, rows: &[LogRow]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(format_log(config, rows).as_bytes())
        .map_err(|e| Error::io(path, e))
}
