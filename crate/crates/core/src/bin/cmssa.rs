use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cmssa::caption::{caption_manifest, CaptionMode, CaptionStyle, HttpTransport, RetryPolicy};
use cmssa::config::{KeyValues, TRAIN_KEYS};
use cmssa::datamodel::{attach_scene_texts, load_manifest, make_split, Manifest, Split};
use cmssa::encoders::{EncoderConfig, FloatWidth};
use cmssa::experiments::{
    cross_dataset_eval, format_cross_table, run_experiment, BranchConfig, CaptionVariant, CrossTarget,
    ExperimentData, ExperimentGrid, WEIGHT_GRID,
};
use cmssa::inference::{parse_scores, score_manifest, ModelScorer};
use cmssa::metrics::{MetricReport, RmaeMode};
use cmssa::model::Model;
use cmssa::pipeline::{initial_parts, prepare_samples, write_log, TrainConfig, Trainer};
use cmssa::plot::emit_scatter;
use cmssa::synth::{generate, SynthParams};

#[derive(Parser)]
#[command(name = "cmssa", version, about = "Dual-branch image complexity assessment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a manifest and optional scene sidecar.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
    /// Fill a scene sidecar from a captioning endpoint.
    Caption {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        sidecar: PathBuf,
        #[arg(long, default_value = "medium")]
        style: CaptionStyle,
        /// Tag recorded in the sidecar header, e.g. the captioner name.
        #[arg(long, default_value = "external")]
        source: String,
        #[arg(long, conflicts_with = "offline")]
        endpoint: Option<String>,
        /// Reuse the existing sidecar without any network access.
        #[arg(long)]
        offline: bool,
        #[arg(long, default_value_t = 4)]
        attempts: u32,
        #[arg(long, default_value_t = 30)]
        timeout_secs: u64,
    },
    /// Write a seeded train/test split.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the training ids of a split.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
        /// Training log path (one row per step).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Resumable trainer state, written after every epoch.
        #[arg(long)]
        state: Option<PathBuf>,
        /// Continue from the trainer state at `--state`.
        #[arg(long, requires = "state")]
        resume: bool,
        /// Store model weights as 32-bit floats.
        #[arg(long)]
        f32: bool,
    },
    /// Score images with a trained model.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Restrict to the test ids of this split.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long, value_enum, default_value_t = RmaeArg::Root)]
        rmae: RmaeArg,
    },
    /// Metrics of a score file against manifest MOS.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = RmaeArg::Root)]
        rmae: RmaeArg,
    },
    /// Run an ablation grid and append rows to a results table.
    Grid {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Comma-separated branch configs: C, A, C+A.
        #[arg(long = "grid-branches", default_value = "C,A,C+A", value_delimiter = ',')]
        grid_branches: Vec<BranchConfig>,
        #[arg(long = "grid-levels", value_delimiter = ',')]
        grid_levels: Vec<usize>,
        /// Comma-separated alpha:beta pairs, or `all` for the standard five.
        #[arg(long = "grid-weights")]
        grid_weights: Option<String>,
        /// source:length:sidecar triples.
        #[arg(long = "caption-variant")]
        caption_variants: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Evaluate one model on several manifests.
    Crossval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train_name: String,
        /// manifest path, optionally `path:split` to restrict to a split's test ids.
        #[arg(long = "test", required = true)]
        tests: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Scatter plot of a score file against manifest MOS.
    Plot {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "predicted vs ground truth")]
        title: String,
    },
    /// Generate a synthetic fixture dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Variant::A)]
        variant: Variant,
        #[arg(long, default_value_t = 512)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    A,
    B,
}

#[derive(Clone, Copy, ValueEnum)]
enum RmaeArg {
    Root,
    Plain,
}

impl From<RmaeArg> for RmaeMode {
    fn from(a: RmaeArg) -> Self {
        match a {
            RmaeArg::Root => RmaeMode::Root,
            RmaeArg::Plain => RmaeMode::Plain,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    split: PathBuf,
    /// Scene sidecar; never read when the alignment branch is off.
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the desk profile (batch 16, 20 epochs) instead of the full one.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// C, A or C+A.
    #[arg(long)]
    branches: Option<BranchConfig>,
    #[arg(long)]
    anchor: Option<String>,
    #[arg(long)]
    prompt_levels: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trainable_scope: Option<String>,
}

impl TrainArgs {
    fn resolve(&self) -> anyhow::Result<TrainConfig> {
        let base = if self.desk {
            TrainConfig::desk()
        } else {
            TrainConfig::default()
        };
        let file = match &self.config {
            Some(p) => KeyValues::load(p)?,
            None => KeyValues::default(),
        };
        file.check_keys(TRAIN_KEYS)?;
        let mut flags = KeyValues::default();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                flags.set(k, v);
            }
        };
        put("batch_size", self.batch_size.map(|v| v.to_string()));
        put("learning_rate", self.learning_rate.map(|v| v.to_string()));
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("alpha", self.alpha.map(|v| v.to_string()));
        put("beta", self.beta.map(|v| v.to_string()));
        if let Some(b) = self.branches {
            let (c, a) = b.flags();
            put("branch_c_enabled", Some(c.to_string()));
            put("branch_a_enabled", Some(a.to_string()));
        }
        put("anchor", self.anchor.clone());
        put("prompt_levels", self.prompt_levels.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("trainable_scope", self.trainable_scope.clone());
        Ok(file.layered(&flags).apply_train(&base)?)
    }
}

fn load_training_data(data: &DataArgs, needs_scenes: bool) -> anyhow::Result<(Manifest, Split)> {
    let mut manifest = load_manifest(&data.manifest)?;
    if needs_scenes {
        let Some(sidecar) = &data.sidecar else {
            bail!("the alignment branch needs --sidecar");
        };
        let (m, report) = attach_scene_texts(manifest, sidecar)?;
        for w in &report.warnings {
            log::warn!("{w}");
        }
        if !report.flagged.is_empty() {
            log::warn!("{} records have no scene text", report.flagged.len());
        }
        manifest = m;
    }
    let split = Split::load(&data.split)?;
    Ok((manifest, split))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Ingest { manifest, sidecar } => {
            let m = load_manifest(&manifest)?;
            println!("manifest {}: {} records, range [{}, {}]", m.name, m.len(), m.raw_score_min, m.raw_score_max);
            if let Some(s) = sidecar {
                let (_, report) = attach_scene_texts(m, &s)?;
                for w in &report.warnings {
                    println!("warning: {w}");
                }
                println!("scene texts missing for {} records", report.flagged.len());
                for id in &report.flagged {
                    println!("flagged\t{id}");
                }
            }
        }
        Command::Caption {
            manifest,
            sidecar,
            style,
            source,
            endpoint,
            offline,
            attempts,
            timeout_secs,
        } => {
            let m = load_manifest(&manifest)?;
            let transport = HttpTransport::new(Duration::from_secs(timeout_secs));
            let mode = match (offline, endpoint) {
                (true, _) => CaptionMode::Offline,
                (false, Some(endpoint)) => CaptionMode::Online {
                    transport: &transport,
                    endpoint,
                    policy: RetryPolicy {
                        attempts,
                        ..RetryPolicy::default()
                    },
                },
                (false, None) => bail!("give --endpoint or --offline"),
            };
            let report = caption_manifest(mode, &m, style, &source, &sidecar)?;
            println!(
                "kept {}, written {}, flagged {}, retries {}",
                report.kept,
                report.written.len(),
                report.flagged.len(),
                report.total_retries
            );
            if !report.flagged.is_empty() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Split {
            manifest,
            seed,
            ratio,
            out,
        } => {
            let split = make_split(&load_manifest(&manifest)?, seed, ratio)?;
            split.save(&out)?;
            println!("train {}, test {}", split.train_ids.len(), split.test_ids.len());
        }
        Command::Train {
            data,
            train,
            out,
            log,
            state,
            resume,
            f32,
        } => {
            let config = train.resolve()?;
            let (manifest, split) = load_training_data(&data, config.branch_a_enabled)?;
            let unknown = split.unknown_ids(&manifest);
            if !unknown.is_empty() {
                bail!("split names {} ids missing from the manifest", unknown.len());
            }
            let encoder = EncoderConfig::default();
            let mut trainer = match (&state, resume) {
                (Some(p), true) => Trainer::load_checkpoint(p, config.clone())?,
                _ => {
                    let (params, bank) = initial_parts(encoder, &config)?;
                    Trainer::new(config.clone(), params, bank)?
                }
            };
            let samples = prepare_samples(&manifest, &split.train_ids, &encoder)?;
            trainer.check_samples(&samples)?;
            while !trainer.is_done() {
                trainer.train_epoch(&samples)?;
                if let Some(last) = trainer.state().last {
                    log::info!("epoch {}: L={:.5}", trainer.state().epoch, last.total);
                }
                if let Some(p) = &state {
                    trainer.save_checkpoint(p)?;
                }
            }
            if let Some(p) = &log {
                write_log(p, &config, trainer.log())?;
            }
            let width = if f32 { FloatWidth::F32 } else { FloatWidth::F64 };
            trainer.into_model()?.save(&out, width)?;
            println!("model written to {}", out.display());
        }
        Command::Score {
            model,
            manifest,
            split,
            out,
            stride,
            rmae,
        } => {
            let model = Model::load(&model)?;
            let manifest = load_manifest(&manifest)?;
            let ids = split.map(|p| Split::load(&p)).transpose()?.map(|s| s.test_ids);
            let scorer = ModelScorer::new(&model)?;
            let scores = score_manifest(&scorer, &manifest, ids.as_deref(), stride, rmae.into())?;
            scores.save(&out)?;
            if let Some(r) = &scores.report {
                print!("{}", r.to_kv_block());
            }
            if scores.is_partial() {
                eprintln!("{} images could not be read", scores.missing.len());
                return Ok(ExitCode::from(2));
            }
        }
        Command::Eval {
            scores,
            manifest,
            rmae,
        } => {
            let text = std::fs::read_to_string(&scores).with_context(|| format!("reading {}", scores.display()))?;
            let manifest = load_manifest(&manifest)?;
            let (mut pred, mut gt) = (Vec::new(), Vec::new());
            for (id, s) in parse_scores(&text, &scores)? {
                let Some(r) = manifest.get(&id) else {
                    bail!("score file names {id}, which is not in the manifest");
                };
                pred.push(s);
                gt.push(r.mos);
            }
            print!("{}", MetricReport::compute(&pred, &gt, rmae.into())?.to_kv_block());
        }
        Command::Grid {
            data,
            train,
            grid_branches: branches,
            grid_levels,
            grid_weights,
            caption_variants,
            out,
            stride,
        } => {
            let base = train.resolve()?;
            let weights = match grid_weights.as_deref() {
                None => vec![(base.weights.alpha, base.weights.beta)],
                Some("all") => WEIGHT_GRID.to_vec(),
                Some(list) => list
                    .split(',')
                    .map(|p| {
                        let (a, b) = p.split_once(':').context("weights are alpha:beta")?;
                        Ok((a.trim().parse()?, b.trim().parse()?))
                    })
                    .collect::<anyhow::Result<_>>()?,
            };
            let prompt_levels = if grid_levels.is_empty() {
                vec![base.prompt_levels]
            } else {
                grid_levels
                    .iter()
                    .map(|&n| cmssa::encoders::PromptLevels::from_count(n))
                    .collect::<cmssa::Result<_>>()?
            };
            let captions = caption_variants
                .iter()
                .map(|v| {
                    let mut parts = v.splitn(3, ':');
                    match (parts.next(), parts.next(), parts.next()) {
                        (Some(source), Some(length), Some(path)) => Ok(CaptionVariant {
                            source: source.to_string(),
                            length: length.parse()?,
                            sidecar: PathBuf::from(path),
                        }),
                        _ => bail!("caption variant must be source:length:sidecar, got {v:?}"),
                    }
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            let needs_scenes = captions.is_empty() && branches.iter().any(|b| b.flags().1);
            let (manifest, split) = load_training_data(&data, needs_scenes)?;
            let grid = ExperimentGrid {
                base,
                branches,
                prompt_levels,
                weights,
                captions,
            };
            let data = ExperimentData {
                manifest: &manifest,
                split: &split,
                encoder: EncoderConfig::default(),
                stride,
                rmae_mode: RmaeMode::Root,
            };
            let rows = run_experiment(&grid, &data, &out)?;
            let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
            println!("{} cells run, {failed} failed; results in {}", rows.len(), out.display());
            if failed > 0 {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Crossval {
            model,
            train_name,
            tests,
            out,
            stride,
        } => {
            let model = Model::load(&model)?;
            let scorer = ModelScorer::new(&model)?;
            let targets = tests
                .iter()
                .map(|t| {
                    let (path, split) = match t.rsplit_once(':') {
                        Some((p, s)) if !s.is_empty() && Path::new(s).exists() => (p, Some(s)),
                        _ => (t.as_str(), None),
                    };
                    let ids = split.map(|s| Split::load(Path::new(s))).transpose()?.map(|s| s.test_ids);
                    Ok(CrossTarget {
                        manifest: PathBuf::from(path),
                        ids,
                    })
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            let rows = cross_dataset_eval(&scorer, &train_name, &targets, stride, RmaeMode::Root);
            let table = format_cross_table(&rows);
            match out {
                Some(p) => write_text(&p, &table)?,
                None => print!("{table}"),
            }
        }
        Command::Plot {
            scores,
            manifest,
            out,
            title,
        } => {
            let text = std::fs::read_to_string(&scores).with_context(|| format!("reading {}", scores.display()))?;
            let manifest = load_manifest(&manifest)?;
            let pairs: Vec<(f64, f64)> = parse_scores(&text, &scores)?
                .into_iter()
                .filter_map(|(id, s)| manifest.get(&id).map(|r| (r.mos, s)))
                .collect();
            emit_scatter(&pairs, &title, &out)?;
            println!("{} points plotted to {}", pairs.len(), out.display());
        }
        Command::Synth {
            out,
            variant,
            count,
            seed,
        } => {
            let params = match variant {
                Variant::A => SynthParams::variant_a(count),
                Variant::B => SynthParams::variant_b(count),
            };
            let paths = generate(&out, &params, seed)?;
            println!("manifest {}\nsidecar {}", paths.manifest.display(), paths.sidecar.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
