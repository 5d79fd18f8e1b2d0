//! Ablation grids and cross-dataset evaluation.
//!
//! Each grid cell is a full `TrainConfig`. Cells run in order; every finished
//! cell is appended to the results table at once, so an interrupted grid keeps
//! its completed rows and a re-run skips them.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::alignment::LossWeights;
use crate::caption::CaptionStyle;
use crate::datamodel::{attach_scene_texts, load_manifest, Manifest, Split};
use crate::encoders::{EncoderConfig, PromptLevels};
use crate::error::{Error, Result};
use crate::inference::{score_manifest, CropScorer, ModelScorer, ScoreSet};
use crate::metrics::{MetricReport, RmaeMode};
use crate::model::Model;
use crate::pipeline::{train_fresh, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BranchConfig {
    ComplexityOnly,
    AlignmentOnly,
    Both,
}

impl BranchConfig {
    pub const ALL: [BranchConfig; 3] = [
        BranchConfig::ComplexityOnly,
        BranchConfig::AlignmentOnly,
        BranchConfig::Both,
    ];

    pub fn flags(self) -> (bool, bool) {
        match self {
            BranchConfig::ComplexityOnly => (true, false),
            BranchConfig::AlignmentOnly => (false, true),
            BranchConfig::Both => (true, true),
        }
    }
}

impl fmt::Display for BranchConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BranchConfig::ComplexityOnly => "C",
            BranchConfig::AlignmentOnly => "A",
            BranchConfig::Both => "C+A",
        })
    }
}

impl FromStr for BranchConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "C" | "c" => Ok(BranchConfig::ComplexityOnly),
            "A" | "a" => Ok(BranchConfig::AlignmentOnly),
            "C+A" | "c+a" | "CA" | "ca" => Ok(BranchConfig::Both),
            other => Err(Error::Invalid(format!("unknown branch config {other:?}"))),
        }
    }
}

/// The (alpha, beta) pairs of the weight ablation.
pub const WEIGHT_GRID: [(f64, f64); 5] = [(0.1, 0.9), (0.3, 0.7), (0.5, 0.5), (0.7, 0.3), (0.9, 0.1)];

/// A scene sidecar produced by some captioner at some length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptionVariant {
    pub source: String,
    pub length: CaptionStyle,
    pub sidecar: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentGrid {
    pub base: TrainConfig,
    pub branches: Vec<BranchConfig>,
    pub prompt_levels: Vec<PromptLevels>,
    pub weights: Vec<(f64, f64)>,
    /// Empty means: use the scene texts already attached to the manifest.
    pub captions: Vec<CaptionVariant>,
}

impl ExperimentGrid {
    /// A one-cell grid equal to `base`.
    pub fn single(base: TrainConfig) -> Self {
        let branch = match (base.branch_c_enabled, base.branch_a_enabled) {
            (true, false) => BranchConfig::ComplexityOnly,
            (false, true) => BranchConfig::AlignmentOnly,
            _ => BranchConfig::Both,
        };
        ExperimentGrid {
            branches: vec![branch],
            prompt_levels: vec![base.prompt_levels],
            weights: vec![(base.weights.alpha, base.weights.beta)],
            captions: Vec::new(),
            base,
        }
    }

    pub fn cells(&self) -> Result<Vec<GridCell>> {
        let captions: Vec<Option<&CaptionVariant>> = if self.captions.is_empty() {
            vec![None]
        } else {
            self.captions.iter().map(Some).collect()
        };
        let mut out = Vec::new();
        for &branch in &self.branches {
            for &levels in &self.prompt_levels {
                for &(alpha, beta) in &self.weights {
                    for caption in &captions {
                        let (c, a) = branch.flags();
                        let config = TrainConfig {
                            branch_c_enabled: c,
                            branch_a_enabled: a,
                            prompt_levels: levels,
                            weights: LossWeights::new(alpha, beta)?,
                            ..self.base.clone()
                        };
                        config.validate()?;
                        out.push(GridCell {
                            index: out.len(),
                            branch,
                            caption: caption.cloned(),
                            config,
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        for cell in self.cells()? {
            h.update(cell.key().as_bytes());
            h.update(b"\n");
        }
        Ok(hex::encode(&h.finalize()[..8]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub index: usize,
    pub branch: BranchConfig,
    pub caption: Option<CaptionVariant>,
    pub config: TrainConfig,
}

impl GridCell {
    fn caption_cols(&self) -> (String, String) {
        match &self.caption {
            Some(c) => (c.source.clone(), c.length.to_string()),
            None => ("-".into(), "-".into()),
        }
    }

    /// Tab-separated cell coordinates plus config hash.
    pub fn key(&self) -> String {
        let (src, len) = self.caption_cols();
        format!(
            "{}\t{}\t{}\t{}\t{}\t{src}\t{len}\t{}",
            self.index,
            self.branch,
            self.config.prompt_levels,
            self.config.weights.alpha,
            self.config.weights.beta,
            self.config.hash()
        )
    }
}

pub const RESULT_HEADER: &str =
    "cell\tbranch\tprompt_levels\talpha\tbeta\tcaption_source\tcaption_length\tconfig_hash\tstatus";

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub cell: GridCell,
    pub outcome: std::result::Result<MetricReport, String>,
}

impl ResultRow {
    pub fn to_line(&self) -> String {
        match &self.outcome {
            Ok(r) => format!("{}\tok\t{}", self.cell.key(), r.to_row()),
            Err(e) => {
                let msg: String = e.chars().map(|c| if c == '\t' || c == '\n' { ' ' } else { c }).collect();
                format!("{}\terror: {msg}\t-\t-\t-\t-\t-\t-", self.cell.key())
            }
        }
    }

    pub fn report(&self) -> Option<&MetricReport> {
        self.outcome.as_ref().ok()
    }
}

/// Where the grid trains and tests.
pub struct ExperimentData<'a> {
    pub manifest: &'a Manifest,
    pub split: &'a Split,
    pub encoder: EncoderConfig,
    pub stride: Option<usize>,
    pub rmae_mode: RmaeMode,
}

/// Trains one config from fresh parameters and scores the test split.
pub fn train_and_score(config: &TrainConfig, data: &ExperimentData<'_>) -> Result<(Model, ScoreSet)> {
    let outcome = train_fresh(config, data.manifest, data.split, data.encoder)?;
    let scorer = ModelScorer::new(&outcome.model)?;
    let scores = score_manifest(
        &scorer,
        data.manifest,
        Some(&data.split.test_ids),
        data.stride,
        data.rmae_mode,
    )?;
    Ok((outcome.model, scores))
}

fn run_cell(cell: &GridCell, data: &ExperimentData<'_>) -> Result<MetricReport> {
    let with_captions;
    // Captions only matter to the alignment branch; C-only cells never read them.
    let manifest = match cell.caption.as_ref().filter(|_| cell.config.branch_a_enabled) {
        Some(c) => {
            let (m, report) = attach_scene_texts(data.manifest.clone(), &c.sidecar)?;
            if !report.flagged.is_empty() {
                log::warn!("{}: {} records without a caption", c.sidecar.display(), report.flagged.len());
            }
            with_captions = m;
            &with_captions
        }
        None => data.manifest,
    };
    let data = ExperimentData {
        manifest,
        split: data.split,
        encoder: data.encoder,
        stride: data.stride,
        rmae_mode: data.rmae_mode,
    };
    let (_, scores) = train_and_score(&cell.config, &data)?;
    if scores.is_partial() {
        log::warn!("cell {}: {} test images missing", cell.index, scores.missing.len());
    }
    scores
        .report
        .ok_or_else(|| Error::Invalid("fewer than two test images scored".into()))
}

fn provenance(grid: &ExperimentGrid, data: &ExperimentData<'_>) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "# cmssa {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "# grid_hash = {}", grid.hash()?);
    let _ = writeln!(s, "# manifest = {}", data.manifest.name);
    let _ = writeln!(s, "# split_seed = {}", data.split.seed);
    let _ = writeln!(s, "# split_ratio = {}", data.split.ratio);
    let _ = writeln!(s, "# train_seed = {}", grid.base.seed);
    for line in grid.base.canonical().lines() {
        let _ = writeln!(s, "# base.{line}");
    }
    let _ = writeln!(s, "{RESULT_HEADER}\t{}", MetricReport::ROW_HEADER);
    Ok(s)
}

/// Cell keys already recorded in an existing table.
fn completed_keys(path: &Path) -> Result<HashSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("cell\t"))
        .filter_map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f.len() > 8 && f[8] == "ok").then(|| f[..8].join("\t"))
        })
        .collect())
}

/// Runs every cell, appending one row per cell to `results`. Cells already
/// recorded as `ok` in an existing table with the same grid are skipped.
pub fn run_experiment(
    grid: &ExperimentGrid,
    data: &ExperimentData<'_>,
    results: &Path,
) -> Result<Vec<ResultRow>> {
    let cells = grid.cells()?;
    let header = provenance(grid, data)?;
    let done = if results.exists() {
        let text = std::fs::read_to_string(results).map_err(|e| Error::io(results, e))?;
        if !text.starts_with(&header) {
            return Err(Error::Invalid(format!(
                "{} belongs to a different grid; choose a new results path",
                results.display()
            )));
        }
        completed_keys(results)?
    } else {
        std::fs::write(results, &header).map_err(|e| Error::io(results, e))?;
        HashSet::new()
    };
    let mut file = OpenOptions::new()
        .append(true)
        .open(results)
        .map_err(|e| Error::io(results, e))?;
    let mut rows = Vec::new();
    for cell in cells {
        if done.contains(&cell.key()) {
            log::info!("cell {} already recorded, skipping", cell.index);
            continue;
        }
        log::info!("cell {}: branch {} levels {} alpha {} beta {}", cell.index, cell.branch, cell.config.prompt_levels, cell.config.weights.alpha, cell.config.weights.beta);
        let outcome = run_cell(&cell, data).map_err(|e| e.to_string());
        if let Err(e) = &outcome {
            log::warn!("cell {} failed: {e}", cell.index);
        }
        let row = ResultRow { cell, outcome };
        writeln!(file, "{}", row.to_line()).map_err(|e| Error::io(results, e))?;
        file.flush().map_err(|e| Error::io(results, e))?;
        rows.push(row);
    }
    Ok(rows)
}

/// A test set for cross-dataset evaluation; `ids` restricts it to a subset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrossTarget {
    pub manifest: PathBuf,
    pub ids: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossRow {
    pub train: String,
    pub test: String,
    pub report: Option<MetricReport>,
    pub note: String,
}

pub const CROSS_HEADER: &str = "train\ttest\tsrcc\tplcc\tn\tnote";

impl CrossRow {
    pub fn to_line(&self) -> String {
        match &self.report {
            Some(r) => format!(
                "{}\t{}\t{:.6}\t{:.6}\t{}\t{}",
                self.train, self.test, r.srcc, r.plcc, r.n, self.note
            ),
            None => format!("{}\t{}\t-\t-\t0\t{}", self.train, self.test, self.note),
        }
    }
}

/// SRCC and PLCC of one model on each target; unreadable manifests give a
/// row with a note instead of aborting.
pub fn cross_dataset_eval(
    scorer: &dyn CropScorer,
    train_name: &str,
    targets: &[CrossTarget],
    stride: Option<usize>,
    mode: RmaeMode,
) -> Vec<CrossRow> {
    targets
        .iter()
        .map(|t| {
            let fallback = t.manifest.display().to_string();
            let manifest = match load_manifest(&t.manifest) {
                Ok(m) => m,
                Err(e) => {
                    return CrossRow {
                        train: train_name.to_string(),
                        test: fallback,
                        report: None,
                        note: format!("skipped: {e}"),
                    }
                }
            };
            let scored = score_manifest(scorer, &manifest, t.ids.as_deref(), stride, mode);
            let (report, note) = match scored {
                Ok(s) if s.is_partial() => (s.report, format!("{} images missing", s.missing.len())),
                Ok(s) => (s.report, "ok".to_string()),
                Err(e) => (None, format!("failed: {e}")),
            };
            CrossRow {
                train: train_name.to_string(),
                test: manifest.name,
                report,
                note,
            }
        })
        .collect()
}

pub fn format_cross_table(rows: &[CrossRow]) -> String {
    let mut s = String::from(CROSS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_line());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_cross_product() {
        let grid = ExperimentGrid {
            base: TrainConfig::desk(),
            branches: BranchConfig::ALL.to_vec(),
            prompt_levels: vec![PromptLevels::Three, PromptLevels::Seven],
            weights: WEIGHT_GRID.to_vec(),
            captions: Vec::new(),
        };
        let cells = grid.cells().unwrap();
        assert_eq!(cells.len(), 3 * 2 * 5);
        let keys: HashSet<String> = cells.iter().map(GridCell::key).collect();
        assert_eq!(keys.len(), cells.len());
        assert!(!cells[0].config.branch_a_enabled);
    }

    #[test]
    fn single_cell_grid_keeps_base() {
        let base = TrainConfig {
            seed: 4,
            ..TrainConfig::desk()
        };
        let cells = ExperimentGrid::single(base.clone()).cells().unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].config, base);
    }

    #[test]
    fn branch_labels_round_trip() {
        for b in BranchConfig::ALL {
            assert_eq!(b.to_string().parse::<BranchConfig>().unwrap(), b);
        }
    }
}
