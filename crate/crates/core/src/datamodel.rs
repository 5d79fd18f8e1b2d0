//! Dataset manifests, scene-description sidecars and the seeded train/test split.
//!
//! Manifest format (UTF-8, line oriented):
//!
//! ```text
//! #name ic9600
//! #range 0 100
//! img_0001<TAB>images/img_0001.png<TAB>37.5<TAB>architecture
//! ```
//!
//! `#range` is mandatory and must precede the first record. Other lines that
//! start with `#` are comments. Raw scores are min-max normalized into `mos`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audit;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub image_id: String,
    /// Path as written in the manifest, relative to the manifest's directory.
    pub image_path: PathBuf,
    pub raw_score: f64,
    /// Normalized complexity ground truth in `[0, 1]`.
    pub mos: f64,
    pub scene_text: String,
    pub category: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub name: String,
    /// Directory that relative image paths are resolved against.
    pub root: PathBuf,
    pub raw_score_min: f64,
    pub raw_score_max: f64,
    pub records: Vec<DatasetRecord>,
}

impl Manifest {
    /// Builds a manifest from `(id, relative path, raw score, category)` rows.
    pub fn from_rows(
        name: impl Into<String>,
        root: impl Into<PathBuf>,
        raw_score_min: f64,
        raw_score_max: f64,
        rows: impl IntoIterator<Item = (String, PathBuf, f64, Option<String>)>,
    ) -> Result<Self> {
        check_range(raw_score_min, raw_score_max).map_err(Error::Invalid)?;
        let mut seen = HashSet::new();
        let mut records = Vec::new();
        for (image_id, image_path, raw, category) in rows {
            if !seen.insert(image_id.clone()) {
                return Err(Error::Invalid(format!("duplicate image_id {image_id}")));
            }
            let mos = normalize(raw, raw_score_min, raw_score_max).map_err(Error::Invalid)?;
            records.push(DatasetRecord {
                image_id,
                image_path,
                raw_score: raw,
                mos,
                scene_text: String::new(),
                category,
            });
        }
        Ok(Manifest {
            name: name.into(),
            root: root.into(),
            raw_score_min,
            raw_score_max,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, record: &DatasetRecord) -> PathBuf {
        self.root.join(&record.image_path)
    }

    pub fn get(&self, image_id: &str) -> Option<&DatasetRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    /// Records whose ids are in `ids`, in manifest order.
    pub fn select<'a>(&'a self, ids: &[String]) -> Vec<&'a DatasetRecord> {
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        self.records
            .iter()
            .filter(|r| wanted.contains(r.image_id.as_str()))
            .collect()
    }

    /// Manifest file text; parses back to an equal manifest.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "#name {}", self.name);
        let _ = writeln!(out, "#range {} {}", self.raw_score_min, self.raw_score_max);
        for r in &self.records {
            let _ = write!(
                out,
                "{}\t{}\t{}",
                r.image_id,
                r.image_path.display(),
                r.raw_score
            );
            if let Some(c) = &r.category {
                let _ = write!(out, "\t{c}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.serialize()).map_err(|e| Error::io(path, e))
    }
}

fn check_range(min: f64, max: f64) -> std::result::Result<(), String> {
    if !(min.is_finite() && max.is_finite() && min < max) {
        return Err(format!("invalid score range [{min}, {max}]"));
    }
    Ok(())
}

fn normalize(raw: f64, min: f64, max: f64) -> std::result::Result<f64, String> {
    if !raw.is_finite() || raw < min || raw > max {
        return Err(format!("score {raw} outside declared range [{min}, {max}]"));
    }
    Ok((raw - min) / (max - min))
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = audit::read_to_string(path)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let default_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_manifest(&text, path, root, default_name)
}

pub fn parse_manifest(
    text: &str,
    path: &Path,
    root: PathBuf,
    default_name: String,
) -> Result<Manifest> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut name = default_name;
    let mut range: Option<(f64, f64)> = None;
    let mut seen = HashSet::new();
    let mut records = Vec::new();

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#range") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            let [lo, hi] = parts.as_slice() else {
                return Err(err(lineno, "expected `#range <min> <max>`".into()));
            };
            let lo: f64 = lo.parse().map_err(|_| err(lineno, format!("bad range min {lo:?}")))?;
            let hi: f64 = hi.parse().map_err(|_| err(lineno, format!("bad range max {hi:?}")))?;
            check_range(lo, hi).map_err(|m| err(lineno, m))?;
            if !records.is_empty() {
                return Err(err(lineno, "#range must precede all records".into()));
            }
            range = Some((lo, hi));
            continue;
        }
        if let Some(rest) = line.strip_prefix("#name") {
            name = rest.trim().to_string();
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let Some((lo, hi)) = range else {
            return Err(err(lineno, "record before #range header".into()));
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(err(
                lineno,
                format!("expected 3 or 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        let image_id = fields[0].trim();
        if image_id.is_empty() {
            return Err(err(lineno, "empty image_id".into()));
        }
        if !seen.insert(image_id.to_string()) {
            return Err(err(lineno, format!("duplicate image_id {image_id}")));
        }
        let raw: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| err(lineno, format!("bad score {:?}", fields[2])))?;
        let mos = normalize(raw, lo, hi).map_err(|m| err(lineno, m))?;
        records.push(DatasetRecord {
            image_id: image_id.to_string(),
            image_path: PathBuf::from(fields[1]),
            raw_score: raw,
            mos,
            scene_text: String::new(),
            category: fields.get(3).map(|c| c.to_string()).filter(|c| !c.is_empty()),
        });
    }

    let Some((raw_score_min, raw_score_max)) = range else {
        return Err(err(0, "missing #range header".into()));
    };
    Ok(Manifest {
        name,
        root,
        raw_score_min,
        raw_score_max,
        records,
    })
}

/// Outcome of attaching a sidecar to a manifest.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneAttachReport {
    /// Records with no sidecar entry; their scene_text stays empty.
    pub flagged: Vec<String>,
    /// Sidecar entries naming ids absent from the manifest.
    pub warnings: Vec<String>,
}

/// Parses a scene sidecar into `(image_id, description)` pairs in file order.
pub fn parse_sidecar(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((id, desc)) = line.split_once('\t') else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected `image_id<TAB>description`".into(),
            });
        };
        out.push((id.trim().to_string(), desc.to_string()));
    }
    Ok(out)
}

pub fn load_sidecar(path: &Path) -> Result<Vec<(String, String)>> {
    let text = audit::read_to_string(path)?;
    parse_sidecar(&text, path)
}

pub fn attach_scene_texts(
    mut manifest: Manifest,
    sidecar: &Path,
) -> Result<(Manifest, SceneAttachReport)> {
    let entries = load_sidecar(sidecar)?;
    let report = attach_entries(&mut manifest, entries);
    Ok((manifest, report))
}

pub fn attach_entries(
    manifest: &mut Manifest,
    entries: Vec<(String, String)>,
) -> SceneAttachReport {
    let mut by_id: HashMap<String, String> = HashMap::new();
    let known: HashSet<&str> = manifest.records.iter().map(|r| r.image_id.as_str()).collect();
    let mut warnings = Vec::new();
    for (id, desc) in entries {
        if known.contains(id.as_str()) {
            by_id.insert(id, desc);
        } else {
            warnings.push(format!("sidecar references unknown image_id {id}"));
        }
    }
    let mut flagged = Vec::new();
    for r in &mut manifest.records {
        match by_id.remove(&r.image_id) {
            Some(desc) => r.scene_text = desc,
            None => flagged.push(r.image_id.clone()),
        }
    }
    SceneAttachReport { flagged, warnings }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub seed: u64,
    pub ratio: f64,
    /// Sorted ids.
    pub train_ids: Vec<String>,
    /// Sorted ids.
    pub test_ids: Vec<String>,
}

/// Seeded split. Depends only on the id set, the seed and the ratio.
pub fn make_split(manifest: &Manifest, seed: u64, ratio: f64) -> Result<Split> {
    split_ids(
        manifest.records.iter().map(|r| r.image_id.clone()),
        seed,
        ratio,
    )
}

pub fn split_ids(ids: impl IntoIterator<Item = String>, seed: u64, ratio: f64) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Invalid(format!("split ratio {ratio} not in (0, 1)")));
    }
    let mut ids: Vec<String> = ids.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
    let n = ids.len();
    if n < 2 {
        return Err(Error::Invalid(format!("cannot split {n} records")));
    }
    let n_train = (ratio * n as f64).round() as usize;
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test_ids = ids.split_off(n_train);
    let mut train_ids = ids;
    train_ids.sort();
    test_ids.sort();
    Ok(Split {
        seed,
        ratio,
        train_ids,
        test_ids,
    })
}

impl Split {
    pub fn serialize(&self) -> String {
        let mut out = format!("seed {}\nratio {}\n[train]\n", self.seed, self.ratio);
        for id in &self.train_ids {
            out.push_str(id);
            out.push('\n');
        }
        out.push_str("[test]\n");
        for id in &self.test_ids {
            out.push_str(id);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.serialize()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Split> {
        let text = audit::read_to_string(path)?;
        Split::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Split> {
        let err = |line: usize, message: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: message.to_string(),
        };
        #[derive(PartialEq)]
        enum Section {
            Header,
            Train,
            Test,
        }
        let mut section = Section::Header;
        let (mut seed, mut ratio) = (None, None);
        let (mut train_ids, mut test_ids) = (Vec::new(), Vec::new());
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            match line {
                "[train]" => section = Section::Train,
                "[test]" => section = Section::Test,
                _ => match section {
                    Section::Header => {
                        let (key, value) = line
                            .split_once(char::is_whitespace)
                            .ok_or_else(|| err(i + 1, "expected `key value`"))?;
                        match key {
                            "seed" => {
                                seed = Some(value.trim().parse().map_err(|_| err(i + 1, "bad seed"))?)
                            }
                            "ratio" => {
                                ratio =
                                    Some(value.trim().parse().map_err(|_| err(i + 1, "bad ratio"))?)
                            }
                            _ => return Err(err(i + 1, "unknown header key")),
                        }
                    }
                    Section::Train => train_ids.push(line.to_string()),
                    Section::Test => test_ids.push(line.to_string()),
                },
            }
        }
        let split = Split {
            seed: seed.ok_or_else(|| err(0, "missing seed"))?,
            ratio: ratio.ok_or_else(|| err(0, "missing ratio"))?,
            train_ids,
            test_ids,
        };
        let train: HashSet<&String> = split.train_ids.iter().collect();
        if split.test_ids.iter().any(|id| train.contains(id)) {
            return Err(err(0, "train and test sections overlap"));
        }
        Ok(split)
    }

    /// Ids not present in `manifest`.
    pub fn unknown_ids(&self, manifest: &Manifest) -> Vec<String> {
        let known: HashSet<&str> = manifest.records.iter().map(|r| r.image_id.as_str()).collect();
        self.train_ids
            .iter()
            .chain(&self.test_ids)
            .filter(|id| !known.contains(id.as_str()))
            .cloned()
            .collect()
    }
}
