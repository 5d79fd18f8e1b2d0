#![allow(dead_code)]

use std::path::Path;

use cmssa::datamodel::{attach_scene_texts, load_manifest, make_split, Manifest, Split};
use cmssa::synth::{generate, SynthParams, SynthPaths};

/// A small synthetic dataset with scene texts attached and an 8:2 split.
pub struct Fixture {
    pub paths: SynthPaths,
    pub manifest: Manifest,
    pub split: Split,
}

pub fn fixture(dir: &Path, count: usize) -> Fixture {
    let paths = generate(dir, &SynthParams::variant_a(count), 3).unwrap();
    let (manifest, report) = attach_scene_texts(load_manifest(&paths.manifest).unwrap(), &paths.sidecar).unwrap();
    assert!(report.flagged.is_empty());
    let split = make_split(&manifest, 0, 0.8).unwrap();
    Fixture { paths, manifest, split }
}
