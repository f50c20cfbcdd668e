#![allow(dead_code)]

use std::path::{Path, PathBuf};

use coi_bench::ExperimentConfig;

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

/// The golden config with output and cache redirected under `tmp`.
pub fn golden(tmp: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&golden_dir().join("config.toml")).expect("golden config loads");
    cfg.output_dir = tmp.join("out");
    cfg.cache_dir = Some(tmp.join("cache"));
    cfg
}
