#![allow(dead_code)]

use std::path::{Path, PathBuf};

use replysent_core::pipeline::PipelineConfig;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// The bundled fixture config with its paths resolved and output sent to
/// `out`.
pub fn fixture_config(out: &Path) -> PipelineConfig {
    let dir = fixtures();
    let text = std::fs::read_to_string(dir.join("config.toml")).unwrap();
    let mut cfg: PipelineConfig = toml::from_str(&text).unwrap();
    for p in [&mut cfg.labeled_path, &mut cfg.threads_path, &mut cfg.gold_path] {
        *p = p.as_ref().map(|p| dir.join(p));
    }
    cfg.out_dir = out.to_path_buf();
    cfg
}
