//! Config file loading and command-line overrides.
//!
//! Precedence, lowest first: built-in defaults, the config file, `--set`
//! pairs in order, then `--seed` and `--out`. Relative paths in the config
//! file are resolved against the file's directory; relative paths given on
//! the command line are left relative to the working directory.

use std::fs;
use std::path::{Path, PathBuf};

use replysent_core::pipeline::PipelineConfig;
use replysent_core::Error;
use toml::{Table, Value};

pub type RunConfig = PipelineConfig;

const PATH_KEYS: [&str; 6] = [
    "out_dir",
    "labeled_path",
    "threads_path",
    "gold_path",
    "autolabeled_path",
    "embeddings_path",
];

pub const ECHO_FILE: &str = "resolved_config.toml";

/// Parses an override value as a TOML literal, falling back to a bare
/// string so `--set out_dir=runs/a` works without quoting.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn read_file(path: &Path) -> Result<Table, Error> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
    let mut table: Table =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    for key in PATH_KEYS {
        if let Some(Value::String(s)) = table.get(key) {
            let resolved = base.join(s);
            table.insert(key.into(), Value::String(resolved.to_string_lossy().into_owned()));
        }
    }
    Ok(table)
}

pub fn resolve(
    file: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<RunConfig, Error> {
    let mut table = match file {
        Some(p) => read_file(p)?,
        None => Table::new(),
    };
    for pair in sets {
        let (key, raw) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{pair}` is not of the form key=value")))?;
        table.insert(key.trim().to_string(), parse_value(raw.trim()));
    }
    if let Some(seed) = seed {
        let seed = i64::try_from(seed).map_err(|_| Error::Config(format!("seed {seed} is too large")))?;
        table.insert("seed".into(), Value::Integer(seed));
    }
    if let Some(out) = out {
        table.insert("out_dir".into(), Value::String(out.to_string_lossy().into_owned()));
    }
    let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Writes the resolved config into the output directory.
pub fn echo(cfg: &RunConfig) -> Result<PathBuf, Error> {
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(ECHO_FILE);
    let body = toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&path, body).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}
