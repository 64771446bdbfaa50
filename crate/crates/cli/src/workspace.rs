//! Config loading, the output directory, and content hashes.

use std::fs;
use std::path::{Path, PathBuf};

use dprandp_core::experiment::ExperimentConfig;
use dprandp_core::models::{load_checkpoint, save_checkpoint, CheckpointMeta, ParameterVector};
use dprandp_core::random_prior::PretrainMetrics;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{usage, CliError, Result};

pub const SEED_ENV: &str = "DPRP_SEED";

/// Reads and validates a config. `DPRP_SEED` replaces the run seeds with a
/// single seed; `output_dir` replaces the configured output directory.
pub fn load_config(path: &Path, output_dir: Option<&Path>) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Ok(v) = std::env::var(SEED_ENV) {
        let seed = v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}")))?;
        cfg.seeds.runs = vec![seed];
    }
    if let Some(dir) = output_dir {
        cfg.output_dir = dir.to_path_buf();
    }
    Ok(cfg)
}

pub fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec(v)?)
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Creates `dir` (and parents) inside the output directory.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

pub fn encoder_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("encoder.ckpt")
}

/// Hash of everything Phase I depends on.
pub fn pretrain_hash(cfg: &ExperimentConfig) -> Result<String> {
    Ok(sha256_hex(&[
        &json_bytes(&cfg.generator)?,
        &json_bytes(&cfg.encoder)?,
        &json_bytes(&cfg.pretrain)?,
        &cfg.seeds.pretrain.to_le_bytes(),
    ]))
}

/// Runs Phase I and stores the checkpoint, its metrics and its input hash.
pub fn pretrain(cfg: &ExperimentConfig) -> Result<(ParameterVector, PathBuf)> {
    ensure_dir(&cfg.output_dir)?;
    let (params, log) = cfg.pretrain_encoder()?;
    if !params.all_finite() {
        return Err(CliError::Numerical("pretraining produced non-finite weights".into()));
    }
    let path = encoder_path(cfg);
    let meta = CheckpointMeta {
        model: cfg.encoder.clone(),
        seed: cfg.seeds.pretrain,
        provenance: serde_json::json!({
            "stage": "pretrain",
            "input_hash": pretrain_hash(cfg)?,
            "generators": cfg.generator,
            "pretrain": cfg.pretrain,
        }),
    };
    save_checkpoint(&path, &params, &meta)?;
    write_pretrain_csv(&cfg.output_dir.join("pretrain_metrics.csv"), &log)?;
    Ok((params, path))
}

fn write_pretrain_csv(path: &Path, log: &[PretrainMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "align", "uniform"])?;
    for m in log {
        w.write_record([m.step.to_string(), format!("{:.6}", m.align), format!("{:.6}", m.uniform)])?;
    }
    w.flush()?;
    Ok(())
}

/// The Phase I encoder: an explicit checkpoint, else the one in the output
/// directory if it was produced from the same inputs, else a fresh run.
pub fn encoder(cfg: &ExperimentConfig, explicit: Option<&Path>) -> Result<(ParameterVector, Vec<u8>)> {
    if let Some(path) = explicit {
        let (params, meta) = load_checkpoint(path)?;
        if meta.model != cfg.encoder {
            return usage(format!("{} was saved for a different encoder spec", path.display()));
        }
        return Ok((params, fs::read(path)?));
    }
    let path = encoder_path(cfg);
    let want = pretrain_hash(cfg)?;
    if path.exists() {
        let (params, meta) = load_checkpoint(&path)?;
        if meta.model == cfg.encoder && meta.provenance["input_hash"] == want.as_str() {
            return Ok((params, fs::read(&path)?));
        }
    }
    let (params, path) = pretrain(cfg)?;
    Ok((params, fs::read(path)?))
}
