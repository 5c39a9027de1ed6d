use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sparserl::agents::ImportedMasks;
use sparserl::io::{read_config, read_masks, write_checkpoint, write_masks, write_metrics};
use sparserl::{train, Algorithm, Error, FlopsReport, Profile, TopologyMode, TrainConfig, TrainResult};

use crate::{Failure, RunFlags};

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: TrainConfig,
    pub seeds: Vec<u64>,
    pub env: String,
    pub out: PathBuf,
    /// SHA-256 over the tool version, the resolved config and any imported
    /// masks.
    pub fingerprint: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_score: f64,
    pub evaluations: usize,
    pub env_steps: u64,
    pub critic_updates: u64,
    pub actor_updates: u64,
    pub alpha: Option<f64>,
    pub tiny_width: Option<usize>,
    pub flops: FlopsReport,
}

fn norm(key: &str) -> String {
    key.trim().replace('_', "-")
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn split_override(s: &str) -> Result<(String, String), Failure> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got '{s}'")))
}

/// Resolves flags over the config file (or a manifest's config) over the
/// profile defaults.
pub fn resolve_config(flags: &RunFlags, base: Option<TrainConfig>) -> Result<TrainConfig, Failure> {
    let file = match &flags.config {
        Some(p) => read_config(p).map_err(usage)?,
        None => Vec::new(),
    };
    let from_file = |names: &[&str]| {
        file.iter()
            .rev()
            .find(|(k, _)| names.contains(&norm(k).as_str()))
            .map(|(_, v)| v.clone())
    };
    let had_base = base.is_some();
    let mut cfg = match base {
        Some(c) => c,
        None => {
            let algorithm = match (flags.algo, from_file(&["algo", "algorithm"])) {
                (Some(a), _) => a,
                (None, Some(v)) => v.trim().parse().map_err(usage)?,
                (None, None) => Algorithm::Td3,
            };
            let profile = match (flags.profile, from_file(&["profile"])) {
                (Some(p), _) => p,
                (None, Some(v)) => v.trim().parse().map_err(usage)?,
                (None, None) => Profile::Paper,
            };
            if flags.env.is_none() && from_file(&["env"]).is_none() {
                return Err(usage("the environment is required: pass --env or set env in the config file"));
            }
            TrainConfig::new(algorithm, profile)
        }
    };
    // The topology mode resets its dependent defaults, so it goes first and
    // explicit settings land on top of it.
    let topology = match (flags.topology, from_file(&["topology"])) {
        (Some(t), _) => Some(t),
        (None, Some(v)) => Some(v.trim().parse::<TopologyMode>().map_err(usage)?),
        (None, None) => None,
    };
    if let Some(t) = topology {
        if !had_base || t != cfg.topology {
            cfg = cfg.with_topology(t);
        }
    }
    for (k, v) in &file {
        if !["algo", "algorithm", "profile", "topology"].contains(&norm(k).as_str()) {
            cfg.set(k, v).map_err(usage)?;
        }
    }
    if let Some(a) = flags.algo {
        cfg.algorithm = a;
    }
    if let Some(e) = &flags.env {
        cfg.env = e.clone();
    }
    if let Some(s) = flags.actor_sparsity {
        cfg.actor_sparsity = s;
    }
    if let Some(s) = flags.critic_sparsity {
        cfg.critic_sparsity = s;
    }
    if let Some(s) = flags.steps {
        cfg.total_steps = s;
    }
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(d) = &flags.mask_dir {
        cfg.mask_dir = Some(d.clone());
    }
    for o in &flags.overrides {
        let (k, v) = split_override(o)?;
        cfg.set(&k, &v).map_err(usage)?;
    }
    sparserl::make_env(&cfg.env, 0).map_err(usage)?;
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

/// Masks for the static-mask topology, read from `cfg.mask_dir`.
pub fn load_masks(cfg: &TrainConfig) -> anyhow::Result<Option<ImportedMasks>> {
    if cfg.topology != TopologyMode::StaticMaskFile {
        return Ok(None);
    }
    let dir = cfg.mask_dir.as_ref().context("static_mask topology needs --mask-dir")?;
    let layers = cfg.hidden.len() + 1;
    Ok(Some(read_masks(dir, layers, layers)?))
}

pub fn fingerprint(cfg: &TrainConfig, masks: Option<&ImportedMasks>) -> anyhow::Result<String> {
    let mut h = Sha256::new();
    h.update(env!("CARGO_PKG_VERSION").as_bytes());
    h.update(b"\n");
    h.update(serde_json::to_vec(cfg)?);
    if let Some(m) = masks {
        for mask in m.actor.iter().chain(m.critics.iter().flatten()) {
            h.update(sparserl::io::format_mask(mask).as_bytes());
        }
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_artifacts(out: &Path, result: &TrainResult) -> anyhow::Result<()> {
    write_metrics(&out.join("metrics.csv"), &result.metrics)?;
    let summary = RunSummary {
        final_score: result.final_score,
        evaluations: result.metrics.len(),
        env_steps: result.env_steps,
        critic_updates: result.critic_updates,
        actor_updates: result.actor_updates,
        alpha: result.alpha,
        tiny_width: result.tiny_width,
        flops: result.flops.clone(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    let [c1, c2] = &result.critics;
    write_checkpoint(
        &out.join("checkpoint.json"),
        &[("actor", &result.actor), ("critic1", c1), ("critic2", c2)],
    )?;
    let masks = out.join("masks");
    fs::create_dir_all(&masks).with_context(|| format!("creating {}", masks.display()))?;
    write_masks(&masks, &result.actor, [c1, c2])?;
    Ok(())
}

/// Trains `cfg` and writes the full artifact set into `out`. A diverged
/// run leaves `diagnostic.json` instead of the result files.
pub fn run_to_dir(cfg: &TrainConfig, out: &Path) -> anyhow::Result<TrainResult> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let masks = load_masks(cfg)?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        seeds: vec![cfg.seed],
        env: cfg.env.clone(),
        out: out.to_path_buf(),
        fingerprint: fingerprint(cfg, masks.as_ref())?,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    match train(cfg, masks.as_ref()) {
        Ok(result) => {
            write_artifacts(out, &result)?;
            Ok(result)
        }
        Err(e) => {
            let step = match &e {
                Error::Divergence { step, .. } => Some(*step),
                _ => None,
            };
            let dump = serde_json::json!({
                "error": e.to_string(),
                "diverged_at_step": step,
                "config": cfg,
            });
            write_json(&out.join("diagnostic.json"), &dump)?;
            Err(anyhow::Error::new(e).context(format!("run failed; diagnostic written to {}", out.join("diagnostic.json").display())))
        }
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, Failure> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn cmd_train(flags: &RunFlags, out: &Path, manifest: Option<&Path>) -> Result<(), Failure> {
    let base = manifest.map(read_manifest).transpose()?.map(|m| m.config);
    let cfg = resolve_config(flags, base)?;
    let start = std::time::Instant::now();
    let result = run_to_dir(&cfg, out)?;
    println!(
        "{} {} {} seed={} final_score={:.2} size={:.3}x train_flops={:.3}x time={:.1}s out={}",
        cfg.algorithm,
        cfg.env,
        cfg.topology.as_str(),
        cfg.seed,
        result.final_score,
        result.flops.normalized_total_size,
        result.flops.normalized_train_flops,
        start.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}
