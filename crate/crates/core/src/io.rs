//! File formats: mask dumps, network checkpoints, the metrics stream and
//! key=value config files.
//!
//! Every reader is the exact inverse of its writer.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::agents::{ImportedMasks, MetricsRow};
use crate::error::{Error, Result};
use crate::net::{Head, MaskedLinear, Mlp};

pub const METRICS_HEADER: &str =
    "step,eval_return,buffer_size,policy_distance,drops,actor_active,critic_active,train_flops_cum";

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `"rows cols"` then one line of space-separated 0/1 per row.
pub fn format_mask(mask: &Array2<bool>) -> String {
    let (r, c) = mask.dim();
    let mut out = format!("{r} {c}\n");
    for row in mask.rows() {
        let line: Vec<&str> = row.iter().map(|&m| if m { "1" } else { "0" }).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Parses a mask dump; `origin` names the source in errors.
pub fn parse_mask(text: &str, origin: &Path) -> Result<Array2<bool>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(origin, 1, "empty mask file"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(origin, 1, format!("bad dimension '{t}'"))))
        .collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(parse_err(origin, 1, "header must be 'rows cols'"));
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        seen += 1;
        if seen > rows {
            return Err(parse_err(origin, lineno, format!("more than {rows} rows")));
        }
        let before = data.len();
        for t in line.split_whitespace() {
            data.push(match t {
                "1" => true,
                "0" => false,
                _ => return Err(parse_err(origin, lineno, format!("entry '{t}' is not 0 or 1"))),
            });
        }
        if data.len() - before != cols {
            return Err(parse_err(
                origin,
                lineno,
                format!("row has {} entries, expected {cols}", data.len() - before),
            ));
        }
    }
    if seen != rows {
        return Err(parse_err(origin, text.lines().count(), format!("found {seen} rows, expected {rows}")));
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("counted"))
}

pub fn write_mask(path: &Path, mask: &Array2<bool>) -> Result<()> {
    write(path, &format_mask(mask))
}

pub fn read_mask(path: &Path) -> Result<Array2<bool>> {
    parse_mask(&read(path)?, path)
}

/// Names of the network dumps inside a mask directory.
pub const NETWORK_NAMES: [&str; 3] = ["actor", "critic1", "critic2"];

pub fn mask_file_name(network: &str, layer: usize) -> String {
    format!("{network}_layer{layer}.mask")
}

/// Writes one dump per layer of the actor and both critics.
pub fn write_masks(dir: &Path, actor: &Mlp, critics: [&Mlp; 2]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, net) in NETWORK_NAMES.iter().zip([actor, critics[0], critics[1]]) {
        for (l, layer) in net.layers().iter().enumerate() {
            let path = dir.join(mask_file_name(name, l));
            write_mask(&path, &layer.mask)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Reads the dumps written by [`write_masks`] for networks with the given
/// layer counts.
pub fn read_masks(dir: &Path, actor_layers: usize, critic_layers: usize) -> Result<ImportedMasks> {
    let load = |name: &str, n: usize| -> Result<Vec<Array2<bool>>> {
        (0..n).map(|l| read_mask(&dir.join(mask_file_name(name, l)))).collect()
    };
    Ok(ImportedMasks {
        actor: load(NETWORK_NAMES[0], actor_layers)?,
        critics: [load(NETWORK_NAMES[1], critic_layers)?, load(NETWORK_NAMES[2], critic_layers)?],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerRecord {
    in_dim: usize,
    out_dim: usize,
    target_sparsity: f64,
    /// Row-major `out_dim × in_dim`.
    weights: Vec<f64>,
    /// Row-major 0/1.
    mask: Vec<u8>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetworkRecord {
    name: String,
    head: Head,
    dims: Vec<usize>,
    layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    networks: Vec<NetworkRecord>,
}

const CHECKPOINT_FORMAT: &str = "sparserl-checkpoint";

fn record(name: &str, net: &Mlp) -> NetworkRecord {
    NetworkRecord {
        name: name.to_string(),
        head: net.head(),
        dims: net.dims(),
        layers: net
            .layers()
            .iter()
            .map(|l| LayerRecord {
                in_dim: l.in_dim,
                out_dim: l.out_dim,
                target_sparsity: l.target_sparsity,
                weights: l.weights.iter().copied().collect(),
                mask: l.mask.iter().map(|&m| m as u8).collect(),
                bias: l.bias.to_vec(),
            })
            .collect(),
    }
}

fn restore(rec: NetworkRecord, origin: &Path) -> Result<Mlp> {
    let bad = |m: String| parse_err(origin, 0, format!("network '{}': {m}", rec.name));
    let mut layers = Vec::with_capacity(rec.layers.len());
    for (l, lr) in rec.layers.iter().enumerate() {
        let shape = (lr.out_dim, lr.in_dim);
        let weights = Array2::from_shape_vec(shape, lr.weights.clone())
            .map_err(|_| bad(format!("layer {l} weights do not match {shape:?}")))?;
        if lr.mask.iter().any(|&m| m > 1) {
            return Err(bad(format!("layer {l} mask has entries other than 0/1")));
        }
        let mask = Array2::from_shape_vec(shape, lr.mask.iter().map(|&m| m == 1).collect())
            .map_err(|_| bad(format!("layer {l} mask does not match {shape:?}")))?;
        if lr.bias.len() != lr.out_dim {
            return Err(bad(format!("layer {l} bias length {}", lr.bias.len())));
        }
        layers.push(MaskedLinear {
            in_dim: lr.in_dim,
            out_dim: lr.out_dim,
            weights,
            mask,
            bias: Array1::from(lr.bias.clone()),
            target_sparsity: lr.target_sparsity,
        });
    }
    let net = Mlp::from_layers(layers, rec.head)?;
    if net.dims() != rec.dims {
        return Err(bad(format!("dims {:?} disagree with layers {:?}", rec.dims, net.dims())));
    }
    Ok(net)
}

/// JSON checkpoint of named networks; floats round-trip bit-exactly.
pub fn format_checkpoint(networks: &[(&str, &Mlp)]) -> Result<String> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        networks: networks.iter().map(|(n, net)| record(n, net)).collect(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Config(format!("checkpoint encoding: {e}")))
}

pub fn parse_checkpoint(text: &str, origin: &Path) -> Result<Vec<(String, Mlp)>> {
    let file: CheckpointFile =
        serde_json::from_str(text).map_err(|e| parse_err(origin, e.line(), e.to_string()))?;
    if file.format != CHECKPOINT_FORMAT || file.version != 1 {
        return Err(parse_err(
            origin,
            0,
            format!("unsupported checkpoint '{}' v{}", file.format, file.version),
        ));
    }
    file.networks
        .into_iter()
        .map(|rec| {
            let name = rec.name.clone();
            restore(rec, origin).map(|net| (name, net))
        })
        .collect()
}

pub fn write_checkpoint(path: &Path, networks: &[(&str, &Mlp)]) -> Result<()> {
    write(path, &format_checkpoint(networks)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Mlp)>> {
    parse_checkpoint(&read(path)?, path)
}

/// Metrics CSV with [`METRICS_HEADER`]; floats use shortest round-trip
/// formatting, so equal rows give equal bytes.
pub fn format_metrics(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.step,
            r.eval_return,
            r.buffer_size,
            r.policy_distance,
            r.drops,
            r.actor_active,
            r.critic_active,
            r.train_flops_cum
        );
    }
    out
}

pub fn parse_metrics(text: &str, origin: &Path) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        _ => return Err(parse_err(origin, 1, "missing metrics header")),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let lineno = i + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(parse_err(origin, lineno, format!("{} fields, expected 8", f.len())));
            }
            macro_rules! field {
                ($i:expr, $name:expr) => {
                    f[$i]
                        .parse()
                        .map_err(|_| parse_err(origin, lineno, format!("bad {} '{}'", $name, f[$i])))?
                };
            }
            Ok(MetricsRow {
                step: field!(0, "step"),
                eval_return: field!(1, "eval_return"),
                buffer_size: field!(2, "buffer_size"),
                policy_distance: field!(3, "policy_distance"),
                drops: field!(4, "drops"),
                actor_active: field!(5, "actor_active"),
                critic_active: field!(6, "critic_active"),
                train_flops_cum: field!(7, "train_flops_cum"),
            })
        })
        .collect()
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write(path, &format_metrics(rows))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    parse_metrics(&read(path)?, path)
}

/// `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(origin, i + 1, format!("expected key=value, got '{line}'")))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(parse_err(origin, i + 1, "empty key"));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<Vec<(String, String)>> {
    parse_config(&read(path)?, path)
}
