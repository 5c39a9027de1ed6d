use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sparserl::agents::{select_ultimate_compression, summarize};
use sparserl::{TopologyMode, TrainConfig};

use crate::run::{resolve_config, run_to_dir};
use crate::{Failure, RunFlags};

#[derive(Debug, Clone)]
struct Cell {
    /// `None` marks the dense reference.
    sparsity: Option<f64>,
    seed: u64,
    config: TrainConfig,
    out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellOutcome {
    pub sparsity: f64,
    pub dense: bool,
    pub seed: u64,
    pub final_score: Option<f64>,
    pub error: Option<String>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub sparsity: f64,
    pub mean: f64,
    pub sd: f64,
    pub runs: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub dense_score: f64,
    /// Largest grid sparsity whose mean stays within 3% of the dense score.
    pub ultimate_compression: Option<f64>,
    pub rows: Vec<SweepRow>,
    pub cells: Vec<CellOutcome>,
}

fn cells(template: &TrainConfig, grid: &[f64], seeds: &[u64], out: &Path) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &seed in seeds {
        let mut cfg = template.clone().with_topology(TopologyMode::Dense);
        cfg.seed = seed;
        cells.push(Cell {
            sparsity: None,
            seed,
            config: cfg,
            out: out.join("dense").join(format!("seed{seed}")),
        });
    }
    for &s in grid {
        for &seed in seeds {
            let mut cfg = template.clone();
            cfg.actor_sparsity = s;
            cfg.critic_sparsity = s;
            cfg.seed = seed;
            cells.push(Cell {
                sparsity: Some(s),
                seed,
                config: cfg,
                out: out.join(format!("s{s}")).join(format!("seed{seed}")),
            });
        }
    }
    cells
}

fn run_cells(cells: &[Cell], jobs: usize) -> Vec<CellOutcome> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<CellOutcome>>> = Mutex::new(vec![None; cells.len()]);
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                let outcome = run_to_dir(&cell.config, &cell.out);
                let label = match cell.sparsity {
                    Some(s) => format!("{s}"),
                    None => "dense".into(),
                };
                let record = match outcome {
                    Ok(r) => {
                        eprintln!("[{label} seed {}] final_score={:.2}", cell.seed, r.final_score);
                        CellOutcome {
                            sparsity: cell.sparsity.unwrap_or(0.0),
                            dense: cell.sparsity.is_none(),
                            seed: cell.seed,
                            final_score: Some(r.final_score),
                            error: None,
                            out: cell.out.clone(),
                        }
                    }
                    Err(e) => {
                        eprintln!("[{label} seed {}] failed: {e:#}", cell.seed);
                        CellOutcome {
                            sparsity: cell.sparsity.unwrap_or(0.0),
                            dense: cell.sparsity.is_none(),
                            seed: cell.seed,
                            final_score: None,
                            error: Some(format!("{e:#}")),
                            out: cell.out.clone(),
                        }
                    }
                };
                results.lock().expect("no worker panics while holding the lock")[i] = Some(record);
            });
        }
    });
    results
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect()
}

fn row(label: String, sparsity: f64, outcomes: &[&CellOutcome]) -> SweepRow {
    let scores: Vec<f64> = outcomes.iter().filter_map(|o| o.final_score).collect();
    let (mean, sd) = summarize(&scores);
    SweepRow {
        label,
        sparsity,
        mean,
        sd,
        runs: scores.len(),
        failures: outcomes.len() - scores.len(),
    }
}

/// Aggregates cell outcomes into the sparsity-vs-score table.
pub fn aggregate(grid: &[f64], outcomes: Vec<CellOutcome>) -> SweepSummary {
    let dense: Vec<&CellOutcome> = outcomes.iter().filter(|o| o.dense).collect();
    let mut rows = vec![row("dense".into(), 0.0, &dense)];
    for &s in grid {
        let at: Vec<&CellOutcome> = outcomes.iter().filter(|o| !o.dense && o.sparsity == s).collect();
        rows.push(row(format!("{s}"), s, &at));
    }
    let dense_score = rows[0].mean;
    let pairs: Vec<(f64, f64)> = rows[1..]
        .iter()
        .filter(|r| r.mean.is_finite())
        .map(|r| (r.sparsity, r.mean))
        .collect();
    let ultimate_compression = if dense_score.is_finite() {
        select_ultimate_compression(&pairs, dense_score)
    } else {
        None
    };
    SweepSummary {
        dense_score,
        ultimate_compression,
        rows,
        cells: outcomes,
    }
}

pub fn format_table(summary: &SweepSummary) -> String {
    let mut s = String::from("label,sparsity,mean,sd,runs,failures\n");
    for r in &summary.rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.label, r.sparsity, r.mean, r.sd, r.runs, r.failures);
    }
    s
}

pub fn cmd_sweep(flags: &RunFlags, grid: &[f64], seeds: u64, jobs: usize, out: &Path) -> Result<(), Failure> {
    if seeds == 0 {
        return Err(Failure::Usage("--seeds must be at least 1".into()));
    }
    if let Some(s) = grid.iter().find(|s| !(0.0..1.0).contains(*s)) {
        return Err(Failure::Usage(format!("grid sparsity {s} is outside [0, 1)")));
    }
    let template = resolve_config(flags, None)?;
    let seed_list: Vec<u64> = (template.seed..template.seed + seeds).collect();
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(Failure::Run)?;
    let cells = cells(&template, grid, &seed_list, out);
    let summary = aggregate(grid, run_cells(&cells, jobs));
    let table = format_table(&summary);
    fs::write(out.join("sweep.csv"), &table)
        .with_context(|| format!("writing {}", out.join("sweep.csv").display()))
        .map_err(Failure::Run)?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Failure::Run(e.into()))?;
    fs::write(out.join("sweep.json"), json + "\n")
        .with_context(|| format!("writing {}", out.join("sweep.json").display()))
        .map_err(Failure::Run)?;
    for r in &summary.rows {
        println!("{:>8}  {:>10.2} ± {:<8.2} runs={} failures={}", r.label, r.mean, r.sd, r.runs, r.failures);
    }
    match summary.ultimate_compression {
        Some(s) => println!("ultimate compression: {s}"),
        None => println!("ultimate compression: none within 3% of dense"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use sparserl::{Algorithm, Profile};

    fn outcome(sparsity: f64, dense: bool, score: Option<f64>) -> CellOutcome {
        CellOutcome {
            sparsity,
            dense,
            seed: 0,
            final_score: score,
            error: score.is_none().then(|| "diverged".into()),
            out: PathBuf::new(),
        }
    }

    #[test]
    fn grid_cardinality_with_dense_reference() {
        let t = TrainConfig::new(Algorithm::Td3, Profile::Desk);
        let c = cells(&t, &[0.5, 0.9, 0.95], &[0, 1, 2], Path::new("o"));
        assert_eq!(c.iter().filter(|c| c.sparsity.is_some()).count(), 9);
        assert_eq!(c.iter().filter(|c| c.sparsity.is_none()).count(), 3);
        assert!(c
            .iter()
            .filter(|c| c.sparsity.is_none())
            .all(|c| c.config.topology == TopologyMode::Dense));
        let single = cells(&t, &[0.9], &[4], Path::new("o"));
        assert_eq!(single.len(), 2);
        assert_eq!(single[1].config.actor_sparsity, 0.9);
        assert_eq!(single[1].config.critic_sparsity, 0.9);
    }

    #[test]
    fn failures_are_recorded_per_cell() {
        let summary = aggregate(
            &[0.5, 0.9],
            vec![
                outcome(0.0, true, Some(100.0)),
                outcome(0.5, false, Some(99.0)),
                outcome(0.5, false, None),
                outcome(0.9, false, Some(50.0)),
            ],
        );
        assert_eq!(summary.rows.len(), 3);
        assert_eq!((summary.rows[1].runs, summary.rows[1].failures), (1, 1));
        assert_eq!(summary.ultimate_compression, Some(0.5));
        assert!(format_table(&summary).starts_with("label,sparsity,mean,sd,runs,failures\ndense,0,100,"));
    }
}
