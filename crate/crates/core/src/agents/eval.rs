use serde::{Deserialize, Serialize};

use super::{train, TrainConfig};
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::policy::DeterministicPolicy;

/// Number of trailing evaluations averaged into the final score.
pub const FINAL_WINDOW: usize = 30;

/// Mean undiscounted return of `episodes` full episodes under the
/// deterministic policy.
pub fn evaluate<P: DeterministicPolicy + ?Sized>(policy: &P, env: &mut dyn Env, episodes: usize) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let spec = env.spec().clone();
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut obs = env.reset();
        loop {
            let state = ndarray::ArrayView2::from_shape((1, obs.len()), &obs).expect("one row");
            let action = policy.act(state)?;
            let res = env.step(&spec.scale_action(action.as_slice().expect("standard layout")));
            total += res.reward;
            if res.done || res.truncated {
                break;
            }
            obs = res.observation;
        }
    }
    Ok(total / episodes as f64)
}

/// Mean of the last `min(30, count)` evaluations (NaN when there are none).
pub fn final_score(evaluations: &[f64]) -> f64 {
    let k = evaluations.len().min(FINAL_WINDOW);
    if k == 0 {
        return f64::NAN;
    }
    evaluations[evaluations.len() - k..].iter().sum::<f64>() / k as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionRow {
    pub sparsity: f64,
    pub mean: f64,
    pub sd: f64,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionSearch {
    pub dense_score: f64,
    /// Largest sparsity within 3% of the dense score, if any.
    pub ultimate: Option<f64>,
    pub table: Vec<CompressionRow>,
}

/// Scans `(sparsity, mean score)` pairs from the sparsest down and returns
/// the first whose score is no more than 3% of `|dense|` below `dense`.
///
/// For positive scores this is `score ≥ 0.97 · dense`; the absolute form
/// keeps the tolerance meaningful for negative returns.
pub fn select_ultimate_compression(table: &[(f64, f64)], dense: f64) -> Option<f64> {
    let threshold = dense - 0.03 * dense.abs();
    let mut rows: Vec<(f64, f64)> = table.to_vec();
    rows.sort_by(|a, b| b.0.total_cmp(&a.0));
    rows.into_iter().find(|&(_, score)| score >= threshold).map(|(s, _)| s)
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Trains `template` at every grid sparsity (actor and critic alike) for
/// every seed and selects the ultimate compression ratio against
/// `dense_score`.
pub fn ultimate_compression_search(
    template: &TrainConfig,
    grid: &[f64],
    seeds: &[u64],
    dense_score: f64,
) -> Result<CompressionSearch> {
    let mut table = Vec::with_capacity(grid.len());
    for &s in grid {
        let mut scores = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = template.clone();
            cfg.actor_sparsity = s;
            cfg.critic_sparsity = s;
            cfg.seed = seed;
            scores.push(train(&cfg, None)?.final_score);
        }
        let (mean, sd) = mean_sd(&scores);
        table.push(CompressionRow {
            sparsity: s,
            mean,
            sd,
            scores,
        });
    }
    let pairs: Vec<(f64, f64)> = table.iter().map(|r| (r.sparsity, r.mean)).collect();
    Ok(CompressionSearch {
        dense_score,
        ultimate: select_ultimate_compression(&pairs, dense_score),
        table,
    })
}

pub fn summarize(scores: &[f64]) -> (f64, f64) {
    mean_sd(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvSpec, StepResult};
    use ndarray::{Array2, ArrayView2};

    struct Constant {
        spec: EnvSpec,
        steps: u32,
    }

    impl Env for Constant {
        fn spec(&self) -> &EnvSpec {
            &self.spec
        }
        fn reset(&mut self) -> Vec<f64> {
            self.steps = 0;
            vec![0.0]
        }
        fn step(&mut self, _: &[f64]) -> StepResult {
            self.steps += 1;
            StepResult {
                observation: vec![0.0],
                reward: 1.0,
                done: false,
                truncated: self.steps >= self.spec.max_episode_steps,
            }
        }
        fn steps(&self) -> u32 {
            self.steps
        }
    }

    fn constant() -> Constant {
        Constant {
            spec: EnvSpec {
                name: "constant".into(),
                state_dim: 1,
                action_dim: 1,
                action_low: vec![-1.0],
                action_high: vec![1.0],
                max_episode_steps: 200,
            },
            steps: 0,
        }
    }

    #[test]
    fn constant_reward_episode() {
        let policy = |s: ArrayView2<f64>| Array2::zeros((s.nrows(), 1));
        let mut env = constant();
        assert_eq!(evaluate(&policy, &mut env, 3).unwrap(), 200.0);
        assert_eq!(evaluate(&policy, &mut env, 1).unwrap(), 200.0);
        assert!(evaluate(&policy, &mut env, 0).is_err());
    }

    #[test]
    fn final_score_window() {
        let evals: Vec<f64> = (0..40).map(f64::from).collect();
        let want = (10..40).map(f64::from).sum::<f64>() / 30.0;
        assert_eq!(final_score(&evals), want);
        assert_eq!(final_score(&[4.0, 6.0]), 5.0);
        assert!(final_score(&[]).is_nan());
    }

    #[test]
    fn ultimate_compression_examples() {
        assert_eq!(select_ultimate_compression(&[(0.0, 100.0)], 100.0), Some(0.0));
        assert_eq!(select_ultimate_compression(&[(0.9, 99.0), (0.95, 80.0)], 100.0), Some(0.9));
        assert_eq!(select_ultimate_compression(&[(0.9, 50.0), (0.95, 80.0)], 100.0), None);
        // Negative returns: −150 vs dense −146 is within 3% of |dense|.
        assert_eq!(select_ultimate_compression(&[(0.9, -150.0)], -146.0), Some(0.9));
        assert_eq!(select_ultimate_compression(&[(0.9, -160.0)], -146.0), None);
    }

    #[test]
    fn sample_sd() {
        let (m, s) = summarize(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
