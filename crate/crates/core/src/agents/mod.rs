//! Training loops for sparse TD3 and SAC, baseline topology modes and the
//! evaluation protocol.

mod config;
mod eval;
mod sac;
mod td3;

pub use config::{Profile, TopologyMode, TrainConfig};
pub use eval::{
    evaluate, final_score, select_ultimate_compression, summarize, ultimate_compression_search, CompressionRow,
    CompressionSearch, FINAL_WINDOW,
};
pub use sac::{SacActorStep, SacAgent};
pub use td3::{ActorStep, CriticStep, Td3Agent};

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::accounting::{self, Algorithm, FlopsReport};
use crate::envs::{make_env, Env};
use crate::error::{Error, Result};
use crate::net::{Gradients, Head, Mlp};
use crate::replay::{DynamicBuffer, NStepSegment, Transition};
use crate::sparsity::{er_allocate, EvolutionSchedule, GrowMode};
use crate::targets::TargetConfig;

/// Hyperparameters a learner needs once its networks exist.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerSettings {
    pub discount: f64,
    pub tau: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub actor_update_interval: u64,
    pub grow_mode: GrowMode,
    pub schedule: EvolutionSchedule,
    pub targets: TargetConfig,
    pub entropy_target: f64,
    pub initial_alpha: f64,
}

impl LearnerSettings {
    pub fn from_config(cfg: &TrainConfig, action_dim: usize) -> Self {
        LearnerSettings {
            discount: cfg.discount,
            tau: cfg.tau,
            learning_rate: cfg.learning_rate,
            batch_size: cfg.batch_size,
            actor_update_interval: cfg.actor_update_interval,
            grow_mode: cfg.grow_mode(),
            schedule: EvolutionSchedule {
                initial_fraction: cfg.initial_fraction,
                total_steps: cfg.total_steps,
                mask_update_interval: cfg.mask_update_interval,
                grow_mode: cfg.grow_mode(),
            },
            targets: cfg.target_config(),
            entropy_target: cfg.entropy_target_for(action_dim),
            initial_alpha: cfg.initial_alpha,
        }
    }
}

/// Interface the shared training loop drives.
pub trait Learner {
    fn actor(&self) -> &Mlp;
    fn critics(&self) -> [&Mlp; 2];
    /// Exploratory action in normalized coordinates.
    fn explore(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
    /// One iteration at global step `t`: critic update, and on schedule
    /// the actor update, topology evolution and target updates.
    fn train_step(&mut self, buffer: &DynamicBuffer, t: u64, rng: &mut ChaCha8Rng) -> Result<()>;
    fn critic_updates(&self) -> u64;
    fn actor_updates(&self) -> u64;
    fn train_flops(&self) -> f64;
    fn alpha(&self) -> Option<f64> {
        None
    }
}

/// One row of the metrics stream, written at every evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub eval_return: f64,
    pub buffer_size: usize,
    /// Most recent measured policy distance (NaN before the first check).
    pub policy_distance: f64,
    /// Cumulative transitions dropped by capacity checks.
    pub drops: usize,
    pub actor_active: usize,
    pub critic_active: usize,
    pub train_flops_cum: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub config: TrainConfig,
    pub metrics: Vec<MetricsRow>,
    pub final_score: f64,
    pub flops: FlopsReport,
    pub actor: Mlp,
    pub critics: [Mlp; 2],
    pub env_steps: u64,
    pub critic_updates: u64,
    pub actor_updates: u64,
    pub alpha: Option<f64>,
    /// Hidden width chosen for `tiny_dense`.
    pub tiny_width: Option<usize>,
}

impl TrainResult {
    pub fn evaluations(&self) -> Vec<(u64, f64)> {
        self.metrics.iter().map(|m| (m.step, m.eval_return)).collect()
    }
}

pub(crate) fn mean_squared_error(q: &Array1<f64>, y: &Array1<f64>) -> (f64, Array2<f64>) {
    let b = q.len() as f64;
    let diff = q - y;
    let loss = diff.mapv(|d| d * d).sum() / b;
    let grad = diff.mapv(|d| 2.0 * d / b).insert_axis(ndarray::Axis(1));
    (loss, grad)
}

pub(crate) fn segment_states(segments: &[NStepSegment]) -> Array2<f64> {
    let sd = segments[0].state.len();
    Array2::from_shape_fn((segments.len(), sd), |(i, j)| segments[i].state[j])
}

pub(crate) fn segment_actions(segments: &[NStepSegment]) -> Array2<f64> {
    let ad = segments[0].action.len();
    Array2::from_shape_fn((segments.len(), ad), |(i, j)| segments[i].action[j])
}

pub(crate) fn check_finite(loss: f64, grads: &Gradients, what: &str) -> Result<()> {
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Divergence {
            step: 0,
            detail: format!("{what} loss {loss} or its gradient is not finite"),
        });
    }
    Ok(())
}

pub(crate) fn single_row(state: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, state.len()), state).expect("one row")
}

fn layer_pairs(dims: &[usize]) -> Vec<(usize, usize)> {
    dims.windows(2).map(|d| (d[0], d[1])).collect()
}

/// Per-layer sparsities that realize the Erdős–Rényi active counts exactly.
pub fn er_layer_sparsities(dims: &[usize], global_sparsity: f64) -> Result<Vec<f64>> {
    let pairs = layer_pairs(dims);
    let alloc = er_allocate(global_sparsity, &pairs)?;
    Ok(alloc
        .active_counts(&pairs)
        .iter()
        .zip(&pairs)
        .map(|(&c, &(i, o))| 1.0 - c as f64 / (i * o) as f64)
        .collect())
}

/// Active weights of a network with these dims under ER allocation.
pub fn er_active_total(dims: &[usize], global_sparsity: f64) -> Result<u64> {
    let pairs = layer_pairs(dims);
    let alloc = er_allocate(global_sparsity, &pairs)?;
    Ok(alloc.active_counts(&pairs).iter().map(|&c| c as u64).sum())
}

fn with_hidden(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(output);
    dims
}

/// Network dimensions for one algorithm and environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub actor: Vec<usize>,
    pub critic: Vec<usize>,
    pub actor_head: Head,
}

impl Architecture {
    pub fn new(algorithm: Algorithm, state_dim: usize, action_dim: usize, hidden: &[usize]) -> Self {
        let (out, head) = match algorithm {
            Algorithm::Td3 => (action_dim, Head::Tanh),
            Algorithm::Sac => (2 * action_dim, Head::Gaussian),
        };
        Architecture {
            actor: with_hidden(state_dim, hidden, out),
            critic: with_hidden(state_dim + action_dim, hidden, 1),
            actor_head: head,
        }
    }
}

/// Largest uniform hidden width whose dense actor plus critic weight count
/// does not exceed `budget`.
pub fn tiny_dense_width(
    algorithm: Algorithm,
    state_dim: usize,
    action_dim: usize,
    hidden_layers: usize,
    budget: u64,
) -> Result<usize> {
    let size = |h: usize| {
        let arch = Architecture::new(algorithm, state_dim, action_dim, &vec![h; hidden_layers]);
        accounting::dense_model_size(&arch.actor) + accounting::dense_model_size(&arch.critic)
    };
    if size(1) > budget {
        return Err(Error::Config(format!(
            "parameter budget {budget} is below a width-1 dense network"
        )));
    }
    let mut h = 1;
    while size(h + 1) <= budget {
        h += 1;
    }
    Ok(h)
}

/// Masks imported for the static-mask mode, keyed by network.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportedMasks {
    pub actor: Vec<Array2<bool>>,
    pub critics: [Vec<Array2<bool>>; 2],
}

/// Builds the initial actor and twin critics for `cfg`.
pub fn build_networks(
    cfg: &TrainConfig,
    state_dim: usize,
    action_dim: usize,
    masks: Option<&ImportedMasks>,
    rng: &mut ChaCha8Rng,
) -> Result<(Mlp, [Mlp; 2], Option<usize>)> {
    let arch = Architecture::new(cfg.algorithm, state_dim, action_dim, &cfg.hidden);
    match cfg.topology {
        TopologyMode::StaticMaskFile => {
            let m = masks.ok_or_else(|| Error::Config("static_mask_file topology needs imported masks".into()))?;
            let actor = Mlp::with_masks(&arch.actor, m.actor.clone(), arch.actor_head, rng)?;
            let c1 = Mlp::with_masks(&arch.critic, m.critics[0].clone(), Head::Identity, rng)?;
            let c2 = Mlp::with_masks(&arch.critic, m.critics[1].clone(), Head::Identity, rng)?;
            Ok((actor, [c1, c2], None))
        }
        TopologyMode::TinyDense => {
            let budget = er_active_total(&arch.actor, cfg.actor_sparsity)?
                + er_active_total(&arch.critic, cfg.critic_sparsity)?;
            let h = tiny_dense_width(cfg.algorithm, state_dim, action_dim, cfg.hidden.len(), budget)?;
            let tiny = Architecture::new(cfg.algorithm, state_dim, action_dim, &vec![h; cfg.hidden.len()]);
            let dense = |dims: &[usize]| vec![0.0; dims.len() - 1];
            let actor = Mlp::new(&tiny.actor, &dense(&tiny.actor), tiny.actor_head, rng)?;
            let c1 = Mlp::new(&tiny.critic, &dense(&tiny.critic), Head::Identity, rng)?;
            let c2 = Mlp::new(&tiny.critic, &dense(&tiny.critic), Head::Identity, rng)?;
            Ok((actor, [c1, c2], Some(h)))
        }
        _ => {
            let sa = er_layer_sparsities(&arch.actor, cfg.actor_sparsity)?;
            let sc = er_layer_sparsities(&arch.critic, cfg.critic_sparsity)?;
            let actor = Mlp::new(&arch.actor, &sa, arch.actor_head, rng)?;
            let c1 = Mlp::new(&arch.critic, &sc, Head::Identity, rng)?;
            let c2 = Mlp::new(&arch.critic, &sc, Head::Identity, rng)?;
            Ok((actor, [c1, c2], None))
        }
    }
}

const ENV_STREAM: u64 = 0x5eed_0001;
const EVAL_STREAM: u64 = 0x5eed_0002;

/// Runs one training job on the environment named in `cfg`.
pub fn train(cfg: &TrainConfig, masks: Option<&ImportedMasks>) -> Result<TrainResult> {
    cfg.validate()?;
    let mut env = make_env(&cfg.env, cfg.seed ^ ENV_STREAM)?;
    let mut eval_env = make_env(&cfg.env, cfg.seed ^ EVAL_STREAM)?;
    let spec = env.spec().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (actor, critics, tiny_width) = build_networks(cfg, spec.state_dim, spec.action_dim, masks, &mut rng)?;
    let settings = LearnerSettings::from_config(cfg, spec.action_dim);
    let result = match cfg.algorithm {
        Algorithm::Td3 => {
            let mut agent = Td3Agent::from_networks(actor, critics, settings)?;
            run_loop(cfg, &mut agent, env.as_mut(), eval_env.as_mut(), &mut rng)?
        }
        Algorithm::Sac => {
            let mut agent = SacAgent::from_networks(actor, critics, settings)?;
            run_loop(cfg, &mut agent, env.as_mut(), eval_env.as_mut(), &mut rng)?
        }
    };
    Ok(TrainResult { tiny_width, ..result })
}

fn run_loop<L: Learner>(
    cfg: &TrainConfig,
    learner: &mut L,
    env: &mut dyn Env,
    eval_env: &mut dyn Env,
    rng: &mut ChaCha8Rng,
) -> Result<TrainResult> {
    let spec = env.spec().clone();
    let mut buffer = DynamicBuffer::new(cfg.buffer_config())?;
    let mut metrics = Vec::new();
    let mut last_distance = f64::NAN;
    let mut state = env.reset();
    let mut episode = 0u64;
    let mut step_in_episode = 0u32;
    for t in 1..=cfg.total_steps {
        let action = if t <= cfg.warmup {
            (0..spec.action_dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
        } else {
            learner.explore(&state, rng)?
        };
        let res = env.step(&spec.scale_action(&action));
        let end = res.done || res.truncated;
        buffer.push(Transition {
            state: std::mem::take(&mut state),
            action,
            reward: res.reward,
            next_state: res.observation.clone(),
            done: res.done,
            episode_id: episode,
            step_in_episode,
        });
        if end {
            state = env.reset();
            episode += 1;
            step_in_episode = 0;
        } else {
            state = res.observation;
            step_in_episode += 1;
        }

        if cfg.dynamic_buffer && t % cfg.buffer_check_interval == 0 {
            let adj = buffer.adjust_capacity(learner.actor(), t)?;
            if let Some(d) = adj.distance {
                last_distance = d;
            }
        }
        if t > cfg.warmup {
            learner.train_step(&buffer, t, rng).map_err(|e| match e {
                Error::Divergence { detail, .. } => Error::Divergence { step: t, detail },
                other => other,
            })?;
        }
        if t % cfg.eval_interval == 0 {
            let score = evaluate(learner.actor(), eval_env, cfg.eval_episodes)?;
            metrics.push(MetricsRow {
                step: t,
                eval_return: score,
                buffer_size: buffer.len(),
                policy_distance: last_distance,
                drops: buffer.dropped_total(),
                actor_active: learner.actor().active_count(),
                critic_active: learner.critics()[0].active_count(),
                train_flops_cum: learner.train_flops(),
            });
        }
    }
    let scores: Vec<f64> = metrics.iter().map(|m| m.eval_return).collect();
    let [c1, _] = learner.critics();
    let flops = FlopsReport::new(
        cfg.algorithm,
        learner.actor(),
        c1,
        cfg.batch_size,
        cfg.actor_update_interval as usize,
        learner.critic_updates(),
    );
    Ok(TrainResult {
        config: cfg.clone(),
        final_score: final_score(&scores),
        metrics,
        flops,
        actor: learner.actor().clone(),
        critics: [learner.critics()[0].clone(), learner.critics()[1].clone()],
        env_steps: cfg.total_steps,
        critic_updates: learner.critic_updates(),
        actor_updates: learner.actor_updates(),
        alpha: learner.alpha(),
        tiny_width: None,
    })
}

/// Mean forward FLOPs of the two critics.
pub(crate) fn critic_flops(critics: &[Mlp; 2]) -> f64 {
    (accounting::forward_flops(&critics[0]) + accounting::forward_flops(&critics[1])) as f64 / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accounting::dense_model_size;

    #[test]
    fn tiny_width_is_largest_within_budget() {
        let cfg = TrainConfig::new(Algorithm::Td3, Profile::Desk);
        let arch = Architecture::new(Algorithm::Td3, 3, 1, &cfg.hidden);
        let budget = er_active_total(&arch.actor, 0.9).unwrap() + er_active_total(&arch.critic, 0.85).unwrap();
        let h = tiny_dense_width(Algorithm::Td3, 3, 1, 2, budget).unwrap();
        let size = |h: usize| {
            let a = Architecture::new(Algorithm::Td3, 3, 1, &[h, h]);
            dense_model_size(&a.actor) + dense_model_size(&a.critic)
        };
        assert!(size(h) <= budget);
        assert!(size(h + 1) > budget);
    }

    #[test]
    fn er_sparsities_realize_counts() {
        let dims = [4, 64, 64, 1];
        let s = er_layer_sparsities(&dims, 0.85).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&dims, &s, Head::Identity, &mut rng).unwrap();
        assert_eq!(net.active_count() as u64, er_active_total(&dims, 0.85).unwrap());
        let want = 0.15 * (4 * 64 + 64 * 64 + 64) as f64;
        assert!((net.active_count() as f64 - want).abs() <= 1.0);
    }

    #[test]
    fn networks_for_each_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for mode in [TopologyMode::Rlx2, TopologyMode::StaticSparse, TopologyMode::Dense, TopologyMode::TinyDense] {
            let cfg = TrainConfig::new(Algorithm::Sac, Profile::Desk).with_topology(mode);
            let (a, c, w) = build_networks(&cfg, 3, 1, None, &mut rng).unwrap();
            assert_eq!(a.output_dim(), 2);
            assert_eq!(c[0].input_dim(), 4);
            assert_eq!(w.is_some(), mode == TopologyMode::TinyDense);
            if matches!(mode, TopologyMode::Dense | TopologyMode::TinyDense) {
                assert_eq!(a.active_count() as u64, dense_model_size(&a.dims()));
            }
        }
    }
}
