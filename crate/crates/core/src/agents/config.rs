use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::accounting::Algorithm;
use crate::error::{Error, Result};
use crate::replay::BufferConfig;
use crate::sparsity::GrowMode;
use crate::targets::TargetConfig;

/// How network connectivity is chosen and changed over a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyMode {
    /// Gradient-grown topology evolution with multi-step targets and the
    /// dynamic-capacity buffer.
    Rlx2,
    /// Gradient-grown topology evolution on plain one-step learning with a
    /// fixed ring buffer.
    Rigl,
    /// Randomly grown topology evolution.
    Set,
    /// Random masks, never changed.
    StaticSparse,
    /// Dense networks narrowed to the sparse parameter budget.
    TinyDense,
    /// Masks imported from dump files, never changed.
    StaticMaskFile,
    /// Standard dense learner: no sparsity, one-step targets, fixed ring
    /// buffer.
    Dense,
}

impl TopologyMode {
    pub const NAMES: &'static [&'static str] = &[
        "rlx2",
        "rigl",
        "set",
        "static_sparse",
        "tiny_dense",
        "static_mask_file",
        "dense",
    ];

    pub fn grow_mode(self) -> GrowMode {
        match self {
            TopologyMode::Rlx2 | TopologyMode::Rigl => GrowMode::Gradient,
            TopologyMode::Set => GrowMode::Random,
            _ => GrowMode::Frozen,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TopologyMode::Rlx2 => "rlx2",
            TopologyMode::Rigl => "rigl",
            TopologyMode::Set => "set",
            TopologyMode::StaticSparse => "static_sparse",
            TopologyMode::TinyDense => "tiny_dense",
            TopologyMode::StaticMaskFile => "static_mask_file",
            TopologyMode::Dense => "dense",
        }
    }
}

impl FromStr for TopologyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.replace('-', "_").as_str() {
            "rlx2" => TopologyMode::Rlx2,
            "rigl" => TopologyMode::Rigl,
            "set" => TopologyMode::Set,
            "static_sparse" | "ss" => TopologyMode::StaticSparse,
            "tiny_dense" | "tiny" => TopologyMode::TinyDense,
            "static_mask_file" | "static_mask" => TopologyMode::StaticMaskFile,
            "dense" => TopologyMode::Dense,
            _ => {
                return Err(Error::Config(format!(
                    "unknown topology '{s}' (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "td3" => Ok(Algorithm::Td3),
            "sac" => Ok(Algorithm::Sac),
            _ => Err(Error::Config(format!("unknown algorithm '{s}' (expected td3 or sac)"))),
        }
    }
}

/// Default scale of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Full-size hyperparameters for million-step runs.
    Paper,
    /// Step counts and intervals shrunk by 20x, narrower networks and a
    /// smaller batch, for the built-in environments on one core.
    Desk,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            _ => Err(Error::Config(format!("unknown profile '{s}' (expected paper or desk)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub env: String,
    pub profile: Profile,
    pub topology: TopologyMode,
    pub actor_sparsity: f64,
    pub critic_sparsity: f64,
    pub learning_rate: f64,
    pub discount: f64,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub warmup: u64,
    pub tau: f64,
    pub initial_fraction: f64,
    pub mask_update_interval: u64,
    pub buffer_check_interval: u64,
    pub distance_threshold: f64,
    pub multi_step_delay: u64,
    pub actor_update_interval: u64,
    pub n_step: usize,
    /// `None` means `−dim(A)`.
    pub entropy_target: Option<f64>,
    pub initial_alpha: f64,
    pub exploration_sigma: f64,
    pub smoothing_sigma: f64,
    pub smoothing_clip: f64,
    pub min_capacity: usize,
    pub max_capacity: usize,
    pub shrink_ratio: f64,
    pub distance_batch: usize,
    pub dynamic_buffer: bool,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub total_steps: u64,
    pub seed: u64,
    pub mask_dir: Option<PathBuf>,
}

impl TrainConfig {
    /// Defaults for `algorithm` at the given scale, with the RLx2 topology
    /// mode on the pendulum.
    pub fn new(algorithm: Algorithm, profile: Profile) -> Self {
        let (d, n) = match algorithm {
            Algorithm::Td3 => (2, 3),
            Algorithm::Sac => (1, 2),
        };
        let mut cfg = TrainConfig {
            algorithm,
            env: "pendulum".into(),
            profile,
            topology: TopologyMode::Rlx2,
            actor_sparsity: 0.9,
            critic_sparsity: 0.85,
            learning_rate: 3e-4,
            discount: 0.99,
            hidden: vec![256, 256],
            batch_size: 256,
            warmup: 25_000,
            tau: 0.005,
            initial_fraction: 0.5,
            mask_update_interval: 10_000,
            buffer_check_interval: 10_000,
            distance_threshold: 0.2,
            multi_step_delay: 300_000,
            actor_update_interval: d,
            n_step: n,
            entropy_target: None,
            initial_alpha: 1.0,
            exploration_sigma: 0.1,
            smoothing_sigma: 0.2,
            smoothing_clip: 0.5,
            min_capacity: 100_000,
            max_capacity: 1_000_000,
            shrink_ratio: 0.2,
            distance_batch: 8 * 256,
            dynamic_buffer: true,
            eval_interval: 5_000,
            eval_episodes: 10,
            total_steps: 3_000_000,
            seed: 0,
            mask_dir: None,
        };
        if profile == Profile::Desk {
            cfg.hidden = vec![64, 64];
            cfg.batch_size = 128;
            cfg.distance_batch = 8 * 128;
            cfg.warmup = 1_250;
            cfg.mask_update_interval = 500;
            cfg.buffer_check_interval = 500;
            cfg.multi_step_delay = 15_000;
            cfg.eval_interval = 250;
            cfg.total_steps = 50_000;
            cfg.min_capacity = 20_000;
            cfg.max_capacity = 50_000;
        }
        cfg
    }

    /// Switches topology mode and applies that mode's learning defaults:
    /// `rigl` and `dense` learn with one-step targets and a fixed ring
    /// buffer, `dense` also clears both sparsities.
    pub fn with_topology(mut self, topology: TopologyMode) -> Self {
        let standard = Self::new(self.algorithm, self.profile);
        self.topology = topology;
        match topology {
            TopologyMode::Rigl => {
                self.n_step = 1;
                self.dynamic_buffer = false;
            }
            TopologyMode::Dense => {
                self.n_step = 1;
                self.dynamic_buffer = false;
                self.actor_sparsity = 0.0;
                self.critic_sparsity = 0.0;
            }
            _ => {
                self.n_step = standard.n_step;
                self.dynamic_buffer = standard.dynamic_buffer;
            }
        }
        self
    }

    pub fn entropy_target_for(&self, action_dim: usize) -> f64 {
        self.entropy_target.unwrap_or(-(action_dim as f64))
    }

    pub fn grow_mode(&self) -> GrowMode {
        self.topology.grow_mode()
    }

    pub fn target_config(&self) -> TargetConfig {
        TargetConfig {
            n_step: self.n_step,
            discount: self.discount,
            multi_step_delay: self.multi_step_delay,
            smoothing_sigma: self.smoothing_sigma,
            smoothing_clip: self.smoothing_clip,
            exploration_sigma: self.exploration_sigma,
        }
    }

    /// A fixed ring of `max_capacity` when the dynamic buffer is off.
    pub fn buffer_config(&self) -> BufferConfig {
        let (min, check) = if self.dynamic_buffer {
            (self.min_capacity, self.buffer_check_interval)
        } else {
            (self.max_capacity, u64::MAX)
        };
        BufferConfig {
            min_capacity: min,
            max_capacity: self.max_capacity,
            distance_threshold: self.distance_threshold,
            shrink_ratio: self.shrink_ratio,
            check_interval: check,
            distance_batch: self.distance_batch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sparsity_ok = |s: f64, what: &str| {
            if (0.0..1.0).contains(&s) {
                Ok(())
            } else {
                Err(Error::InvalidSparsity {
                    value: s,
                    context: what.to_string(),
                })
            }
        };
        sparsity_ok(self.actor_sparsity, "actor sparsity")?;
        sparsity_ok(self.critic_sparsity, "critic sparsity")?;
        let positive = [
            (self.batch_size as u64, "batch_size"),
            (self.mask_update_interval, "mask_update_interval"),
            (self.buffer_check_interval, "buffer_check_interval"),
            (self.actor_update_interval, "actor_update_interval"),
            (self.eval_interval, "eval_interval"),
            (self.eval_episodes as u64, "eval_episodes"),
            (self.total_steps, "total_steps"),
        ];
        for (v, name) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !(self.initial_fraction > 0.0 && self.initial_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "initial_fraction {} outside (0, 1]",
                self.initial_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.tau) || self.learning_rate <= 0.0 || self.initial_alpha <= 0.0 {
            return Err(Error::Config("tau, learning_rate or initial_alpha out of range".into()));
        }
        if self.warmup >= self.total_steps {
            return Err(Error::Config(format!(
                "warmup {} leaves no training steps out of {}",
                self.warmup, self.total_steps
            )));
        }
        if self.topology == TopologyMode::StaticMaskFile && self.mask_dir.is_none() {
            return Err(Error::Config("static_mask_file topology needs a mask directory".into()));
        }
        self.target_config().validate()?;
        self.buffer_config().validate()
    }

    /// Sets one field from its flag-style name (`actor-sparsity`,
    /// `n_step`, ...).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
        }
        let value = value.trim();
        match key.trim().replace('_', "-").as_str() {
            "algo" | "algorithm" => self.algorithm = value.parse()?,
            "env" => self.env = value.to_string(),
            "profile" => self.profile = value.parse()?,
            "topology" => self.topology = value.parse()?,
            "actor-sparsity" => self.actor_sparsity = parse(key, value)?,
            "critic-sparsity" => self.critic_sparsity = parse(key, value)?,
            "learning-rate" | "lr" => self.learning_rate = parse(key, value)?,
            "discount" | "gamma" => self.discount = parse(key, value)?,
            "hidden" => {
                self.hidden = value
                    .split(',')
                    .map(|w| parse(key, w))
                    .collect::<Result<Vec<usize>>>()?
            }
            "batch-size" | "batch" => self.batch_size = parse(key, value)?,
            "warmup" => self.warmup = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "initial-fraction" | "zeta0" => self.initial_fraction = parse(key, value)?,
            "mask-update-interval" => self.mask_update_interval = parse(key, value)?,
            "buffer-check-interval" => self.buffer_check_interval = parse(key, value)?,
            "distance-threshold" => self.distance_threshold = parse(key, value)?,
            "multi-step-delay" => self.multi_step_delay = parse(key, value)?,
            "actor-update-interval" => self.actor_update_interval = parse(key, value)?,
            "n-step" => self.n_step = parse(key, value)?,
            "entropy-target" => {
                self.entropy_target = match value {
                    "auto" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "initial-alpha" => self.initial_alpha = parse(key, value)?,
            "exploration-sigma" => self.exploration_sigma = parse(key, value)?,
            "smoothing-sigma" => self.smoothing_sigma = parse(key, value)?,
            "smoothing-clip" => self.smoothing_clip = parse(key, value)?,
            "min-capacity" => self.min_capacity = parse(key, value)?,
            "max-capacity" => self.max_capacity = parse(key, value)?,
            "shrink-ratio" => self.shrink_ratio = parse(key, value)?,
            "distance-batch" => self.distance_batch = parse(key, value)?,
            "dynamic-buffer" => self.dynamic_buffer = parse(key, value)?,
            "eval-interval" => self.eval_interval = parse(key, value)?,
            "eval-episodes" => self.eval_episodes = parse(key, value)?,
            "steps" | "total-steps" => self.total_steps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "mask-dir" => self.mask_dir = Some(PathBuf::from(value)),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }
}
