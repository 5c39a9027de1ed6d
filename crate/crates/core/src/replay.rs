//! Replay storage with n-step segment sampling and policy-distance-driven
//! capacity control.

use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Genuine termination only; time-limit cut-offs are stored as `false`.
    pub done: bool,
    pub episode_id: u64,
    pub step_in_episode: u32,
}

/// Up to `n` consecutive transitions of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct NStepSegment {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    /// `r_t .. r_{t+m-1}`.
    pub rewards: Vec<f64>,
    /// `s_{t+1} .. s_{t+m}`; the last entry is the bootstrap state.
    pub next_states: Vec<Vec<f64>>,
    /// The segment ended on a genuine termination.
    pub terminal: bool,
}

impl NStepSegment {
    pub fn effective_n(&self) -> usize {
        self.rewards.len()
    }

    pub fn bootstrap_state(&self) -> &[f64] {
        self.next_states.last().expect("segments are never empty")
    }
}

/// Anything that maps a batch of states to deterministic actions.
pub trait DeterministicPolicy {
    fn act(&self, states: ArrayView2<f64>) -> Result<Array2<f64>>;
}

impl<F> DeterministicPolicy for F
where
    F: Fn(ArrayView2<f64>) -> Array2<f64>,
{
    fn act(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self(states))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferConfig {
    pub min_capacity: usize,
    pub max_capacity: usize,
    pub distance_threshold: f64,
    pub shrink_ratio: f64,
    pub check_interval: u64,
    pub distance_batch: usize,
}

impl BufferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_capacity == 0 || self.min_capacity > self.max_capacity {
            return Err(Error::Config(format!(
                "buffer capacity range [{}, {}] is empty",
                self.min_capacity, self.max_capacity
            )));
        }
        if !(self.shrink_ratio > 0.0 && self.shrink_ratio < 1.0) {
            return Err(Error::Config(format!(
                "shrink ratio {} must lie in (0, 1)",
                self.shrink_ratio
            )));
        }
        if self.check_interval == 0 || self.distance_batch == 0 {
            return Err(Error::Config(
                "check interval and distance batch must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// What a capacity check decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityAction {
    NotDue,
    BelowMinimum,
    AtMaximum,
    WithinThreshold,
    Dropped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityAdjustment {
    pub action: CapacityAction,
    pub distance: Option<f64>,
    pub dropped: usize,
    pub size_before: usize,
    pub size_after: usize,
}

/// Insertion-ordered ring of transitions whose capacity floats between
/// `min_capacity` and `max_capacity`.
#[derive(Debug, Clone)]
pub struct DynamicBuffer {
    config: BufferConfig,
    storage: VecDeque<Transition>,
    dropped_total: usize,
}

impl DynamicBuffer {
    pub fn new(config: BufferConfig) -> Result<Self> {
        config.validate()?;
        Ok(DynamicBuffer {
            config,
            storage: VecDeque::new(),
            dropped_total: 0,
        })
    }

    pub fn config(&self) -> &BufferConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Transitions removed by capacity control so far (ring evictions excluded).
    pub fn dropped_total(&self) -> usize {
        self.dropped_total
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.storage.get(i)
    }

    /// Appends as newest, evicting the single oldest entry when full.
    pub fn push(&mut self, transition: Transition) {
        if self.storage.len() == self.config.max_capacity {
            self.storage.pop_front();
        }
        self.storage.push_back(transition);
    }

    /// The segment starting at stored index `start`, at most `n` long,
    /// truncated at termination or the newest stored step of its episode.
    pub fn segment_at(&self, start: usize, n: usize) -> Result<NStepSegment> {
        let first = self.storage.get(start).ok_or(Error::EmptyBuffer)?;
        let n = n.max(1);
        let mut rewards = Vec::with_capacity(n);
        let mut next_states = Vec::with_capacity(n);
        let mut terminal = false;
        let mut j = start;
        loop {
            let tr = &self.storage[j];
            rewards.push(tr.reward);
            next_states.push(tr.next_state.clone());
            if tr.done {
                terminal = true;
                break;
            }
            if rewards.len() == n {
                break;
            }
            match self.storage.get(j + 1) {
                Some(next) if next.episode_id == first.episode_id => j += 1,
                _ => break,
            }
        }
        Ok(NStepSegment {
            state: first.state.clone(),
            action: first.action.clone(),
            rewards,
            next_states,
            terminal,
        })
    }

    /// Uniform start indices, with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.storage.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let len = self.storage.len();
        Ok((0..batch_size).map(|_| rng.random_range(0..len)).collect())
    }

    pub fn sample_nstep<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<NStepSegment>> {
        self.sample_indices(batch_size, rng)?
            .into_iter()
            .map(|i| self.segment_at(i, n))
            .collect()
    }

    /// Mean Euclidean distance between the policy's actions and the stored
    /// actions over the `distance_batch` oldest transitions.
    pub fn policy_distance<P: DeterministicPolicy + ?Sized>(
        &self,
        policy: &P,
        distance_batch: usize,
    ) -> Result<f64> {
        if distance_batch == 0 || self.storage.len() < distance_batch {
            return Err(Error::InsufficientData {
                needed: distance_batch.max(1),
                available: self.storage.len(),
            });
        }
        let oldest: Vec<&Transition> = self.storage.iter().take(distance_batch).collect();
        let sd = oldest[0].state.len();
        let states = Array2::from_shape_fn((distance_batch, sd), |(i, j)| oldest[i].state[j]);
        let actions = policy.act(states.view())?;
        if actions.nrows() != distance_batch || actions.ncols() != oldest[0].action.len() {
            return Err(Error::DimensionMismatch(format!(
                "policy returned {:?} for {} stored actions of width {}",
                actions.dim(),
                distance_batch,
                oldest[0].action.len()
            )));
        }
        let total: f64 = actions
            .outer_iter()
            .zip(&oldest)
            .map(|(pi, tr)| {
                pi.iter()
                    .zip(&tr.action)
                    .map(|(p, a)| (p - a) * (p - a))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum();
        Ok(total / distance_batch as f64)
    }

    /// Removes the `count` oldest transitions.
    pub fn drop_oldest(&mut self, count: usize) -> usize {
        let count = count.min(self.storage.len());
        self.storage.drain(..count);
        self.dropped_total += count;
        count
    }

    /// Periodic capacity check: inside `(min, max)`, a measured distance
    /// above the threshold drops `floor(ρ · size)` oldest transitions,
    /// never going below `min_capacity`.
    pub fn adjust_capacity<P: DeterministicPolicy + ?Sized>(
        &mut self,
        policy: &P,
        global_step: u64,
    ) -> Result<CapacityAdjustment> {
        let size = self.storage.len();
        let mut record = CapacityAdjustment {
            action: CapacityAction::NotDue,
            distance: None,
            dropped: 0,
            size_before: size,
            size_after: size,
        };
        if global_step % self.config.check_interval != 0 {
            return Ok(record);
        }
        if size <= self.config.min_capacity {
            record.action = CapacityAction::BelowMinimum;
            return Ok(record);
        }
        if size >= self.config.max_capacity {
            record.action = CapacityAction::AtMaximum;
            return Ok(record);
        }
        let distance = self.policy_distance(policy, self.config.distance_batch.min(size))?;
        record.distance = Some(distance);
        if distance > self.config.distance_threshold {
            let want = (self.config.shrink_ratio * size as f64).floor() as usize;
            let allowed = size - self.config.min_capacity;
            record.dropped = self.drop_oldest(want.min(allowed));
            record.action = CapacityAction::Dropped;
        } else {
            record.action = CapacityAction::WithinThreshold;
        }
        record.size_after = self.storage.len();
        Ok(record)
    }
}
