//! Multi-step TD targets for TD3 and SAC.

mod tabular;

pub use tabular::{decompose_td_error, TabularMdp, TdErrorDecomposition, DEFAULT_NODE_BUDGET};

use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{DeterministicPolicy, QFunction, StochasticPolicy};
use crate::replay::NStepSegment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetConfig {
    pub n_step: usize,
    pub discount: f64,
    /// Steps before which targets fall back to one step.
    pub multi_step_delay: u64,
    pub smoothing_sigma: f64,
    pub smoothing_clip: f64,
    pub exploration_sigma: f64,
}

impl TargetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_step == 0 {
            return Err(Error::Config("n_step must be at least 1".into()));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::Config(format!(
                "discount {} must lie in (0, 1)",
                self.discount
            )));
        }
        Ok(())
    }

    /// `n` in force at `global_step`: one step until the delay has passed.
    pub fn n_at(&self, global_step: u64) -> usize {
        if global_step < self.multi_step_delay {
            1
        } else {
            self.n_step
        }
    }
}

/// `Σ_{k<m} γ^k r_k`.
pub fn discounted_sum(rewards: &[f64], gamma: f64) -> f64 {
    rewards
        .iter()
        .rev()
        .fold(0.0, |acc, &r| r + gamma * acc)
}

/// Multiplier on the bootstrap value: `γ^m`, or zero after termination.
pub fn bootstrap_weight(segment: &NStepSegment, gamma: f64) -> f64 {
    if segment.terminal {
        0.0
    } else {
        gamma.powi(segment.effective_n() as i32)
    }
}

fn bootstrap_states(segments: &[NStepSegment]) -> Result<Array2<f64>> {
    let first = segments.first().ok_or(Error::EmptyBuffer)?;
    let sd = first.state.len();
    Ok(Array2::from_shape_fn((segments.len(), sd), |(i, j)| {
        segments[i].bootstrap_state()[j]
    }))
}

/// Target-policy smoothing noise: `clip(N(0, σ̃), −c, c)` per entry.
pub fn smoothing_noise<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    cfg: &TargetConfig,
    rng: &mut R,
) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = rng.sample(StandardNormal);
        (cfg.smoothing_sigma * z).clamp(-cfg.smoothing_clip, cfg.smoothing_clip)
    })
}

/// TD3 n-step targets with explicit smoothing noise.
pub fn td3_targets_with_noise<A, Q1, Q2>(
    segments: &[NStepSegment],
    target_actor: &A,
    target_critics: (&Q1, &Q2),
    gamma: f64,
    noise: ArrayView2<f64>,
) -> Result<Array1<f64>>
where
    A: DeterministicPolicy + ?Sized,
    Q1: QFunction + ?Sized,
    Q2: QFunction + ?Sized,
{
    let next = bootstrap_states(segments)?;
    let mut actions = target_actor.act(next.view())?;
    if noise.dim() != actions.dim() {
        return Err(Error::DimensionMismatch(format!(
            "smoothing noise {:?} vs actions {:?}",
            noise.dim(),
            actions.dim()
        )));
    }
    Zip::from(&mut actions)
        .and(noise)
        .for_each(|a, &e| *a = (*a + e).clamp(-1.0, 1.0));
    let q1 = target_critics.0.q_values(next.view(), actions.view())?;
    let q2 = target_critics.1.q_values(next.view(), actions.view())?;
    Ok(Array1::from_shape_fn(segments.len(), |i| {
        let seg = &segments[i];
        let w = bootstrap_weight(seg, gamma);
        let boot = if w == 0.0 { 0.0 } else { w * q1[i].min(q2[i]) };
        discounted_sum(&seg.rewards, gamma) + boot
    }))
}

/// TD3 n-step targets: `Σ γ^k r_k + γ^m min_j Q'_j(s_{t+m}, π'(s_{t+m}) + ε)`.
pub fn td3_targets<A, Q1, Q2, R>(
    segments: &[NStepSegment],
    target_actor: &A,
    target_critics: (&Q1, &Q2),
    cfg: &TargetConfig,
    rng: &mut R,
) -> Result<Array1<f64>>
where
    A: DeterministicPolicy + ?Sized,
    Q1: QFunction + ?Sized,
    Q2: QFunction + ?Sized,
    R: Rng + ?Sized,
{
    let ad = match segments.first() {
        Some(s) => s.action.len(),
        None => return Ok(Array1::zeros(0)),
    };
    let noise = smoothing_noise(segments.len(), ad, cfg, rng);
    td3_targets_with_noise(segments, target_actor, target_critics, cfg.discount, noise.view())
}

/// Single-segment convenience form of [`td3_targets`].
pub fn td3_target<A, Q1, Q2, R>(
    segment: &NStepSegment,
    target_actor: &A,
    target_critics: (&Q1, &Q2),
    cfg: &TargetConfig,
    rng: &mut R,
) -> Result<f64>
where
    A: DeterministicPolicy + ?Sized,
    Q1: QFunction + ?Sized,
    Q2: QFunction + ?Sized,
    R: Rng + ?Sized,
{
    let y = td3_targets(std::slice::from_ref(segment), target_actor, target_critics, cfg, rng)?;
    Ok(y[0])
}

/// Rows of the intermediate-state matrix used by SAC targets: every
/// `s_{t+k+1}` of every segment, segment-major.
pub fn sac_sample_rows(segments: &[NStepSegment]) -> usize {
    segments.iter().map(NStepSegment::effective_n).sum()
}

/// SAC n-step targets with explicit reparameterization noise (one row per
/// intermediate state, in [`sac_sample_rows`] order):
///
/// `Σ γ^k r_k + γ^m min_j Q'_j(s_{t+m}, ã_{t+m}) − α Σ_k γ^{k+1} log π(ã_{t+k+1} | s_{t+k+1})`
///
/// On termination the bootstrap and the entropy term at the terminal state
/// are omitted.
pub fn sac_targets_with_noise<P, Q1, Q2>(
    segments: &[NStepSegment],
    target_critics: (&Q1, &Q2),
    policy: &P,
    alpha: f64,
    gamma: f64,
    noise: ArrayView2<f64>,
) -> Result<Array1<f64>>
where
    P: StochasticPolicy + ?Sized,
    Q1: QFunction + ?Sized,
    Q2: QFunction + ?Sized,
{
    let first = segments.first().ok_or(Error::EmptyBuffer)?;
    let sd = first.state.len();
    let rows = sac_sample_rows(segments);
    let mut states = Array2::zeros((rows, sd));
    let mut r = 0;
    for seg in segments {
        for s in &seg.next_states {
            states.row_mut(r).assign(&ndarray::ArrayView1::from(s.as_slice()));
            r += 1;
        }
    }
    let (actions, log_probs) = policy.sample_with_noise(states.view(), noise)?;

    let boot_rows: Vec<usize> = segments
        .iter()
        .scan(0usize, |offset, seg| {
            *offset += seg.effective_n();
            Some(*offset - 1)
        })
        .collect();
    let boot_states = states.select(ndarray::Axis(0), &boot_rows);
    let boot_actions = actions.select(ndarray::Axis(0), &boot_rows);
    let q1 = target_critics.0.q_values(boot_states.view(), boot_actions.view())?;
    let q2 = target_critics.1.q_values(boot_states.view(), boot_actions.view())?;

    let mut out = Array1::zeros(segments.len());
    let mut offset = 0;
    for (i, seg) in segments.iter().enumerate() {
        let m = seg.effective_n();
        let w = bootstrap_weight(seg, gamma);
        let boot = if w == 0.0 { 0.0 } else { w * q1[i].min(q2[i]) };
        let entropy_terms = if seg.terminal { m - 1 } else { m };
        let entropy: f64 = (0..entropy_terms)
            .map(|k| gamma.powi(k as i32 + 1) * log_probs[offset + k])
            .sum();
        out[i] = discounted_sum(&seg.rewards, gamma) + boot - alpha * entropy;
        offset += m;
    }
    Ok(out)
}

pub fn sac_targets<P, Q1, Q2, R>(
    segments: &[NStepSegment],
    target_critics: (&Q1, &Q2),
    policy: &P,
    alpha: f64,
    cfg: &TargetConfig,
    rng: &mut R,
) -> Result<Array1<f64>>
where
    P: StochasticPolicy + ?Sized,
    Q1: QFunction + ?Sized,
    Q2: QFunction + ?Sized,
    R: Rng + ?Sized,
{
    let noise = crate::policy::standard_normal(sac_sample_rows(segments), policy.action_dim(), rng);
    sac_targets_with_noise(segments, target_critics, policy, alpha, cfg.discount, noise.view())
}

pub fn sac_target<P, Q1, Q2, R>(
    segment: &NStepSegment,
    target_critics: (&Q1, &Q2),
    policy: &P,
    alpha: f64,
    cfg: &TargetConfig,
    rng: &mut R,
) -> Result<f64>
where
    P: StochasticPolicy + ?Sized,
    Q1: QFunction + ?Sized,
    Q2: QFunction + ?Sized,
    R: Rng + ?Sized,
{
    let y = sac_targets(std::slice::from_ref(segment), target_critics, policy, alpha, cfg, rng)?;
    Ok(y[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Head, MaskedLinear, Mlp};
    use ndarray::{array, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Critic that ignores its input and returns `value`.
    fn constant_critic(sd: usize, ad: usize, value: f64) -> Mlp {
        let layer = MaskedLinear {
            in_dim: sd + ad,
            out_dim: 1,
            weights: Array2::zeros((1, sd + ad)),
            mask: Array2::from_elem((1, sd + ad), true),
            bias: array![value],
            target_sparsity: 0.0,
        };
        Mlp::from_layers(vec![layer], Head::Identity).unwrap()
    }

    fn constant_actor(sd: usize) -> Mlp {
        let layer = MaskedLinear {
            in_dim: sd,
            out_dim: 1,
            weights: Array2::zeros((1, sd)),
            mask: Array2::from_elem((1, sd), true),
            bias: array![0.3],
            target_sparsity: 0.0,
        };
        Mlp::from_layers(vec![layer], Head::Tanh).unwrap()
    }

    /// Log-density fixed at `log_prob`, actions zero.
    struct ConstantLogProb {
        log_prob: f64,
    }

    impl StochasticPolicy for ConstantLogProb {
        fn action_dim(&self) -> usize {
            1
        }
        fn sample_with_noise(
            &self,
            states: ArrayView2<f64>,
            _noise: ArrayView2<f64>,
        ) -> Result<(Array2<f64>, Array1<f64>)> {
            Ok((
                Array2::zeros((states.nrows(), 1)),
                Array1::from_elem(states.nrows(), self.log_prob),
            ))
        }
    }

    fn seg(rewards: &[f64], terminal: bool) -> NStepSegment {
        NStepSegment {
            state: vec![0.0, 0.0],
            action: vec![0.0],
            rewards: rewards.to_vec(),
            next_states: rewards.iter().map(|_| vec![1.0, -1.0]).collect(),
            terminal,
        }
    }

    fn cfg() -> TargetConfig {
        TargetConfig {
            n_step: 3,
            discount: 0.99,
            multi_step_delay: 100,
            smoothing_sigma: 0.0,
            smoothing_clip: 0.5,
            exploration_sigma: 0.1,
        }
    }

    #[test]
    fn td3_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let actor = constant_actor(2);
        let two = constant_critic(2, 1, 2.0);
        let three = constant_critic(2, 1, 3.0);
        let y = td3_target(&seg(&[1.0], false), &actor, (&two, &three), &cfg(), &mut rng).unwrap();
        assert!((y - 2.98).abs() < 1e-12);

        let zero = constant_critic(2, 1, 0.0);
        let y = td3_target(&seg(&[1.0, 1.0, 1.0], false), &actor, (&zero, &three), &cfg(), &mut rng).unwrap();
        assert!((y - 2.9701).abs() < 1e-12);

        let y = td3_target(&seg(&[1.0, 1.0], true), &actor, (&two, &three), &cfg(), &mut rng).unwrap();
        assert!((y - 1.99).abs() < 1e-12);
    }

    #[test]
    fn td3_bootstrap_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let actor = constant_actor(2);
        let s = seg(&[0.5, -0.25], false);
        let lo = constant_critic(2, 1, 1.0);
        let hi = constant_critic(2, 1, 1.75);
        let y0 = td3_target(&s, &actor, (&lo, &lo), &cfg(), &mut rng).unwrap();
        let y1 = td3_target(&s, &actor, (&hi, &hi), &cfg(), &mut rng).unwrap();
        assert!((y1 - y0 - 0.99f64.powi(2) * 0.75).abs() < 1e-12);
    }

    #[test]
    fn delay_forces_one_step() {
        let c = cfg();
        assert_eq!(c.n_at(0), 1);
        assert_eq!(c.n_at(99), 1);
        assert_eq!(c.n_at(100), 3);
    }

    #[test]
    fn sac_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let zero = constant_critic(2, 1, 0.0);
        let l = -0.7;
        let policy = ConstantLogProb { log_prob: l };
        let g: f64 = 0.99;
        let alpha = 0.2;
        let y = sac_target(&seg(&[0.0, 0.0], false), (&zero, &zero), &policy, alpha, &cfg(), &mut rng).unwrap();
        assert!((y - (-alpha * (g + g * g) * l)).abs() < 1e-12);

        // One step: r + γ (min Q − α log π).
        let q = constant_critic(2, 1, 4.0);
        let y = sac_target(&seg(&[1.5], false), (&q, &q), &policy, alpha, &cfg(), &mut rng).unwrap();
        assert!((y - (1.5 + g * (4.0 - alpha * l))).abs() < 1e-12);

        // α = 0 reduces to the plain n-step value.
        let y = sac_target(&seg(&[1.0, 1.0], false), (&q, &q), &policy, 0.0, &cfg(), &mut rng).unwrap();
        assert!((y - (1.0 + g + g * g * 4.0)).abs() < 1e-12);

        // Terminal: no bootstrap and no entropy at the terminal state.
        let y = sac_target(&seg(&[1.0, 1.0], true), (&q, &q), &policy, alpha, &cfg(), &mut rng).unwrap();
        assert!((y - (1.0 + g - alpha * g * l)).abs() < 1e-12);
    }

    #[test]
    fn discounted_sum_matches_powers() {
        let r = [1.0, -2.0, 0.5, 3.0];
        let direct: f64 = r.iter().enumerate().map(|(k, x)| 0.9f64.powi(k as i32) * x).sum();
        assert!((discounted_sum(&r, 0.9) - direct).abs() < 1e-14);
    }
}
