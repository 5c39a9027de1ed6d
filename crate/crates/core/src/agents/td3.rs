use ndarray::{s, Array1, ArrayView2};
use rand_chacha::ChaCha8Rng;

use super::{
    check_finite, critic_flops, mean_squared_error, segment_actions, segment_states, single_row, Learner,
    LearnerSettings,
};
use crate::accounting::{self, Algorithm};
use crate::error::{Error, Result};
use crate::net::{Adam, Gradients, Head, Mlp};
use crate::policy::{explore, state_action, DeterministicPolicy};
use crate::replay::{DynamicBuffer, NStepSegment};
use crate::sparsity::{evolve_network, GrowMode};
use crate::targets::{smoothing_noise, td3_targets_with_noise};

/// Twin-critic deterministic actor-critic with a target actor.
#[derive(Debug, Clone)]
pub struct Td3Agent {
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critics: [Mlp; 2],
    pub critic_targets: [Mlp; 2],
    pub actor_opt: Adam,
    pub critic_opts: [Adam; 2],
    pub settings: LearnerSettings,
    critic_updates: u64,
    actor_updates: u64,
    flops: f64,
    actor_fwd: f64,
    critic_fwd: f64,
}

/// Outcome of one critic update.
#[derive(Debug, Clone)]
pub struct CriticStep {
    pub targets: Array1<f64>,
    pub losses: [f64; 2],
    /// Dense gradients at the pre-update weights.
    pub grads: [Gradients; 2],
}

#[derive(Debug, Clone)]
pub struct ActorStep {
    pub loss: f64,
    pub grads: Gradients,
}

impl Td3Agent {
    /// Targets start as exact copies of the online networks.
    pub fn from_networks(actor: Mlp, critics: [Mlp; 2], settings: LearnerSettings) -> Result<Self> {
        if actor.head() != Head::Tanh {
            return Err(Error::Config("the deterministic actor needs a tanh head".into()));
        }
        let lr = settings.learning_rate;
        Ok(Td3Agent {
            actor_target: actor.clone(),
            critic_targets: critics.clone(),
            actor_opt: Adam::new(&actor, lr),
            critic_opts: [Adam::new(&critics[0], lr), Adam::new(&critics[1], lr)],
            actor_fwd: accounting::forward_flops(&actor) as f64,
            critic_fwd: critic_flops(&critics),
            actor,
            critics,
            settings,
            critic_updates: 0,
            actor_updates: 0,
            flops: 0.0,
        })
    }

    /// Regresses both critics on the shared min-target, with explicit
    /// target-smoothing noise.
    pub fn critic_update(&mut self, segments: &[NStepSegment], noise: ArrayView2<f64>) -> Result<CriticStep> {
        let y = td3_targets_with_noise(
            segments,
            &self.actor_target,
            (&self.critic_targets[0], &self.critic_targets[1]),
            self.settings.discount,
            noise,
        )?;
        let x = state_action(segment_states(segments).view(), segment_actions(segments).view())?;
        let mut losses = [0.0; 2];
        let mut grads = Vec::with_capacity(2);
        for j in 0..2 {
            let (q, cache) = self.critics[j].forward_batch(x.view())?;
            let (loss, g_out) = mean_squared_error(&q.column(0).to_owned(), &y);
            let g = self.critics[j].backward_dense(&cache, g_out.view())?;
            check_finite(loss, &g, "critic")?;
            self.critic_opts[j].step(&mut self.critics[j], &g)?;
            losses[j] = loss;
            grads.push(g);
        }
        let g2 = grads.pop().expect("two");
        let g1 = grads.pop().expect("two");
        Ok(CriticStep {
            targets: y,
            losses,
            grads: [g1, g2],
        })
    }

    /// Ascends `Q_1(s, π(s))`.
    pub fn actor_update(&mut self, states: ArrayView2<f64>) -> Result<ActorStep> {
        let (actions, a_cache) = self.actor.forward_batch(states)?;
        let x = state_action(states, actions.view())?;
        let (q, q_cache) = self.critics[0].forward_batch(x.view())?;
        let b = states.nrows() as f64;
        let loss = -q.sum() / b;
        let g_q = q.mapv(|_| -1.0 / b);
        let g_x = self.critics[0].input_gradient(&q_cache, g_q.view())?;
        let g_a = g_x.slice(s![.., states.ncols()..]);
        let grads = self.actor.backward_dense(&a_cache, g_a)?;
        check_finite(loss, &grads, "actor")?;
        self.actor_opt.step(&mut self.actor, &grads)?;
        Ok(ActorStep { loss, grads })
    }

    /// Polyak-averages all three targets and masks them with the online
    /// masks.
    pub fn update_targets(&mut self) -> Result<()> {
        let tau = self.settings.tau;
        self.actor_target.soft_update_from(&self.actor, tau)?;
        for j in 0..2 {
            self.critic_targets[j].soft_update_from(&self.critics[j], tau)?;
        }
        Ok(())
    }

    fn evolving(&self) -> bool {
        self.settings.grow_mode != GrowMode::Frozen
    }
}

impl Learner for Td3Agent {
    fn actor(&self) -> &Mlp {
        &self.actor
    }

    fn critics(&self) -> [&Mlp; 2] {
        [&self.critics[0], &self.critics[1]]
    }

    fn explore(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let mut a = self.actor.act(single_row(state))?;
        explore(&mut a, self.settings.targets.exploration_sigma, rng);
        Ok(a.into_raw_vec_and_offset().0)
    }

    fn train_step(&mut self, buffer: &DynamicBuffer, t: u64, rng: &mut ChaCha8Rng) -> Result<()> {
        let st = self.settings.clone();
        let n = st.targets.n_at(t);
        let segments = buffer.sample_nstep(st.batch_size, n, rng)?;
        let noise = smoothing_noise(segments.len(), self.actor.output_dim(), &st.targets, rng);
        let step = self.critic_update(&segments, noise.view())?;
        self.critic_updates += 1;
        self.flops += accounting::critic_update_flops(
            Algorithm::Td3,
            self.actor_fwd,
            self.critic_fwd,
            st.batch_size as f64,
        );
        let u = self.critic_updates;
        if self.evolving() && u % st.schedule.mask_update_interval == 0 {
            let zeta = st.schedule.fraction_at(t)?;
            for (j, g) in step.grads.iter().enumerate() {
                evolve_network(&mut self.critics[j], g, &mut self.critic_opts[j], zeta, st.grow_mode, rng)?;
            }
            self.critic_fwd = critic_flops(&self.critics);
        }
        if u % st.actor_update_interval == 0 {
            let states = segment_states(&segments);
            let astep = self.actor_update(states.view())?;
            self.actor_updates += 1;
            self.flops += accounting::actor_update_flops(
                Algorithm::Td3,
                self.actor_fwd,
                self.critic_fwd,
                st.batch_size as f64,
            );
            if self.evolving() && self.actor_updates % st.schedule.mask_update_interval == 0 {
                let zeta = st.schedule.fraction_at(t)?;
                evolve_network(&mut self.actor, &astep.grads, &mut self.actor_opt, zeta, st.grow_mode, rng)?;
                self.actor_fwd = accounting::forward_flops(&self.actor) as f64;
            }
            self.update_targets()?;
        }
        Ok(())
    }

    fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    fn actor_updates(&self) -> u64 {
        self.actor_updates
    }

    fn train_flops(&self) -> f64 {
        self.flops
    }
}
