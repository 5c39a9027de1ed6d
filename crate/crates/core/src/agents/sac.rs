use ndarray::{s, Array1, Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;

use super::td3::CriticStep;
use super::{
    check_finite, critic_flops, mean_squared_error, segment_actions, segment_states, single_row, Learner,
    LearnerSettings,
};
use crate::accounting::{self, Algorithm};
use crate::error::{Error, Result};
use crate::net::{Adam, Gradients, Head, Mlp};
use crate::policy::{standard_normal, state_action, SquashedGaussian, StochasticPolicy};
use crate::replay::{DynamicBuffer, NStepSegment};
use crate::sparsity::{evolve_network, GrowMode};
use crate::targets::{sac_sample_rows, sac_targets_with_noise};

/// Adam on the scalar `log α`.
#[derive(Debug, Clone, PartialEq)]
struct ScalarAdam {
    lr: f64,
    m: f64,
    v: f64,
    t: i32,
}

impl ScalarAdam {
    fn step(&mut self, x: &mut f64, g: f64) {
        self.t += 1;
        self.m = 0.9 * self.m + 0.1 * g;
        self.v = 0.999 * self.v + 0.001 * g * g;
        let m_hat = self.m / (1.0 - 0.9f64.powi(self.t));
        let v_hat = self.v / (1.0 - 0.999f64.powi(self.t));
        *x -= self.lr * m_hat / (v_hat.sqrt() + 1e-8);
    }
}

/// Twin-critic soft actor-critic with a tanh-squashed Gaussian actor and
/// automatic temperature.
#[derive(Debug, Clone)]
pub struct SacAgent {
    pub actor: Mlp,
    pub critics: [Mlp; 2],
    pub critic_targets: [Mlp; 2],
    pub actor_opt: Adam,
    pub critic_opts: [Adam; 2],
    pub log_alpha: f64,
    pub settings: LearnerSettings,
    alpha_opt: ScalarAdam,
    critic_updates: u64,
    actor_updates: u64,
    flops: f64,
    actor_fwd: f64,
    critic_fwd: f64,
}

#[derive(Debug, Clone)]
pub struct SacActorStep {
    pub loss: f64,
    pub grads: Gradients,
    pub log_probs: Array1<f64>,
}

impl SacAgent {
    pub fn from_networks(actor: Mlp, critics: [Mlp; 2], settings: LearnerSettings) -> Result<Self> {
        if actor.head() != Head::Gaussian {
            return Err(Error::Config("the stochastic actor needs a Gaussian head".into()));
        }
        let lr = settings.learning_rate;
        Ok(SacAgent {
            critic_targets: critics.clone(),
            actor_opt: Adam::new(&actor, lr),
            critic_opts: [Adam::new(&critics[0], lr), Adam::new(&critics[1], lr)],
            log_alpha: settings.initial_alpha.ln(),
            alpha_opt: ScalarAdam {
                lr,
                m: 0.0,
                v: 0.0,
                t: 0,
            },
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

    pub fn alpha_value(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// `noise` has one row per intermediate state, see [`sac_sample_rows`].
    pub fn critic_update(&mut self, segments: &[NStepSegment], noise: ArrayView2<f64>) -> Result<CriticStep> {
        let y = sac_targets_with_noise(
            segments,
            (&self.critic_targets[0], &self.critic_targets[1]),
            &self.actor,
            self.alpha_value(),
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

    /// Minimizes `E[α log π(ã|s) − min_j Q_j(s, ã)]` through the
    /// reparameterized sample `ã = tanh(μ + σ ξ)`.
    pub fn actor_update(&mut self, states: ArrayView2<f64>, noise: ArrayView2<f64>) -> Result<SacActorStep> {
        let alpha = self.alpha_value();
        let (raw, a_cache) = self.actor.forward_batch(states)?;
        let sample = SquashedGaussian::from_raw(raw.view(), noise)?;
        let x = state_action(states, sample.actions.view())?;
        let (q1, c1) = self.critics[0].forward_batch(x.view())?;
        let (q2, c2) = self.critics[1].forward_batch(x.view())?;
        let b = states.nrows();
        let bf = b as f64;
        let mut g1 = Array2::zeros((b, 1));
        let mut g2 = Array2::zeros((b, 1));
        let mut loss = 0.0;
        for i in 0..b {
            let (a, c) = (q1[[i, 0]], q2[[i, 0]]);
            if a <= c {
                g1[[i, 0]] = -1.0 / bf;
            } else {
                g2[[i, 0]] = -1.0 / bf;
            }
            loss += (alpha * sample.log_probs[i] - a.min(c)) / bf;
        }
        let sd = states.ncols();
        let gx = self.critics[0].input_gradient(&c1, g1.view())? + self.critics[1].input_gradient(&c2, g2.view())?;
        let w_logp = Array1::from_elem(b, alpha / bf);
        let g_raw = sample.raw_gradient(&w_logp, gx.slice(s![.., sd..]));
        let grads = self.actor.backward_dense(&a_cache, g_raw.view())?;
        check_finite(loss, &grads, "actor")?;
        self.actor_opt.step(&mut self.actor, &grads)?;
        Ok(SacActorStep {
            loss,
            grads,
            log_probs: sample.log_probs,
        })
    }

    /// Temperature loss `mean(−α log π − α H̄)`, stepped in `log α`.
    pub fn alpha_update(&mut self, log_probs: &Array1<f64>) -> Result<f64> {
        let alpha = self.alpha_value();
        let h = self.settings.entropy_target;
        let gap = log_probs.iter().map(|&lp| -lp - h).sum::<f64>() / log_probs.len() as f64;
        let loss = alpha * gap;
        let grad = alpha * gap;
        if !grad.is_finite() {
            return Err(Error::Divergence {
                step: 0,
                detail: format!("temperature gradient {grad} is not finite"),
            });
        }
        self.alpha_opt.step(&mut self.log_alpha, grad);
        Ok(loss)
    }

    pub fn update_targets(&mut self) -> Result<()> {
        for j in 0..2 {
            self.critic_targets[j].soft_update_from(&self.critics[j], self.settings.tau)?;
        }
        Ok(())
    }
}

impl Learner for SacAgent {
    fn actor(&self) -> &Mlp {
        &self.actor
    }

    fn critics(&self) -> [&Mlp; 2] {
        [&self.critics[0], &self.critics[1]]
    }

    fn explore(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let (a, _) = self.actor.sample(single_row(state), rng)?;
        Ok(a.into_raw_vec_and_offset().0)
    }

    fn train_step(&mut self, buffer: &DynamicBuffer, t: u64, rng: &mut ChaCha8Rng) -> Result<()> {
        let st = self.settings.clone();
        let n = st.targets.n_at(t);
        let segments = buffer.sample_nstep(st.batch_size, n, rng)?;
        let ad = self.actor.action_dim();
        let noise = standard_normal(sac_sample_rows(&segments), ad, rng);
        let step = self.critic_update(&segments, noise.view())?;
        self.critic_updates += 1;
        self.flops += accounting::critic_update_flops(
            Algorithm::Sac,
            self.actor_fwd,
            self.critic_fwd,
            st.batch_size as f64,
        );
        let u = self.critic_updates;
        let evolving = st.grow_mode != GrowMode::Frozen;
        if evolving && u % st.schedule.mask_update_interval == 0 {
            let zeta = st.schedule.fraction_at(t)?;
            for (j, g) in step.grads.iter().enumerate() {
                evolve_network(&mut self.critics[j], g, &mut self.critic_opts[j], zeta, st.grow_mode, rng)?;
            }
            self.critic_fwd = critic_flops(&self.critics);
        }
        if u % st.actor_update_interval == 0 {
            let states = segment_states(&segments);
            let noise = standard_normal(states.nrows(), ad, rng);
            let astep = self.actor_update(states.view(), noise.view())?;
            self.alpha_update(&astep.log_probs)?;
            self.actor_updates += 1;
            self.flops += accounting::actor_update_flops(
                Algorithm::Sac,
                self.actor_fwd,
                self.critic_fwd,
                st.batch_size as f64,
            );
            if evolving && self.actor_updates % st.schedule.mask_update_interval == 0 {
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

    fn alpha(&self) -> Option<f64> {
        Some(self.alpha_value())
    }
}
