//! Built-in continuous-control tasks.
//!
//! `pendulum`: swing-up of a torque-limited pendulum (observation
//! `(cos θ, sin θ, θ̇)`, torque in `[-2, 2]`, 200-step time limit, never
//! terminates).
//!
//! `pointmass`: a 2-D double integrator that must reach the origin
//! (observation `(x, y, vx, vy)`, acceleration in `[-1, 1]²`, terminates
//! within 0.05 of the goal, 200-step time limit).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Static description of an environment's interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_episode_steps: u32,
}

impl EnvSpec {
    /// Maps a normalized action in `[-1, 1]^d` onto the action box.
    pub fn scale_action(&self, normalized: &[f64]) -> Vec<f64> {
        normalized
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(&a, (&lo, &hi))| lo + (a.clamp(-1.0, 1.0) + 1.0) * 0.5 * (hi - lo))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Genuine termination.
    pub done: bool,
    /// Time-limit cut-off.
    pub truncated: bool,
}

/// An episodic continuous-control task. Actions are in environment units.
pub trait Env {
    fn spec(&self) -> &EnvSpec;
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> StepResult;
    fn steps(&self) -> u32;
}

/// Registered environment names.
pub const REGISTERED: &[&str] = &["pendulum", "pointmass"];

/// Creates a fresh, independently seeded environment.
pub fn make_env(name: &str, seed: u64) -> Result<Box<dyn Env + Send>> {
    match name {
        "pendulum" => Ok(Box::new(Pendulum::new(seed))),
        "pointmass" => Ok(Box::new(PointMass::new(seed))),
        _ => Err(Error::UnknownEnv {
            name: name.to_string(),
            registered: REGISTERED.join(", "),
        }),
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

pub struct Pendulum {
    spec: EnvSpec,
    rng: ChaCha8Rng,
    pub theta: f64,
    pub theta_dot: f64,
    steps: u32,
}

impl Pendulum {
    pub const MAX_SPEED: f64 = 8.0;
    pub const MAX_TORQUE: f64 = 2.0;
    pub const DT: f64 = 0.05;
    pub const G: f64 = 10.0;
    pub const MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;

    pub fn new(seed: u64) -> Self {
        Pendulum {
            spec: EnvSpec {
                name: "pendulum".into(),
                state_dim: 3,
                action_dim: 1,
                action_low: vec![-Self::MAX_TORQUE],
                action_high: vec![Self::MAX_TORQUE],
                max_episode_steps: 200,
            },
            rng: ChaCha8Rng::seed_from_u64(seed),
            theta: 0.0,
            theta_dot: 0.0,
            steps: 0,
        }
    }

    /// Sets the physical state directly (tests and diagnostics).
    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
        self.steps = 0;
    }

    pub fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

impl Env for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        self.theta = self.rng.random_range(-PI..PI);
        self.theta_dot = self.rng.random_range(-1.0..1.0);
        self.steps = 0;
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        let u = action[0].clamp(-Self::MAX_TORQUE, Self::MAX_TORQUE);
        let (th, thdot) = (self.theta, self.theta_dot);
        // Cost is charged on the pre-step state.
        let reward = -(wrap_angle(th).powi(2) + 0.1 * thdot * thdot + 0.001 * u * u);
        let (g, m, l, dt) = (Self::G, Self::MASS, Self::LENGTH, Self::DT);
        let accel = 3.0 * g / (2.0 * l) * th.sin() + 3.0 / (m * l * l) * u;
        let new_thdot = (thdot + accel * dt).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        self.theta = wrap_angle(th + new_thdot * dt);
        self.theta_dot = new_thdot;
        self.steps += 1;
        StepResult {
            observation: self.observation(),
            reward,
            done: false,
            truncated: self.steps >= self.spec.max_episode_steps,
        }
    }

    fn steps(&self) -> u32 {
        self.steps
    }
}

pub struct PointMass {
    spec: EnvSpec,
    rng: ChaCha8Rng,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    steps: u32,
}

impl PointMass {
    pub const DT: f64 = 0.05;
    pub const GOAL_RADIUS: f64 = 0.05;
    /// Positions are confined to `[-2, 2]²`, speeds to `[-2, 2]`.
    pub const BOUND: f64 = 2.0;

    pub fn new(seed: u64) -> Self {
        PointMass {
            spec: EnvSpec {
                name: "pointmass".into(),
                state_dim: 4,
                action_dim: 2,
                action_low: vec![-1.0, -1.0],
                action_high: vec![1.0, 1.0],
                max_episode_steps: 200,
            },
            rng: ChaCha8Rng::seed_from_u64(seed),
            position: [0.0; 2],
            velocity: [0.0; 2],
            steps: 0,
        }
    }

    pub fn set_state(&mut self, position: [f64; 2], velocity: [f64; 2]) {
        self.position = position;
        self.velocity = velocity;
        self.steps = 0;
    }

    pub fn observation(&self) -> Vec<f64> {
        vec![
            self.position[0],
            self.position[1],
            self.velocity[0],
            self.velocity[1],
        ]
    }
}

impl Env for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        self.position = [self.rng.random_range(-1.0..1.0), self.rng.random_range(-1.0..1.0)];
        self.velocity = [0.0; 2];
        self.steps = 0;
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        let a = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
        for d in 0..2 {
            self.velocity[d] = (self.velocity[d] + a[d] * Self::DT).clamp(-Self::BOUND, Self::BOUND);
            self.position[d] = (self.position[d] + self.velocity[d] * Self::DT).clamp(-Self::BOUND, Self::BOUND);
        }
        self.steps += 1;
        let dist = self.position[0].hypot(self.position[1]);
        let reward = -dist - 0.01 * (a[0] * a[0] + a[1] * a[1]);
        let done = dist <= Self::GOAL_RADIUS;
        StepResult {
            observation: self.observation(),
            reward,
            done,
            truncated: !done && self.steps >= self.spec.max_episode_steps,
        }
    }

    fn steps(&self) -> u32 {
        self.steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn energy(p: &Pendulum) -> f64 {
        // θ̈ = (3g/2l) sin θ  ⇒  ½θ̇² + (3g/2l) cos θ is conserved.
        0.5 * p.theta_dot * p.theta_dot + 1.5 * Pendulum::G / Pendulum::LENGTH * p.theta.cos()
    }

    #[test]
    fn registry() {
        let p = make_env("pendulum", 0).unwrap();
        assert_eq!(
            (p.spec().state_dim, p.spec().action_dim, p.spec().max_episode_steps),
            (3, 1, 200)
        );
        assert_eq!(p.spec().action_high, vec![2.0]);
        let m = make_env("pointmass", 0).unwrap();
        assert_eq!(
            (m.spec().state_dim, m.spec().action_dim, m.spec().max_episode_steps),
            (4, 2, 200)
        );
        assert_eq!(m.spec().action_low, vec![-1.0, -1.0]);
        let err = make_env("cartpole", 0).err().unwrap().to_string();
        assert!(err.contains("pendulum") && err.contains("pointmass"));
    }

    #[test]
    fn reset_distributions() {
        let mut p = Pendulum::new(3);
        for _ in 0..200 {
            p.reset();
            assert!((-PI..PI).contains(&p.theta));
            assert!((-1.0..1.0).contains(&p.theta_dot));
            assert_eq!(p.steps(), 0);
        }
        let mut m = PointMass::new(3);
        for _ in 0..200 {
            m.reset();
            assert!(m.position.iter().all(|x| (-1.0..1.0).contains(x)));
            assert_eq!(m.velocity, [0.0, 0.0]);
            assert_eq!(m.steps(), 0);
        }
    }

    #[test]
    fn pendulum_step_examples() {
        let mut p = Pendulum::new(0);
        p.set_state(0.0, 0.0);
        let r = p.step(&[0.0]);
        assert_eq!(r.reward, 0.0);
        assert_eq!((p.theta, p.theta_dot), (0.0, 0.0));
        assert!(!r.done && !r.truncated);

        p.set_state(PI, 0.0);
        let r = p.step(&[0.0]);
        assert!((r.reward + PI * PI).abs() < 1e-12);
    }

    #[test]
    fn pendulum_truncates_never_terminates() {
        let mut p = Pendulum::new(1);
        p.reset();
        for i in 1..=200 {
            let r = p.step(&[1.0]);
            assert!(!r.done);
            assert_eq!(r.truncated, i == 200);
        }
    }

    #[test]
    fn pendulum_reward_bounds_and_observation_ranges() {
        let mut p = Pendulum::new(2);
        let floor = -(PI * PI + 0.1 * 64.0 + 0.001 * 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            p.reset();
            for _ in 0..200 {
                let r = p.step(&[rng.random_range(-3.0..3.0)]);
                assert!(r.reward <= 0.0 && r.reward >= floor);
                assert!(r.observation[2].abs() <= 8.0);
                assert!((-PI..PI).contains(&p.theta));
            }
        }
    }

    #[test]
    fn pendulum_energy_has_no_secular_drift() {
        // Semi-implicit Euler conserves H − (dt/2)·H_p·H_q up to O(dt²), so
        // the raw energy wobbles by O(dt) but this one must stay flat.
        let mut p = Pendulum::new(4);
        let k = 1.5 * Pendulum::G / Pendulum::LENGTH;
        let shadow = |p: &Pendulum| energy(p) + 0.5 * Pendulum::DT * p.theta_dot * k * p.theta.sin();
        let range = 2.0 * k;
        for _ in 0..50 {
            p.reset();
            let e0 = shadow(&p);
            for _ in 0..200 {
                p.step(&[0.0]);
                let drift = (shadow(&p) - e0).abs() / range;
                assert!(drift < 0.01, "drift {drift}");
            }
        }
    }

    #[test]
    fn pointmass_goal_terminates() {
        let mut m = PointMass::new(0);
        m.set_state([0.0, 0.0], [0.0, 0.0]);
        let r = m.step(&[0.0, 0.0]);
        assert!(r.done);
        assert_eq!(r.reward, 0.0);
        assert!(!r.truncated);
    }

    #[test]
    fn determinism() {
        let run = |seed| {
            let mut e = make_env("pointmass", seed).unwrap();
            let mut trace = e.reset();
            for t in 0..50 {
                let a = [(t as f64 * 0.3).sin(), (t as f64 * 0.1).cos()];
                let r = e.step(&a);
                trace.extend(r.observation);
                trace.push(r.reward);
            }
            trace
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn action_scaling() {
        let p = Pendulum::new(0);
        assert_eq!(p.spec().scale_action(&[1.0]), vec![2.0]);
        assert_eq!(p.spec().scale_action(&[-1.0]), vec![-2.0]);
        assert_eq!(p.spec().scale_action(&[0.25]), vec![0.5]);
    }
}
