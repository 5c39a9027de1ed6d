//! Actor and critic views over [`Mlp`]s.
//!
//! Actions are always normalized to `[-1, 1]^d`; environments rescale.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::net::{Head, Mlp};
pub use crate::replay::DeterministicPolicy;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// State-action value estimator.
pub trait QFunction {
    fn q_values(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>>;
}

/// A policy that samples actions through reparameterization noise.
pub trait StochasticPolicy {
    fn action_dim(&self) -> usize;

    /// Actions and their log-densities for given standard-normal `noise`
    /// (one row per state).
    fn sample_with_noise(
        &self,
        states: ArrayView2<f64>,
        noise: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array1<f64>)>;

    fn sample<R: Rng + ?Sized>(
        &self,
        states: ArrayView2<f64>,
        rng: &mut R,
    ) -> Result<(Array2<f64>, Array1<f64>)>
    where
        Self: Sized,
    {
        let noise = standard_normal(states.nrows(), self.action_dim(), rng);
        self.sample_with_noise(states, noise.view())
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// Row-wise `[states | actions]`.
pub fn state_action(states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
    concatenate(Axis(1), &[states, actions]).map_err(|e| Error::DimensionMismatch(e.to_string()))
}

impl QFunction for Mlp {
    fn q_values(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>> {
        let x = state_action(states, actions)?;
        Ok(self.predict(x.view())?.column(0).to_owned())
    }
}

impl DeterministicPolicy for Mlp {
    /// `Tanh` heads return their output; `Gaussian` heads return `tanh(mean)`.
    fn act(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        let out = self.predict(states)?;
        match self.head() {
            Head::Gaussian => {
                let d = out.ncols() / 2;
                Ok(out.slice(s![.., ..d]).mapv(f64::tanh))
            }
            _ => Ok(out),
        }
    }
}

impl StochasticPolicy for Mlp {
    fn action_dim(&self) -> usize {
        self.output_dim() / 2
    }

    fn sample_with_noise(
        &self,
        states: ArrayView2<f64>,
        noise: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        if self.head() != Head::Gaussian {
            return Err(Error::Config("stochastic sampling needs a Gaussian head".into()));
        }
        let raw = self.predict(states)?;
        let sample = SquashedGaussian::from_raw(raw.view(), noise)?;
        Ok((sample.actions, sample.log_probs))
    }
}

/// Quantities of a reparameterized `tanh(N(μ, σ))` draw, kept for the
/// backward pass of the actor loss.
#[derive(Debug, Clone)]
pub struct SquashedGaussian {
    pub actions: Array2<f64>,
    pub log_probs: Array1<f64>,
    pub std: Array2<f64>,
    pub noise: Array2<f64>,
    /// `log_std` sat on a clamp bound (zero gradient).
    pub clamped: Array2<bool>,
}

impl SquashedGaussian {
    /// `raw` is the `[mean | log_std]` network output.
    pub fn from_raw(raw: ArrayView2<f64>, noise: ArrayView2<f64>) -> Result<Self> {
        let d = raw.ncols() / 2;
        if raw.ncols() != 2 * d || noise.dim() != (raw.nrows(), d) {
            return Err(Error::DimensionMismatch(format!(
                "gaussian head output {:?} with noise {:?}",
                raw.dim(),
                noise.dim()
            )));
        }
        let mean = raw.slice(s![.., ..d]);
        let raw_log_std = raw.slice(s![.., d..]);
        let clamped = raw_log_std.mapv(|v| !(LOG_STD_MIN..=LOG_STD_MAX).contains(&v));
        let log_std = raw_log_std.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        let std = log_std.mapv(f64::exp);
        let mut actions = Array2::zeros((raw.nrows(), d));
        let mut log_probs = Array1::zeros(raw.nrows());
        for i in 0..raw.nrows() {
            let mut lp = 0.0;
            for j in 0..d {
                let xi = noise[[i, j]];
                let u = mean[[i, j]] + std[[i, j]] * xi;
                actions[[i, j]] = u.tanh();
                lp += -0.5 * xi * xi - log_std[[i, j]] - HALF_LN_2PI - log1m_tanh_sq(u);
            }
            log_probs[i] = lp;
        }
        Ok(SquashedGaussian {
            actions,
            log_probs,
            std,
            noise: noise.to_owned(),
            clamped,
        })
    }

    /// Gradient w.r.t. the raw `[mean | log_std]` output of
    /// `Σ_i (w_logp[i] · log π_i + Σ_j g_a[i,j] · a_ij)`.
    pub fn raw_gradient(&self, w_logp: &Array1<f64>, g_actions: ArrayView2<f64>) -> Array2<f64> {
        let (b, d) = self.actions.dim();
        let mut g = Array2::zeros((b, 2 * d));
        for i in 0..b {
            for j in 0..d {
                let a = self.actions[[i, j]];
                // d log π / du = 2 tanh(u);  d a / du = 1 − a².
                let du = w_logp[i] * 2.0 * a + g_actions[[i, j]] * (1.0 - a * a);
                g[[i, j]] = du;
                g[[i, d + j]] = if self.clamped[[i, j]] {
                    0.0
                } else {
                    -w_logp[i] + du * self.std[[i, j]] * self.noise[[i, j]]
                };
            }
        }
        g
    }
}

/// `ln(1 − tanh²u)` without cancellation.
fn log1m_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Gaussian exploration noise `N(0, σ)` added to `actions`, clipped to the
/// normalized box.
pub fn explore<R: Rng + ?Sized>(actions: &mut Array2<f64>, sigma: f64, rng: &mut R) {
    if sigma > 0.0 {
        let noise = standard_normal(actions.nrows(), actions.ncols(), rng);
        Zip::from(actions.view_mut())
            .and(&noise)
            .for_each(|a, &n| *a += sigma * n);
    }
    actions.mapv_inplace(|a| a.clamp(-1.0, 1.0));
}
