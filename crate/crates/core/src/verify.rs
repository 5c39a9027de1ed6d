//! Built-in oracle suites: finite-difference gradients, the TD-error
//! decomposition identity, literal FLOPs counting and sparsity
//! conservation under random evolution.

use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::accounting::{self, Algorithm};
use crate::error::{Error, Result};
use crate::net::{Head, MaskedLinear, Mlp};
use crate::sparsity::{evolve_topology, GrowMode};
use crate::targets::{decompose_td_error, TabularMdp, DEFAULT_NODE_BUDGET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Gradient,
    Decomposition,
    Flops,
    Conservation,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Gradient, Suite::Decomposition, Suite::Flops, Suite::Conservation];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradient => "gradient",
            Suite::Decomposition => "decomposition",
            Suite::Flops => "flops",
            Suite::Conservation => "conservation",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite '{s}' (expected gradient, decomposition, flops or conservation)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub checks: u64,
    pub failures: u64,
    /// Largest measured error (meaning depends on the suite).
    pub max_error: f64,
    pub tolerance: f64,
    pub seconds: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Flip one mask bit after every evolution step in the conservation
    /// suite.
    pub inject_fault: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            inject_fault: false,
        }
    }
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut report = match suite {
        Suite::Gradient => gradient_suite(opts.seed)?,
        Suite::Decomposition => decomposition_suite(opts.seed)?,
        Suite::Flops => flops_suite(opts.seed)?,
        Suite::Conservation => conservation_suite(opts.seed, opts.inject_fault)?,
    };
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

fn report(suite: Suite, checks: u64, failures: u64, max_error: f64, tolerance: f64, detail: String) -> SuiteReport {
    SuiteReport {
        suite,
        passed: failures == 0,
        checks,
        failures,
        max_error,
        tolerance,
        seconds: 0.0,
        detail,
    }
}

/// A random masked MLP with at most three layers and widths at most eight.
pub fn random_small_net<R: Rng + ?Sized>(rng: &mut R, head: Head) -> Result<Mlp> {
    let layers = rng.random_range(1..=3);
    let mut dims: Vec<usize> = (0..=layers).map(|_| rng.random_range(1..=8)).collect();
    if head == Head::Gaussian {
        let last = dims.len() - 1;
        dims[last] = 2 * dims[last].div_ceil(2);
    }
    let sparsities: Vec<f64> = (0..layers).map(|_| rng.random_range(0.0..0.9)).collect();
    Mlp::new(&dims, &sparsities, head, rng)
}

/// Gradient of `Σ c ⊙ f(x)` against central differences at every weight
/// position, masked or not.
fn gradient_suite(seed: u64) -> Result<SuiteReport> {
    const H: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checks, mut failures, mut worst) = (0u64, 0u64, 0.0f64);
    for i in 0..50 {
        let head = [Head::Identity, Head::Tanh, Head::Gaussian][i % 3];
        let mut net = random_small_net(&mut rng, head)?;
        let batch = 3;
        let x = Array2::from_shape_fn((batch, net.input_dim()), |_| rng.random_range(-1.0..1.0));
        let c = Array2::from_shape_fn((batch, net.output_dim()), |_| rng.random_range(-1.0..1.0));
        let (_, cache) = net.forward_batch(x.view())?;
        let grads = net.backward_dense(&cache, c.view())?;
        for l in 0..net.layers().len() {
            let (o, n) = net.layers()[l].weights.dim();
            for r in 0..o {
                for k in 0..n {
                    let w0 = net.layers()[l].weights[[r, k]];
                    let objective = |net: &Mlp| -> Result<f64> { Ok((net.predict(x.view())? * &c).sum()) };
                    net.layers_mut()[l].weights[[r, k]] = w0 + H;
                    let up = objective(&net)?;
                    net.layers_mut()[l].weights[[r, k]] = w0 - H;
                    let dn = objective(&net)?;
                    net.layers_mut()[l].weights[[r, k]] = w0;
                    let fd = (up - dn) / (2.0 * H);
                    let an = grads.weights[l][[r, k]];
                    let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                    worst = worst.max(err);
                    checks += 1;
                    if err > TOL {
                        failures += 1;
                    }
                }
            }
        }
    }
    Ok(report(
        Suite::Gradient,
        checks,
        failures,
        worst,
        TOL,
        format!("50 nets, h={H}, max relative error {worst:.3e}"),
    ))
}

fn decomposition_suite(seed: u64) -> Result<SuiteReport> {
    const TOL: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checks, mut failures, mut worst) = (0u64, 0u64, 0.0f64);
    let mut nonzero_policy_terms = 0u64;
    for _ in 0..100 {
        let mut mdp = TabularMdp::random(5, 2, 0.9, &mut rng);
        for n in 1..=3 {
            for s in 0..5 {
                for a in 0..2 {
                    let d = decompose_td_error(&mdp, n, s, a, DEFAULT_NODE_BUDGET)?;
                    let r = d.residual().abs();
                    worst = worst.max(r);
                    checks += 1;
                    if r >= TOL {
                        failures += 1;
                    }
                }
            }
        }
        mdp.behavior_policy = mdp.target_policy.clone();
        for n in 1..=3 {
            let d = decompose_td_error(&mdp, n, 0, 0, DEFAULT_NODE_BUDGET)?;
            checks += 1;
            if d.policy_term != 0.0 {
                failures += 1;
                nonzero_policy_terms += 1;
            }
        }
    }
    Ok(report(
        Suite::Decomposition,
        checks,
        failures,
        worst,
        TOL,
        format!(
            "100 MDPs (5 states, 2 actions), n in 1..=3, max |total - parts| {worst:.3e}, on-policy nonzero policy terms {nonzero_policy_terms}"
        ),
    ))
}

/// Forward pass that tallies every multiply and add it performs.
pub fn counting_forward(net: &Mlp, input: &[f64]) -> (Vec<f64>, u64) {
    let mut ops = 0u64;
    let mut x = input.to_vec();
    let n = net.layers().len();
    for (li, layer) in net.layers().iter().enumerate() {
        let mut y = vec![0.0; layer.out_dim];
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc: Option<f64> = None;
            for (k, &xk) in x.iter().enumerate() {
                if layer.mask[[r, k]] {
                    let p = layer.weights[[r, k]] * xk;
                    ops += 1;
                    acc = Some(match acc {
                        Some(a) => {
                            ops += 1;
                            a + p
                        }
                        None => p,
                    });
                }
            }
            *out = acc.unwrap_or(0.0) + layer.bias[r];
            if li + 1 < n {
                *out = out.max(0.0);
            }
        }
        x = y;
    }
    (x, ops)
}

fn flops_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checks, mut failures) = (0u64, 0u64);
    for _ in 0..50 {
        let net = random_small_net(&mut rng, Head::Identity)?;
        let input: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, counted) = counting_forward(&net, &input);
        checks += 1;
        if counted != accounting::forward_flops(&net) {
            failures += 1;
        }
    }
    let coeff = |alg, fa, fc, d| accounting::training_flops_per_iter(alg, fa, fc, 1, d);
    let expected = [
        (coeff(Algorithm::Td3, 1.0, 0.0, 2), 2.5),
        (coeff(Algorithm::Td3, 0.0, 1.0, 2), 8.5),
        (coeff(Algorithm::Sac, 1.0, 0.0, 1), 5.0),
        (coeff(Algorithm::Sac, 0.0, 1.0, 1), 10.0),
    ];
    let mut worst = 0.0f64;
    for (got, want) in expected {
        checks += 1;
        worst = worst.max((got - want).abs());
        if got != want {
            failures += 1;
        }
    }
    let actor = random_small_net(&mut rng, Head::Tanh)?;
    let critic = random_small_net(&mut rng, Head::Identity)?;
    let (ma, mc) = (accounting::model_size(&actor), accounting::model_size(&critic));
    checks += 1;
    if accounting::total_model_size(Algorithm::Td3, ma, mc) != 2 * ma + 4 * mc {
        failures += 1;
    }
    Ok(report(
        Suite::Flops,
        checks,
        failures,
        worst,
        0.0,
        format!("50 counted forward passes, coefficient error {worst:e}"),
    ))
}

fn random_layer<R: Rng + ?Sized>(rng: &mut R) -> Result<MaskedLinear> {
    let i = rng.random_range(1..=12);
    let o = rng.random_range(1..=12);
    let s = rng.random_range(0.0..1.0);
    MaskedLinear::random(i, o, s, rng)
}

fn conservation_suite(seed: u64, inject_fault: bool) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checks, mut failures) = (0u64, 0u64);
    let mut first_failure = String::new();
    for call in 0..10_000 {
        let mut layer = random_layer(&mut rng)?;
        let before = layer.active_count();
        let grad = Array2::from_shape_fn(layer.weights.dim(), |_| rng.random_range(-1.0..1.0));
        let zeta = rng.random_range(0.0..=1.0);
        let mode = if rng.random_bool(0.5) { GrowMode::Gradient } else { GrowMode::Random };
        let rec = evolve_topology(&mut layer, &grad, zeta, mode, &mut rng)?;
        if inject_fault {
            let idx = rng.random_range(0..layer.len());
            let flat = layer.mask.as_slice_mut().expect("standard layout");
            flat[idx] = !flat[idx];
        }
        checks += 1;
        let count_ok = layer.active_count() == before;
        let disjoint = rec.dropped.iter().all(|d| rec.grown.binary_search(d).is_err());
        let zero_ok = layer.weights.iter().zip(layer.mask.iter()).all(|(&w, &m)| m || w == 0.0);
        if !(count_ok && disjoint && zero_ok) {
            failures += 1;
            if first_failure.is_empty() {
                first_failure = format!(
                    "; first failure at call {call}: count {}→{}, disjoint {disjoint}, masked zeros {zero_ok}",
                    before,
                    layer.active_count()
                );
            }
        }
    }
    Ok(report(
        Suite::Conservation,
        checks,
        failures,
        failures as f64,
        0.0,
        format!("10000 evolution calls, {failures} violations{first_failure}"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for suite in Suite::ALL {
            let r = run_suite(suite, &VerifyOptions::default()).unwrap();
            assert!(r.passed, "{}: {}", suite.name(), r.detail);
        }
    }

    #[test]
    fn injected_fault_is_caught() {
        let r = run_suite(
            Suite::Conservation,
            &VerifyOptions {
                seed: 1,
                inject_fault: true,
            },
        )
        .unwrap();
        assert!(!r.passed);
        assert_eq!(r.failures, r.checks);
    }

    #[test]
    fn counting_forward_matches_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = random_small_net(&mut rng, Head::Identity).unwrap();
        let x: Vec<f64> = (0..net.input_dim()).map(|i| i as f64 * 0.1 - 0.2).collect();
        let (y, _) = counting_forward(&net, &x);
        for (a, b) in y.iter().zip(net.forward(&x).unwrap()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
