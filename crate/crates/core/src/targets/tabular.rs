//! Exact expected n-step targets on finite MDPs, split into a
//! policy-inconsistency part and a fitting-error part.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite MDP with tabular target/behavior policies and an approximate Q.
///
/// All tables are row-major: `transitions[(s * A + a) * S + s']`,
/// `rewards[s * A + a]`, `target_policy[s * A + a]`, and so on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub transitions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub discount: f64,
    pub target_policy: Vec<f64>,
    pub behavior_policy: Vec<f64>,
    pub q_approx: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdErrorDecomposition {
    /// `E_b[T_n] − Q_π(s, a)`.
    pub total: f64,
    /// `E_b[T_n] − E_π[T_n]`.
    pub policy_term: f64,
    /// `γ^n E_π[ε(s_n, π(s_n))]`.
    pub fitting_term: f64,
}

impl TdErrorDecomposition {
    pub fn residual(&self) -> f64 {
        self.total - (self.policy_term + self.fitting_term)
    }
}

const ROW_TOL: f64 = 1e-9;

impl TabularMdp {
    pub fn validate(&self) -> Result<()> {
        let (s, a) = (self.n_states, self.n_actions);
        if s == 0 || a == 0 {
            return Err(Error::DimensionMismatch("empty state or action set".into()));
        }
        let sizes = [
            (self.transitions.len(), s * a * s, "transitions"),
            (self.rewards.len(), s * a, "rewards"),
            (self.target_policy.len(), s * a, "target policy"),
            (self.behavior_policy.len(), s * a, "behavior policy"),
            (self.q_approx.len(), s * a, "approximate Q"),
        ];
        for (got, want, name) in sizes {
            if got != want {
                return Err(Error::DimensionMismatch(format!(
                    "{name} table has {got} entries, expected {want}"
                )));
            }
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::Config(format!("discount {} outside (0, 1)", self.discount)));
        }
        for row in self.transitions.chunks(s) {
            if row.iter().any(|&p| p < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > ROW_TOL {
                return Err(Error::Config("transition row is not a distribution".into()));
            }
        }
        for table in [&self.target_policy, &self.behavior_policy] {
            for row in table.chunks(a) {
                if row.iter().any(|&p| p < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > ROW_TOL {
                    return Err(Error::Config("policy row is not a distribution".into()));
                }
            }
        }
        Ok(())
    }

    /// Random MDP with Dirichlet-like transition rows, rewards in `[0, 1)`,
    /// random stochastic policies and a random approximate Q table.
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, discount: f64, rng: &mut R) -> Self {
        let mut dist = |n: usize, rows: usize| -> Vec<f64> {
            let mut out = Vec::with_capacity(n * rows);
            for _ in 0..rows {
                let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
                let z: f64 = raw.iter().sum();
                out.extend(raw.iter().map(|v| v / z));
            }
            out
        };
        let transitions = dist(n_states, n_states * n_actions);
        let target_policy = dist(n_actions, n_states);
        let behavior_policy = dist(n_actions, n_states);
        let rewards = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
        let scale = 1.0 / (1.0 - discount);
        let q_approx = (0..n_states * n_actions)
            .map(|_| rng.random::<f64>() * scale)
            .collect();
        TabularMdp {
            n_states,
            n_actions,
            transitions,
            rewards,
            discount,
            target_policy,
            behavior_policy,
            q_approx,
        }
    }

    fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[(s * self.n_actions + a) * self.n_states + next]
    }

    /// Exact `Q_π` from `(I − γ P Π) q = r`, with one refinement pass.
    pub fn q_exact(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let (ns, na, g) = (self.n_states, self.n_actions, self.discount);
        let n = ns * na;
        let mut m = DMatrix::<f64>::identity(n, n);
        for s in 0..ns {
            for a in 0..na {
                let row = s * na + a;
                for s2 in 0..ns {
                    let p = self.p(s, a, s2);
                    for a2 in 0..na {
                        m[(row, s2 * na + a2)] -= g * p * self.target_policy[s2 * na + a2];
                    }
                }
            }
        }
        let r = DVector::from_column_slice(&self.rewards);
        let lu = m.clone().lu();
        let mut q = lu
            .solve(&r)
            .ok_or_else(|| Error::Config("Bellman system is singular".into()))?;
        let residual = &r - &m * &q;
        if let Some(dq) = lu.solve(&residual) {
            q += dq;
        }
        Ok(q.iter().copied().collect())
    }

    /// `ε = Q_approx − Q_π`, entrywise.
    pub fn fitting_error(&self) -> Result<Vec<f64>> {
        let exact = self.q_exact()?;
        Ok(self.q_approx.iter().zip(&exact).map(|(a, e)| a - e).collect())
    }

    /// `Σ_a π(a|s) table[s, a]`.
    fn under_target(&self, table: &[f64], s: usize) -> f64 {
        let na = self.n_actions;
        (0..na)
            .map(|a| self.target_policy[s * na + a] * table[s * na + a])
            .sum()
    }

    /// `E[T_n(s, a)]` with intermediate actions drawn from `policy` and the
    /// bootstrap `Q(s_n, π(s_n))` taken under the target policy.
    fn expected_target(&self, policy: &[f64], n: usize, s: usize, a: usize) -> f64 {
        let (ns, na, g) = (self.n_states, self.n_actions, self.discount);
        let mut value = self.rewards[s * na + a];
        let mut cont = 0.0;
        for s2 in 0..ns {
            let p = self.p(s, a, s2);
            if p == 0.0 {
                continue;
            }
            let inner = if n == 1 {
                self.under_target(&self.q_approx, s2)
            } else {
                (0..na)
                    .map(|a2| policy[s2 * na + a2] * self.expected_target(policy, n - 1, s2, a2))
                    .sum()
            };
            cont += p * inner;
        }
        value += g * cont;
        value
    }

    /// `E_π[ε(s_n, π(s_n))]` by the same enumeration.
    fn expected_leaf(&self, eps: &[f64], n: usize, s: usize, a: usize) -> f64 {
        let (ns, na) = (self.n_states, self.n_actions);
        let mut total = 0.0;
        for s2 in 0..ns {
            let p = self.p(s, a, s2);
            if p == 0.0 {
                continue;
            }
            let inner = if n == 1 {
                self.under_target(eps, s2)
            } else {
                (0..na)
                    .map(|a2| self.target_policy[s2 * na + a2] * self.expected_leaf(eps, n - 1, s2, a2))
                    .sum()
            };
            total += p * inner;
        }
        total
    }
}

/// Default enumeration budget (trajectory-tree nodes).
pub const DEFAULT_NODE_BUDGET: u128 = 50_000_000;

/// Splits the expected n-step TD error at `(state, action)` into the policy
/// inconsistency and fitting-error terms by exact enumeration.
pub fn decompose_td_error(
    mdp: &TabularMdp,
    n: usize,
    state: usize,
    action: usize,
    node_budget: u128,
) -> Result<TdErrorDecomposition> {
    mdp.validate()?;
    if n == 0 {
        return Err(Error::OutOfRange("n must be at least 1".into()));
    }
    if state >= mdp.n_states || action >= mdp.n_actions {
        return Err(Error::OutOfRange(format!(
            "(s, a) = ({state}, {action}) outside {}x{}",
            mdp.n_states, mdp.n_actions
        )));
    }
    let branching = (mdp.n_states * mdp.n_actions) as u128;
    let needed = (0..n as u32).fold(Some(1u128), |acc, _| acc.and_then(|v| v.checked_mul(branching)));
    let needed = needed.unwrap_or(u128::MAX);
    if needed > node_budget {
        return Err(Error::BudgetExceeded {
            needed,
            budget: node_budget,
        });
    }
    let q_exact = mdp.q_exact()?;
    let eps: Vec<f64> = mdp.q_approx.iter().zip(&q_exact).map(|(a, e)| a - e).collect();
    let e_b = mdp.expected_target(&mdp.behavior_policy, n, state, action);
    let e_pi = mdp.expected_target(&mdp.target_policy, n, state, action);
    let fitting = mdp.discount.powi(n as i32) * mdp.expected_leaf(&eps, n, state, action);
    Ok(TdErrorDecomposition {
        total: e_b - q_exact[state * mdp.n_actions + action],
        policy_term: e_b - e_pi,
        fitting_term: fitting,
    })
}
