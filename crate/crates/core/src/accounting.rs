//! Model-size and FLOPs accounting for masked MLPs.
//!
//! Offsets (biases) are excluded throughout. A backward pass is charged at
//! twice its forward pass; environment interaction, target updates,
//! topology evolution and buffer checks are not charged.

use serde::{Deserialize, Serialize};

use crate::net::{MaskedLinear, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Td3,
    Sac,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Td3 => "td3",
            Algorithm::Sac => "sac",
        })
    }
}

/// Active weights, `Σ_l (1 − S_l) I_l O_l`.
pub fn model_size(net: &Mlp) -> u64 {
    net.active_count() as u64
}

/// Multiplies plus adds of one layer: every output with `c ≥ 1` active
/// inputs costs `c` multiplies and `c − 1` adds.
pub fn layer_forward_flops(layer: &MaskedLinear) -> u64 {
    layer
        .mask
        .rows()
        .into_iter()
        .map(|row| {
            let c = row.iter().filter(|&&m| m).count() as u64;
            (2 * c).saturating_sub(1)
        })
        .sum()
}

/// Exact multiply-add count of one forward pass over active connections.
///
/// Equals `Σ_l (1 − S_l)(2 I_l − 1) O_l` whenever every output of a layer
/// has the same fan-in (in particular for dense layers).
pub fn forward_flops(net: &Mlp) -> u64 {
    net.layers().iter().map(layer_forward_flops).sum()
}

/// `Σ_l (1 − S_l)(2 I_l − 1) O_l` with `S_l` the realized layer sparsity.
pub fn analytic_forward_flops(net: &Mlp) -> f64 {
    net.layers()
        .iter()
        .map(|l| (1.0 - l.sparsity()) * (2 * l.in_dim - 1) as f64 * l.out_dim as f64)
        .sum()
}

/// `Σ_l (2 I_l − 1) O_l` for a dense network with the given dims.
pub fn dense_forward_flops(dims: &[usize]) -> u64 {
    dims.windows(2).map(|d| ((2 * d[0] - 1) * d[1]) as u64).sum()
}

pub fn dense_model_size(dims: &[usize]) -> u64 {
    dims.windows(2).map(|d| (d[0] * d[1]) as u64).sum()
}

/// Cost of one critic update (both critics) for a batch of `batch`.
pub fn critic_update_flops(algorithm: Algorithm, actor: f64, critic: f64, batch: f64) -> f64 {
    match algorithm {
        // target: actor + 2 critics; loss: 2 critics; backward: 2·2 critics
        Algorithm::Td3 => batch * (actor + 8.0 * critic),
        // SAC samples from the online actor inside the target
        Algorithm::Sac => batch * (2.0 * actor + 8.0 * critic),
    }
}

/// Cost of one actor update for a batch of `batch`.
pub fn actor_update_flops(algorithm: Algorithm, actor: f64, critic: f64, batch: f64) -> f64 {
    match algorithm {
        Algorithm::Td3 => batch * (3.0 * actor + critic),
        Algorithm::Sac => batch * (3.0 * actor + 2.0 * critic),
    }
}

/// Average training FLOPs per iteration: critic update plus `1/d` of an
/// actor update.
pub fn training_flops_per_iter(
    algorithm: Algorithm,
    actor_flops: f64,
    critic_flops: f64,
    batch: usize,
    actor_interval: usize,
) -> f64 {
    let b = batch as f64;
    critic_update_flops(algorithm, actor_flops, critic_flops, b)
        + actor_update_flops(algorithm, actor_flops, critic_flops, b) / actor_interval.max(1) as f64
}

/// All networks held during training: TD3 keeps actor, target actor, two
/// critics and two target critics; SAC has no target actor.
pub fn total_model_size(algorithm: Algorithm, actor_size: u64, critic_size: u64) -> u64 {
    match algorithm {
        Algorithm::Td3 => 2 * actor_size + 4 * critic_size,
        Algorithm::Sac => actor_size + 4 * critic_size,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub algorithm: Algorithm,
    pub actor_forward_flops: u64,
    pub critic_forward_flops: u64,
    pub actor_forward_flops_analytic: f64,
    pub critic_forward_flops_analytic: f64,
    pub train_flops_per_iter: f64,
    pub train_flops_total: f64,
    pub inference_flops: u64,
    pub actor_size: u64,
    pub critic_size: u64,
    pub total_size: u64,
    /// Same architecture, fully dense.
    pub dense_train_flops_per_iter: f64,
    pub dense_inference_flops: u64,
    pub dense_total_size: u64,
    pub normalized_train_flops: f64,
    pub normalized_inference_flops: f64,
    pub normalized_total_size: f64,
}

impl FlopsReport {
    /// `updates` is the number of critic updates performed in the run.
    pub fn new(
        algorithm: Algorithm,
        actor: &Mlp,
        critic: &Mlp,
        batch: usize,
        actor_interval: usize,
        updates: u64,
    ) -> Self {
        let fa = forward_flops(actor);
        let fc = forward_flops(critic);
        let per_iter = training_flops_per_iter(algorithm, fa as f64, fc as f64, batch, actor_interval);
        let dfa = dense_forward_flops(&actor.dims());
        let dfc = dense_forward_flops(&critic.dims());
        let dense_per_iter = training_flops_per_iter(algorithm, dfa as f64, dfc as f64, batch, actor_interval);
        let (ma, mc) = (model_size(actor), model_size(critic));
        let total = total_model_size(algorithm, ma, mc);
        let dense_total = total_model_size(
            algorithm,
            dense_model_size(&actor.dims()),
            dense_model_size(&critic.dims()),
        );
        let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
        FlopsReport {
            algorithm,
            actor_forward_flops: fa,
            critic_forward_flops: fc,
            actor_forward_flops_analytic: analytic_forward_flops(actor),
            critic_forward_flops_analytic: analytic_forward_flops(critic),
            train_flops_per_iter: per_iter,
            train_flops_total: per_iter * updates as f64,
            inference_flops: fa,
            actor_size: ma,
            critic_size: mc,
            total_size: total,
            dense_train_flops_per_iter: dense_per_iter,
            dense_inference_flops: dfa,
            dense_total_size: dense_total,
            normalized_train_flops: ratio(per_iter, dense_per_iter),
            normalized_inference_flops: ratio(fa as f64, dfa as f64),
            normalized_total_size: ratio(total as f64, dense_total as f64),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Head;
    use ndarray::{array, Array1, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(mask: Array2<bool>) -> Mlp {
        let (o, i) = mask.dim();
        let l = MaskedLinear {
            in_dim: i,
            out_dim: o,
            weights: Array2::ones((o, i)),
            mask,
            bias: Array1::zeros(o),
            target_sparsity: 0.0,
        };
        Mlp::from_layers(vec![l], Head::Identity).unwrap()
    }

    #[test]
    fn model_size_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dense = Mlp::new(&[3, 4, 1], &[0.0, 0.0], Head::Identity, &mut rng).unwrap();
        assert_eq!(model_size(&dense), 16);
        let half = Mlp::new(&[3, 4, 1], &[0.5, 0.5], Head::Identity, &mut rng).unwrap();
        assert_eq!(model_size(&half), 8);
        let none = Mlp::new(&[3, 4, 1], &[1.0, 1.0], Head::Identity, &mut rng).unwrap();
        assert_eq!(model_size(&none), 0);
    }

    #[test]
    fn forward_flops_examples() {
        let dense = layer(Array2::from_elem((2, 3), true));
        assert_eq!(forward_flops(&dense), 10);
        assert_eq!(analytic_forward_flops(&dense), 10.0);
        assert_eq!(dense_forward_flops(&[3, 2]), 10);

        let half = layer(array![[true, true, true], [false, false, false]]);
        assert!((analytic_forward_flops(&half) - 5.0).abs() < 1e-12);

        let thin = layer(Array2::from_elem((4, 1), true));
        assert_eq!(forward_flops(&thin), 4);
    }

    #[test]
    fn training_flops_examples() {
        assert_eq!(training_flops_per_iter(Algorithm::Td3, 100.0, 200.0, 256, 2), 499_200.0);
        assert_eq!(training_flops_per_iter(Algorithm::Sac, 100.0, 200.0, 256, 1), 640_000.0);
        assert_eq!(training_flops_per_iter(Algorithm::Td3, 100.0, 200.0, 0, 2), 0.0);
    }

    #[test]
    fn total_size_examples() {
        assert_eq!(total_model_size(Algorithm::Td3, 10, 20), 100);
        assert_eq!(total_model_size(Algorithm::Sac, 10, 20), 90);
        assert_eq!(total_model_size(Algorithm::Td3, 0, 0), 0);
    }

    #[test]
    fn report_is_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let actor = Mlp::new(&[3, 16, 16, 1], &[0.8, 0.9, 0.0], Head::Tanh, &mut rng).unwrap();
        let critic = Mlp::new(&[4, 16, 16, 1], &[0.7, 0.8, 0.0], Head::Identity, &mut rng).unwrap();
        let r = FlopsReport::new(Algorithm::Td3, &actor, &critic, 256, 2, 1000);
        assert!(r.normalized_total_size > 0.0 && r.normalized_total_size < 1.0);
        assert!(r.normalized_train_flops < 1.0);
        assert!(r.train_flops_per_iter <= r.dense_train_flops_per_iter);
        assert_eq!(r.train_flops_total, r.train_flops_per_iter * 1000.0);
    }
}
