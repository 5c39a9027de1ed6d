//! Layer-wise sparsity allocation and drop/grow topology evolution.

use std::cmp::Ordering;
use std::f64::consts::PI;

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Adam, Gradients, MaskedLinear, Mlp};

/// How inactive positions are chosen for regrowth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowMode {
    /// Largest dense-gradient magnitude (RigL-style).
    Gradient,
    /// Uniformly random (SET-style).
    Random,
    /// No topology change.
    Frozen,
}

/// Update cadence and cosine-annealed update fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolutionSchedule {
    pub initial_fraction: f64,
    pub total_steps: u64,
    pub mask_update_interval: u64,
    pub grow_mode: GrowMode,
}

impl EvolutionSchedule {
    /// `ζ_t = ζ_0/2 · (1 + cos(π t / T_end))`.
    pub fn fraction_at(&self, t: u64) -> Result<f64> {
        if t > self.total_steps {
            return Err(Error::OutOfRange(format!(
                "step {t} is past the annealing horizon {}",
                self.total_steps
            )));
        }
        if self.total_steps == 0 {
            return Ok(self.initial_fraction);
        }
        let phase = PI * t as f64 / self.total_steps as f64;
        Ok(self.initial_fraction / 2.0 * (1.0 + phase.cos()))
    }

    /// True when the `update_index`-th update (1-based) should evolve.
    pub fn is_due(&self, update_index: u64) -> bool {
        self.grow_mode != GrowMode::Frozen
            && self.mask_update_interval > 0
            && update_index > 0
            && update_index % self.mask_update_interval == 0
    }
}

/// Free-function form of [`EvolutionSchedule::fraction_at`].
pub fn anneal_fraction(t: u64, sched: &EvolutionSchedule) -> Result<f64> {
    sched.fraction_at(t)
}

/// Per-layer sparsities solved from the Erdős–Rényi density rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityAllocation {
    pub global_sparsity: f64,
    pub per_layer: Vec<f64>,
    pub scale_constant: f64,
}

impl SparsityAllocation {
    /// Active connection count of each layer after rounding.
    pub fn active_counts(&self, layer_dims: &[(usize, usize)]) -> Vec<usize> {
        // Largest-remainder rounding keeps the total at the nearest integer
        // to the real-valued budget.
        let exact: Vec<f64> = layer_dims
            .iter()
            .zip(&self.per_layer)
            .map(|(&(i, o), &s)| (1.0 - s) * (i * o) as f64)
            .collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect();
        let target = exact.iter().sum::<f64>().round() as usize;
        let mut order: Vec<usize> = (0..exact.len()).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (exact[a] - counts[a] as f64, exact[b] - counts[b] as f64);
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let mut missing = target.saturating_sub(counts.iter().sum());
        for &l in order.iter().cycle().take(order.len()) {
            if missing == 0 {
                break;
            }
            let (i, o) = layer_dims[l];
            if counts[l] < i * o {
                counts[l] += 1;
                missing -= 1;
            }
        }
        counts
    }
}

/// Solves `1 − S_l = k (I_l + O_l) / (I_l O_l)` subject to the global
/// budget `(1 − S) Σ I_l O_l`, clamping overfull layers dense and
/// re-solving over the rest until every density is at most one.
pub fn er_allocate(global_sparsity: f64, layer_dims: &[(usize, usize)]) -> Result<SparsityAllocation> {
    if !(0.0..1.0).contains(&global_sparsity) {
        return Err(Error::InvalidSparsity {
            value: global_sparsity,
            context: "global sparsity must lie in [0, 1)".into(),
        });
    }
    if layer_dims.is_empty() {
        return Err(Error::DimensionMismatch("no layers to allocate".into()));
    }
    if layer_dims.iter().any(|&(i, o)| i == 0 || o == 0) {
        return Err(Error::DimensionMismatch("layer with a zero dimension".into()));
    }
    let sizes: Vec<f64> = layer_dims.iter().map(|&(i, o)| (i * o) as f64).collect();
    let budget = (1.0 - global_sparsity) * sizes.iter().sum::<f64>();
    let mut dense = vec![false; layer_dims.len()];
    let mut k = 0.0;
    loop {
        let fixed: f64 = sizes.iter().zip(&dense).filter(|(_, &d)| d).map(|(n, _)| n).sum();
        let perimeter: f64 = layer_dims
            .iter()
            .zip(&dense)
            .filter(|(_, &d)| !d)
            .map(|(&(i, o), _)| (i + o) as f64)
            .sum();
        if perimeter == 0.0 {
            break;
        }
        k = (budget - fixed).max(0.0) / perimeter;
        let mut changed = false;
        for (l, &(i, o)) in layer_dims.iter().enumerate() {
            if !dense[l] && k * (i + o) as f64 / (i * o) as f64 > 1.0 {
                dense[l] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let per_layer = layer_dims
        .iter()
        .zip(&dense)
        .map(|(&(i, o), &d)| {
            if d {
                0.0
            } else {
                (1.0 - k * (i + o) as f64 / (i * o) as f64).clamp(0.0, 1.0)
            }
        })
        .collect();
    Ok(SparsityAllocation {
        global_sparsity,
        per_layer,
        scale_constant: k,
    })
}

/// Flat row-major positions touched by one evolution step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvolutionRecord {
    pub dropped: Vec<usize>,
    pub grown: Vec<usize>,
}

/// One drop/grow step on a single layer.
///
/// `k = floor(ζ · active)`; the `k` active weights of smallest magnitude are
/// dropped and the same number of positions that were inactive *before* the
/// drop are grown with weight zero. Ties break toward the lowest row-major
/// index.
pub fn evolve_topology<R: Rng + ?Sized>(
    layer: &mut MaskedLinear,
    dense_grad: &Array2<f64>,
    fraction: f64,
    grow_mode: GrowMode,
    rng: &mut R,
) -> Result<EvolutionRecord> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::OutOfRange(format!(
            "update fraction {fraction} outside [0, 1]"
        )));
    }
    if dense_grad.dim() != layer.weights.dim() {
        return Err(Error::DimensionMismatch(format!(
            "gradient is {:?}, layer is {:?}",
            dense_grad.dim(),
            layer.weights.dim()
        )));
    }
    if grow_mode == GrowMode::Frozen {
        return Ok(EvolutionRecord::default());
    }
    let mask = layer.mask.as_slice().expect("standard layout");
    let weights = layer.weights.as_slice().expect("standard layout");
    let (mut active, candidates): (Vec<usize>, Vec<usize>) = (0..mask.len()).partition(|&i| mask[i]);

    // Integer count of active weights stands in for (1 - s_l) N_l.
    let k = (fraction * active.len() as f64).floor() as usize;
    let k = k.min(candidates.len());
    if k == 0 {
        return Ok(EvolutionRecord::default());
    }

    active.sort_by(|&a, &b| {
        weights[a]
            .abs()
            .total_cmp(&weights[b].abs())
            .then(a.cmp(&b))
    });
    let mut dropped: Vec<usize> = active[..k].to_vec();

    let mut grown: Vec<usize> = match grow_mode {
        GrowMode::Gradient => {
            let grad = dense_grad.as_standard_layout();
            let grad = grad.as_slice().expect("standard layout");
            let mut ranked = candidates;
            ranked.sort_by(|&a, &b| match grad[b].abs().total_cmp(&grad[a].abs()) {
                Ordering::Equal => a.cmp(&b),
                o => o,
            });
            ranked.truncate(k);
            ranked
        }
        GrowMode::Random => index::sample(rng, candidates.len(), k)
            .into_iter()
            .map(|i| candidates[i])
            .collect(),
        GrowMode::Frozen => unreachable!(),
    };
    dropped.sort_unstable();
    grown.sort_unstable();

    let mask = layer.mask.as_slice_mut().expect("standard layout");
    let weights = layer.weights.as_slice_mut().expect("standard layout");
    for &i in &dropped {
        mask[i] = false;
        weights[i] = 0.0;
    }
    for &i in &grown {
        mask[i] = true;
        weights[i] = 0.0;
    }
    Ok(EvolutionRecord { dropped, grown })
}

/// Evolves every layer of `net` and clears optimizer moments at positions
/// that changed state.
pub fn evolve_network<R: Rng + ?Sized>(
    net: &mut Mlp,
    grads: &Gradients,
    opt: &mut Adam,
    fraction: f64,
    grow_mode: GrowMode,
    rng: &mut R,
) -> Result<Vec<EvolutionRecord>> {
    if grads.weights.len() != net.layers().len() {
        return Err(Error::DimensionMismatch(
            "gradient layer count differs from network".into(),
        ));
    }
    let records = net
        .layers_mut()
        .iter_mut()
        .zip(&grads.weights)
        .map(|(layer, g)| evolve_topology(layer, g, fraction, grow_mode, rng))
        .collect::<Result<Vec<_>>>()?;
    opt.project_to_masks(net);
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sched(z0: f64, t_end: u64) -> EvolutionSchedule {
        EvolutionSchedule {
            initial_fraction: z0,
            total_steps: t_end,
            mask_update_interval: 10,
            grow_mode: GrowMode::Gradient,
        }
    }

    #[test]
    fn anneal_endpoints() {
        let s = sched(0.5, 1000);
        assert_eq!(anneal_fraction(0, &s).unwrap(), 0.5);
        assert!(anneal_fraction(1000, &s).unwrap().abs() < 1e-15);
        assert!((anneal_fraction(500, &s).unwrap() - 0.25).abs() < 1e-15);
        assert!(anneal_fraction(1001, &s).is_err());
    }

    #[test]
    fn er_examples() {
        let one = er_allocate(0.8, &[(10, 20)]).unwrap();
        assert!((one.per_layer[0] - 0.8).abs() < 1e-12);

        let dims = [(4, 8), (8, 8), (8, 2)];
        let a = er_allocate(0.5, &dims).unwrap();
        assert!((a.scale_constant - 28.0 / 19.0).abs() < 1e-12);
        let densities: Vec<f64> = a.per_layer.iter().map(|s| 1.0 - s).collect();
        for (d, e) in densities.iter().zip([0.5526, 0.3684, 0.9211]) {
            assert!((d - e).abs() < 1e-4, "{d} vs {e}");
        }
        let total: f64 = dims
            .iter()
            .zip(&densities)
            .map(|(&(i, o), d)| d * (i * o) as f64)
            .sum();
        assert!((total - 56.0).abs() < 1e-9);
        assert_eq!(a.active_counts(&dims).iter().sum::<usize>(), 56);

        let zero = er_allocate(0.0, &dims).unwrap();
        assert!(zero.per_layer.iter().all(|&s| s == 0.0));

        assert!(er_allocate(1.0, &dims).is_err());
    }

    #[test]
    fn er_clamps_small_output_layer() {
        // 256x1 head would need density > 1 at moderate sparsity.
        let dims = [(4, 256), (256, 256), (256, 1)];
        let a = er_allocate(0.85, &dims).unwrap();
        assert_eq!(a.per_layer[2], 0.0);
        let want = 0.15 * (1024 + 65536 + 256) as f64;
        let got: usize = a.active_counts(&dims).iter().sum();
        assert!((got as f64 - want).abs() <= 3.0);
    }

    fn layer_2x3() -> MaskedLinear {
        // Active: (0,0)=0.9, (0,2)=-0.1, (1,1)=0.05, (1,2)=-2.0 ; inactive: 1, 3.
        MaskedLinear {
            in_dim: 3,
            out_dim: 2,
            weights: array![[0.9, 0.0, -0.1], [0.0, 0.05, -2.0]],
            mask: array![[true, false, true], [false, true, true]],
            bias: Array1::zeros(2),
            target_sparsity: 1.0 / 3.0,
        }
    }

    #[test]
    fn evolve_hand_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = layer_2x3();
        let grad = array![[0.0, 0.3, 0.0], [-0.7, 0.0, 0.0]];
        let rec = evolve_topology(&mut layer, &grad, 0.5, GrowMode::Gradient, &mut rng).unwrap();
        // k = floor(0.5 · 4) = 2; smallest |w| active: flat 4 (0.05) then 2 (0.1).
        assert_eq!(rec.dropped, vec![2, 4]);
        assert_eq!(rec.grown, vec![1, 3]);
        assert_eq!(layer.mask, array![[true, true, false], [true, false, true]]);
        assert_eq!(layer.weights, array![[0.9, 0.0, 0.0], [0.0, 0.0, -2.0]]);
    }

    #[test]
    fn evolve_accepts_column_major_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = layer_2x3();
        let grad = array![[0.0, -0.7], [0.3, 0.0], [0.0, 0.0]].reversed_axes();
        let rec = evolve_topology(&mut layer, &grad, 0.5, GrowMode::Gradient, &mut rng).unwrap();
        assert_eq!(rec.grown, vec![1, 3]);
    }

    #[test]
    fn evolve_zero_fraction_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = layer_2x3();
        let before = layer.clone();
        let grad = Array2::ones((2, 3));
        evolve_topology(&mut layer, &grad, 0.0, GrowMode::Gradient, &mut rng).unwrap();
        assert_eq!(layer, before);
        evolve_topology(&mut layer, &grad, 0.9, GrowMode::Frozen, &mut rng).unwrap();
        assert_eq!(layer, before);
    }

    #[test]
    fn evolve_ties_break_by_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // 3x3, active diagonal with equal magnitudes, all gradients equal.
        let mut layer = MaskedLinear {
            in_dim: 3,
            out_dim: 3,
            weights: Array2::eye(3),
            mask: Array2::from_shape_fn((3, 3), |(i, j)| i == j),
            bias: Array1::zeros(3),
            target_sparsity: 2.0 / 3.0,
        };
        let grad = Array2::from_elem((3, 3), 0.5);
        let rec = evolve_topology(&mut layer, &grad, 0.7, GrowMode::Gradient, &mut rng).unwrap();
        // k = floor(0.7 · 3) = 2.
        assert_eq!(rec.dropped, vec![0, 4]);
        assert_eq!(rec.grown, vec![1, 2]);
    }

    #[test]
    fn evolve_shrinks_when_candidates_run_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = MaskedLinear {
            in_dim: 2,
            out_dim: 2,
            weights: array![[1.0, 2.0], [3.0, 0.0]],
            mask: array![[true, true], [true, false]],
            bias: Array1::zeros(2),
            target_sparsity: 0.25,
        };
        let grad = Array2::ones((2, 2));
        let rec = evolve_topology(&mut layer, &grad, 1.0, GrowMode::Gradient, &mut rng).unwrap();
        assert_eq!(rec.dropped, vec![0]);
        assert_eq!(rec.grown, vec![3]);
        assert_eq!(layer.active_count(), 3);
    }

    #[test]
    fn evolve_rejects_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = layer_2x3();
        assert!(evolve_topology(&mut layer, &Array2::zeros((3, 2)), 0.5, GrowMode::Gradient, &mut rng).is_err());
        assert!(evolve_topology(&mut layer, &Array2::zeros((2, 3)), 1.5, GrowMode::Gradient, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn anneal_is_monotone(z0 in 0.01f64..=1.0, t_end in 1u64..5000, a in 0u64..5000, b in 0u64..5000) {
            let s = sched(z0, t_end);
            let (lo, hi) = (a.min(b).min(t_end), a.max(b).min(t_end));
            let (flo, fhi) = (s.fraction_at(lo).unwrap(), s.fraction_at(hi).unwrap());
            prop_assert!(fhi <= flo);
            prop_assert!((0.0..=z0).contains(&fhi));
        }

        #[test]
        fn evolve_conserves_and_separates(
            seed in any::<u64>(),
            rows in 1usize..7,
            cols in 1usize..7,
            sparsity in 0.0f64..=1.0,
            fraction in 0.0f64..=1.0,
            random_grow in any::<bool>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut layer = MaskedLinear::random(cols, rows, sparsity, &mut rng).unwrap();
            let before = layer.mask.clone();
            let grad = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0));
            let mode = if random_grow { GrowMode::Random } else { GrowMode::Gradient };
            let rec = evolve_topology(&mut layer, &grad, fraction, mode, &mut rng).unwrap();
            prop_assert_eq!(layer.active_count(), before.iter().filter(|&&m| m).count());
            prop_assert_eq!(rec.dropped.len(), rec.grown.len());
            prop_assert!(rec.dropped.iter().all(|d| !rec.grown.contains(d)));
            for (w, &m) in layer.weights.iter().zip(&layer.mask) {
                prop_assert!(m || *w == 0.0);
            }
        }

        #[test]
        fn er_feasible(
            global in 0.0f64..0.99,
            dims in proptest::collection::vec((1usize..40, 1usize..40), 1..5),
        ) {
            let a = er_allocate(global, &dims).unwrap();
            prop_assert!(a.per_layer.iter().all(|s| (0.0..=1.0).contains(s)));
            let total: usize = dims.iter().map(|&(i, o)| i * o).sum();
            let got: usize = a.active_counts(&dims).iter().sum();
            let want = (1.0 - global) * total as f64;
            prop_assert!((got as f64 - want).abs() <= dims.len() as f64 * 0.5 + 1e-9);
        }
    }
}
