//! Masked multilayer perceptrons with exact reverse-mode gradients.
//!
//! Every layer carries a binary connectivity mask. The stored weights are
//! always the effective weights: positions whose mask bit is off hold an
//! exact zero, so the forward pass is a plain dense affine chain. The
//! backward pass returns the gradient at *every* position of each weight
//! matrix, including inactive ones; those entries are the growth scores used
//! by gradient-driven topology evolution.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output transform applied after the last affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Raw affine output (critics).
    Identity,
    /// `tanh` squash into `[-1, 1]` (deterministic actors).
    Tanh,
    /// Raw `[mean | log_std]` pair for a squashed Gaussian policy; the
    /// network itself applies no transform.
    Gaussian,
}

/// One affine layer with a binary connectivity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedLinear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim x in_dim`; zero wherever `mask` is false.
    pub weights: Array2<f64>,
    pub mask: Array2<bool>,
    /// Never masked.
    pub bias: Array1<f64>,
    pub target_sparsity: f64,
}

impl MaskedLinear {
    /// Builds a layer with uniform `±1/sqrt(fan_in)` weights and a mask with
    /// exactly `round((1 - sparsity) * in * out)` active positions.
    pub fn random<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        sparsity: f64,
        rng: &mut R,
    ) -> Result<Self> {
        check_sparsity(sparsity, "layer sparsity")?;
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::DimensionMismatch(format!(
                "layer dimensions must be positive, got {in_dim}x{out_dim}"
            )));
        }
        let n = in_dim * out_dim;
        let active = active_count_for(sparsity, n);
        let mut mask = Array2::from_elem((out_dim, in_dim), false);
        let flat = mask.as_slice_mut().expect("standard layout");
        for i in index::sample(rng, n, active) {
            flat[i] = true;
        }
        Self::with_mask(in_dim, out_dim, mask, sparsity, rng)
    }

    /// Builds a layer around a given mask; weights are drawn then projected.
    pub fn with_mask<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        mask: Array2<bool>,
        target_sparsity: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if mask.dim() != (out_dim, in_dim) {
            return Err(Error::DimensionMismatch(format!(
                "mask is {:?}, layer is {}x{}",
                mask.dim(),
                out_dim,
                in_dim
            )));
        }
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weights = Array2::from_shape_fn((out_dim, in_dim), |_| rng.random_range(-bound..bound));
        let bias = Array1::from_shape_fn(out_dim, |_| rng.random_range(-bound..bound));
        let mut layer = MaskedLinear {
            in_dim,
            out_dim,
            weights,
            mask,
            bias,
            target_sparsity,
        };
        layer.apply_mask();
        Ok(layer)
    }

    pub fn len(&self) -> usize {
        self.in_dim * self.out_dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn active_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Fraction of inactive positions in the current mask.
    pub fn sparsity(&self) -> f64 {
        1.0 - self.active_count() as f64 / self.len() as f64
    }

    /// `θ ← θ ⊙ M`.
    pub fn apply_mask(&mut self) {
        Zip::from(&mut self.weights)
            .and(&self.mask)
            .for_each(|w, &m| {
                if !m {
                    *w = 0.0;
                }
            });
    }
}

/// Number of active positions for a layer of `n` weights at `sparsity`.
pub fn active_count_for(sparsity: f64, n: usize) -> usize {
    (((1.0 - sparsity) * n as f64).round() as usize).min(n)
}

fn check_sparsity(value: f64, context: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::InvalidSparsity {
            value,
            context: context.to_string(),
        });
    }
    Ok(())
}

/// A chain of masked layers with ReLU hidden activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<MaskedLinear>,
    head: Head,
}

/// Activations recorded by [`Mlp::forward_batch`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

/// Per-layer `∂L/∂W` at every position (active or not) plus bias gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            weights: net
                .layers
                .iter()
                .map(|l| Array2::zeros((l.out_dim, l.in_dim)))
                .collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.out_dim)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

impl Mlp {
    /// `init_network`: random weights and uniformly placed random masks.
    pub fn new<R: Rng + ?Sized>(
        layer_dims: &[usize],
        per_layer_sparsity: &[f64],
        head: Head,
        rng: &mut R,
    ) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::DimensionMismatch(
                "need at least an input and an output dimension".into(),
            ));
        }
        if per_layer_sparsity.len() != layer_dims.len() - 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} layers but {} sparsities",
                layer_dims.len() - 1,
                per_layer_sparsity.len()
            )));
        }
        for &s in per_layer_sparsity {
            check_sparsity(s, "per-layer sparsity")?;
        }
        let layers = layer_dims
            .windows(2)
            .zip(per_layer_sparsity)
            .map(|(d, &s)| MaskedLinear::random(d[0], d[1], s, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers, head)
    }

    /// Builds a network around fixed masks (one per layer).
    pub fn with_masks<R: Rng + ?Sized>(
        layer_dims: &[usize],
        masks: Vec<Array2<bool>>,
        head: Head,
        rng: &mut R,
    ) -> Result<Self> {
        if masks.len() + 1 != layer_dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} layers but {} masks",
                layer_dims.len().saturating_sub(1),
                masks.len()
            )));
        }
        let layers = layer_dims
            .windows(2)
            .zip(masks)
            .map(|(d, mask)| {
                let n = (d[0] * d[1]) as f64;
                let active = mask.iter().filter(|&&m| m).count() as f64;
                MaskedLinear::with_mask(d[0], d[1], mask, 1.0 - active / n, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers, head)
    }

    pub fn from_layers(layers: Vec<MaskedLinear>, head: Head) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::DimensionMismatch("network has no layers".into()));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.weights.dim() != (layer.out_dim, layer.in_dim)
                || layer.mask.dim() != (layer.out_dim, layer.in_dim)
                || layer.bias.len() != layer.out_dim
            {
                return Err(Error::DimensionMismatch(format!(
                    "layer {l} parameter shapes disagree with {}x{}",
                    layer.out_dim, layer.in_dim
                )));
            }
            check_sparsity(layer.target_sparsity, "layer target sparsity")?;
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::DimensionMismatch(format!(
                    "layer {l} outputs {} but layer {} expects {}",
                    pair[0].out_dim,
                    l + 1,
                    pair[1].in_dim
                )));
            }
        }
        Ok(Mlp { layers, head })
    }

    pub fn layers(&self) -> &[MaskedLinear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [MaskedLinear] {
        &mut self.layers
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// `[in, h1, ..., out]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn active_count(&self) -> usize {
        self.layers.iter().map(MaskedLinear::active_count).sum()
    }

    pub fn masks(&self) -> Vec<Array2<bool>> {
        self.layers.iter().map(|l| l.mask.clone()).collect()
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        Ok(self.predict(x)?.into_raw_vec_and_offset().0)
    }

    /// Batched forward pass without recording activations.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut h = self.affine(0, x);
        for l in 1..=last {
            h.mapv_inplace(relu);
            h = self.affine(l, h.view());
        }
        if self.head == Head::Tanh {
            h.mapv_inplace(f64::tanh);
        }
        Ok(h)
    }

    /// Batched forward pass recording what [`Mlp::backward_dense`] needs.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for l in 0..self.layers.len() {
            let z = self.affine(l, h.view());
            inputs.push(h);
            h = if l + 1 < self.layers.len() {
                z.mapv(relu)
            } else if self.head == Head::Tanh {
                z.mapv(f64::tanh)
            } else {
                z.clone()
            };
            pre.push(z);
        }
        let cache = ForwardCache {
            inputs,
            pre,
            output: h.clone(),
        };
        Ok((h, cache))
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input has {} features, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn affine(&self, l: usize, x: ArrayView2<f64>) -> Array2<f64> {
        let layer = &self.layers[l];
        let mut z = x.dot(&layer.weights.t());
        z += &layer.bias;
        z
    }

    /// Gradients at every weight position given `∂L/∂output` for the batch
    /// recorded in `cache`.
    pub fn backward_dense(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<f64>,
    ) -> Result<Gradients> {
        Ok(self.backprop(cache, output_grad, true, false)?.0.expect("requested"))
    }

    /// Weight gradients plus `∂L/∂input`.
    pub fn backward_full(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        let (g, dx) = self.backprop(cache, output_grad, true, true)?;
        Ok((g.expect("requested"), dx.expect("requested")))
    }

    /// Only `∂L/∂input`; weight gradients are not formed.
    pub fn input_gradient(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        Ok(self.backprop(cache, output_grad, false, true)?.1.expect("requested"))
    }

    fn backprop(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<f64>,
        want_weights: bool,
        want_input: bool,
    ) -> Result<(Option<Gradients>, Option<Array2<f64>>)> {
        if cache.inputs.len() != self.layers.len() || cache.pre.len() != self.layers.len() {
            return Err(Error::DimensionMismatch(
                "forward cache does not belong to this network".into(),
            ));
        }
        if output_grad.dim() != cache.output.dim() {
            return Err(Error::DimensionMismatch(format!(
                "output gradient is {:?}, forward output was {:?}",
                output_grad.dim(),
                cache.output.dim()
            )));
        }
        let mut delta = output_grad.to_owned();
        if self.head == Head::Tanh {
            Zip::from(&mut delta)
                .and(&cache.output)
                .for_each(|d, &y| *d *= 1.0 - y * y);
        }
        let n = self.layers.len();
        let mut wg = Vec::with_capacity(if want_weights { n } else { 0 });
        let mut bg = Vec::with_capacity(if want_weights { n } else { 0 });
        for l in (0..n).rev() {
            if want_weights {
                wg.push(delta.t().dot(&cache.inputs[l]));
                bg.push(delta.sum_axis(Axis(0)));
            }
            if l == 0 && !want_input {
                break;
            }
            let mut next = delta.dot(&self.layers[l].weights);
            if l > 0 {
                Zip::from(&mut next)
                    .and(&cache.pre[l - 1])
                    .for_each(|d, &z| {
                        if z <= 0.0 {
                            *d = 0.0;
                        }
                    });
            }
            delta = next;
        }
        let grads = want_weights.then(|| {
            wg.reverse();
            bg.reverse();
            Gradients {
                weights: wg,
                biases: bg,
            }
        });
        Ok((grads, want_input.then_some(delta)))
    }

    /// Polyak update `θ' ← τθ + (1-τ)θ'` followed by `θ' ← θ' ⊙ M_θ`.
    ///
    /// The target adopts the online network's current mask.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) -> Result<()> {
        if self.dims() != online.dims() {
            return Err(Error::DimensionMismatch(
                "target and online networks differ in shape".into(),
            ));
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            Zip::from(&mut t.weights)
                .and(&o.weights)
                .for_each(|tw, &ow| *tw = tau * ow + (1.0 - tau) * *tw);
            Zip::from(&mut t.bias)
                .and(&o.bias)
                .for_each(|tb, &ob| *tb = tau * ob + (1.0 - tau) * *tb);
            t.mask.assign(&o.mask);
            t.target_sparsity = o.target_sparsity;
            t.apply_mask();
        }
        Ok(())
    }
}

#[inline]
fn relu(z: f64) -> f64 {
    z.max(0.0)
}

/// Adaptive-moment optimizer restricted to active positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
}

impl Adam {
    pub fn new(net: &Mlp, learning_rate: f64) -> Self {
        let z = Gradients::zeros_like(net);
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m_w: z.weights.clone(),
            v_w: z.weights,
            m_b: z.biases.clone(),
            v_b: z.biases,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Array2<f64>] {
        &self.m_w
    }

    pub fn second_moments(&self) -> &[Array2<f64>] {
        &self.v_w
    }

    /// One bias-corrected update of active weights and all biases; masked
    /// weights and their moments are left at exactly zero.
    pub fn step(&mut self, net: &mut Mlp, grad: &Gradients) -> Result<()> {
        if grad.weights.len() != net.layers.len() || grad.biases.len() != net.layers.len() {
            return Err(Error::DimensionMismatch(
                "gradient layer count differs from network".into(),
            ));
        }
        for (l, layer) in net.layers.iter().enumerate() {
            if grad.weights[l].dim() != layer.weights.dim() || grad.biases[l].len() != layer.out_dim
            {
                return Err(Error::DimensionMismatch(format!(
                    "gradient shape differs from layer {l}"
                )));
            }
        }
        if !grad.is_finite() {
            return Err(Error::Divergence {
                step: self.step,
                detail: "non-finite gradient entry".into(),
            });
        }
        self.step += 1;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.learning_rate);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (l, layer) in net.layers.iter_mut().enumerate() {
            Zip::from(&mut layer.weights)
                .and(&layer.mask)
                .and(&mut self.m_w[l])
                .and(&mut self.v_w[l])
                .and(&grad.weights[l])
                .for_each(|w, &on, m, v, &g| {
                    if on {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    } else {
                        *w = 0.0;
                        *m = 0.0;
                        *v = 0.0;
                    }
                });
            Zip::from(&mut layer.bias)
                .and(&mut self.m_b[l])
                .and(&mut self.v_b[l])
                .and(&grad.biases[l])
                .for_each(|b, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *b -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
        Ok(())
    }

    /// Zeroes moments at positions that are inactive in `net`; called after
    /// a topology change so regrown connections start with fresh moments.
    pub fn project_to_masks(&mut self, net: &Mlp) {
        for (l, layer) in net.layers.iter().enumerate() {
            for acc in [&mut self.m_w[l], &mut self.v_w[l]] {
                Zip::from(acc).and(&layer.mask).for_each(|a, &on| {
                    if !on {
                        *a = 0.0;
                    }
                });
            }
        }
    }
}
