//! Fixtures shared by the kernel benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparserl::agents::er_layer_sparsities;
use sparserl::{BufferConfig, DynamicBuffer, Head, Mlp, Transition};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A critic-shaped network with Erdős–Rényi sparsities at `sparsity`.
pub fn critic(input: usize, hidden: usize, sparsity: f64, rng: &mut ChaCha8Rng) -> Mlp {
    let dims = [input, hidden, hidden, 1];
    let per_layer = er_layer_sparsities(&dims, sparsity).expect("valid sparsity");
    Mlp::new(&dims, &per_layer, Head::Identity, rng).expect("valid architecture")
}

pub fn batch(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// A full buffer of `len` pendulum-shaped transitions in 200-step episodes.
pub fn filled_buffer(len: usize, rng: &mut ChaCha8Rng) -> DynamicBuffer {
    let mut buf = DynamicBuffer::new(BufferConfig {
        min_capacity: len,
        max_capacity: len,
        distance_threshold: 0.2,
        shrink_ratio: 0.2,
        check_interval: u64::MAX,
        distance_batch: 256,
    })
    .expect("valid buffer");
    for i in 0..len {
        let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        buf.push(Transition {
            state: s.clone(),
            action: vec![rng.random_range(-1.0..1.0)],
            reward: -rng.random::<f64>(),
            next_state: s,
            done: false,
            episode_id: (i / 200) as u64,
            step_in_episode: (i % 200) as u32,
        });
    }
    buf
}
