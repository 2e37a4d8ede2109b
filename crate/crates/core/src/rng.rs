//! Seedable Gaussian streams.
//!
//! Every stream is a ChaCha8 keystream selected by `(seed, stream)`: the key
//! is expanded from `seed` with `SeedableRng::seed_from_u64` and the 64-bit
//! ChaCha stream id is `stream`. Normals are drawn with `rand_distr`'s
//! `StandardNormal`. Because each stream is addressed independently, draws
//! for one Monte Carlo iteration or one tensor never depend on how many
//! values other streams consumed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct GaussianStream {
    rng: ChaCha8Rng,
}

impl GaussianStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    pub fn next_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn fill_normal_f32(&mut self, out: &mut [f32], scale: f64) {
        for v in out.iter_mut() {
            *v = (self.next_normal() * scale) as f32;
        }
    }
}
