//! GNN encoders shared across tasks, task-specific heads and checkpoints.

mod checkpoint;
mod encoder;
mod heads;

pub use checkpoint::{manifest_path, Checkpoint};
pub use encoder::{EncoderConfig, EncoderKind, GnnEncoder};
pub use heads::{HeadKind, TaskHead};

use rand::Rng;

/// Uniform `±sqrt(6 / (fan_in + fan_out))` initialization for an `n_in x n_out` matrix.
pub(crate) fn uniform_init(rng: &mut impl Rng, n_in: usize, n_out: usize) -> Vec<f64> {
    let a = (6.0 / (n_in + n_out) as f64).sqrt();
    (0..n_in * n_out).map(|_| rng.random_range(-a..=a)).collect()
}
