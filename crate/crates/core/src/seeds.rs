//! Seed derivation. Every random stream is a ChaCha8 generator keyed by the
//! master seed, with the task index selecting the stream, so results never
//! depend on how tasks are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Human-readable statement of the splitting rule, embedded in result files.
pub const SEED_RULE: &str =
    "task rng = ChaCha8Rng::seed_from_u64(master_seed) with set_stream(task_index)";

pub fn task_rng(master: u64, task: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(task);
    rng
}

/// Derives a child seed for a sub-computation (stream index `task`).
pub fn child_seed(master: u64, task: u64) -> u64 {
    use rand::RngCore;
    task_rng(master, task).next_u64()
}
