//! Tabular reinforcement learning on small grid worlds.
//!
//! Model-based evaluation and control ([`dp`]), Monte Carlo evaluation
//! ([`mc`]), temporal-difference learning ([`td`]), policy-gradient and
//! actor-critic methods ([`pg`]), and a single-qubit state-preparation task
//! solved by a Gaussian actor-critic ([`quantum`]). The [`cli`] module wires
//! these to the `tabrl` experiment runner.

pub mod cli;
pub mod dp;
pub mod environments;
pub mod error;
pub mod mc;
pub mod mdp;
pub mod pg;
pub mod quantum;
pub mod td;

pub use error::{Error, Result};
pub use mdp::{ActionId, StartDistribution, StateId, TabularPolicy, Trajectory, TransitionModel};

/// RNG used throughout. ChaCha8 output is stable across platforms and
/// crate versions, so a seed pins a run.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
