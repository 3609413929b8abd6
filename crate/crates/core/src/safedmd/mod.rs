//! Data generation, structured bilinear regression and error-constant estimation.
//!
//! The surrogate keeps the constant observable invariant and the lifted origin fixed:
//!
//! ```text
//! K_0   = [[1, 0ᵀ], [0,   A  ]]
//! K_e_i = [[1, 0ᵀ], [b_i, B_i]]
//! K_u   = K_0 + Σ u_i (K_e_i − K_0)
//! ```

mod bounds;
mod data;
mod model;

pub use bounds::{
    cbar, estimate_error_constants, validate_proportional_bound, validate_rollout_bound, BoundCheck,
    ErrorBounds,
};
pub use data::{sample_data, DataSet, InputTag};
pub use model::{fit, FitMeta, Prediction, SurrogateModel};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent deterministic stream `stream` of the generator seeded by `seed`.
pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
