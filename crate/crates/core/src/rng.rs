//! Seeded random streams. Every stochastic step draws from a ChaCha stream
//! identified by a seed and a stream number, so runs are reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Rng = ChaCha8Rng;

/// Environment variable overriding seeds given on the command line or in configs.
pub const SEED_ENV: &str = "SEMTRANS_SEED";

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `default`, unless [`SEED_ENV`] holds a valid integer.
pub fn seed_from_env(default: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|e| Error::Parse {
            context: SEED_ENV.into(),
            message: format!("{v:?}: {e}"),
        }),
        Err(_) => Ok(default),
    }
}
