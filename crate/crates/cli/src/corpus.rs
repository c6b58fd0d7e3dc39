//! Synthetic token corpora with a long-tailed frequency profile.

use draftreuse_core::TokenId;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::CliError;

/// `draws` ids from Zipf(`exponent`) over `[0, vocab)`: token `i` has
/// weight `1 / (i + 1)^exponent`.
pub fn gen_corpus(vocab: usize, draws: usize, exponent: f64, seed: u64) -> Result<Vec<TokenId>, CliError> {
    if vocab < 2 {
        return Err(CliError::Config("vocab must be >= 2".into()));
    }
    if draws == 0 {
        return Err(CliError::Config("draws must be >= 1".into()));
    }
    if !(exponent > 0.0) {
        return Err(CliError::Config("zipf exponent must be > 0".into()));
    }
    let zipf = Zipf::new(vocab as f64, exponent).map_err(|e| CliError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..draws).map(|_| zipf.sample(&mut rng) as TokenId - 1).collect())
}
