//! Preamble and SFD code generation.
//!
//! Deployed preamble codes are not public; what matters to the simulated
//! receiver is autocorrelation quality, so codes here are seeded ternary
//! pseudo-sequences.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Default start-of-frame delimiter, length 8.
pub const DEFAULT_SFD: [i8; 8] = [0, 1, 0, -1, 1, 0, 0, -1];

/// Default preamble code length.
pub const DEFAULT_PREAMBLE_LEN: usize = 127;

/// Generates a ternary code of `len` symbols in {-1, 0, +1} from a seed.
///
/// Symbols are drawn uniformly; a code is redrawn only if it came out all
/// zero (useless for correlation).
pub fn ternary_code(seed: u64, len: usize) -> Vec<i8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let code: Vec<i8> = (0..len).map(|_| rng.gen_range(-1i8..=1)).collect();
        if code.iter().any(|&s| s != 0) {
            return code;
        }
    }
}
