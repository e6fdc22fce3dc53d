//! Seeded random streams. One master seed per experiment; every (run,
//! purpose) pair gets its own ChaCha stream so that consumers never share
//! state and results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Tree = 0,
    Field = 1,
    Walk = 2,
    MonteCarlo = 3,
}

const PURPOSES: u64 = 8;

pub fn stream(master: u64, run: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(run * PURPOSES + purpose as u64);
    rng
}
