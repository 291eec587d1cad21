//! Counter-based random substreams.
//!
//! Every random draw in the toolkit comes from a ChaCha stream keyed by the
//! master seed and a [`Purpose`], positioned by `(iteration, index)`. Two
//! calls with the same key always see the same numbers, no matter which
//! thread runs them or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG type handed to every stochastic operation.
pub type StreamRng = ChaCha8Rng;

/// What a substream is used for. Distinct purposes never share a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    InitialDraw = 1,
    Resample = 2,
    Perturb = 3,
    Simulate = 4,
    MarginalPrior = 5,
    MarginalSimulate = 6,
    Observation = 7,
    ParticleSet = 8,
    AbcAttempt = 9,
    Replicate = 10,
    Test = 11,
}

/// Words reserved for each `(iteration, index)` cell of a stream.
const CELL_WORDS_LOG2: u32 = 48;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A master seed from which keyed substreams are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    fn key(&self, purpose: Purpose) -> [u8; 32] {
        let mut key = [0u8; 32];
        let mut state = self.master ^ splitmix64(purpose as u64);
        for chunk in key.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        key
    }

    /// The substream for `(purpose, iteration, index)`.
    pub fn stream(&self, purpose: Purpose, iteration: u64, index: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::from_seed(self.key(purpose));
        rng.set_stream(iteration);
        rng.set_word_pos((index as u128) << CELL_WORDS_LOG2);
        rng
    }

    /// An independent seed tree, e.g. one per replicate of a study.
    pub fn child(&self, purpose: Purpose, index: u64) -> SeedTree {
        let a = splitmix64(self.master ^ splitmix64(purpose as u64));
        SeedTree::new(splitmix64(a ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D))))
    }
}
