use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smallvec::SmallVec;

/// Counter-based random stream addressed by a root seed and a path such as
/// `(cycle, level, candidate)`. Deriving a generator is pure: the same
/// address always yields the same draws, regardless of evaluation order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub path: SmallVec<[u64; 4]>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            path: SmallVec::new(),
        }
    }

    pub fn child(&self, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push(index);
        Self { seed: self.seed, path }
    }

    /// ChaCha stream id for this path.
    fn stream_id(&self) -> u64 {
        self.path
            .iter()
            .fold(splitmix64(self.path.len() as u64), |h, &p| splitmix64(h ^ splitmix64(p)))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream_id());
        r
    }
}
