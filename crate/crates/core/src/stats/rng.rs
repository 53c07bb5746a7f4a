use rand::{Error as RandError, Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Splittable seeded generator: one ChaCha8 key per master seed and one
/// ChaCha stream per `stream_index`, so distinct indices never overlap.
#[derive(Debug, Clone)]
pub struct SeededRng {
    master_seed: u64,
    stream_index: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master_seed);
        inner.set_stream(stream_index);
        Self {
            master_seed,
            stream_index,
            inner,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    /// A child generator keyed by the next output of this one.
    pub fn fork(&mut self) -> SeededRng {
        let seed = self.gen::<u64>();
        SeededRng::new(seed, self.stream_index)
    }
}

impl RngCore for SeededRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }
    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), RandError> {
        self.inner.try_fill_bytes(dest)
    }
}
