use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Seeded, splittable random stream.
///
/// A stream is identified by `(seed, stream)`; the ChaCha8 word position is the
/// counter. Child streams come from [`Rng::split`], which hashes the parent's
/// stream id with a caller-chosen tag, so `(seed, tag)` pairs never share state
/// regardless of how far the parent has advanced.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

/// Serializable snapshot of an [`Rng`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub counter: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    /// Independent child stream for `tag`. Does not advance `self`.
    pub fn split(&self, tag: u64) -> Self {
        Self::with_stream(self.seed, splitmix(self.stream ^ splitmix(tag)))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            stream: self.stream,
            counter: u64::try_from(self.inner.get_word_pos()).expect("word position fits u64"),
        }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut rng = Self::with_stream(state.seed, state.stream);
        rng.inner.set_word_pos(u128::from(state.counter));
        rng
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..16 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn split_is_independent_of_parent_position() {
        let a = Rng::new(3);
        let mut b = Rng::new(3);
        b.next_u64();
        assert_eq!(a.split(5).next_u64(), b.split(5).next_u64());
        assert_ne!(a.split(5).next_u64(), a.split(6).next_u64());
    }

    #[test]
    fn state_round_trip_resumes_stream() {
        let mut a = Rng::new(11).split(2);
        for _ in 0..5 {
            a.normal();
        }
        let mut b = Rng::from_state(a.state());
        for _ in 0..8 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }
}
