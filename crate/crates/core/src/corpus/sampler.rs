use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// A reproducible random stream identified by `(seed, stream id)`.
///
/// The ChaCha key is the SHA-256 of the little-endian seed followed by the
/// stream id bytes, so two samplers with the same pair produce the same
/// draws on every platform, and distinct stream ids are independent.
#[derive(Debug, Clone)]
pub struct SeededSampler {
    seed: u64,
    stream: String,
    rng: ChaCha8Rng,
}

impl SeededSampler {
    pub fn new(seed: u64, stream: impl Into<String>) -> Self {
        let stream = stream.into();
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(stream.as_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        SeededSampler {
            seed,
            stream,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// A fresh, independent stream namespaced under this one.
    pub fn substream(&self, name: &str) -> SeededSampler {
        SeededSampler::new(self.seed, format!("{}/{}", self.stream, name))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> &str {
        &self.stream
    }

    /// Uniform index in `0..n`. Panics on `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn coin(&mut self) -> bool {
        self.rng.random::<bool>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.rng.random_range(0..=i);
            items.swap(i, j);
        }
    }

    /// Draws `k` items without replacement, in draw order (partial
    /// Fisher-Yates over a copy of `items`).
    pub fn choose_k<T: Clone>(&mut self, items: &[T], k: usize) -> Vec<T> {
        assert!(k <= items.len());
        let mut pool = items.to_vec();
        for i in 0..k {
            let j = self.rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}
