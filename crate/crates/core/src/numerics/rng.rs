use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Seeded, counter-based random stream.
///
/// ChaCha is a counter-mode generator: the 64-bit seed selects the key and
/// `split` selects an independent stream, so per-component streams (data
/// shuffling, init, sampling) never share state.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this one's seed and a label.
    pub fn split(&self, label: u64) -> SeededRng {
        let stream = splitmix(self.stream ^ splitmix(label.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        Self::with_stream(self.seed, stream)
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Draws an index with probability proportional to `probs[i]`.
    pub fn categorical(&mut self, probs: &[f64]) -> Result<usize> {
        if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Invalid("categorical probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            return Err(Error::Invalid("categorical probabilities are all zero".into()));
        }
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Invalid(format!("categorical probabilities sum to {total}")));
        }
        Ok(sample_weighted(probs, total, self.uniform()))
    }

    /// Like [`categorical`](Self::categorical) but accepts unnormalized weights.
    pub fn weighted(&mut self, weights: &[f64]) -> Result<usize> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) || total <= 0.0 {
            return Err(Error::Invalid("weights must be finite, nonnegative, not all zero".into()));
        }
        Ok(sample_weighted(weights, total, self.uniform()))
    }
}

fn sample_weighted(weights: &[f64], total: f64, u: f64) -> usize {
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            acc += w;
            if target < acc {
                return i;
            }
        }
    }
    last_positive
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_distribution() {
        let mut rng = SeededRng::new(3);
        for _ in 0..100 {
            assert_eq!(rng.categorical(&[1.0, 0.0, 0.0]).unwrap(), 0);
        }
    }

    #[test]
    fn fair_coin_frequency() {
        let mut rng = SeededRng::new(11);
        let ones: usize = (0..10_000).map(|_| rng.categorical(&[0.5, 0.5]).unwrap()).sum();
        let freq = ones as f64 / 10_000.0;
        assert!((freq - 0.5).abs() <= 0.02, "freq {freq}");
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        let xs: Vec<usize> = (0..50).map(|_| a.categorical(&[0.2, 0.3, 0.5]).unwrap()).collect();
        let ys: Vec<usize> = (0..50).map(|_| b.categorical(&[0.2, 0.3, 0.5]).unwrap()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn split_streams_differ_and_are_stable() {
        let base = SeededRng::new(5);
        let mut s1 = base.split(1);
        let mut s2 = base.split(2);
        let mut s1b = SeededRng::new(5).split(1);
        let a: Vec<u64> = (0..4).map(|_| s1.next_u64()).collect();
        let b: Vec<u64> = (0..4).map(|_| s2.next_u64()).collect();
        let c: Vec<u64> = (0..4).map(|_| s1b.next_u64()).collect();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn rejects_bad_probabilities() {
        let mut rng = SeededRng::new(0);
        assert!(rng.categorical(&[0.0, 0.0]).is_err());
        assert!(rng.categorical(&[f64::NAN, 1.0]).is_err());
        assert!(rng.categorical(&[0.3, 0.3]).is_err());
    }
}
