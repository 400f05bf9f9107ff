//! Counter-based deterministic RNG with named stream derivation.
//!
//! Every consumer derives its own stream from `(seed, labels...)`, so the
//! value sequence seen by one consumer is independent of how many other
//! streams exist or in which order they are drawn from. That makes parallel
//! generation order-independent: results depend only on the stream labels,
//! never on thread scheduling.

/// Stafford variant 13 of the splitmix64 finalizer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn hash_label(label: &str) -> u64 {
    // FNV-1a.
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// A splittable counter-based random stream.
#[derive(Clone, Debug)]
pub struct StreamRng {
    key: u64,
    ctr: u64,
}

impl StreamRng {
    pub fn new(seed: u64) -> Self {
        StreamRng { key: mix(seed ^ GOLDEN), ctr: 0 }
    }

    /// Derive a child stream by name. Children with distinct label paths
    /// produce statistically independent sequences.
    pub fn derive(&self, label: &str) -> StreamRng {
        StreamRng { key: mix(self.key ^ mix(hash_label(label))), ctr: 0 }
    }

    /// Derive a child stream by integer tag (e.g. a step or item index).
    pub fn derive_idx(&self, idx: u64) -> StreamRng {
        StreamRng { key: mix(self.key ^ mix(idx.wrapping_mul(GOLDEN) ^ 0xD6E8_FEB8_6659_FD93)), ctr: 0 }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let c = self.ctr;
        self.ctr += 1;
        mix(self.key.wrapping_add(c.wrapping_mul(GOLDEN)))
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller. Two uniforms per draw.
    pub fn next_normal(&mut self) -> f64 {
        // Shift into (0, 1] so the log is finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Vector of iid standard normals.
    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_normal()).collect()
    }

    /// Uniform integer in [0, n).
    pub fn next_usize(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Modulo bias is negligible for the small n used here.
        (self.next_u64() % n as u64) as usize
    }

    /// Sample an index from a discrete distribution given by `weights`
    /// (nonnegative, need not be normalized).
    pub fn next_weighted(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.next_f64() * total;
        for (i, w) in weights.iter().enumerate() {
            u -= w;
            if u < 0.0 {
                return i;
            }
        }
        weights.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = StreamRng::new(7).derive("x");
        let mut b = StreamRng::new(7).derive("x");
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn derived_streams_differ() {
        let root = StreamRng::new(7);
        let mut a = root.derive("a");
        let mut b = root.derive("b");
        assert_ne!(a.next_u64(), b.next_u64());
        let mut c = root.derive_idx(0);
        let mut d = root.derive_idx(1);
        assert_ne!(c.next_u64(), d.next_u64());
    }

    #[test]
    fn stream_independent_of_sibling_consumption() {
        let root = StreamRng::new(42);
        let mut a1 = root.derive("a");
        let expected: Vec<u64> = (0..10).map(|_| a1.next_u64()).collect();

        // Consuming from a sibling first must not change "a"'s sequence.
        let mut b = root.derive("b");
        for _ in 0..1000 {
            b.next_u64();
        }
        let mut a2 = root.derive("a");
        let got: Vec<u64> = (0..10).map(|_| a2.next_u64()).collect();
        assert_eq!(expected, got);
    }

    #[test]
    fn uniform_moments() {
        let mut r = StreamRng::new(1).derive("u");
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| r.next_f64()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn normal_moments() {
        let mut r = StreamRng::new(1).derive("n");
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| r.next_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn weighted_degenerate() {
        let mut r = StreamRng::new(3).derive("w");
        for _ in 0..100 {
            assert_eq!(r.next_weighted(&[0.0, 1.0, 0.0]), 1);
        }
    }
}
