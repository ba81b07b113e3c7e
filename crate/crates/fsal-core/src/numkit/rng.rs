//! Counter-based splittable RNG.
//!
//! The generator is a keyed SplitMix64: each output depends only on
//! `(seed, stream_id, counter)` through integer mixing, so sequences are
//! bitwise identical on every platform and independent streams can be derived
//! for parallel work without coordination.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const LABEL_MUL: u64 = 0xff51_afd7_ed55_8ccd;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic random stream identified by `(seed, stream_id)`.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    key: u64,
    counter: u64,
}

/// Derive an independent stream from a seed and a label path.
///
/// Pure hash of `(seed, labels)`: the same arguments always name the same
/// stream, different labels (including different orderings) name different
/// streams.
pub fn rng_derive(seed: u64, labels: &[u64]) -> RngStream {
    let mut id = GOLDEN;
    for &label in labels {
        id = mix64(id ^ label.wrapping_mul(LABEL_MUL).wrapping_add(GOLDEN));
    }
    RngStream::new(seed, id)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let key = mix64(mix64(seed.wrapping_add(GOLDEN)) ^ stream_id.wrapping_mul(LABEL_MUL));
        Self {
            seed,
            stream_id,
            key,
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream addressed by `label`; independent of the parent's position.
    pub fn fork(&self, label: u64) -> RngStream {
        RngStream::new(self.seed, mix64(self.stream_id ^ label.wrapping_mul(LABEL_MUL)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via the polar method (sqrt/ln only).
    pub fn next_gaussian(&mut self) -> f64 {
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                return u * (-2.0 * s.ln() / s).sqrt();
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform integer in [0, n), unbiased (Lemire's method).
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below(0)");
        let threshold = n.wrapping_neg() % n; // 2^64 mod n
        loop {
            let x = self.next_u64();
            let m = (x as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }

    /// `k` distinct indices drawn without replacement from `0..n`.
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "sample_distinct k > n");
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.next_below((n - i) as u64) as usize;
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }

}
