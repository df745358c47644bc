//! Seeded random streams split by purpose, epoch and batch.
//!
//! Every draw in a run comes from a generator keyed on
//! `(seed, purpose, epoch, batch)`, so results do not depend on the order
//! in which substreams are opened or on which thread consumes them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

/// What a substream is used for. Distinct purposes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Init,
    Subset,
    Shuffle,
    Noise,
    Prior,
    Generate,
    Evaluation,
    Test,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Init => 1,
            Purpose::Subset => 2,
            Purpose::Shuffle => 3,
            Purpose::Noise => 4,
            Purpose::Prior => 5,
            Purpose::Generate => 6,
            Purpose::Evaluation => 7,
            Purpose::Test => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh stream derived from this one, for nested runs (sweeps).
    pub fn derive(&self, index: u64) -> RngStream {
        RngStream::new(splitmix64(self.seed ^ splitmix64(index.wrapping_add(0xA5A5))))
    }

    /// Independent generator for one `(purpose, epoch, batch)` cell.
    pub fn substream(&self, purpose: Purpose, epoch: u64, batch: u64) -> Substream {
        let mut key = [0u8; 32];
        let words = [
            splitmix64(self.seed),
            splitmix64(purpose.tag() ^ 0x5151_5151),
            splitmix64(epoch.wrapping_mul(0x1000_0000_01B3)),
            splitmix64(batch ^ 0xDEAD_BEEF_0000_0000),
        ];
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        Substream {
            rng: ChaCha12Rng::from_seed(key),
        }
    }
}

pub struct Substream {
    rng: ChaCha12Rng,
}

impl Substream {
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.standard_normal()).collect()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        Uniform::new(lo, hi).expect("valid range").sample(&mut self.rng)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Uniformly random permutation of `0..n` (Fisher–Yates).
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.rng.random_range(0..=i);
            p.swap(i, j);
        }
        p
    }
}
