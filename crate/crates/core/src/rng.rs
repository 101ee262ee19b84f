//! Reproducible random streams.
//!
//! Every parallel computation is split into fixed-size chunks; chunk `c` of a
//! task draws from ChaCha stream `c` under a key derived from the caller's
//! seed. Results are merged in chunk order, so output is independent of the
//! number of worker threads.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type Stream = ChaCha8Rng;

/// Replicates per parallel chunk.
pub const CHUNK: usize = 1024;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seeded(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Key of a family of counter-addressed substreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(master: u64, kind: u64) -> Self {
        StreamKey(splitmix64(master ^ splitmix64(kind)))
    }

    /// Derives a key by drawing one word from `rng`.
    pub fn from_rng<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        StreamKey(rng.next_u64())
    }

    pub fn child(self, kind: u64) -> Self {
        StreamKey::new(self.0, kind)
    }

    pub fn stream(self, index: u64) -> Stream {
        let mut r = ChaCha8Rng::seed_from_u64(self.0);
        r.set_stream(index);
        r
    }
}

/// Runs `reps` replicates in chunks of [`CHUNK`]; `f(stream, count)` handles
/// one chunk. Results come back in chunk order.
pub fn chunked<R, F>(key: StreamKey, reps: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(&mut Stream, usize) -> R + Sync,
{
    let chunks = reps.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK.min(reps - c * CHUNK);
            let mut s = key.stream(c as u64);
            f(&mut s, count)
        })
        .collect()
}

/// Running sums for a sample mean and its standard error.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanAcc {
    pub n: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl MeanAcc {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(mut self, other: &MeanAcc) -> Self {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }

    /// Standard error of the mean (unbiased variance).
    pub fn se(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        let n = self.n as f64;
        let m = self.sum / n;
        let var = ((self.sum_sq - n * m * m) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

pub fn merge_all<'a>(parts: impl IntoIterator<Item = &'a MeanAcc>) -> MeanAcc {
    parts
        .into_iter()
        .fold(MeanAcc::default(), |a, b| a.merge(b))
}

/// Uniform index in `0..n`.
#[inline]
pub fn index<R: Rng + ?Sized>(rng: &mut R, n: usize) -> usize {
    rng.random_range(0..n)
}
