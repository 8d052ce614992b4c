//! Counter-based random streams.
//!
//! Realization `i` of an experiment seeded with `seed` always draws from the
//! ChaCha stream `(seed, i)`, whichever worker runs it, so serial and parallel
//! runs produce identical numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Walks the indices `0..n` that succeed in independent Bernoulli(p) trials,
/// in increasing order, drawing one geometric gap per success.
#[derive(Clone, Debug)]
pub struct BernoulliSkipper {
    n: usize,
    log_miss: f64,
    next: usize,
}

impl BernoulliSkipper {
    pub fn new(n: usize, p: f64) -> Self {
        let log_miss = if p >= 1.0 {
            f64::NEG_INFINITY
        } else if p > 0.0 {
            (-p).ln_1p()
        } else {
            0.0
        };
        Self { n, log_miss, next: 0 }
    }

    pub fn next_index<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<usize> {
        if self.log_miss == 0.0 || self.next >= self.n {
            return None;
        }
        let gap = if self.log_miss == f64::NEG_INFINITY {
            0.0
        } else {
            let u: f64 = 1.0 - rng.random::<f64>();
            (u.ln() / self.log_miss).floor()
        };
        if gap >= (self.n - self.next) as f64 {
            self.next = self.n;
            return None;
        }
        let index = self.next + gap as usize;
        self.next = index + 1;
        Some(index)
    }
}
