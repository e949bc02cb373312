//! Counter-based uniform streams: the value for `(seed, tag, index)` does not depend on
//! the order in which indices are drawn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Identifier of the sampling scheme recorded in network provenance.
pub const GENERATOR: &str = "chacha8-counter-v1";

/// Independent stream families derived from one seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamTag {
    /// Edge capacities.
    Sample = 0,
    /// Layer-crossing thinning.
    Thin = 1,
    /// Pair sampling in all-pairs mode.
    Pairs = 2,
}

pub struct UnitStream {
    rng: ChaCha8Rng,
}

impl UnitStream {
    pub fn new(seed: u64, tag: StreamTag) -> UnitStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(tag as u64);
        UnitStream { rng }
    }

    /// Uniform value in [0, 1) attached to `index`.
    pub fn at(&mut self, index: u64) -> f64 {
        self.rng.set_word_pos(2 * index as u128);
        let x = self.rng.next_u64();
        (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_independent() {
        let mut a = UnitStream::new(9, StreamTag::Sample);
        let forward: Vec<f64> = (0..50).map(|i| a.at(i)).collect();
        let mut b = UnitStream::new(9, StreamTag::Sample);
        for i in (0..50).rev() {
            assert_eq!(b.at(i), forward[i as usize]);
        }
        assert!(forward.iter().all(|&u| (0.0..1.0).contains(&u)));
    }

    #[test]
    fn tags_differ() {
        let mut a = UnitStream::new(9, StreamTag::Sample);
        let mut b = UnitStream::new(9, StreamTag::Thin);
        assert_ne!(a.at(3), b.at(3));
    }
}
