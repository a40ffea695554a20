//! The one random generator used everywhere: ChaCha8 seeded from a `u64`.
//!
//! ChaCha8's output stream is specified independently of platform and word
//! size, so a seed reproduces the same draws on every target.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a sub-task (sample index, arm, ...).
pub fn derive(seed: u64, stream: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn same_seed_same_stream() {
        let a: Vec<u64> = (0..8)
            .map({
                let mut r = seeded(42);
                move |_| r.random()
            })
            .collect();
        let b: Vec<u64> = (0..8)
            .map({
                let mut r = seeded(42);
                move |_| r.random()
            })
            .collect();
        assert_eq!(a, b);
        let mut c = derive(42, 1);
        assert_ne!(a[0], c.random::<u64>());
    }
}
