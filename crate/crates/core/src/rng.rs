//! Seeded random streams. Every consumer derives its own ChaCha stream from
//! the episode seed plus a tag and coordinates, so extra draws in one
//! consumer never shift the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Scenario = 1,
    Detection = 2,
    LatencyNoise = 3,
    Exploration = 4,
    Training = 5,
    Calibration = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a stream keyed by `(seed, stream, coords...)`.
pub fn stream(seed: u64, tag: Stream, coords: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix64(seed ^ splitmix64(tag as u64));
    for &c in coords {
        h = splitmix64(h ^ c.wrapping_mul(0xd6e8_feb8_6659_fd93));
    }
    ChaCha8Rng::seed_from_u64(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, Stream::Detection, &[3, 1]).random();
        let b: u64 = stream(7, Stream::Detection, &[3, 1]).random();
        let c: u64 = stream(7, Stream::Detection, &[3, 2]).random();
        let d: u64 = stream(7, Stream::Scenario, &[3, 1]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
