//! Counter-based random streams.
//!
//! Every random quantity in the toolkit is a pure function of a 64-bit key
//! built from `(seed, purpose, identity words)`. Single uniforms (vertex
//! marks, edge marks, lattice retention) are read straight off the mixed key;
//! longer sequences (cell contents, walkers, trials) come from a ChaCha8
//! stream seeded with the key. Nothing depends on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

/// What a stream is used for. Distinct purposes never share keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    PoissonCell = 1,
    LatticeSite = 2,
    Mark = 3,
    PalmMark = 4,
    Edge = 5,
    Bond = 6,
    CellPair = 7,
    Replica = 8,
    Walker = 9,
    Trial = 10,
    Location = 11,
    Points = 12,
    Marks = 13,
    Edges = 14,
    Percolation = 15,
}

/// SplitMix64 finaliser.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Bits of a coordinate with `-0.0` folded onto `0.0`.
#[inline]
pub fn coordinate_bits(x: f64) -> u64 {
    if x == 0.0 {
        0
    } else {
        x.to_bits()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose) -> Self {
        StreamKey(mix64(seed ^ mix64((purpose as u64).wrapping_mul(GOLDEN))))
    }

    #[inline]
    pub fn with(self, word: u64) -> Self {
        StreamKey(mix64(self.0 ^ mix64(word.wrapping_add(GOLDEN))))
    }

    #[inline]
    pub fn with_i64(self, word: i64) -> Self {
        self.with(word as u64)
    }

    #[inline]
    pub fn with_f64(self, x: f64) -> Self {
        self.with(coordinate_bits(x))
    }

    pub fn with_point(self, coords: &[f64]) -> Self {
        coords.iter().fold(self, |k, &x| k.with_f64(x))
    }

    #[inline]
    pub fn value(self) -> u64 {
        self.0
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn uniform(self) -> f64 {
        (mix64(self.0 ^ GOLDEN) >> 11) as f64 * TWO_POW_M53
    }

    /// Uniform on the open interval `(0, 1)`.
    #[inline]
    pub fn open_uniform(self) -> f64 {
        ((mix64(self.0 ^ GOLDEN) >> 11) as f64 + 0.5) * TWO_POW_M53
    }

    pub fn stream(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Seed-independent hash of a location, used to key pair randomness.
pub fn location_hash(coords: &[f64]) -> u64 {
    StreamKey::new(0, Purpose::Location).with_point(coords).value()
}

/// Uniform on `[0, 1)` for an unordered pair, given the location hashes of
/// the endpoints in canonical (lexicographic location) order.
#[inline]
pub fn pair_uniform(key: StreamKey, first: u64, second: u64) -> f64 {
    key.with(first).with(second).uniform()
}

/// Draw an open uniform from a stream.
#[inline]
pub fn open_unit<R: rand::RngCore>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * TWO_POW_M53
}

/// Derive the seed for a sub-task, e.g. replica `r` of an experiment.
pub fn derive_seed(seed: u64, purpose: Purpose, index: u64) -> u64 {
    StreamKey::new(seed, purpose).with(index).value()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_deterministic_and_purpose_separated() {
        let a = StreamKey::new(7, Purpose::Mark).with(3);
        let b = StreamKey::new(7, Purpose::Mark).with(3);
        let c = StreamKey::new(7, Purpose::Edge).with(3);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(StreamKey::new(7, Purpose::Mark).with(1).with(2), StreamKey::new(7, Purpose::Mark).with(2).with(1));
    }

    #[test]
    fn uniforms_stay_in_range() {
        let k = StreamKey::new(1, Purpose::Trial);
        for i in 0..10_000u64 {
            let u = k.with(i).uniform();
            assert!((0.0..1.0).contains(&u));
            let v = k.with(i).open_uniform();
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn negative_zero_hashes_like_zero() {
        assert_eq!(location_hash(&[0.0, 1.0]), location_hash(&[-0.0, 1.0]));
    }

    #[test]
    fn uniform_mean_and_variance() {
        let k = StreamKey::new(99, Purpose::Trial);
        let n = 200_000u64;
        let (mut s, mut s2) = (0.0, 0.0);
        for i in 0..n {
            let u = k.with(i).uniform();
            s += u;
            s2 += u * u;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((mean - 0.5).abs() < 0.005);
        assert!((var - 1.0 / 12.0).abs() < 0.002);
    }
}
