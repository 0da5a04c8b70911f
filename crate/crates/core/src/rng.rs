//! Keyed deterministic random streams.
//!
//! Every consumer of randomness derives its own xoshiro256** stream from a
//! base seed plus a purpose key, so results never depend on evaluation order
//! or thread scheduling.

use rand::{RngExt, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

pub type Rng = Xoshiro256StarStar;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builder for a stream key: fold integers and strings into one 64-bit seed.
#[derive(Debug, Clone, Copy)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(base_seed: u64) -> Self {
        StreamKey(mix64(base_seed))
    }

    pub fn with(self, part: u64) -> Self {
        StreamKey(mix64(self.0 ^ mix64(part)))
    }

    pub fn with_str(self, part: &str) -> Self {
        let mut h = 0xCBF2_9CE4_8422_2325u64;
        for b in part.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01B3);
        }
        self.with(h ^ part.len() as u64)
    }

    pub fn seed(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> Rng {
        Rng::seed_from_u64(self.0)
    }
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// One standard normal variate via the Box–Muller transform.
pub fn gaussian(rng: &mut Rng) -> f64 {
    // u1 in (0, 1] keeps ln finite.
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn index(rng: &mut Rng, n: usize) -> usize {
    rng.random_range(0..n)
}

pub fn unit01(rng: &mut Rng) -> f64 {
    rng.random::<f64>()
}

/// Uniformly distributed direction on the unit sphere.
pub fn unit_vector(rng: &mut Rng) -> [f64; 3] {
    loop {
        let v = [gaussian(rng), gaussian(rng), gaussian(rng)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// In-place Fisher–Yates shuffle.
pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
