//! xoshiro256** generator with SplitMix64 seeding and a Box–Muller normal
//! sampler.
//!
//! The stream for a given seed is fixed across platforms: state expansion,
//! the `[0, 1)` float conversion and the Box–Muller pairing are all spelled
//! out here rather than delegated to a general-purpose RNG crate.

use std::f64::consts::TAU;

use super::Tensor;

/// One SplitMix64 step; used only to expand a 64-bit seed into state.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic xoshiro256** stream.
///
/// Not `Sync`-shared: parallel work derives independent streams with
/// [`Rng::child`].
#[derive(Clone, Debug)]
pub struct Rng {
    s: [u64; 4],
    seed: u64,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Self {
            s,
            seed,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for sub-task `stream`, seeded with `seed ^ stream`.
    pub fn child(&self, stream: u64) -> Rng {
        Rng::new(self.seed ^ stream)
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n` (rejection sampling, no modulo bias).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX - n + 1) % n;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return v % n;
            }
        }
    }

    /// Standard normal draw. Box–Muller produces pairs; the second value of
    /// each pair is returned by the following call.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - U lies in (0, 1], keeping the log finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        self.spare_normal = Some(r * s);
        r * c
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }
}

/// `n × d` tensor of i.i.d. standard normal entries.
pub fn gaussian_sample(rng: &mut Rng, n: usize, d: usize) -> Tensor {
    assert!(n >= 1 && d >= 1, "gaussian_sample requires n, d >= 1");
    let mut data = vec![0.0; n * d];
    rng.fill_normal(&mut data);
    Tensor::from_parts(vec![n, d], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let ta = gaussian_sample(&mut Rng::new(3), 4, 5);
        let tb = gaussian_sample(&mut Rng::new(3), 4, 5);
        assert_eq!(ta, tb);
    }

    #[test]
    fn child_streams_differ() {
        let root = Rng::new(11);
        let mut c1 = root.child(1);
        let mut c2 = root.child(2);
        assert_ne!(c1.next_u64(), c2.next_u64());
        assert_eq!(root.child(1).seed(), 11 ^ 1);
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = Rng::new(5);
        let mut hits = [0usize; 7];
        for _ in 0..7000 {
            hits[rng.below(7) as usize] += 1;
        }
        assert!(hits.iter().all(|&h| h > 800 && h < 1200), "{hits:?}");
    }

    #[test]
    fn unit_floats_in_half_open_interval() {
        let mut rng = Rng::new(99);
        for _ in 0..10_000 {
            let u = rng.next_f64();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
