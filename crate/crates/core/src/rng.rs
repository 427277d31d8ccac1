//! Deterministic counter-based RNG for reproducible Monte Carlo.
//!
//! Each (seed, stream) pair names an independent sequence, so parallel
//! replications can draw without coordination and the result is independent
//! of scheduling. The generator is splitmix64 over an incrementing counter:
//! fast, platform-stable, and statistically adequate for Monte Carlo. Not
//! cryptographically secure.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 output function: bijective mix of a 64-bit word.
#[inline(always)]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based RNG: stream `stream` of master seed `seed`.
///
/// The n-th output is `mix(key + n·GOLDEN)` where `key` itself mixes the
/// seed and stream, so streams with different indices never collide in
/// practice and each draw depends only on (seed, stream, n).
#[derive(Clone, Debug)]
pub struct CounterRng {
    key: u64,
    counter: u64,
    spare_normal: Option<f64>,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let key = mix(mix(seed.wrapping_add(GOLDEN)) ^ mix(stream.wrapping_mul(GOLDEN) ^ 0x5851_F42D_4C95_7F2D));
        Self { key, counter: 0, spare_normal: None }
    }

    #[inline(always)]
    pub fn next_u64(&mut self) -> u64 {
        let out = mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)));
        self.counter = self.counter.wrapping_add(1);
        out
    }

    /// Uniform on [0, 1) with 53-bit resolution.
    #[inline(always)]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal via Box-Muller. Draws two uniforms and caches the
    /// second variate, so consecutive calls consume one uniform pair per two
    /// normals deterministically.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - u ∈ (0, 1] keeps the logarithm finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare_normal = Some(r * s);
        r * c
    }

    /// ±1 with equal probability.
    #[inline(always)]
    pub fn rademacher(&mut self) -> f64 {
        if self.next_u64() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Uniform on [−√3, √3] (unit variance).
    #[inline(always)]
    pub fn uniform_sym(&mut self) -> f64 {
        let s = 3.0_f64.sqrt();
        (2.0 * self.next_f64() - 1.0) * s
    }
}
