//! Seeded randomness.
//!
//! The generator is xoshiro256++ whose 256-bit state is filled from the u64
//! seed by four successive splitmix64 outputs. Floats are derived from the raw
//! 64-bit output as `(x >> 11) · 2⁻⁵³` (uniform on `[0, 1)`). Integer draws in
//! `[0, n)` use Lemire's multiply-shift with rejection. These rules are part of
//! the reproducibility contract: a port following them reproduces every
//! initialization and shuffle bit for bit.

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::{Result, Scalar, Tensor, TensorError};

#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: Xoshiro256PlusPlus,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a root seed and a path of stream tags.
///
/// `s₀ = root`, `sᵢ₊₁ = mix(sᵢ ⊕ (tagᵢ + 1)·φ)` where `mix` is the splitmix64
/// finalizer and `φ = 0x9E3779B97F4A7C15`.
pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(root, |s, &t| {
        splitmix64_mix(s ^ t.wrapping_add(1).wrapping_mul(GOLDEN))
    })
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    /// Independent generator for the stream named by `tags`.
    pub fn child(&self, tags: &[u64]) -> Self {
        Self::new(derive_seed(self.seed, tags))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Standard normal via Box-Muller (one draw per call, two uniforms consumed).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates, walking from the last index down.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Elements i.i.d. uniform on `[-bound, bound)`, drawn in row-major order.
pub fn uniform_symmetric<T: Scalar>(shape: &[usize], bound: f64, rng: &mut SeededRng) -> Result<Tensor<T>> {
    let mut t = Tensor::<T>::zeros(shape)?;
    for v in t.data_mut() {
        *v = T::from_f64(bound * (2.0 * rng.next_f64() - 1.0));
    }
    Ok(t)
}

/// Kaiming (He) uniform initialization with rectifier gain:
/// bound `sqrt(6 / fan_in)`.
pub fn kaiming_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut SeededRng) -> Result<Tensor<T>> {
    if fan_in == 0 {
        return Err(TensorError::InvalidArgument("fan_in must be at least 1".into()));
    }
    uniform_symmetric(shape, (6.0 / fan_in as f64).sqrt(), rng)
}
