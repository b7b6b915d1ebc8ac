//! Deterministic pseudo-random numbers for noise generation and tests.
//!
//! The generator is SplitMix64 (Steele, Lea, Flood 2014): a single 64-bit
//! state advanced by a Weyl increment and finalized with a mixing function.
//! Gaussian samples are produced with the Box-Muller transform. Both are
//! fixed here, rather than delegated to an external crate, so that noise
//! realizations are reproducible byte-for-byte across versions and platforms.

use nalgebra::DVector;

const WEYL: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 generator with a 64-bit state.
#[derive(Debug, Clone, Copy)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(WEYL);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform sample in the open interval (0, 1).
    ///
    /// Uses the top 53 bits shifted into the mantissa, offset by half an ulp
    /// so the result is never exactly 0 (safe to pass to `ln`).
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// One pair of independent standard-normal samples (Box-Muller).
    pub fn next_gaussian_pair(&mut self) -> (f64, f64) {
        let u1 = self.next_open01();
        let u2 = self.next_open01();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        (r * theta.cos(), r * theta.sin())
    }
}

/// Standard-normal vector of length `len`, fully determined by `seed`.
pub fn standard_normal_vector(seed: u64, len: usize) -> DVector<f64> {
    let mut rng = SplitMix64::new(seed);
    let mut out = DVector::zeros(len);
    let mut i = 0;
    while i + 1 < len {
        let (a, b) = rng.next_gaussian_pair();
        out[i] = a;
        out[i + 1] = b;
        i += 2;
    }
    if i < len {
        out[i] = rng.next_gaussian_pair().0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = standard_normal_vector(42, 101);
        let b = standard_normal_vector(42, 101);
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn different_seeds_differ() {
        let a = standard_normal_vector(1, 16);
        let b = standard_normal_vector(2, 16);
        assert_ne!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn open01_stays_strictly_inside() {
        let mut rng = SplitMix64::new(7);
        for _ in 0..10_000 {
            let u = rng.next_open01();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn gaussian_moments_are_plausible() {
        let v = standard_normal_vector(3, 100_000);
        let mean = v.sum() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
