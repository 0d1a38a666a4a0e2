//! Deterministic fixtures shared by unit tests.

use crate::grid::ScalarField2D;

/// Uniform `[0, 1)` samples from a fixed LCG; independent of the noise generator.
pub(crate) fn random_field(w: usize, h: usize, seed: u64) -> ScalarField2D {
    let mut state = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    let mut data = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        data.push((state >> 11) as f64 / (1u64 << 53) as f64);
    }
    ScalarField2D::new(w, h, data).unwrap()
}
