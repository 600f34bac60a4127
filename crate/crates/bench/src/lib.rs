//! Seeded inputs shared by the benchmarks in `benches/`.

use gprd_core::network::Tensor4;
use gprd_core::Radargram;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform `[0, 1)` scan.
pub fn random_scan(seed: u64, height: usize, width: usize) -> Radargram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Radargram::new(Array2::from_shape_fn((height, width), |_| rng.random::<f64>())).unwrap()
}

/// Trace-constant band plus a weak hyperbola-like diagonal: rank one clutter
/// and a sparse target, the shape RPCA sees on real scans.
pub fn cluttered_scan(height: usize, width: usize) -> Radargram {
    let data = Array2::from_shape_fn((height, width), |(i, j)| {
        let band = (-((i as f64 - 20.0) / 4.0).powi(2)).exp();
        let apex = height as f64 / 2.0;
        let dx = j as f64 - width as f64 / 2.0;
        let arrival = (apex * apex + 9.0 * dx * dx).sqrt();
        band + 0.2 * (-((i as f64 - arrival) / 1.5).powi(2)).exp()
    });
    Radargram::new(data).unwrap()
}

pub fn random_tensor(seed: u64, shape: [usize; 4]) -> Tensor4 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::from_fn(shape, |_| rng.random::<f64>() - 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_seeded() {
        assert_eq!(random_scan(3, 8, 4), random_scan(3, 8, 4));
        assert_ne!(random_scan(3, 8, 4), random_scan(4, 8, 4));
        assert_eq!(cluttered_scan(64, 32).dim(), (64, 32));
        assert_eq!(random_tensor(1, [1, 2, 3, 4]).shape(), [1, 2, 3, 4]);
    }
}
