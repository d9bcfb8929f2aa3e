//! Seeded workloads shared by the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semcrop::{Rect, ScoreMap};

/// Uniform noise with a brighter blob, so rankings are not flat.
pub fn random_map(seed: u64, width: u32, height: u32) -> ScoreMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cx, cy) = (rng.random_range(0..width) as f64, rng.random_range(0..height) as f64);
    let r2 = (width.min(height) as f64 / 4.0).powi(2);
    ScoreMap::from_fn(width, height, |x, y| {
        let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
        rng.random_range(0.0..0.2) + (-d2 / r2).exp()
    })
    .expect("finite map")
}

pub fn random_windows(seed: u64, width: u32, height: u32, n: usize) -> Vec<Rect> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x = rng.random_range(0..width);
            let y = rng.random_range(0..height);
            Rect::new(x, y, rng.random_range(1..=width - x), rng.random_range(1..=height - y))
        })
        .collect()
}
