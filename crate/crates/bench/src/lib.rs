//! Seeded inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use iqamix_core::datasets::MosRecord;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` five-level logit vectors.
pub fn logits(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| (0..5).map(|_| r.gen_range(-10.0..10.0)).collect())
        .collect()
}

/// Two correlated score columns with some exact ties.
pub fn paired(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let x: Vec<f64> = (0..n)
        .map(|_| (r.gen_range(0.0..100.0f64) * 4.0).round() / 4.0)
        .collect();
    let y = x.iter().map(|v| v + r.gen_range(-15.0..15.0)).collect();
    (x, y)
}

/// MOS records on [0, 100] bunched toward the top of the scale.
pub fn skewed_mos(n: usize, seed: u64) -> Vec<MosRecord> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| MosRecord {
            image_id: format!("img{i}"),
            mos: 100.0 * r.gen::<f64>().sqrt(),
        })
        .collect()
}
