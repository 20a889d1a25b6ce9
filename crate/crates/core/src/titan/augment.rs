use rand::seq::index::sample;
use rand::Rng as _;

use crate::geometry::PointCloud;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub drop_prob: f64,
    /// Upper bound of the dropped fraction.
    pub drop_max_fraction: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            drop_prob: 0.5,
            drop_max_fraction: 0.1,
        }
    }
}

/// Result of [`augment`]. A flipped cloud pairs with a column-mirrored camera map.
#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub cloud: PointCloud,
    pub flipped: bool,
    pub dropped: usize,
}

/// Random y-flip and random point dropping, applied before projection.
pub fn augment(cloud: &PointCloud, cfg: &AugmentConfig, rng: &mut Rng) -> Augmented {
    let flipped = rng.random::<f64>() < cfg.flip_prob;
    let drop = rng.random::<f64>() < cfg.drop_prob;
    let fraction = rng.random::<f64>() * cfg.drop_max_fraction;
    let mut out = if flipped { cloud.flip_y() } else { cloud.clone() };
    let mut dropped = 0;
    if drop && !out.is_empty() {
        let n = out.len();
        // never drop every point
        dropped = ((fraction * n as f64).round() as usize).min(n - 1);
        let mut keep = vec![true; n];
        for i in sample(rng, n, dropped) {
            keep[i] = false;
        }
        out = out.retain_indices(|i| keep[i]);
    }
    Augmented {
        cloud: out,
        flipped,
        dropped,
    }
}
