//! Synthetic particle distributions used by the CLI and the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::quadtree::Particle;
use crate::{rf, Real};

/// Exactly `per_box` particles in every finest box of a depth-`levels`
/// tree: each box carries a `ceil(sqrt(per_box))`-wide sub-grid and the
/// first `per_box` slots are taken in row-major order. Circulation is 1.
pub fn uniform_lattice<T: Real>(levels: u32, per_box: usize) -> Vec<Particle<T>> {
    let side = 1usize << levels;
    let sub = (per_box as f64).sqrt().ceil() as usize;
    let w = 1.0 / side as f64;
    let mut out = Vec::with_capacity(side * side * per_box);
    for i in 0..side {
        for j in 0..side {
            let (x0, y0) = (i as f64 * w, j as f64 * w);
            for slot in 0..per_box {
                let (p, q) = (slot / sub, slot % sub);
                let x = x0 + (p as f64 + 0.5) / sub as f64 * w;
                let y = y0 + (q as f64 + 0.5) / sub as f64 * w;
                out.push(Particle::new(rf::<T>(x), rf::<T>(y), T::one()));
            }
        }
    }
    out
}

/// `n` particles drawn uniformly from the unit square with circulations
/// uniform in [-1, 1]. Sampling happens in `f64` and is then converted, so
/// a given seed names the same underlying points for every scalar type.
pub fn uniform_random<T: Real>(n: usize, seed: u64) -> Vec<Particle<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let below_one = T::one() - T::epsilon();
    (0..n)
        .map(|_| {
            let x = rf::<T>(rng.gen::<f64>()).min(below_one);
            let y = rf::<T>(rng.gen::<f64>()).min(below_one);
            let g = rf::<T>(rng.gen::<f64>() * 2.0 - 1.0);
            Particle::new(x, y, g)
        })
        .collect()
}
