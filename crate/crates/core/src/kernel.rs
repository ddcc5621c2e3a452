//! Gaussian-regularized Biot-Savart kernel, its singular far-field limit,
//! the O(N²) reference sum, and the near-field (own box + neighbors)
//! evaluation.

use num_complex::Complex;

use crate::quadtree::{neighbor_lists, Binning, Particle, Quadtree};
use crate::{rf, FmmError, Real, Velocity};

/// Smoothing parameters of the Gaussian vortex blob.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams<T> {
    sigma: T,
}

impl<T: Real> KernelParams<T> {
    pub fn new(sigma: T) -> Result<Self, FmmError> {
        if !(sigma.is_finite() && sigma > T::zero()) {
            return Err(FmmError::InvalidConfig {
                message: format!("sigma must be positive and finite, got {sigma:?}"),
            });
        }
        Ok(Self { sigma })
    }

    /// Default core radius: a tenth of the finest box width, which pushes
    /// the Gaussian tail at well-separated distances (≥ 2 widths) far below
    /// round-off, so the singular expansion applies there.
    pub fn default_for_box_width(width: T) -> Self {
        Self {
            sigma: width / rf::<T>(10.0),
        }
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }
}

/// Normalized Gaussian blob centered at `y`:
/// `(1 / 2πσ²) · exp(-|x-y|² / 2σ²)`.
pub fn zeta<T: Real>(x: Complex<T>, y: Complex<T>, params: KernelParams<T>) -> T {
    let s2 = params.sigma * params.sigma;
    let two = rf::<T>(2.0);
    (-((x - y).norm_sqr() / (two * s2))).exp() / (T::TAU() * s2)
}

/// Below this `|z|²/2σ²` the explicit `1 - exp` would cancel
/// catastrophically; switch to the first-order series.
const SERIES_THRESHOLD: f64 = 1e-8;

/// Regularized kernel `iz · (1 - exp(-|z|²/2σ²)) / (2π|z|²)` as the
/// physical velocity `u + iv`; exactly zero at `z = 0`.
pub fn biot_savart_regularized<T: Real>(z: Complex<T>, params: KernelParams<T>) -> Velocity<T> {
    let r2 = z.norm_sqr();
    if r2 == T::zero() {
        return Complex::new(T::zero(), T::zero());
    }
    let two = rf::<T>(2.0);
    let s2 = params.sigma * params.sigma;
    let q = r2 / (two * s2);
    let scale = if q < rf::<T>(SERIES_THRESHOLD) {
        (T::one() - q / two) / (two * s2)
    } else {
        (T::one() - (-q).exp()) / r2
    };
    Complex::new(-z.im, z.re) * (scale / T::TAU())
}

/// Singular limit `iz / (2π|z|²) = i / (2π·conj z)`.
pub fn biot_savart_farfield<T: Real>(z: Complex<T>) -> Result<Velocity<T>, FmmError> {
    let r2 = z.norm_sqr();
    if r2 == T::zero() {
        return Err(FmmError::SingularPoint);
    }
    Ok(Complex::new(-z.im, z.re) / (T::TAU() * r2))
}

/// O(N²) reference: `velocity[i] = Σ_j Γ_j K_σ(z_i - z_j)`, accumulated in
/// index order. The self term is the kernel's exact zero.
pub fn direct_sum_all<T: Real>(
    particles: &[Particle<T>],
    params: KernelParams<T>,
) -> Vec<Velocity<T>> {
    particles
        .iter()
        .map(|target| {
            let mut v = Complex::new(T::zero(), T::zero());
            for source in particles {
                v += biot_savart_regularized(target.position - source.position, params)
                    .scale(source.circulation);
            }
            v
        })
        .collect()
}

/// Near-field contribution for one particle: own box first (self skipped),
/// then each neighbor list in the order given. Every caller that wants
/// reproducible velocities must present the same list order.
pub(crate) fn near_velocity_single<T: Real>(
    target: usize,
    own: &[usize],
    neighbor_bins: &[&[usize]],
    particles: &[Particle<T>],
    params: KernelParams<T>,
) -> Velocity<T> {
    let zt = particles[target].position;
    let mut v = Complex::new(T::zero(), T::zero());
    for &j in own {
        if j == target {
            continue;
        }
        v += biot_savart_regularized(zt - particles[j].position, params)
            .scale(particles[j].circulation);
    }
    for bin in neighbor_bins {
        for &j in *bin {
            v += biot_savart_regularized(zt - particles[j].position, params)
                .scale(particles[j].circulation);
        }
    }
    v
}

/// Stage-9 near field: for every particle, the sum of `Γ_j K_σ` over its
/// own finest box and the adjacent boxes. Each unordered pair is evaluated
/// once from each endpoint with no shared accumulation.
pub fn near_field_eval<T: Real>(
    tree: &Quadtree<T>,
    binning: &Binning,
    particles: &[Particle<T>],
    params: KernelParams<T>,
) -> Result<Vec<Velocity<T>>, FmmError> {
    if binning.particle_count() != particles.len() {
        return Err(FmmError::LengthMismatch {
            expected: binning.particle_count(),
            got: particles.len(),
        });
    }
    let level = tree.levels();
    let nb = neighbor_lists(tree, level)?;
    let mut out = vec![Complex::new(T::zero(), T::zero()); particles.len()];
    for b in tree.boxes(level)? {
        let own = binning.particles_in(b);
        let neighbor_bins: Vec<&[usize]> = nb
            .neighbors_of(b)
            .iter()
            .map(|n| binning.particles_in(*n))
            .collect();
        for &i in own {
            out[i] = near_velocity_single(i, own, &neighbor_bins, particles, params);
        }
    }
    Ok(out)
}

/// Kernel evaluations stage 9 performs: for each particle, every other
/// particle of its own box plus everything in adjacent boxes. Both ends of
/// an unordered pair count.
pub fn near_pair_count<T: Real>(tree: &Quadtree<T>, binning: &Binning) -> Result<u64, FmmError> {
    let level = tree.levels();
    let nb = neighbor_lists(tree, level)?;
    let mut pairs = 0u64;
    for b in tree.boxes(level)? {
        let own = binning.particles_in(b).len() as u64;
        if own == 0 {
            continue;
        }
        let adjacent: u64 = nb
            .neighbors_of(b)
            .iter()
            .map(|n| binning.particles_in(*n).len() as u64)
            .sum();
        pairs += own * (own - 1 + adjacent);
    }
    Ok(pairs)
}
