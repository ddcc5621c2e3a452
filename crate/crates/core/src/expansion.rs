//! Order-t complex power-series machinery: particle-to-multipole, the
//! three translations (M2M, M2L, L2L), and the two point evaluations.
//!
//! Expansions carry the conjugate-analytic field `w(z) = u - iv`; callers
//! get physical velocities back because the evaluation routines conjugate.

use num_complex::Complex;

use crate::quadtree::Particle;
use crate::{rf, FmmError, Real, Velocity};

/// Truncated singular series `f(z) = Σ_m a_m / (z - center)^(m+1)`,
/// valid outside the source box.
#[derive(Clone, Debug, PartialEq)]
pub struct MultipoleExpansion<T> {
    pub center: Complex<T>,
    pub coeffs: Vec<Complex<T>>,
}

/// Truncated Taylor polynomial `g(z) = Σ_l b_l (z - center)^l`, valid
/// inside the owning box.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalExpansion<T> {
    pub center: Complex<T>,
    pub coeffs: Vec<Complex<T>>,
}

impl<T: Real> MultipoleExpansion<T> {
    pub fn zero(center: Complex<T>, order: usize) -> Self {
        Self {
            center,
            coeffs: vec![Complex::new(T::zero(), T::zero()); order],
        }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    /// Coefficient-wise sum; both sides must share center and order.
    pub fn accumulate(&mut self, other: &Self) -> Result<(), FmmError> {
        accumulate_coeffs(self.center, &mut self.coeffs, other.center, &other.coeffs)
    }
}

impl<T: Real> LocalExpansion<T> {
    pub fn zero(center: Complex<T>, order: usize) -> Self {
        Self {
            center,
            coeffs: vec![Complex::new(T::zero(), T::zero()); order],
        }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn accumulate(&mut self, other: &Self) -> Result<(), FmmError> {
        accumulate_coeffs(self.center, &mut self.coeffs, other.center, &other.coeffs)
    }
}

fn accumulate_coeffs<T: Real>(
    center: Complex<T>,
    coeffs: &mut [Complex<T>],
    other_center: Complex<T>,
    other: &[Complex<T>],
) -> Result<(), FmmError> {
    if coeffs.len() != other.len() {
        return Err(FmmError::OrderMismatch {
            left: coeffs.len(),
            right: other.len(),
        });
    }
    if center != other_center {
        return Err(FmmError::InvalidConfig {
            message: "cannot sum expansions with different centers".into(),
        });
    }
    for (a, b) in coeffs.iter_mut().zip(other) {
        *a += *b;
    }
    Ok(())
}

/// Binomial tables above this order would spill past the exact-integer
/// range used to build them.
const MAX_ORDER: usize = 60;

/// Shared context for a fixed order: holds the binomial table so repeated
/// translations skip rebuilding it.
#[derive(Clone, Debug)]
pub struct ExpansionOps<T> {
    order: usize,
    binom: Vec<Vec<T>>,
}

impl<T: Real> ExpansionOps<T> {
    pub fn new(order: usize) -> Result<Self, FmmError> {
        if order < 1 || order > MAX_ORDER {
            return Err(FmmError::InvalidConfig {
                message: format!("expansion order must be in 1..={MAX_ORDER}, got {order}"),
            });
        }
        // Pascal's triangle in exact integers through row 2(order-1),
        // converted once; covers every C(n, k) the translations touch.
        let rows = 2 * order - 1;
        let mut exact: Vec<Vec<u128>> = Vec::with_capacity(rows);
        for n in 0..rows {
            let mut row = vec![1u128; n + 1];
            for k in 1..n {
                row[k] = exact[n - 1][k - 1] + exact[n - 1][k];
            }
            exact.push(row);
        }
        let binom = exact
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&c| {
                        T::from_u128(c)
                            .or_else(|| T::from_f64(c as f64))
                            .expect("binomial fits the scalar")
                    })
                    .collect()
            })
            .collect();
        Ok(Self { order, binom })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn c(&self, n: usize, k: usize) -> T {
        self.binom[n][k]
    }

    fn check_order(&self, got: usize) -> Result<(), FmmError> {
        if got != self.order {
            return Err(FmmError::OrderMismatch {
                left: self.order,
                right: got,
            });
        }
        Ok(())
    }

    /// `a_m = (-i/2π) Σ_p Γ_p (x_p - center)^m`, with `0^0 = 1` so a
    /// particle sitting on the center feeds only `a_0`.
    pub fn p2m(&self, particles: &[Particle<T>], center: Complex<T>) -> MultipoleExpansion<T> {
        let mut sums = vec![Complex::new(T::zero(), T::zero()); self.order];
        for p in particles {
            let d = p.position - center;
            let mut pw = Complex::new(T::one(), T::zero());
            for s in sums.iter_mut() {
                *s += pw.scale(p.circulation);
                pw = pw * d;
            }
        }
        let factor = Complex::new(T::zero(), -(T::TAU().recip()));
        MultipoleExpansion {
            center,
            coeffs: sums.iter().map(|s| *s * factor).collect(),
        }
    }

    /// Series shift `a'_k = Σ_{m≤k} a_m C(k,m) δ^(k-m)` with
    /// `δ = old center - new center`; exact on the truncated family.
    pub fn m2m(
        &self,
        child: &MultipoleExpansion<T>,
        new_center: Complex<T>,
    ) -> Result<MultipoleExpansion<T>, FmmError> {
        self.check_order(child.order())?;
        let delta = child.center - new_center;
        let dpow = powers(delta, self.order);
        let coeffs = (0..self.order)
            .map(|k| {
                let mut acc = Complex::new(T::zero(), T::zero());
                for m in 0..=k {
                    acc += (child.coeffs[m] * dpow[k - m]).scale(self.c(k, m));
                }
                acc
            })
            .collect();
        Ok(MultipoleExpansion {
            center: new_center,
            coeffs,
        })
    }

    /// Taylor coefficients of the singular series about `target_center`:
    /// `b_l = (-1)^l Σ_m a_m C(m+l, l) / Δ^(m+l+1)`, `Δ = target - source`.
    /// Requires `|Δ| ≥ 2 · source_width`.
    pub fn m2l(
        &self,
        source: &MultipoleExpansion<T>,
        target_center: Complex<T>,
        source_width: T,
    ) -> Result<LocalExpansion<T>, FmmError> {
        self.check_order(source.order())?;
        let delta = target_center - source.center;
        let required = rf::<T>(2.0) * source_width;
        if delta.norm_sqr() < required * required {
            return Err(FmmError::NotSeparated {
                distance: delta.norm().to_f64().unwrap_or(f64::NAN),
                required: required.to_f64().unwrap_or(f64::NAN),
            });
        }
        let inv = Complex::new(T::one(), T::zero()) / delta;
        // inv_pow[n] = Δ^-(n+1) for n = 0..2t-2
        let mut inv_pow = Vec::with_capacity(2 * self.order - 1);
        let mut cur = inv;
        for _ in 0..2 * self.order - 1 {
            inv_pow.push(cur);
            cur = cur * inv;
        }
        let mut sign = T::one();
        let coeffs = (0..self.order)
            .map(|l| {
                let mut acc = Complex::new(T::zero(), T::zero());
                for (m, a) in source.coeffs.iter().enumerate() {
                    acc += (*a * inv_pow[m + l]).scale(self.c(m + l, l));
                }
                let out = acc.scale(sign);
                sign = -sign;
                out
            })
            .collect();
        Ok(LocalExpansion {
            center: target_center,
            coeffs,
        })
    }

    /// Exact polynomial re-centering
    /// `b'_l = Σ_{m≥l} b_m C(m,l) δ^(m-l)`, `δ = child - parent`.
    pub fn l2l(
        &self,
        parent: &LocalExpansion<T>,
        child_center: Complex<T>,
    ) -> Result<LocalExpansion<T>, FmmError> {
        self.check_order(parent.order())?;
        let delta = child_center - parent.center;
        let dpow = powers(delta, self.order);
        let coeffs = (0..self.order)
            .map(|l| {
                let mut acc = Complex::new(T::zero(), T::zero());
                for m in l..self.order {
                    acc += (parent.coeffs[m] * dpow[m - l]).scale(self.c(m, l));
                }
                acc
            })
            .collect();
        Ok(LocalExpansion {
            center: child_center,
            coeffs,
        })
    }

    /// Horner evaluation of the local polynomial, conjugated into the
    /// physical velocity.
    pub fn l2p(&self, local: &LocalExpansion<T>, position: Complex<T>) -> Velocity<T> {
        let dz = position - local.center;
        let mut g = Complex::new(T::zero(), T::zero());
        for b in local.coeffs.iter().rev() {
            g = g * dz + *b;
        }
        g.conj()
    }

    /// Direct evaluation of the singular series at a well-separated point
    /// (`|position - center| ≥ 2 · source_radius`); test/validation path.
    pub fn m2p_eval(
        &self,
        multipole: &MultipoleExpansion<T>,
        position: Complex<T>,
        source_radius: T,
    ) -> Result<Velocity<T>, FmmError> {
        self.check_order(multipole.order())?;
        let dz = position - multipole.center;
        let required = rf::<T>(2.0) * source_radius;
        if dz.norm_sqr() < required * required {
            return Err(FmmError::NotSeparated {
                distance: dz.norm().to_f64().unwrap_or(f64::NAN),
                required: required.to_f64().unwrap_or(f64::NAN),
            });
        }
        let inv = Complex::new(T::one(), T::zero()) / dz;
        let mut s = Complex::new(T::zero(), T::zero());
        for a in multipole.coeffs.iter().rev() {
            s = s * inv + *a;
        }
        Ok((s * inv).conj())
    }
}

fn powers<T: Real>(base: Complex<T>, count: usize) -> Vec<Complex<T>> {
    let mut out = Vec::with_capacity(count);
    let mut cur = Complex::new(T::one(), T::zero());
    for _ in 0..count {
        out.push(cur);
        cur = cur * base;
    }
    out
}

/// One-shot convenience wrappers; hot paths should hold an
/// [`ExpansionOps`] instead so the binomial table is built once.
pub fn p2m<T: Real>(
    particles: &[Particle<T>],
    center: Complex<T>,
    order: usize,
) -> Result<MultipoleExpansion<T>, FmmError> {
    Ok(ExpansionOps::new(order)?.p2m(particles, center))
}

pub fn m2m<T: Real>(
    child: &MultipoleExpansion<T>,
    new_center: Complex<T>,
) -> Result<MultipoleExpansion<T>, FmmError> {
    ExpansionOps::new(child.order())?.m2m(child, new_center)
}

pub fn m2l<T: Real>(
    source: &MultipoleExpansion<T>,
    target_center: Complex<T>,
    source_width: T,
) -> Result<LocalExpansion<T>, FmmError> {
    ExpansionOps::new(source.order())?.m2l(source, target_center, source_width)
}

pub fn l2l<T: Real>(
    parent: &LocalExpansion<T>,
    child_center: Complex<T>,
) -> Result<LocalExpansion<T>, FmmError> {
    ExpansionOps::new(parent.order())?.l2l(parent, child_center)
}

pub fn l2p<T: Real>(local: &LocalExpansion<T>, position: Complex<T>) -> Result<Velocity<T>, FmmError> {
    Ok(ExpansionOps::new(local.order())?.l2p(local, position))
}

pub fn m2p_eval<T: Real>(
    multipole: &MultipoleExpansion<T>,
    position: Complex<T>,
    source_radius: T,
) -> Result<Velocity<T>, FmmError> {
    ExpansionOps::new(multipole.order())?.m2p_eval(multipole, position, source_radius)
}
