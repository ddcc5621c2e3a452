//! Uniform quadtree over the unit square: geometry, particle binning,
//! neighbor lists, and well-separated interaction lists.

use core::marker::PhantomData;

use num_complex::Complex;

use crate::{rf, FmmError, Real};

/// Point vortex: position in the half-open unit square, circulation Γ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Particle<T> {
    pub position: Complex<T>,
    pub circulation: T,
}

impl<T: Real> Particle<T> {
    pub fn new(x: T, y: T, circulation: T) -> Self {
        Self {
            position: Complex::new(x, y),
            circulation,
        }
    }
}

/// Box address `(level, i, j)`: `i` counts along x, `j` along y, both from
/// the lower-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BoxId {
    pub level: u32,
    pub i: u32,
    pub j: u32,
}

impl BoxId {
    pub fn new(level: u32, i: u32, j: u32) -> Self {
        debug_assert!(i < 1 << level && j < 1 << level);
        Self { level, i, j }
    }

    /// Row-major key within the level: `i * 2^level + j`.
    pub fn linear(&self) -> usize {
        ((self.i as usize) << self.level) + self.j as usize
    }

    pub fn from_linear(level: u32, linear: usize) -> Self {
        let side = 1usize << level;
        Self::new(level, (linear / side) as u32, (linear % side) as u32)
    }

    /// Key unique across levels: boxes of levels `0..level` occupy the first
    /// `(4^level - 1) / 3` slots, then row-major within the level.
    pub fn global_index(&self) -> usize {
        (((1usize << (2 * self.level)) - 1) / 3) + self.linear()
    }

    pub fn parent(&self) -> Option<BoxId> {
        (self.level > 0).then(|| BoxId::new(self.level - 1, self.i / 2, self.j / 2))
    }

    /// Children ordered by their row-major key.
    pub fn children(&self) -> [BoxId; 4] {
        let (l, i, j) = (self.level + 1, 2 * self.i, 2 * self.j);
        [
            BoxId::new(l, i, j),
            BoxId::new(l, i, j + 1),
            BoxId::new(l, i + 1, j),
            BoxId::new(l, i + 1, j + 1),
        ]
    }
}

/// Uniform, fully refined quadtree with levels `0..=levels` over `[0,1)²`.
///
/// Geometry is implied by the box address, so the tree itself stays O(1);
/// per-level box sets are produced on demand in row-major order.
#[derive(Clone, Copy, Debug)]
pub struct Quadtree<T> {
    levels: u32,
    _scalar: PhantomData<T>,
}

/// Depth cap keeps `4^level` inside `usize` with headroom; real runs sit
/// far below it.
const MAX_LEVELS: u32 = 24;

pub fn build_tree<T: Real>(levels: u32) -> Result<Quadtree<T>, FmmError> {
    if levels < 2 {
        return Err(FmmError::InvalidLevels { levels });
    }
    if levels > MAX_LEVELS {
        return Err(FmmError::InvalidConfig {
            message: format!("tree depth {levels} exceeds supported maximum {MAX_LEVELS}"),
        });
    }
    Ok(Quadtree {
        levels,
        _scalar: PhantomData,
    })
}

impl<T: Real> Quadtree<T> {
    /// Finest level L.
    pub fn levels(&self) -> u32 {
        self.levels
    }

    fn check_level(&self, level: u32) -> Result<(), FmmError> {
        if level > self.levels {
            return Err(FmmError::LevelOutOfRange {
                level,
                max: self.levels,
            });
        }
        Ok(())
    }

    pub fn box_count(&self, level: u32) -> usize {
        1usize << (2 * level)
    }

    /// Box width `2^-level` (root width 1).
    pub fn width(&self, level: u32) -> T {
        rf::<T>(0.5).powi(level as i32)
    }

    pub fn center(&self, b: BoxId) -> Complex<T> {
        let w = self.width(b.level);
        let half = rf::<T>(0.5);
        Complex::new(
            (T::from_u32(b.i).unwrap() + half) * w,
            (T::from_u32(b.j).unwrap() + half) * w,
        )
    }

    /// All boxes of a level in row-major order.
    pub fn boxes(&self, level: u32) -> Result<Vec<BoxId>, FmmError> {
        self.check_level(level)?;
        Ok((0..self.box_count(level))
            .map(|lin| BoxId::from_linear(level, lin))
            .collect())
    }

    /// Finest-level box containing `position`; rejects points outside the
    /// half-open unit square.
    pub fn locate(&self, position: Complex<T>) -> Option<BoxId> {
        let (x, y) = (position.re, position.im);
        let zero = T::zero();
        let one = T::one();
        if !(x >= zero && x < one && y >= zero && y < one) {
            return None;
        }
        let side = 1u32 << self.levels;
        let scale = T::from_u32(side).unwrap();
        let clamp = |v: T| ((v * scale).floor().to_u32().unwrap_or(0)).min(side - 1);
        Some(BoxId::new(self.levels, clamp(x), clamp(y)))
    }
}

/// Finest-level partition of the particle set.
#[derive(Clone, Debug)]
pub struct Binning {
    levels: u32,
    per_box: Vec<Vec<usize>>,
    box_of: Vec<usize>,
}

impl Binning {
    /// Particle indices in `b`, ascending.
    pub fn particles_in(&self, b: BoxId) -> &[usize] {
        &self.per_box[b.linear()]
    }

    pub fn particles_in_linear(&self, linear: usize) -> &[usize] {
        &self.per_box[linear]
    }

    pub fn box_of(&self, particle: usize) -> BoxId {
        BoxId::from_linear(self.levels, self.box_of[particle])
    }

    pub fn particle_count(&self) -> usize {
        self.box_of.len()
    }
}

pub fn bin_particles<T: Real>(
    tree: &Quadtree<T>,
    particles: &[Particle<T>],
) -> Result<Binning, FmmError> {
    let levels = tree.levels();
    let mut per_box = vec![Vec::new(); tree.box_count(levels)];
    let mut box_of = Vec::with_capacity(particles.len());
    for (index, p) in particles.iter().enumerate() {
        if !p.circulation.is_finite() {
            return Err(FmmError::InvalidConfig {
                message: format!("particle {index} has non-finite circulation"),
            });
        }
        let b = tree.locate(p.position).ok_or(FmmError::OutOfDomain {
            index,
            x: p.position.re.to_f64().unwrap_or(f64::NAN),
            y: p.position.im.to_f64().unwrap_or(f64::NAN),
        })?;
        per_box[b.linear()].push(index);
        box_of.push(b.linear());
    }
    Ok(Binning {
        levels,
        per_box,
        box_of,
    })
}

/// Same-level adjacency (edge- or corner-touching), self excluded.
#[derive(Clone, Debug)]
pub struct NeighborLists {
    level: u32,
    lists: Vec<Vec<BoxId>>,
}

impl NeighborLists {
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn neighbors_of(&self, b: BoxId) -> &[BoxId] {
        &self.lists[b.linear()]
    }
}

pub fn neighbor_lists<T: Real>(
    tree: &Quadtree<T>,
    level: u32,
) -> Result<NeighborLists, FmmError> {
    if level < 1 || level > tree.levels() {
        return Err(FmmError::LevelOutOfRange {
            level,
            max: tree.levels(),
        });
    }
    let side = 1i64 << level;
    let mut lists = Vec::with_capacity(tree.box_count(level));
    for lin in 0..tree.box_count(level) {
        let b = BoxId::from_linear(level, lin);
        let mut list = Vec::with_capacity(8);
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                if di == 0 && dj == 0 {
                    continue;
                }
                let (ni, nj) = (b.i as i64 + di, b.j as i64 + dj);
                if (0..side).contains(&ni) && (0..side).contains(&nj) {
                    list.push(BoxId::new(level, ni as u32, nj as u32));
                }
            }
        }
        lists.push(list);
    }
    Ok(NeighborLists { level, lists })
}

/// Far-field partners: children of the parent's closed neighborhood that
/// are neither the box itself nor adjacent to it.
#[derive(Clone, Debug)]
pub struct InteractionLists {
    level: u32,
    lists: Vec<Vec<BoxId>>,
}

impl InteractionLists {
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn partners_of(&self, b: BoxId) -> &[BoxId] {
        &self.lists[b.linear()]
    }

    /// Total M2L translations at this level.
    pub fn total_entries(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }
}

pub fn interaction_lists<T: Real>(
    tree: &Quadtree<T>,
    level: u32,
) -> Result<InteractionLists, FmmError> {
    if level < 2 || level > tree.levels() {
        return Err(FmmError::LevelOutOfRange {
            level,
            max: tree.levels(),
        });
    }
    let side = 1i64 << level;
    let mut lists = Vec::with_capacity(tree.box_count(level));
    for lin in 0..tree.box_count(level) {
        let b = BoxId::from_linear(level, lin);
        let parent = b.parent().expect("level >= 2 always has a parent");
        let parent_side = side / 2;
        let mut list = Vec::with_capacity(27);
        // Children of the parent's closed 3x3 neighborhood, row-major so the
        // stored order is reproducible.
        for pi in -1i64..=1 {
            for pj in -1i64..=1 {
                let (qi, qj) = (parent.i as i64 + pi, parent.j as i64 + pj);
                if !(0..parent_side).contains(&qi) || !(0..parent_side).contains(&qj) {
                    continue;
                }
                for c in BoxId::new(level - 1, qi as u32, qj as u32).children() {
                    let adjacent = (c.i as i64 - b.i as i64).abs() <= 1
                        && (c.j as i64 - b.j as i64).abs() <= 1;
                    if !adjacent {
                        list.push(c);
                    }
                }
            }
        }
        list.sort_unstable();
        lists.push(list);
    }
    Ok(InteractionLists { level, lists })
}
