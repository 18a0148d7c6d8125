//! Uniform lattices over the preset domains and space-time slabs.
//!
//! A [`Grid`] classifies every lattice node as interior, boundary or
//! exterior. Unknowns of every solver are the interior nodes; boundary
//! nodes carry Dirichlet data; exterior nodes carry nothing. Non-exterior
//! nodes are called *active* and are addressed by a dense `slot` index,
//! which is the storage order of [`crate::field::ScalarField`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Marker for "no slot" in the lattice lookup tables.
pub const NO_SLOT: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainPreset {
    /// (-1, 1) in one dimension.
    Interval,
    /// (-1, 1)^2.
    Square,
    /// The open unit disk.
    Disk,
}

impl DomainPreset {
    pub fn dim(self) -> usize {
        match self {
            DomainPreset::Interval => 1,
            DomainPreset::Square | DomainPreset::Disk => 2,
        }
    }

    /// Distance from `x` to the continuous boundary of the preset domain.
    pub fn boundary_distance(self, x: [f64; 2]) -> f64 {
        match self {
            DomainPreset::Interval => (1.0 - x[0].abs()).abs(),
            DomainPreset::Square => {
                let (ax, ay) = (x[0].abs(), x[1].abs());
                if ax <= 1.0 && ay <= 1.0 {
                    (1.0 - ax).min(1.0 - ay)
                } else {
                    let dx = (ax - 1.0).max(0.0);
                    let dy = (ay - 1.0).max(0.0);
                    dx.hypot(dy)
                }
            }
            DomainPreset::Disk => (1.0 - x[0].hypot(x[1])).abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeClass {
    Interior,
    Boundary,
    Exterior,
}

#[derive(Debug, Clone)]
pub struct Grid {
    dim: usize,
    cells: usize,
    lo: f64,
    hi: f64,
    h: f64,
    preset: DomainPreset,
    classes: Vec<NodeClass>,
    slot_of: Vec<usize>,
    lattice_of: Vec<usize>,
    interior: Vec<usize>,
    unknown_of: Vec<usize>,
    stencil: Vec<[usize; 9]>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.cells == other.cells
            && self.lo == other.lo
            && self.hi == other.hi
            && self.classes == other.classes
    }
}

/// Index of the lattice offset `(dx, dy)` inside a 9-point stencil array.
#[inline]
pub const fn offset_index(dx: i32, dy: i32) -> usize {
    ((dy + 1) * 3 + (dx + 1)) as usize
}

/// Builds one of the preset grids on `(-1, 1)^n` or the unit disk with
/// `resolution` cells per axis.
pub fn build_grid(preset: DomainPreset, resolution: usize) -> Result<Arc<Grid>> {
    match preset {
        DomainPreset::Interval => Grid::interval_on(-1.0, 1.0, resolution),
        DomainPreset::Square => Grid::square(resolution),
        DomainPreset::Disk => Grid::disk(resolution),
    }
}

impl Grid {
    /// One-dimensional grid on `(lo, hi)` with `cells` uniform cells.
    pub fn interval_on(lo: f64, hi: f64, cells: usize) -> Result<Arc<Grid>> {
        check_resolution(cells)?;
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Sizing(format!("empty interval ({lo}, {hi})")));
        }
        let classes = (0..=cells)
            .map(|i| {
                if i == 0 || i == cells {
                    NodeClass::Boundary
                } else {
                    NodeClass::Interior
                }
            })
            .collect();
        Grid::from_classes(1, cells, lo, hi, DomainPreset::Interval, classes)
    }

    /// `(-1, 1)^2` with the outer lattice ring as boundary.
    pub fn square(cells: usize) -> Result<Arc<Grid>> {
        check_resolution(cells)?;
        let n = cells + 1;
        let classes = (0..n * n)
            .map(|k| {
                let (i, j) = (k % n, k / n);
                if i == 0 || j == 0 || i == cells || j == cells {
                    NodeClass::Boundary
                } else {
                    NodeClass::Interior
                }
            })
            .collect();
        Grid::from_classes(2, cells, -1.0, 1.0, DomainPreset::Square, classes)
    }

    /// Unit disk: nodes with `|x| < 1` are interior, their remaining
    /// 8-neighbours form the boundary ring.
    pub fn disk(cells: usize) -> Result<Arc<Grid>> {
        check_resolution(cells)?;
        let n = cells + 1;
        let h = 2.0 / cells as f64;
        let inside: Vec<bool> = (0..n * n)
            .map(|k| {
                let x = -1.0 + (k % n) as f64 * h;
                let y = -1.0 + (k / n) as f64 * h;
                x * x + y * y < 1.0
            })
            .collect();
        let mut classes = vec![NodeClass::Exterior; n * n];
        for k in 0..n * n {
            if !inside[k] {
                continue;
            }
            classes[k] = NodeClass::Interior;
            let (i, j) = ((k % n) as i64, (k / n) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ii, jj) = (i + dx, j + dy);
                    // inside nodes never touch the lattice edge, |x| < 1 there
                    let nb = (jj as usize) * n + ii as usize;
                    if !inside[nb] {
                        classes[nb] = NodeClass::Boundary;
                    }
                }
            }
        }
        Grid::from_classes(2, cells, -1.0, 1.0, DomainPreset::Disk, classes)
    }

    fn from_classes(
        dim: usize,
        cells: usize,
        lo: f64,
        hi: f64,
        preset: DomainPreset,
        classes: Vec<NodeClass>,
    ) -> Result<Arc<Grid>> {
        let mut slot_of = vec![NO_SLOT; classes.len()];
        let mut lattice_of = Vec::new();
        for (k, c) in classes.iter().enumerate() {
            if *c != NodeClass::Exterior {
                slot_of[k] = lattice_of.len();
                lattice_of.push(k);
            }
        }
        let mut unknown_of = vec![NO_SLOT; lattice_of.len()];
        let mut interior = Vec::new();
        for (slot, &k) in lattice_of.iter().enumerate() {
            if classes[k] == NodeClass::Interior {
                unknown_of[slot] = interior.len();
                interior.push(slot);
            }
        }
        if interior.is_empty() {
            return Err(Error::Sizing(format!(
                "resolution {cells} leaves no interior node"
            )));
        }
        let n = cells + 1;
        let mut stencil = Vec::with_capacity(interior.len());
        for &slot in &interior {
            let k = lattice_of[slot];
            let (i, j) = ((k % n) as i64, (k / n) as i64);
            let mut nb = [NO_SLOT; 9];
            let rows: &[i64] = if dim == 1 { &[0] } else { &[-1, 0, 1] };
            for &dy in rows {
                for dx in -1..=1i64 {
                    let k2 = if dim == 1 {
                        (i + dx) as usize
                    } else {
                        ((j + dy) as usize) * n + (i + dx) as usize
                    };
                    let s2 = slot_of[k2];
                    debug_assert!(s2 != NO_SLOT, "interior node with exterior neighbour");
                    nb[offset_index(dx as i32, dy as i32)] = s2;
                }
            }
            stencil.push(nb);
        }
        Ok(Arc::new(Grid {
            dim,
            cells,
            lo,
            hi,
            h: (hi - lo) / cells as f64,
            preset,
            classes,
            slot_of,
            lattice_of,
            interior,
            unknown_of,
            stencil,
        }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per axis.
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn preset(&self) -> DomainPreset {
        self.preset
    }

    /// Bounding box `(lo, hi)`, identical on every axis.
    pub fn bbox(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Measure of one lattice cell, `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Nodes per axis.
    pub fn side(&self) -> usize {
        self.cells + 1
    }

    pub fn lattice_len(&self) -> usize {
        self.classes.len()
    }

    pub fn active_len(&self) -> usize {
        self.lattice_of.len()
    }

    pub fn interior_len(&self) -> usize {
        self.interior.len()
    }

    pub fn classes(&self) -> &[NodeClass] {
        &self.classes
    }

    pub fn class(&self, slot: usize) -> NodeClass {
        self.classes[self.lattice_of[slot]]
    }

    pub fn is_interior(&self, slot: usize) -> bool {
        self.unknown_of[slot] != NO_SLOT
    }

    /// Slots of the interior nodes, in lattice order.
    pub fn interior_slots(&self) -> &[usize] {
        &self.interior
    }

    /// Position of an interior slot among the unknowns.
    pub fn unknown_index(&self, slot: usize) -> Option<usize> {
        let u = self.unknown_of[slot];
        (u != NO_SLOT).then_some(u)
    }

    pub fn boundary_slots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.active_len()).filter(move |&s| !self.is_interior(s))
    }

    /// Neighbour slots of the `idx`-th interior node, see [`offset_index`].
    pub fn stencil(&self, idx: usize) -> &[usize; 9] {
        &self.stencil[idx]
    }

    pub fn lattice_index(&self, slot: usize) -> usize {
        self.lattice_of[slot]
    }

    /// Lattice coordinates `(i, j)`; `j = 0` in one dimension.
    pub fn lattice_ij(&self, slot: usize) -> (usize, usize) {
        let k = self.lattice_of[slot];
        if self.dim == 1 {
            (k, 0)
        } else {
            (k % self.side(), k / self.side())
        }
    }

    pub fn slot_at(&self, i: usize, j: usize) -> Option<usize> {
        let n = self.side();
        if i >= n || (self.dim == 2 && j >= n) || (self.dim == 1 && j != 0) {
            return None;
        }
        let s = self.slot_of[j * n + i];
        (s != NO_SLOT).then_some(s)
    }

    /// Physical coordinates of a slot; the second entry is 0 in 1D.
    pub fn coords(&self, slot: usize) -> [f64; 2] {
        let (i, j) = self.lattice_ij(slot);
        let x = self.lo + i as f64 * self.h;
        if self.dim == 1 {
            [x, 0.0]
        } else {
            [x, self.lo + j as f64 * self.h]
        }
    }

    pub fn point(&self, slot: usize) -> Vec<f64> {
        self.coords(slot)[..self.dim].to_vec()
    }

    /// Active slot closest to `x`, if any active node lies within `h`.
    pub fn nearest_slot(&self, x: [f64; 2]) -> Option<usize> {
        let to_idx = |v: f64| ((v - self.lo) / self.h).round();
        let i = to_idx(x[0]);
        let j = if self.dim == 1 { 0.0 } else { to_idx(x[1]) };
        if i < 0.0 || j < 0.0 {
            return None;
        }
        self.slot_at(i as usize, j as usize)
    }

    pub fn same(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
        Arc::ptr_eq(a, b) || **a == **b
    }
}

fn check_resolution(cells: usize) -> Result<()> {
    if cells < 4 {
        return Err(Error::Sizing(format!(
            "resolution {cells} is below the minimum of 4 cells per axis"
        )));
    }
    Ok(())
}

/// Uniform time levels `t_m = m * dt`, `m = 0..=steps`, over a spatial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeGrid {
    base: Arc<Grid>,
    dt: f64,
    steps: usize,
}

impl SpaceTimeGrid {
    pub fn new(base: Arc<Grid>, t_final: f64, steps: usize) -> Result<Arc<SpaceTimeGrid>> {
        if steps == 0 {
            return Err(Error::param("steps", "need at least one time step"));
        }
        if !(t_final > 0.0) || !t_final.is_finite() {
            return Err(Error::param("t_final", format!("{t_final} is not positive")));
        }
        Ok(Arc::new(SpaceTimeGrid {
            base,
            dt: t_final / steps as f64,
            steps,
        }))
    }

    pub fn base(&self) -> &Arc<Grid> {
        &self.base
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn t_final(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn time(&self, m: usize) -> f64 {
        m as f64 * self.dt
    }
}
