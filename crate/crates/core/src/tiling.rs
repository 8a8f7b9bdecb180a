//! Overlapping square tiles over a full-size plane, and reassembly of
//! per-tile probability maps by coverage-weighted averaging.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TileSpec {
    pub tile: usize,
    pub step: usize,
}

impl Default for TileSpec {
    fn default() -> Self {
        Self { tile: 512, step: 128 }
    }
}

impl TileSpec {
    pub fn validate(&self) -> Result<()> {
        if self.step == 0 || self.step > self.tile {
            return Err(Error::Config(format!(
                "tile spec requires 0 < step <= tile, got tile {} step {}",
                self.tile, self.step
            )));
        }
        Ok(())
    }
}

/// Tile origins `(x0, y0)` in pixels, ordered lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileGrid {
    pub positions: Vec<(usize, usize)>,
    pub nx_tiles: usize,
    pub ny_tiles: usize,
    pub tile: usize,
    pub nx: usize,
    pub ny: usize,
}

/// Origins along one axis.
///
/// Unique mode keeps every multiple of `step` whose tile fits and adds one
/// tile flush with the far edge. Naive mode places `floor(dim / step)`
/// tiles at multiples of `step` and clamps the ones that overshoot, so
/// clamped origins repeat.
fn axis_origins(dim: usize, spec: &TileSpec, dedup: bool) -> Vec<usize> {
    let last = dim - spec.tile;
    let mut unique: Vec<usize> = (0..).map(|k| k * spec.step).take_while(|&o| o < last).collect();
    unique.push(last);
    if dedup {
        return unique;
    }
    let n = (dim / spec.step).max(unique.len());
    (0..n).map(|k| (k * spec.step).min(last)).collect()
}

/// Builds the tile grid for an `nx x ny` plane. With `dedup`, tiles clamped
/// onto the same origin are kept once.
pub fn build_grid(nx: usize, ny: usize, spec: &TileSpec, dedup: bool) -> Result<TileGrid> {
    spec.validate()?;
    if nx < spec.tile || ny < spec.tile {
        return Err(Error::ImageTooSmall { nx, ny, tile: spec.tile });
    }
    let xs = axis_origins(nx, spec, dedup);
    let ys = axis_origins(ny, spec, dedup);
    let mut positions: Vec<(usize, usize)> = xs.iter().flat_map(|&x| ys.iter().map(move |&y| (x, y))).collect();
    positions.sort_unstable();
    Ok(TileGrid { positions, nx_tiles: xs.len(), ny_tiles: ys.len(), tile: spec.tile, nx, ny })
}

impl TileGrid {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Whether tile `index` contains pixel `(col, row)`.
    pub fn contains(&self, index: usize, col: usize, row: usize) -> bool {
        let (x0, y0) = self.positions[index];
        (x0..x0 + self.tile).contains(&col) && (y0..y0 + self.tile).contains(&row)
    }

    /// Indices of every tile containing pixel `(col, row)`.
    pub fn tiles_containing(&self, col: usize, row: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.contains(i, col, row)).collect()
    }

    /// Whether tile `index` overlaps the pixel rectangle `[c0, c1] x [r0, r1]`.
    pub fn intersects(&self, index: usize, (c0, r0): (usize, usize), (c1, r1): (usize, usize)) -> bool {
        let (x0, y0) = self.positions[index];
        c0 < x0 + self.tile && c1 >= x0 && r0 < y0 + self.tile && r1 >= y0
    }

    /// Number of tiles covering each pixel.
    pub fn coverage(&self) -> Array2<u32> {
        let mut count = Array2::<u32>::zeros((self.ny, self.nx));
        for &(x0, y0) in &self.positions {
            count.slice_mut(s![y0..y0 + self.tile, x0..x0 + self.tile]).mapv_inplace(|c| c + 1);
        }
        count
    }
}

/// Copy of the window at `grid.positions[index]`.
pub fn extract<T: Clone>(plane: ArrayView2<'_, T>, grid: &TileGrid, index: usize) -> Result<Array2<T>> {
    let &(x0, y0) = grid.positions.get(index).ok_or(Error::TileIndex { index, len: grid.len() })?;
    let (ny, nx) = plane.dim();
    if nx != grid.nx || ny != grid.ny {
        return Err(Error::Dimensions { expected_nx: grid.nx, expected_ny: grid.ny, nx, ny });
    }
    Ok(plane.slice(s![y0..y0 + grid.tile, x0..x0 + grid.tile]).to_owned())
}

/// Streaming form of [`reassemble`] that accepts tiles one at a time and
/// lets all-zero tiles be skipped. Sums are kept in `f64`.
#[derive(Debug, Clone)]
pub struct Reassembler<'g> {
    grid: &'g TileGrid,
    coverage: &'g Array2<u32>,
    sum: Option<Array2<f64>>,
}

impl<'g> Reassembler<'g> {
    /// `coverage` must be `grid.coverage()`; it is passed in so it can be
    /// shared across planes.
    pub fn new(grid: &'g TileGrid, coverage: &'g Array2<u32>) -> Self {
        Self { grid, coverage, sum: None }
    }

    pub fn add(&mut self, index: usize, probs: ArrayView2<'_, f32>) -> Result<()> {
        let &(x0, y0) = self.grid.positions.get(index).ok_or(Error::TileIndex { index, len: self.grid.len() })?;
        let t = self.grid.tile;
        if probs.dim() != (t, t) {
            return Err(Error::Dimensions { expected_nx: t, expected_ny: t, nx: probs.ncols(), ny: probs.nrows() });
        }
        let sum = self.sum.get_or_insert_with(|| Array2::zeros((self.grid.ny, self.grid.nx)));
        let mut window = sum.slice_mut(s![y0..y0 + t, x0..x0 + t]);
        window.zip_mut_with(&probs, |acc, &p| *acc += p as f64);
        Ok(())
    }

    /// `None` when every added tile was skipped (the plane is all zeros).
    pub fn finish(self) -> Option<Array2<f32>> {
        let coverage = self.coverage;
        self.sum.map(|mut sum| {
            sum.zip_mut_with(coverage, |v, &c| *v /= c as f64);
            sum.mapv(|v| v as f32)
        })
    }
}

/// Averages per-tile maps into a full plane: each pixel is the mean over the
/// tiles that cover it. Tiles are accumulated in index order.
pub fn reassemble(tile_probs: &[(usize, Array2<f32>)], grid: &TileGrid) -> Result<Array2<f32>> {
    let mut by_index: Vec<Option<&Array2<f32>>> = vec![None; grid.len()];
    for (index, probs) in tile_probs {
        *by_index.get_mut(*index).ok_or(Error::TileIndex { index: *index, len: grid.len() })? = Some(probs);
    }
    let coverage = grid.coverage();
    let mut acc = Reassembler::new(grid, &coverage);
    for (index, probs) in by_index.into_iter().enumerate() {
        acc.add(index, probs.ok_or(Error::MissingTile(index))?.view())?;
    }
    Ok(acc.finish().unwrap_or_else(|| Array2::zeros((grid.ny, grid.nx))))
}
