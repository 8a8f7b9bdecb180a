//! Per-tile in-focus particle mask prediction.
//!
//! A [`Segmenter`] maps one tile of a reconstructed plane to a tile-sized
//! probability map. Three implementations are provided: a truth oracle for
//! synthetic data, a classical dark-disk baseline, and a reader for masks
//! produced by an external model.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::detect3d::label_components;
use crate::error::{Error, Result};
use crate::io;
use crate::optics::OpticalConfig;
use crate::simulate::{disk_pixels_in, Particle, ParticleField};
use crate::tiling::TileGrid;

/// Full-size probability plane at one reconstruction depth.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlane {
    /// Shape `(ny, nx)`, values in `[0, 1]`.
    pub probs: Array2<f32>,
    pub z: f64,
    pub plane_index: usize,
}

impl MaskPlane {
    pub fn new(probs: Array2<f32>, z: f64, plane_index: usize) -> Self {
        Self { probs, z, plane_index }
    }

    pub fn nx(&self) -> usize {
        self.probs.ncols()
    }

    pub fn ny(&self) -> usize {
        self.probs.nrows()
    }

    /// Pixels with probability strictly above `threshold`.
    pub fn binarize(&self, threshold: f32) -> Array2<bool> {
        self.probs.mapv(|p| p > threshold)
    }
}

/// Where a tile came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileContext {
    pub hid: u32,
    pub plane_index: usize,
    pub z: f64,
    pub tile_index: usize,
    /// Pixel origin `(x0, y0)` of the tile.
    pub origin: (usize, usize),
    pub size: usize,
}

/// Segmenter output for one tile.
#[derive(Debug, Clone, PartialEq)]
pub enum TileMask {
    /// Every probability is zero.
    Empty,
    Probs(Array2<f32>),
}

impl TileMask {
    pub fn into_dense(self, size: usize) -> Array2<f32> {
        match self {
            TileMask::Empty => Array2::zeros((size, size)),
            TileMask::Probs(p) => p,
        }
    }
}

/// Tile-level mask predictor. Implementations must be read-only after
/// construction.
pub trait Segmenter: Send + Sync {
    fn predict(&self, ctx: &TileContext, tile: ArrayView2<'_, f64>) -> Result<TileMask>;

    /// Whether [`predict`](Self::predict) looks at the pixels. When `false`
    /// the pipeline may skip reconstruction and pass an empty view.
    fn needs_pixels(&self) -> bool {
        true
    }
}

/// Serves the rasterized truth disks of one hologram: probability 1 inside
/// every particle whose depth bin is the tile's plane.
#[derive(Debug, Clone)]
pub struct OracleSegmenter {
    cfg: OpticalConfig,
    by_plane: BTreeMap<usize, Vec<Particle>>,
}

impl OracleSegmenter {
    pub fn new(truth: &ParticleField, cfg: &OpticalConfig) -> Self {
        let by_plane = truth
            .by_plane(cfg)
            .into_iter()
            .map(|(j, idx)| (j, idx.into_iter().map(|i| truth.particles[i]).collect()))
            .collect();
        Self { cfg: *cfg, by_plane }
    }

    /// Whether any truth disk touches the window in `plane`.
    pub fn plane_has_content(&self, plane: usize) -> bool {
        self.by_plane.contains_key(&plane)
    }

    fn rasterize(&self, ctx: &TileContext) -> TileMask {
        let Some(ps) = self.by_plane.get(&ctx.plane_index) else {
            return TileMask::Empty;
        };
        let (x0, y0) = ctx.origin;
        let mut out: Option<Array2<f32>> = None;
        for p in ps {
            for (col, row) in disk_pixels_in(p, &self.cfg, ctx.origin, (ctx.size, ctx.size)) {
                out.get_or_insert_with(|| Array2::zeros((ctx.size, ctx.size)))[[row - y0, col - x0]] = 1.0;
            }
        }
        out.map_or(TileMask::Empty, TileMask::Probs)
    }
}

impl Segmenter for OracleSegmenter {
    fn predict(&self, ctx: &TileContext, _tile: ArrayView2<'_, f64>) -> Result<TileMask> {
        Ok(self.rasterize(ctx))
    }

    fn needs_pixels(&self) -> bool {
        false
    }
}

/// Classical baseline: marks dark regions of a refocused amplitude tile.
///
/// A pixel is foreground when its value is below `amp_thresh` times the
/// tile median and its 4-connected dark region has at least `min_px`
/// pixels. Expects untransformed amplitude tiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FocusSegmenter {
    pub amp_thresh: f64,
    pub min_px: usize,
}

impl Default for FocusSegmenter {
    fn default() -> Self {
        Self { amp_thresh: 0.55, min_px: 4 }
    }
}

impl FocusSegmenter {
    pub fn validate(&self) -> Result<()> {
        if !(self.amp_thresh > 0.0 && self.amp_thresh < 1.0) {
            return Err(Error::Config(format!("amp_thresh must lie in (0, 1), got {}", self.amp_thresh)));
        }
        Ok(())
    }
}

fn median(values: ArrayView2<'_, f64>) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().collect();
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

impl Segmenter for FocusSegmenter {
    fn predict(&self, _ctx: &TileContext, tile: ArrayView2<'_, f64>) -> Result<TileMask> {
        if tile.is_empty() {
            return Ok(TileMask::Empty);
        }
        let cut = self.amp_thresh * median(tile);
        let dark = tile.mapv(|v| v < cut);
        let (labels, comps) = label_components(dark.view());
        if !comps.iter().any(|c| c.pixel_count >= self.min_px) {
            return Ok(TileMask::Empty);
        }
        Ok(TileMask::Probs(labels.mapv(|l| {
            if l > 0 && comps[l as usize - 1].pixel_count >= self.min_px {
                1.0
            } else {
                0.0
            }
        })))
    }
}

/// One line of an external mask manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub hid: u32,
    pub plane: usize,
    pub tile_index: usize,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
}

/// Parses a line-delimited JSON manifest; blank lines are skipped.
pub fn parse_mask_manifest(text: &str) -> Result<Vec<MaskRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::Parse(format!("manifest line {}: {e}", n + 1))))
        .collect()
}

/// Masks exported by an external model, looked up by
/// `(hologram, plane, tile)`. Files are PGM (probability = value / 255) or
/// raw little-endian `f32` with a sidecar header.
#[derive(Debug, Clone)]
pub struct ExternalMasks {
    entries: HashMap<(u32, usize, usize), PathBuf>,
}

impl ExternalMasks {
    pub fn from_records(dir: &Path, records: Vec<MaskRecord>) -> Self {
        let entries = records
            .into_iter()
            .map(|r| {
                let path = if r.path.is_absolute() { r.path } else { dir.join(r.path) };
                ((r.hid, r.plane, r.tile_index), path)
            })
            .collect();
        Self { entries }
    }

    /// Reads `manifest` (paths relative to `dir`).
    pub fn open(dir: &Path, manifest: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest)?;
        let records = parse_mask_manifest(&text).map_err(|e| Error::malformed(manifest, e.to_string()))?;
        Ok(Self::from_records(dir, records))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Segmenter for ExternalMasks {
    fn predict(&self, ctx: &TileContext, _tile: ArrayView2<'_, f64>) -> Result<TileMask> {
        let key = (ctx.hid, ctx.plane_index, ctx.tile_index);
        let path = self.entries.get(&key).ok_or(Error::MissingMask {
            hid: ctx.hid,
            plane: ctx.plane_index,
            tile: ctx.tile_index,
        })?;
        let probs = io::read_mask_file(path)?;
        if probs.dim() != (ctx.size, ctx.size) {
            return Err(Error::malformed(
                path,
                format!("expected a {0}x{0} mask, found {1}x{2}", ctx.size, probs.ncols(), probs.nrows()),
            ));
        }
        if probs.iter().all(|&p| p == 0.0) {
            return Ok(TileMask::Empty);
        }
        Ok(TileMask::Probs(probs))
    }

    fn needs_pixels(&self) -> bool {
        false
    }
}

/// Runs `segmenter` over every `(plane, tile)` of one hologram and writes
/// the masks as PGM files plus manifest lines, in the format
/// [`ExternalMasks`] reads. Only for segmenters that ignore pixels.
pub fn export_masks(
    segmenter: &dyn Segmenter,
    hid: u32,
    cfg: &OpticalConfig,
    grid: &TileGrid,
    dir: &Path,
    manifest: &mut dyn Write,
) -> Result<()> {
    let empty = Array2::<f64>::zeros((0, 0));
    for plane in 0..cfg.n_planes {
        for (tile_index, &origin) in grid.positions.iter().enumerate() {
            let ctx = TileContext {
                hid,
                plane_index: plane,
                z: cfg.plane_center(plane),
                tile_index,
                origin,
                size: grid.tile,
            };
            let probs = segmenter.predict(&ctx, empty.view())?.into_dense(grid.tile);
            let rel = PathBuf::from(format!("h{hid}_p{plane}_t{tile_index}.pgm"));
            io::write_mask_pgm(&dir.join(&rel), &probs)?;
            let rec = MaskRecord { hid, plane, tile_index, path: rel };
            writeln!(manifest, "{}", serde_json::to_string(&rec)?)?;
        }
    }
    Ok(())
}

/// Reads manifest records from any buffered reader.
pub fn read_mask_manifest<R: BufRead>(mut reader: R) -> Result<Vec<MaskRecord>> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    parse_mask_manifest(&text)
}
