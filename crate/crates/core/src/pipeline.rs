//! End-to-end processing of one hologram: normalize, refocus every plane,
//! segment tiles, reassemble, extract detections, and cluster them.

use ndarray::Array2;
use rayon::prelude::*;

use crate::detect3d::{extract_particles, leader_cluster, Clustering, Detection, MatchSpec, PredictedParticle};
use crate::error::{Error, Result};
use crate::optics::{divide_by_background, IntensityImage, OpticalConfig, Propagator, Refocuser};
use crate::segment::{MaskPlane, Segmenter, TileContext, TileMask};
use crate::tiling::{build_grid, extract, Reassembler, TileGrid, TileSpec};
use crate::transforms::{apply_value_transform, ValueTransform};

/// How the raw hologram is turned into `h_c`.
#[derive(Debug, Clone, PartialEq)]
pub enum Background {
    /// Divide by a constant gray level (the empty-field level of synthetic data).
    Level(f64),
    /// Divide by a per-pixel ensemble mean.
    Image(IntensityImage),
}

impl Default for Background {
    fn default() -> Self {
        Background::Level(127.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessOptions {
    pub optics: OpticalConfig,
    pub tiles: TileSpec,
    /// Use the deduplicated tile grid.
    pub dedup: bool,
    pub matching: MatchSpec,
    /// Mask probabilities strictly above this are foreground.
    pub mask_threshold: f32,
    /// Applied to each reconstructed plane before tiling.
    pub plane_transform: ValueTransform,
    /// Applied to each tile before segmentation.
    pub tile_transform: ValueTransform,
    pub background: Background,
    /// Reconstruct planes even when the segmenter ignores pixels.
    pub force_reconstruct: bool,
}

impl Default for ProcessOptions {
    fn default() -> Self {
        Self {
            optics: OpticalConfig::default(),
            tiles: TileSpec::default(),
            dedup: true,
            matching: MatchSpec::default(),
            mask_threshold: 0.5,
            plane_transform: ValueTransform::None,
            tile_transform: ValueTransform::None,
            background: Background::default(),
            force_reconstruct: false,
        }
    }
}

impl ProcessOptions {
    pub fn validate(&self) -> Result<()> {
        self.optics.validate()?;
        self.tiles.validate()?;
        self.matching.validate()?;
        if !(0.0..1.0).contains(&self.mask_threshold) {
            return Err(Error::Config(format!("mask_threshold must lie in [0, 1), got {}", self.mask_threshold)));
        }
        if let Background::Level(v) = self.background {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("background level must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TileGrid> {
        build_grid(self.optics.nx, self.optics.ny, &self.tiles, self.dedup)
    }
}

/// Everything produced for one hologram.
#[derive(Debug, Clone, PartialEq)]
pub struct HologramResult {
    pub hid: u32,
    /// Per-plane detections, in plane order.
    pub detections: Vec<Detection>,
    pub clustering: Clustering,
}

impl HologramResult {
    pub fn predictions(&self) -> Vec<PredictedParticle> {
        self.clustering.predictions()
    }
}

/// One hologram prepared for plane-by-plane segmentation.
pub struct HologramJob<'a> {
    hid: u32,
    opts: &'a ProcessOptions,
    segmenter: &'a dyn Segmenter,
    grid: TileGrid,
    coverage: Array2<u32>,
    refocuser: Option<Refocuser>,
}

impl<'a> HologramJob<'a> {
    pub fn new(
        hid: u32,
        hologram: &IntensityImage,
        opts: &'a ProcessOptions,
        segmenter: &'a dyn Segmenter,
    ) -> Result<Self> {
        opts.validate()?;
        let cfg = &opts.optics;
        if hologram.nx() != cfg.nx || hologram.ny() != cfg.ny {
            return Err(Error::Dimensions {
                expected_nx: cfg.nx,
                expected_ny: cfg.ny,
                nx: hologram.nx(),
                ny: hologram.ny(),
            });
        }
        let grid = opts.grid()?;
        let coverage = grid.coverage();
        let refocuser = if segmenter.needs_pixels() || opts.force_reconstruct {
            let h_c = match &opts.background {
                Background::Level(v) => IntensityImage::new(hologram.values().mapv(|p| p / v)),
                Background::Image(bg) => divide_by_background(hologram, bg)?,
            };
            Some(Refocuser::with_propagator(&h_c, Propagator::new(cfg)?)?)
        } else {
            None
        };
        Ok(Self { hid, opts, segmenter, grid, coverage, refocuser })
    }

    pub fn grid(&self) -> &TileGrid {
        &self.grid
    }

    /// Reassembled probability plane `j`, or `None` when every tile was empty.
    pub fn mask_plane(&self, j: usize) -> Result<Option<MaskPlane>> {
        let cfg = &self.opts.optics;
        let z = cfg.plane_center(j);
        let plane = match &self.refocuser {
            Some(r) => Some(apply_value_transform(r.amplitude_at(z).values(), self.opts.plane_transform)?),
            None => None,
        };
        let blank = Array2::<f64>::zeros((0, 0));
        let mut acc = Reassembler::new(&self.grid, &self.coverage);
        for (tile_index, &origin) in self.grid.positions.iter().enumerate() {
            let ctx = TileContext { hid: self.hid, plane_index: j, z, tile_index, origin, size: self.grid.tile };
            let pixels = match &plane {
                Some(p) => {
                    apply_value_transform(&extract(p.view(), &self.grid, tile_index)?, self.opts.tile_transform)?
                }
                None => blank.clone(),
            };
            if let TileMask::Probs(probs) = self.segmenter.predict(&ctx, pixels.view())? {
                acc.add(tile_index, probs.view())?;
            }
        }
        Ok(acc.finish().map(|probs| MaskPlane::new(probs, z, j)))
    }

    pub fn plane_detections(&self, j: usize) -> Result<Vec<Detection>> {
        Ok(match self.mask_plane(j)? {
            Some(mask) => extract_particles(&mask, self.opts.mask_threshold, &self.opts.optics),
            None => Vec::new(),
        })
    }

    /// Runs all planes in parallel on the current rayon pool. The result
    /// does not depend on the pool size.
    pub fn run(&self) -> Result<HologramResult> {
        let per_plane: Vec<Vec<Detection>> =
            (0..self.opts.optics.n_planes).into_par_iter().map(|j| self.plane_detections(j)).collect::<Result<_>>()?;
        let detections: Vec<Detection> = per_plane.into_iter().flatten().collect();
        let clustering = leader_cluster(&detections, &self.opts.matching);
        Ok(HologramResult { hid: self.hid, detections, clustering })
    }
}

/// Processes one hologram end to end.
pub fn process_hologram(
    hid: u32,
    hologram: &IntensityImage,
    opts: &ProcessOptions,
    segmenter: &dyn Segmenter,
) -> Result<HologramResult> {
    HologramJob::new(hid, hologram, opts, segmenter)?.run()
}
