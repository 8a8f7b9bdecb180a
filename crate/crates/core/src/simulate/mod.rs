//! Synthetic particle fields, hologram rendering, truth masks, and
//! training-tile datasets.

mod dataset;
mod render;

pub use dataset::{make_tile_dataset, plan_tile_dataset, ExampleKind, ManifestRecord, TileDatasetSpec, TileExample};
pub use render::{quantize_gray, render_hologram, render_intensity, RenderMode, RenderOptions};

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::OpticalConfig;
use crate::segment::MaskPlane;

/// One spherical particle. Lengths in micrometers; `(x, y)` measured from
/// the center of pixel `(0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub d: f64,
}

impl Particle {
    pub fn new(x: f64, y: f64, z: f64, d: f64) -> Self {
        Self { x, y, z, d }
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x, self.y, self.z, self.d]
    }

    /// Euclidean distance in `(x, y, z, d)`.
    pub fn distance(&self, other: &Particle) -> f64 {
        self.coords().iter().zip(other.coords().iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    pub fn check(&self, cfg: &OpticalConfig) -> Result<()> {
        let ok = self.x >= 0.0
            && self.x < cfg.width_um()
            && self.y >= 0.0
            && self.y < cfg.height_um()
            && self.z >= cfg.z_min_um
            && self.z <= cfg.z_max_um
            && self.d > 0.0
            && self.d.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("particle {self:?} lies outside the instrument volume")))
        }
    }
}

/// Ground-truth or predicted particles of one hologram.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParticleField {
    pub hologram_id: u32,
    pub particles: Vec<Particle>,
}

impl ParticleField {
    pub fn new(hologram_id: u32, particles: Vec<Particle>) -> Self {
        Self { hologram_id, particles }
    }

    pub fn validate(&self, cfg: &OpticalConfig) -> Result<()> {
        self.particles.iter().try_for_each(|p| p.check(cfg))
    }

    /// Particle indices grouped by the depth bin that contains them.
    pub fn by_plane(&self, cfg: &OpticalConfig) -> BTreeMap<usize, Vec<usize>> {
        let mut planes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, p) in self.particles.iter().enumerate() {
            if let Some(j) = cfg.bin_index(p.z) {
                planes.entry(j).or_default().push(i);
            }
        }
        planes
    }
}

/// Gamma-distributed diameters, truncated to `[d_floor_um, d_cap_um]` by
/// rejection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GammaSizeDist {
    pub shape: f64,
    pub scale_um: f64,
    pub d_floor_um: f64,
    pub d_cap_um: f64,
}

impl Default for GammaSizeDist {
    fn default() -> Self {
        Self { shape: 2.0, scale_um: 10.0, d_floor_um: 6.0, d_cap_um: 200.0 }
    }
}

impl GammaSizeDist {
    pub fn validate(&self) -> Result<()> {
        if !(self.shape > 0.0 && self.scale_um > 0.0) {
            return Err(Error::Config("gamma shape and scale must be > 0".into()));
        }
        if !(self.d_floor_um > 0.0 && self.d_floor_um < self.d_cap_um && self.d_cap_um.is_finite()) {
            return Err(Error::Config("diameter bounds must satisfy 0 < d_floor < d_cap".into()));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let gamma = Gamma::new(self.shape, self.scale_um).expect("validated gamma parameters");
        // Rejection keeps the in-range shape intact; after many misses the
        // draw is clamped so a pathological window cannot hang.
        let mut d = gamma.sample(rng);
        for _ in 0..10_000 {
            if (self.d_floor_um..=self.d_cap_um).contains(&d) {
                return d;
            }
            d = gamma.sample(rng);
        }
        d.clamp(self.d_floor_um, self.d_cap_um)
    }
}

/// Hologram counts for the train/validation/test split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { n_train: 100, n_valid: 10, n_test: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl SplitSpec {
    pub fn total(&self) -> usize {
        self.n_train + self.n_valid + self.n_test
    }

    /// Same 100:10:10 proportions, resized to `n` holograms.
    pub fn proportional(n: usize, seed: u64) -> Self {
        let n_valid = (n as f64 / 12.0).round() as usize;
        let n_test = n_valid.min(n - n_valid);
        Self { n_train: n - n_valid - n_test, n_valid, n_test, seed }
    }

    /// Random assignment of hologram ids `0..total` to splits, returned in id order.
    pub fn assign(&self) -> Vec<(u32, Split)> {
        let mut ids: Vec<u32> = (0..self.total() as u32).collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
        let mut out: Vec<(u32, Split)> = ids
            .iter()
            .enumerate()
            .map(|(rank, &id)| {
                let split = if rank < self.n_train {
                    Split::Train
                } else if rank < self.n_train + self.n_valid {
                    Split::Valid
                } else {
                    Split::Test
                };
                (id, split)
            })
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

/// Per-item seed derived from a master seed (splitmix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform positions over the sensor footprint and depth range, truncated
/// gamma diameters. Deterministic in `rng_seed`.
pub fn sample_field(
    cfg: &OpticalConfig,
    hologram_id: u32,
    n_particles: usize,
    dist: &GammaSizeDist,
    rng_seed: u64,
) -> Result<ParticleField> {
    cfg.validate()?;
    dist.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (w, h) = (cfg.width_um(), cfg.height_um());
    let particles = (0..n_particles)
        .map(|_| {
            let x = rng.random_range(0.0..w);
            let y = rng.random_range(0.0..h);
            let z = rng.random_range(cfg.z_min_um..=cfg.z_max_um);
            let d = dist.sample(&mut rng);
            Particle::new(x, y, z, d)
        })
        .collect();
    Ok(ParticleField::new(hologram_id, particles))
}

/// Slack added to disk radii so pixel centers exactly on the rim are not
/// lost to rounding.
const RIM_SLACK_UM: f64 = 1e-6;

/// Pixels `(col, row)` whose centers lie within `d / 2` of `(x, y)`,
/// clipped to an `nx x ny` grid.
pub fn disk_pixels(p: &Particle, cfg: &OpticalConfig) -> Vec<(usize, usize)> {
    disk_pixels_in(p, cfg, (0, 0), (cfg.nx, cfg.ny))
}

/// As [`disk_pixels`], restricted to the window starting at `origin` with
/// extent `size` (columns, rows). Returned coordinates are absolute.
pub fn disk_pixels_in(
    p: &Particle,
    cfg: &OpticalConfig,
    origin: (usize, usize),
    size: (usize, usize),
) -> Vec<(usize, usize)> {
    let r = p.d / 2.0 + RIM_SLACK_UM;
    let (dx, dy) = (cfg.dx_um, cfg.dy_um);
    let range = |c: f64, pitch: f64, lo: usize, len: usize| {
        let first = ((c - r) / pitch).ceil().max(lo as f64);
        let last = ((c + r) / pitch).floor().min((lo + len) as f64 - 1.0);
        (first, last)
    };
    let (c0, c1) = range(p.x, dx, origin.0, size.0);
    let (r0, r1) = range(p.y, dy, origin.1, size.1);
    if c0 > c1 || r0 > r1 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for row in r0 as usize..=r1 as usize {
        let ddy = row as f64 * dy - p.y;
        for col in c0 as usize..=c1 as usize {
            let ddx = col as f64 * dx - p.x;
            if ddx * ddx + ddy * ddy <= r * r {
                out.push((col, row));
            }
        }
    }
    out
}

/// Filled truth disks, one binary plane per occupied depth bin, in plane order.
pub fn render_truth_masks(field: &ParticleField, cfg: &OpticalConfig) -> Vec<MaskPlane> {
    field
        .by_plane(cfg)
        .into_iter()
        .map(|(j, members)| {
            let mut probs = Array2::<f32>::zeros((cfg.ny, cfg.nx));
            for i in members {
                for (col, row) in disk_pixels(&field.particles[i], cfg) {
                    probs[[row, col]] = 1.0;
                }
            }
            MaskPlane::new(probs, cfg.plane_center(j), j)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> OpticalConfig {
        OpticalConfig { nx: 64, ny: 48, ..OpticalConfig::default() }
    }

    #[test]
    fn empty_and_deterministic_fields() {
        let c = OpticalConfig::default();
        let d = GammaSizeDist::default();
        assert!(sample_field(&c, 0, 0, &d, 1).unwrap().particles.is_empty());
        let a = sample_field(&c, 0, 500, &d, 42).unwrap();
        let b = sample_field(&c, 0, 500, &d, 42).unwrap();
        assert_eq!(a, b);
        a.validate(&c).unwrap();
        for p in &a.particles {
            assert!((14_072.0..=158_928.0).contains(&p.z));
            assert!((d.d_floor_um..=d.d_cap_um).contains(&p.d));
        }
        assert_ne!(a, sample_field(&c, 0, 500, &d, 43).unwrap());
    }

    #[test]
    fn two_pixel_disk_has_five_pixels() {
        let c = cfg();
        let p = Particle::new(10.0 * c.dx_um, 10.0 * c.dy_um, c.z_min_um, 2.0 * c.dx_um);
        let px = disk_pixels(&p, &c);
        // Brute-force rasterization in integer pixel units, radius 1 px.
        let mut brute = Vec::new();
        for row in 0..c.ny as i64 {
            for col in 0..c.nx as i64 {
                if (col - 10).pow(2) + (row - 10).pow(2) <= 1 {
                    brute.push((col as usize, row as usize));
                }
            }
        }
        assert_eq!(px, brute);
        assert_eq!(px.len(), 5);
    }

    #[test]
    fn window_clipping_matches_full_raster() {
        let c = cfg();
        let p = Particle::new(31.3 * c.dx_um, 20.7 * c.dy_um, c.z_min_um, 9.5 * c.dx_um);
        let full = disk_pixels(&p, &c);
        let win = disk_pixels_in(&p, &c, (30, 18), (8, 8));
        let want: Vec<_> = full.into_iter().filter(|&(x, y)| (30..38).contains(&x) && (18..26).contains(&y)).collect();
        assert_eq!(win, want);
    }

    #[test]
    fn truth_masks_group_by_bin() {
        let c = OpticalConfig { n_planes: 10, ..cfg() };
        assert!(render_truth_masks(&ParticleField::default(), &c).is_empty());
        let z = c.plane_center(3);
        let f = ParticleField::new(
            0,
            vec![
                Particle::new(10.0 * c.dx_um, 10.0 * c.dy_um, z, 4.0 * c.dx_um),
                Particle::new(40.0 * c.dx_um, 30.0 * c.dy_um, z + 1.0, 4.0 * c.dx_um),
            ],
        );
        let masks = render_truth_masks(&f, &c);
        assert_eq!(masks.len(), 1);
        assert_eq!(masks[0].plane_index, 3);
        let on = masks[0].probs.iter().filter(|&&v| v == 1.0).count();
        assert_eq!(on, 2 * disk_pixels(&f.particles[0], &c).len());
    }

    #[test]
    fn splits_partition_ids() {
        let s = SplitSpec::default();
        let a = s.assign();
        assert_eq!(a.len(), 120);
        assert_eq!(a.iter().filter(|(_, s)| *s == Split::Train).count(), 100);
        assert_eq!(a.iter().filter(|(_, s)| *s == Split::Valid).count(), 10);
        assert_eq!(a.iter().filter(|(_, s)| *s == Split::Test).count(), 10);
        assert_eq!(a, s.assign());
        let p = SplitSpec::proportional(12, 0);
        assert_eq!((p.n_train, p.n_valid, p.n_test), (10, 1, 1));
        assert_eq!(SplitSpec::proportional(1, 0).total(), 1);
    }
}
