//! Balanced training tiles: one in-focus positive per particle plus
//! near-focus and random particle-free negatives.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{disk_pixels_in, ParticleField};
use crate::error::{Error, Result};
use crate::io::{write_mask_pgm, write_raw_f32, RawHeader};
use crate::optics::{IntensityImage, OpticalConfig, Propagator, Refocuser};
use crate::tiling::{build_grid, extract, TileGrid, TileSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TileDatasetSpec {
    pub tile: TileSpec,
    pub n_negatives: usize,
    pub frac_near_focus: f64,
    /// Gray level of an empty hologram; holograms are divided by it before refocusing.
    pub background_level: f64,
    pub seed: u64,
}

impl Default for TileDatasetSpec {
    fn default() -> Self {
        Self { tile: TileSpec::default(), n_negatives: 0, frac_near_focus: 0.5, background_level: 127.0, seed: 0 }
    }
}

impl TileDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        self.tile.validate()?;
        if !(0.0..=1.0).contains(&self.frac_near_focus) {
            return Err(Error::Config(format!("frac_near_focus must be in [0, 1], got {}", self.frac_near_focus)));
        }
        if !(self.background_level > 0.0) {
            return Err(Error::Config("background_level must be positive".into()));
        }
        Ok(())
    }

    pub fn n_near_focus(&self) -> usize {
        (self.frac_near_focus * self.n_negatives as f64).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleKind {
    Positive,
    NearFocus,
    Random,
}

/// One planned tile: which hologram, plane and grid tile to cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TileExample {
    pub hid: u32,
    pub plane: usize,
    pub tile_index: usize,
    pub kind: ExampleKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub tile_path: String,
    pub mask_path: String,
    pub hid: u32,
    pub plane: usize,
    pub tile_index: usize,
    /// 1 for an in-focus positive, 0 for negatives.
    pub label: u8,
    pub kind: ExampleKind,
}

fn center_pixel(x: f64, pitch: f64, n: usize) -> usize {
    ((x / pitch).round().max(0.0) as usize).min(n - 1)
}

/// Chooses every example without touching pixels. Deterministic in `spec.seed`.
pub fn plan_tile_dataset(
    truths: &[ParticleField],
    cfg: &OpticalConfig,
    spec: &TileDatasetSpec,
) -> Result<Vec<TileExample>> {
    cfg.validate()?;
    spec.validate()?;
    let grid = build_grid(cfg.nx, cfg.ny, &spec.tile, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::new();

    // (hid, particle center tile candidates, bin)
    let mut anchors = Vec::new();
    for field in truths {
        for p in &field.particles {
            let plane =
                cfg.bin_index(p.z).ok_or_else(|| Error::Config(format!("particle depth {} outside range", p.z)))?;
            let col = center_pixel(p.x, cfg.dx_um, cfg.nx);
            let row = center_pixel(p.y, cfg.dy_um, cfg.ny);
            let tiles = grid.tiles_containing(col, row);
            let &tile_index = tiles.choose(&mut rng).expect("grid covers every pixel");
            out.push(TileExample { hid: field.hologram_id, plane, tile_index, kind: ExampleKind::Positive });
            anchors.push((field.hologram_id, plane, tiles));
        }
    }

    let n_near = spec.n_near_focus();
    if n_near > 0 && anchors.is_empty() {
        return Err(Error::InsufficientNegatives { needed: n_near, found: 0 });
    }
    for _ in 0..n_near {
        let (hid, plane, tiles) = anchors.choose(&mut rng).expect("non-empty");
        let up = rng.random_bool(0.5);
        let plane = match (up, *plane) {
            (true, j) if j + 1 < cfg.n_planes => j + 1,
            (false, j) if j > 0 => j - 1,
            (_, j) if j + 1 < cfg.n_planes => j + 1,
            (_, j) => j.saturating_sub(1),
        };
        let &tile_index = tiles.choose(&mut rng).expect("non-empty");
        out.push(TileExample { hid: *hid, plane, tile_index, kind: ExampleKind::NearFocus });
    }

    let n_random = spec.n_negatives - n_near;
    if n_random > 0 {
        if truths.is_empty() {
            return Err(Error::InsufficientNegatives { needed: n_random, found: 0 });
        }
        let occupied: Vec<BTreeMap<usize, Vec<usize>>> = truths.iter().map(|f| f.by_plane(cfg)).collect();
        let max_attempts = 100 * n_random + 1000;
        let mut found = 0;
        for _ in 0..max_attempts {
            if found == n_random {
                break;
            }
            let h = rng.random_range(0..truths.len());
            let plane = rng.random_range(0..cfg.n_planes);
            let tile_index = rng.random_range(0..grid.len());
            let clear = occupied[h].get(&plane).is_none_or(|members| {
                members.iter().all(|&i| !touches(&truths[h].particles[i], cfg, &grid, tile_index))
            });
            if clear {
                out.push(TileExample { hid: truths[h].hologram_id, plane, tile_index, kind: ExampleKind::Random });
                found += 1;
            }
        }
        if found < n_random {
            return Err(Error::InsufficientNegatives { needed: n_random, found });
        }
    }
    Ok(out)
}

fn touches(p: &super::Particle, cfg: &OpticalConfig, grid: &TileGrid, index: usize) -> bool {
    let (x0, y0) = grid.positions[index];
    !disk_pixels_in(p, cfg, (x0, y0), (grid.tile, grid.tile)).is_empty()
}

fn truth_tile(field: &ParticleField, cfg: &OpticalConfig, grid: &TileGrid, plane: usize, index: usize) -> Array2<f32> {
    let (x0, y0) = grid.positions[index];
    let mut mask = Array2::<f32>::zeros((grid.tile, grid.tile));
    for p in field.particles.iter().filter(|p| cfg.bin_index(p.z) == Some(plane)) {
        for (col, row) in disk_pixels_in(p, cfg, (x0, y0), (grid.tile, grid.tile)) {
            mask[[row - y0, col - x0]] = 1.0;
        }
    }
    mask
}

/// Plans the dataset, then refocuses each hologram at the planned planes
/// and writes amplitude tiles (`.f32` + header), truth mask tiles (PGM)
/// and `manifest.jsonl` under `out_dir`. Paths in the manifest are
/// relative to `out_dir`.
pub fn make_tile_dataset(
    holograms: &[IntensityImage],
    truths: &[ParticleField],
    cfg: &OpticalConfig,
    spec: &TileDatasetSpec,
    out_dir: &Path,
) -> Result<Vec<ManifestRecord>> {
    if holograms.len() != truths.len() {
        return Err(Error::LengthMismatch { left: holograms.len(), right: truths.len() });
    }
    let mut plan = plan_tile_dataset(truths, cfg, spec)?;
    let grid = build_grid(cfg.nx, cfg.ny, &spec.tile, true)?;
    let index_of: BTreeMap<u32, usize> = truths.iter().enumerate().map(|(i, f)| (f.hologram_id, i)).collect();
    plan.sort();

    fs::create_dir_all(out_dir.join("tiles"))?;
    fs::create_dir_all(out_dir.join("masks"))?;
    let mut manifest = BufWriter::new(fs::File::create(out_dir.join("manifest.jsonl"))?);
    let prop = Propagator::new(cfg)?;
    let cfg_hash = cfg.hash();
    let mut records = Vec::with_capacity(plan.len());

    let mut k = 0;
    while k < plan.len() {
        let hid = plan[k].hid;
        let h = index_of[&hid];
        let h_c = IntensityImage::new(holograms[h].values().mapv(|v| v / spec.background_level));
        let refocus = Refocuser::with_propagator(&h_c, prop.clone())?;
        while k < plan.len() && plan[k].hid == hid {
            let plane = plan[k].plane;
            let z = cfg.plane_center(plane);
            let amp = refocus.amplitude_at(z);
            while k < plan.len() && plan[k].hid == hid && plan[k].plane == plane {
                let ex = plan[k];
                let stem = format!("h{hid}_p{plane}_t{}_{k}", ex.tile_index);
                let tile_path = format!("tiles/{stem}.f32");
                let mask_path = format!("masks/{stem}.pgm");
                let tile = extract(amp.values().view(), &grid, ex.tile_index)?.mapv(|v| v as f32);
                let mut header = RawHeader::new(grid.tile, grid.tile, "amplitude");
                header.z_um = Some(z);
                header.cfg_hash = Some(cfg_hash.clone());
                write_raw_f32(&out_dir.join(&tile_path), &tile, &header)?;
                write_mask_pgm(&out_dir.join(&mask_path), &truth_tile(&truths[h], cfg, &grid, plane, ex.tile_index))?;
                let rec = ManifestRecord {
                    tile_path,
                    mask_path,
                    hid,
                    plane,
                    tile_index: ex.tile_index,
                    label: u8::from(ex.kind == ExampleKind::Positive),
                    kind: ex.kind,
                };
                serde_json::to_writer(&mut manifest, &rec)?;
                manifest.write_all(b"\n")?;
                records.push(rec);
                k += 1;
            }
        }
    }
    manifest.flush()?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{derive_seed, sample_field, GammaSizeDist, Particle};

    #[test]
    fn full_size_training_set_has_100k_examples() {
        let cfg = OpticalConfig::default();
        let dist = GammaSizeDist::default();
        let truths: Vec<_> =
            (0..100u32).map(|h| sample_field(&cfg, h, 500, &dist, derive_seed(3, h as u64)).unwrap()).collect();
        let spec = TileDatasetSpec { n_negatives: 50_000, seed: 9, ..Default::default() };
        let plan = plan_tile_dataset(&truths, &cfg, &spec).unwrap();
        assert_eq!(plan.len(), 100_000);
        let near = plan.iter().filter(|e| e.kind == ExampleKind::NearFocus).count();
        assert_eq!(near, 25_000);
    }

    #[test]
    fn counts_and_near_focus_split() {
        let cfg = OpticalConfig { nx: 64, ny: 64, n_planes: 50, ..Default::default() };
        let spec = TileDatasetSpec { tile: TileSpec { tile: 32, step: 16 }, n_negatives: 0, ..Default::default() };
        let one = ParticleField::new(0, vec![Particle::new(50.0, 60.0, 50_000.0, 20.0)]);
        assert_eq!(plan_tile_dataset(std::slice::from_ref(&one), &cfg, &spec).unwrap().len(), 1);

        let spec = TileDatasetSpec { n_negatives: 100, ..spec };
        let plan = plan_tile_dataset(std::slice::from_ref(&one), &cfg, &spec).unwrap();
        let bin = cfg.bin_index(50_000.0).unwrap();
        let near: Vec<_> = plan.iter().filter(|e| e.kind == ExampleKind::NearFocus).collect();
        assert_eq!(near.len(), 50);
        assert!(near.iter().all(|e| e.plane.abs_diff(bin) == 1));
        assert_eq!(plan.iter().filter(|e| e.kind == ExampleKind::Random).count(), 50);
        assert_eq!(plan, plan_tile_dataset(&[one], &cfg, &spec).unwrap());
    }

    #[test]
    fn no_free_tiles_is_an_error() {
        let cfg = OpticalConfig { nx: 32, ny: 32, n_planes: 1, ..Default::default() };
        let spec = TileDatasetSpec {
            tile: TileSpec { tile: 32, step: 32 },
            n_negatives: 2,
            frac_near_focus: 0.0,
            ..Default::default()
        };
        let field = ParticleField::new(0, vec![Particle::new(40.0, 40.0, 50_000.0, 20.0)]);
        assert!(matches!(
            plan_tile_dataset(&[field], &cfg, &spec),
            Err(Error::InsufficientNegatives { needed: 2, found: 0 })
        ));
    }

    #[test]
    fn writes_tiles_masks_and_manifest() {
        let cfg = OpticalConfig { nx: 64, ny: 64, n_planes: 20, ..Default::default() };
        let field = ParticleField::new(4, vec![Particle::new(90.0, 90.0, 60_000.0, 30.0)]);
        let holo = IntensityImage::filled(64, 64, 127.0);
        let spec = TileDatasetSpec { tile: TileSpec { tile: 32, step: 16 }, n_negatives: 2, ..Default::default() };
        let dir = tempfile::tempdir().unwrap();
        let recs = make_tile_dataset(&[holo], &[field], &cfg, &spec, dir.path()).unwrap();
        assert_eq!(recs.len(), 3);
        let text = fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 3);
        let pos = recs.iter().find(|r| r.label == 1).unwrap();
        let mask = crate::io::read_mask_file(&dir.path().join(&pos.mask_path)).unwrap();
        assert!(mask.iter().filter(|&&v| v == 1.0).count() > 50);
        let (_, tile) = crate::io::read_raw_f32(&dir.path().join(&pos.tile_path)).unwrap();
        assert!(tile.iter().all(|&v| (v - 1.0).abs() < 1e-5));
    }
}
