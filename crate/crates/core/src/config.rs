//! TOML pipeline configuration. Every section and key is optional and
//! falls back to its default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detect3d::MatchSpec;
use crate::error::{Error, Result};
use crate::optics::OpticalConfig;
use crate::pipeline::{Background, ProcessOptions};
use crate::segment::FocusSegmenter;
use crate::simulate::{GammaSizeDist, RenderOptions, SplitSpec, TileDatasetSpec};
use crate::tiling::TileSpec;
use crate::transforms::{CorruptionSpec, ValueTransform};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "HOLORECON_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TileConfig {
    pub tile: usize,
    pub step: usize,
    pub dedup: bool,
}

impl Default for TileConfig {
    fn default() -> Self {
        let t = TileSpec::default();
        Self { tile: t.tile, step: t.step, dedup: true }
    }
}

impl TileConfig {
    pub fn spec(&self) -> TileSpec {
        TileSpec { tile: self.tile, step: self.step }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub mask_threshold: f32,
    /// Gray level of an empty hologram, used to normalize inputs.
    pub background_level: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self { mask_threshold: 0.5, background_level: 127.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmenterKind {
    /// Rasterized truth disks; needs truth particles.
    #[default]
    Oracle,
    Focus,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub kind: SegmenterKind,
    pub amp_thresh: f64,
    pub min_px: usize,
    /// Directory that relative mask paths resolve against.
    pub mask_dir: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        let f = FocusSegmenter::default();
        Self { kind: SegmenterKind::Oracle, amp_thresh: f.amp_thresh, min_px: f.min_px, mask_dir: None, manifest: None }
    }
}

impl SegmenterConfig {
    pub fn focus(&self) -> FocusSegmenter {
        FocusSegmenter { amp_thresh: self.amp_thresh, min_px: self.min_px }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformConfig {
    /// Applied to each reconstructed plane.
    pub plane_transform: ValueTransform,
    /// Applied to each tile before segmentation.
    pub value_transform: ValueTransform,
    pub blur_sigma_max: f64,
    pub noise_sigma_max: f64,
    pub brightness_max: f64,
    pub flip_prob: f64,
}

impl Default for TransformConfig {
    fn default() -> Self {
        let c = CorruptionSpec::default();
        Self {
            plane_transform: ValueTransform::None,
            value_transform: ValueTransform::None,
            blur_sigma_max: c.blur_sigma_max,
            noise_sigma_max: c.noise_sigma_max,
            brightness_max: c.brightness_max,
            flip_prob: c.flip_prob,
        }
    }
}

impl TransformConfig {
    pub fn corruption(&self, seed: u64) -> CorruptionSpec {
        CorruptionSpec {
            blur_sigma_max: self.blur_sigma_max,
            noise_sigma_max: self.noise_sigma_max,
            brightness_max: self.brightness_max,
            flip_prob: self.flip_prob,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub n_holograms: usize,
    pub n_particles: usize,
    pub gamma: GammaSizeDist,
    pub render: RenderOptions,
    /// When absent, holograms are split 100:10:10 proportionally.
    pub split: Option<SplitSpec>,
    pub n_negatives: usize,
    pub frac_near_focus: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_holograms: 120,
            n_particles: 500,
            gamma: GammaSizeDist::default(),
            render: RenderOptions::default(),
            split: None,
            n_negatives: 0,
            frac_near_focus: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { seed: 0, workers: 1, out_dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub run: RunConfig,
    pub optics: OpticalConfig,
    pub tiles: TileConfig,
    pub matching: MatchSpec,
    pub detection: DetectionConfig,
    pub segmenter: SegmenterConfig,
    pub transforms: TransformConfig,
    pub simulation: SimulationConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.optics.validate()?;
        self.tiles.spec().validate()?;
        self.matching.validate()?;
        self.transforms.corruption(self.run.seed).validate()?;
        self.simulation.gamma.validate()?;
        if self.run.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if self.segmenter.kind == SegmenterKind::Focus {
            self.segmenter.focus().validate()?;
        }
        self.process_options().validate()?;
        self.dataset_spec().validate()
    }

    pub fn process_options(&self) -> ProcessOptions {
        ProcessOptions {
            optics: self.optics,
            tiles: self.tiles.spec(),
            dedup: self.tiles.dedup,
            matching: self.matching,
            mask_threshold: self.detection.mask_threshold,
            plane_transform: self.transforms.plane_transform,
            tile_transform: self.transforms.value_transform,
            background: Background::Level(self.detection.background_level),
            force_reconstruct: false,
        }
    }

    pub fn dataset_spec(&self) -> TileDatasetSpec {
        TileDatasetSpec {
            tile: self.tiles.spec(),
            n_negatives: self.simulation.n_negatives,
            frac_near_focus: self.simulation.frac_near_focus,
            background_level: self.detection.background_level,
            seed: self.run.seed,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file, or the defaults when `path` is `None` and the
    /// environment variable is unset.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match path.map(Path::to_path_buf).or(env) {
            Some(p) => {
                let text = std::fs::read_to_string(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                parse_config(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
            None => Ok(Self::default()),
        }
    }
}

/// Parses TOML text. Unknown keys are rejected so typos surface.
pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let de = toml::Deserializer::new(text);
    let mut unknown = Vec::new();
    let cfg: PipelineConfig = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
        .map_err(|e| Error::Config(e.to_string()))?;
    if !unknown.is_empty() {
        return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(parse_config(&text).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn edited_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.optics.nx = 1024;
        cfg.tiles.dedup = false;
        cfg.segmenter.kind = SegmenterKind::External;
        cfg.segmenter.manifest = Some(PathBuf::from("masks/manifest.jsonl"));
        cfg.transforms.value_transform = ValueTransform::Symmetric;
        cfg.simulation.split = Some(SplitSpec { n_train: 8, n_valid: 1, n_test: 1, seed: 4 });
        cfg.matching.weights = [1.0, 1.0, 0.5, 2.0];
        assert_eq!(parse_config(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = parse_config("[optics]\nnx = 1024\nny = 768\n[matching]\nthreshold_um = 500.0\n").unwrap();
        assert_eq!(cfg.optics.nx, 1024);
        assert_eq!(cfg.optics.n_planes, 1000);
        assert_eq!(cfg.matching.threshold_um, 500.0);
        assert_eq!(cfg.tiles.tile, 512);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(parse_config("[optics]\nnxx = 3\n").is_err());
        assert!(parse_config("[optics]\nnx = \"a\"\n").is_err());
        let cfg = parse_config("[run]\nworkers = 0\n").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = parse_config("[tiles]\nstep = 0\n").unwrap();
        assert!(cfg.validate().is_err());
    }
}
