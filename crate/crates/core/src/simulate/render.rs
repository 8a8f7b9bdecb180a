use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{disk_pixels, ParticleField};
use crate::error::Result;
use crate::optics::{ComplexField, IntensityImage, OpticalConfig, Propagator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    /// Each particle's scattered field is computed independently and summed.
    #[default]
    Superposition,
    /// The beam is occluded particle by particle from the far end toward the
    /// camera.
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub mode: RenderMode,
    /// Gray level of the empty-field background.
    pub background_level: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { mode: RenderMode::Superposition, background_level: 127.0 }
    }
}

/// Camera-plane intensity `|E_cam|^2`, normalized so the unobstructed beam
/// has intensity 1.
///
/// Fields are expressed relative to the plane-wave reference, so the
/// hologram refocuses with [`crate::optics::propagate`] at `+z`.
pub fn render_intensity(field: &ParticleField, cfg: &OpticalConfig, mode: RenderMode) -> Result<IntensityImage> {
    field.validate(cfg)?;
    if field.particles.is_empty() {
        return Ok(IntensityImage::filled(cfg.nx, cfg.ny, 1.0));
    }
    let prop = Propagator::new(cfg)?;
    let camera = match mode {
        RenderMode::Superposition => superpose(field, cfg, &prop)?,
        RenderMode::Sequential => occlude(field, cfg, &prop)?,
    };
    Ok(camera.intensity())
}

/// `E_cam = 1 - sum_p P_rel(A_p, -z_p)`, accumulated in the Fourier domain
/// so only one inverse transform is needed.
fn superpose(field: &ParticleField, cfg: &OpticalConfig, prop: &Propagator) -> Result<ComplexField> {
    let mut total = Array2::<Complex64>::zeros((cfg.ny, cfg.nx));
    for p in &field.particles {
        let mut disk = Array2::<Complex64>::zeros((cfg.ny, cfg.nx));
        for (col, row) in disk_pixels(p, cfg) {
            disk[[row, col]] = Complex64::new(1.0, 0.0);
        }
        let mut spectrum = prop.forward_spectrum(disk)?;
        prop.apply_relative(&mut spectrum, -p.z);
        total += &spectrum;
    }
    prop.fft().inverse(&mut total);
    total.mapv_inplace(|s| Complex64::new(1.0, 0.0) - s);
    Ok(ComplexField::new(total))
}

fn occlude(field: &ParticleField, cfg: &OpticalConfig, prop: &Propagator) -> Result<ComplexField> {
    let mut order: Vec<usize> = (0..field.particles.len()).collect();
    order.sort_by(|&a, &b| field.particles[b].z.total_cmp(&field.particles[a].z).then(a.cmp(&b)));

    warn_overlaps(field);

    let mut current = ComplexField::new(Array2::from_elem((cfg.ny, cfg.nx), Complex64::new(1.0, 0.0)));
    let mut z_here = field.particles[order[0]].z;
    for &i in &order {
        let p = &field.particles[i];
        if z_here > p.z {
            current = prop.propagate_relative(&current, -(z_here - p.z))?;
            z_here = p.z;
        }
        let mut values = current.into_values();
        for (col, row) in disk_pixels(p, cfg) {
            values[[row, col]] = Complex64::default();
        }
        current = ComplexField::new(values);
    }
    prop.propagate_relative(&current, -z_here)
}

fn warn_overlaps(field: &ParticleField) {
    let ps = &field.particles;
    for i in 0..ps.len() {
        for j in i + 1..ps.len() {
            let gap = (ps[i].x - ps[j].x).hypot(ps[i].y - ps[j].y);
            if gap < (ps[i].d + ps[j].d) / 2.0 {
                log::warn!("hologram {}: particles {i} and {j} overlap in projection", field.hologram_id);
            }
        }
    }
}

/// Scales intensity so 1.0 maps to `background_level`, then clips to
/// `[0, 255]` and rounds to integer gray levels.
pub fn quantize_gray(intensity: &IntensityImage, background_level: f64) -> IntensityImage {
    IntensityImage::new(intensity.values().mapv(|v| (v * background_level).clamp(0.0, 255.0).round()))
}

/// Rendered 8-bit hologram (integer gray levels stored as `f64`).
pub fn render_hologram(field: &ParticleField, cfg: &OpticalConfig, opts: &RenderOptions) -> Result<IntensityImage> {
    let intensity = render_intensity(field, cfg, opts.mode)?;
    Ok(quantize_gray(&intensity, opts.background_level))
}
