//! Angular-spectrum propagation and hologram refocusing.
//!
//! Coordinates: the camera plane is `z = 0` and particle depths are positive
//! distances from it. Pixel `(col, row)` has its center at
//! `(col * dx, row * dy)` micrometers. Grids are stored row-major with shape
//! `(ny, nx)`.
//!
//! The transfer function is `exp(j 2 pi z / lambda * sqrt(1 - lambda^2 rho^2))`
//! on the propagating band `lambda * rho < 1` and zero outside it, so
//! propagation is exactly unitary on band-limited fields.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fft::Fft2;

/// Instrument geometry. Lengths are in micrometers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpticalConfig {
    pub wavelength_um: f64,
    pub dx_um: f64,
    pub dy_um: f64,
    pub nx: usize,
    pub ny: usize,
    pub z_min_um: f64,
    pub z_max_um: f64,
    pub n_planes: usize,
}

impl Default for OpticalConfig {
    /// HOLODEC geometry: 355 nm laser, 2.96 um pixels, 4872x3248 sensor,
    /// 14.072-158.928 mm depth range, 1000 planes.
    fn default() -> Self {
        Self {
            wavelength_um: 0.355,
            dx_um: 2.96,
            dy_um: 2.96,
            nx: 4872,
            ny: 3248,
            z_min_um: 14_072.0,
            z_max_um: 158_928.0,
            n_planes: 1000,
        }
    }
}

impl OpticalConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if !finite_pos(self.wavelength_um) {
            return Err(Error::Config(format!("wavelength must be > 0, got {}", self.wavelength_um)));
        }
        if !finite_pos(self.dx_um) || !finite_pos(self.dy_um) {
            return Err(Error::Config(format!("pixel pitch must be > 0, got {} x {}", self.dx_um, self.dy_um)));
        }
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::Config(format!("sensor must be at least 2x2, got {}x{}", self.nx, self.ny)));
        }
        if !(self.z_min_um.is_finite() && self.z_max_um.is_finite() && self.z_min_um < self.z_max_um) {
            return Err(Error::Config(format!(
                "z range must satisfy z_min < z_max, got [{}, {}]",
                self.z_min_um, self.z_max_um
            )));
        }
        if self.n_planes == 0 {
            return Err(Error::Config("n_planes must be >= 1".into()));
        }
        Ok(())
    }

    pub fn width_um(&self) -> f64 {
        self.nx as f64 * self.dx_um
    }

    pub fn height_um(&self) -> f64 {
        self.ny as f64 * self.dy_um
    }

    /// Distance between neighbouring plane centers.
    pub fn plane_spacing(&self) -> f64 {
        (self.z_max_um - self.z_min_um) / self.n_planes as f64
    }

    /// Index of the depth bin containing `z`. Bins are half-open
    /// `[lo, hi)`, except that `z_max` itself falls in the last bin.
    pub fn bin_index(&self, z: f64) -> Option<usize> {
        if !(z >= self.z_min_um && z <= self.z_max_um) {
            return None;
        }
        let frac = (z - self.z_min_um) * self.n_planes as f64 / (self.z_max_um - self.z_min_um);
        Some((frac.floor() as usize).min(self.n_planes - 1))
    }

    /// Center of bin `j`.
    pub fn plane_center(&self, j: usize) -> f64 {
        self.z_min_um + (j as f64 + 0.5) * (self.z_max_um - self.z_min_um) / self.n_planes as f64
    }

    /// Short stable fingerprint of the geometry, recorded in output headers.
    pub fn hash(&self) -> String {
        let canonical = format!(
            "wavelength_um={:e};dx_um={:e};dy_um={:e};nx={};ny={};z_min_um={:e};z_max_um={:e};n_planes={}",
            self.wavelength_um, self.dx_um, self.dy_um, self.nx, self.ny, self.z_min_um, self.z_max_um, self.n_planes
        );
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(&digest[..8])
    }

    fn check_dims(&self, nx: usize, ny: usize) -> Result<()> {
        if nx != self.nx || ny != self.ny {
            return Err(Error::Dimensions { expected_nx: self.nx, expected_ny: self.ny, nx, ny });
        }
        Ok(())
    }
}

/// Complex field amplitude on the sensor grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    values: Array2<Complex64>,
}

impl ComplexField {
    /// `values` has shape `(ny, nx)`.
    pub fn new(values: Array2<Complex64>) -> Self {
        Self { values }
    }

    pub fn from_intensity(img: &IntensityImage) -> Self {
        Self::new(img.values().mapv(|v| Complex64::new(v, 0.0)))
    }

    pub fn nx(&self) -> usize {
        self.values.ncols()
    }

    pub fn ny(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<Complex64> {
        self.values
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn amplitude(&self) -> IntensityImage {
        IntensityImage::new(self.values.mapv(|v| v.norm()))
    }

    pub fn intensity(&self) -> IntensityImage {
        IntensityImage::new(self.values.mapv(|v| v.norm_sqr()))
    }
}

/// Real-valued image: camera counts, normalized intensity, or amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityImage {
    values: Array2<f64>,
}

impl IntensityImage {
    /// `values` has shape `(ny, nx)`.
    pub fn new(values: Array2<f64>) -> Self {
        Self { values }
    }

    pub fn filled(nx: usize, ny: usize, value: f64) -> Self {
        Self::new(Array2::from_elem((ny, nx), value))
    }

    pub fn nx(&self) -> usize {
        self.values.ncols()
    }

    pub fn ny(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    /// Pixel at column `x`, row `y`.
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[[y, x]]
    }
}

/// Radial spatial frequency (cycles/um) of every DFT bin, DC at `[0, 0]`.
pub fn frequency_grid(cfg: &OpticalConfig) -> Array2<f64> {
    let fx = fft_frequencies(cfg.nx, cfg.dx_um);
    let fy = fft_frequencies(cfg.ny, cfg.dy_um);
    Array2::from_shape_fn((cfg.ny, cfg.nx), |(v, u)| fx[u].hypot(fy[v]))
}

/// Discrete Fourier frequencies for `n` samples spaced `d` apart, in the
/// usual `[0, 1, ..., -2, -1] / (n d)` order.
pub fn fft_frequencies(n: usize, d: f64) -> Vec<f64> {
    let span = n as f64 * d;
    (0..n)
        .map(|k| {
            let signed = if k <= (n - 1) / 2 { k as f64 } else { k as f64 - n as f64 };
            signed / span
        })
        .collect()
}

/// Axial spatial frequencies in cycles per um, tabulated over one quadrant
/// of the spectrum: the transfer function only depends on `|fx|` and
/// `|fy|`. NaN marks evanescent bins.
#[derive(Debug, Clone)]
struct AxialTerm {
    // sqrt(1 - lambda^2 rho^2) / lambda.
    full: Array2<f64>,
    // lambda rho^2 / (1 + sqrt(1 - lambda^2 rho^2)), the full term
    // subtracted from 1 / lambda without cancellation.
    reduced: Array2<f64>,
    // Quadrant row / column of each spectrum row / column.
    qy: Vec<usize>,
    qx: Vec<usize>,
}

/// `exp(j 2 pi z f)`, reducing the cycle count `z f` modulo 1 before the
/// trigonometry. The rounding error of the product is recovered with a
/// fused multiply-add, so large `z` keeps full phase precision.
fn phase(z: f64, f: f64) -> Complex64 {
    let p = z * f;
    let err = z.mul_add(f, -p);
    Complex64::cis(2.0 * PI * ((p - p.round()) + err))
}

fn fold(n: usize) -> Vec<usize> {
    (0..n).map(|k| k.min(n - k)).collect()
}

impl AxialTerm {
    fn new(cfg: &OpticalConfig) -> Self {
        let lambda = cfg.wavelength_um;
        let fx = fft_frequencies(cfg.nx, cfg.dx_um);
        let fy = fft_frequencies(cfg.ny, cfg.dy_um);
        let quadrant = (cfg.ny / 2 + 1, cfg.nx / 2 + 1);
        let rho = Array2::from_shape_fn(quadrant, |(r, c)| fx[c].hypot(fy[r]));
        let cos_theta = rho.mapv(|r| {
            let s = lambda * lambda * r * r;
            if s < 1.0 {
                (1.0 - s).sqrt()
            } else {
                f64::NAN
            }
        });
        let full = cos_theta.mapv(|c| c / lambda);
        let reduced =
            Zip::from(&rho)
                .and(&cos_theta)
                .map_collect(|&r, &c| if c.is_nan() { f64::NAN } else { lambda * r * r / (1.0 + c) });
        Self { full, reduced, qy: fold(cfg.ny), qx: fold(cfg.nx) }
    }

    fn multiply(&self, spectrum: &mut Array2<Complex64>, freqs: &Array2<f64>, z: f64) {
        let mut table = Array2::<Complex64>::zeros(freqs.dim());
        Zip::from(&mut table).and(freqs).par_for_each(|t, &f| {
            if !f.is_nan() {
                *t = phase(z, f);
            }
        });
        spectrum.axis_iter_mut(Axis(0)).into_par_iter().enumerate().for_each(|(r, mut row)| {
            let h = table.row(self.qy[r]);
            for (v, &q) in row.iter_mut().zip(&self.qx) {
                *v *= h[q];
            }
        });
    }

    /// Multiplies `spectrum` by the full transfer function for distance `z`.
    fn apply(&self, spectrum: &mut Array2<Complex64>, z: f64) {
        self.multiply(spectrum, &self.full, z);
    }

    /// Same as [`apply`](Self::apply) with the on-axis plane-wave phase
    /// `exp(j 2 pi z / lambda)` divided out.
    fn apply_relative(&self, spectrum: &mut Array2<Complex64>, z: f64) {
        self.multiply(spectrum, &self.reduced, -z);
    }
}

/// Propagates `field` a signed distance `z` (um) with the angular-spectrum
/// transfer function. `z = 0` is the identity up to round-off.
pub fn propagate(field: &ComplexField, z: f64, cfg: &OpticalConfig) -> Result<ComplexField> {
    cfg.check_dims(field.nx(), field.ny())?;
    let fft = Fft2::new(cfg.nx, cfg.ny);
    let axial = AxialTerm::new(cfg);
    let mut data = field.values.clone();
    fft.forward(&mut data);
    axial.apply(&mut data, z);
    fft.inverse(&mut data);
    Ok(ComplexField::new(data))
}

/// Propagation relative to the co-propagating plane-wave reference: equal to
/// `exp(-j 2 pi z / lambda) * propagate(field, z)`. A uniform field is left
/// unchanged, which is what forward hologram synthesis needs.
pub fn propagate_relative(field: &ComplexField, z: f64, cfg: &OpticalConfig) -> Result<ComplexField> {
    cfg.check_dims(field.nx(), field.ny())?;
    let fft = Fft2::new(cfg.nx, cfg.ny);
    let axial = AxialTerm::new(cfg);
    let mut data = field.values.clone();
    fft.forward(&mut data);
    axial.apply_relative(&mut data, z);
    fft.inverse(&mut data);
    Ok(ComplexField::new(data))
}

/// Reusable propagation kernels for one sensor geometry.
#[derive(Debug, Clone)]
pub struct Propagator {
    cfg: OpticalConfig,
    fft: Arc<Fft2>,
    axial: Arc<AxialTerm>,
}

impl Propagator {
    pub fn new(cfg: &OpticalConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg: *cfg, fft: Arc::new(Fft2::new(cfg.nx, cfg.ny)), axial: Arc::new(AxialTerm::new(cfg)) })
    }

    pub fn config(&self) -> &OpticalConfig {
        &self.cfg
    }

    pub fn fft(&self) -> &Fft2 {
        &self.fft
    }

    pub fn forward_spectrum(&self, field: Array2<Complex64>) -> Result<Array2<Complex64>> {
        let (ny, nx) = field.dim();
        self.cfg.check_dims(nx, ny)?;
        let mut data = field;
        self.fft.forward(&mut data);
        Ok(data)
    }

    /// Multiplies a spectrum by the relative transfer function in place.
    pub fn apply_relative(&self, spectrum: &mut Array2<Complex64>, z: f64) {
        self.axial.apply_relative(spectrum, z);
    }

    pub fn propagate(&self, field: &ComplexField, z: f64) -> Result<ComplexField> {
        let mut data = self.forward_spectrum(field.values.clone())?;
        self.axial.apply(&mut data, z);
        self.fft.inverse(&mut data);
        Ok(ComplexField::new(data))
    }

    pub fn propagate_relative(&self, field: &ComplexField, z: f64) -> Result<ComplexField> {
        let mut data = self.forward_spectrum(field.values.clone())?;
        self.axial.apply_relative(&mut data, z);
        self.fft.inverse(&mut data);
        Ok(ComplexField::new(data))
    }
}

/// Refocuses one normalized hologram at many depths, sharing the forward
/// transform and the transfer-function geometry across planes.
#[derive(Debug, Clone)]
pub struct Refocuser {
    prop: Propagator,
    spectrum: Array2<Complex64>,
}

impl Refocuser {
    pub fn new(h_c: &IntensityImage, cfg: &OpticalConfig) -> Result<Self> {
        Self::with_propagator(h_c, Propagator::new(cfg)?)
    }

    pub fn with_propagator(h_c: &IntensityImage, prop: Propagator) -> Result<Self> {
        let field = h_c.values().mapv(|v| Complex64::new(v, 0.0));
        let spectrum = prop.forward_spectrum(field)?;
        Ok(Self { prop, spectrum })
    }

    pub fn field_at(&self, z: f64) -> ComplexField {
        let mut data = self.spectrum.clone();
        self.prop.axial.apply(&mut data, z);
        self.prop.fft.inverse(&mut data);
        ComplexField::new(data)
    }

    /// Amplitude `|E|` of the refocused field at depth `z`.
    pub fn amplitude_at(&self, z: f64) -> IntensityImage {
        let field = self.field_at(z);
        IntensityImage::new(Zip::from(&field.values).par_map_collect(|v| (v.re * v.re + v.im * v.im).sqrt()))
    }
}

/// `h_c = raw / mean(ensemble)`, element-wise.
pub fn normalize_background(raw: &IntensityImage, ensemble: &[IntensityImage]) -> Result<IntensityImage> {
    let mean = ensemble_mean(ensemble)?;
    divide_by_background(raw, &mean)
}

/// Pixel-wise mean of a non-empty set of equally sized images.
pub fn ensemble_mean(ensemble: &[IntensityImage]) -> Result<IntensityImage> {
    let first = ensemble.first().ok_or(Error::Empty("background ensemble"))?;
    let mut acc = Array2::<f64>::zeros(first.values.dim());
    for img in ensemble {
        if img.values.dim() != acc.dim() {
            return Err(Error::Dimensions {
                expected_nx: first.nx(),
                expected_ny: first.ny(),
                nx: img.nx(),
                ny: img.ny(),
            });
        }
        acc += &img.values;
    }
    acc /= ensemble.len() as f64;
    Ok(IntensityImage::new(acc))
}

/// Divides `raw` by a background image, failing on the first zero pixel.
pub fn divide_by_background(raw: &IntensityImage, background: &IntensityImage) -> Result<IntensityImage> {
    if raw.values.dim() != background.values.dim() {
        return Err(Error::Dimensions {
            expected_nx: background.nx(),
            expected_ny: background.ny(),
            nx: raw.nx(),
            ny: raw.ny(),
        });
    }
    if let Some(((y, x), _)) = background.values.indexed_iter().find(|(_, &v)| v == 0.0) {
        return Err(Error::ZeroBackground { x, y });
    }
    Ok(IntensityImage::new(&raw.values / &background.values))
}

/// Refocuses a normalized hologram at depth `z` and returns the amplitude.
/// Depths outside the configured range are allowed but logged.
pub fn reconstruct_plane(h_c: &IntensityImage, z: f64, cfg: &OpticalConfig) -> Result<IntensityImage> {
    if z < cfg.z_min_um || z > cfg.z_max_um {
        log::warn!("reconstructing at z = {z} um, outside [{}, {}]", cfg.z_min_um, cfg.z_max_um);
    }
    Ok(Refocuser::new(h_c, cfg)?.amplitude_at(z))
}

/// Depth-bin centers `z_j = z_min + (j + 1/2) (z_max - z_min) / N`.
pub fn plane_centers(cfg: &OpticalConfig) -> Vec<f64> {
    (0..cfg.n_planes).map(|j| cfg.plane_center(j)).collect()
}
