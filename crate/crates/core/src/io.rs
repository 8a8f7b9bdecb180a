//! File formats: 8-bit grayscale images, raw `f32` planes with a text
//! sidecar header, and the particle/prediction/detection CSV tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, Luma};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::detect3d::{Detection, PredictedParticle};
use crate::error::{Error, Result};
use crate::optics::IntensityImage;
use crate::simulate::Particle;

/// Decodes an 8-bit grayscale PNG or PGM from memory. Color or 16-bit
/// inputs are converted to 8-bit luma.
pub fn decode_gray(bytes: &[u8]) -> Result<IntensityImage> {
    let img = image::load_from_memory(bytes)?.into_luma8();
    let (w, h) = img.dimensions();
    let values = Array2::from_shape_vec((h as usize, w as usize), img.into_raw().into_iter().map(f64::from).collect())
        .expect("buffer matches dimensions");
    Ok(IntensityImage::new(values))
}

pub fn read_gray(path: &Path) -> Result<IntensityImage> {
    let bytes = fs::read(path).map_err(|e| Error::malformed(path, e.to_string()))?;
    decode_gray(&bytes).map_err(|e| Error::malformed(path, e.to_string()))
}

fn to_gray_image(values: &Array2<f64>) -> GrayImage {
    let (h, w) = values.dim();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([values[[y as usize, x as usize]].round().clamp(0.0, 255.0) as u8])
    })
}

/// Writes an image as 8-bit gray; the format follows the extension
/// (`.png`, otherwise binary PGM).
pub fn write_gray(path: &Path, img: &IntensityImage) -> Result<()> {
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => ImageFormat::Png,
        _ => ImageFormat::Pnm,
    };
    to_gray_image(img.values()).save_with_format(path, format)?;
    Ok(())
}

/// Stores a probability map as PGM with gray level `round(255 p)`.
pub fn write_mask_pgm(path: &Path, probs: &Array2<f32>) -> Result<()> {
    let scaled = probs.mapv(|p| f64::from(p) * 255.0);
    to_gray_image(&scaled).save_with_format(path, ImageFormat::Pnm)?;
    Ok(())
}

/// Reads a mask written as PGM/PNG (value / 255) or raw `f32` (`.f32` with a
/// `.hdr` sidecar). Errors name the offending file.
pub fn read_mask_file(path: &Path) -> Result<Array2<f32>> {
    if path.extension().and_then(|e| e.to_str()) == Some("f32") {
        let (_, values) = read_raw_f32(path)?;
        return Ok(values);
    }
    let img = read_gray(path)?;
    Ok(img.values().mapv(|v| (v / 255.0) as f32))
}

/// Sidecar header for raw `f32` planes.
#[derive(Debug, Clone, PartialEq)]
pub struct RawHeader {
    pub nx: usize,
    pub ny: usize,
    pub z_um: Option<f64>,
    pub cfg_hash: Option<String>,
    /// What the values are, e.g. `amplitude` or `probability`.
    pub quantity: String,
}

impl RawHeader {
    pub fn new(nx: usize, ny: usize, quantity: &str) -> Self {
        Self { nx, ny, z_um: None, cfg_hash: None, quantity: quantity.to_string() }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format = f32le");
        let _ = writeln!(s, "nx = {}", self.nx);
        let _ = writeln!(s, "ny = {}", self.ny);
        if let Some(z) = self.z_um {
            let _ = writeln!(s, "z_um = {z}");
        }
        if let Some(h) = &self.cfg_hash {
            let _ = writeln!(s, "cfg_hash = {h}");
        }
        let _ = writeln!(s, "quantity = {}", self.quantity);
        s
    }
}

/// Parses `key = value` lines. `#` starts a comment; unknown keys are
/// ignored; `nx` and `ny` are required.
pub fn parse_raw_header(text: &str) -> Result<RawHeader> {
    let mut fields = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("header line {}: expected `key = value`", n + 1)))?;
        fields.insert(k.trim().to_string(), v.trim().to_string());
    }
    if let Some(f) = fields.get("format") {
        if f != "f32le" {
            return Err(Error::Parse(format!("unsupported format `{f}`")));
        }
    }
    let dim = |key: &str| -> Result<usize> {
        let v = fields.get(key).ok_or_else(|| Error::Parse(format!("missing `{key}`")))?;
        v.parse().map_err(|_| Error::Parse(format!("`{key}` is not an integer: {v}")))
    };
    let nx = dim("nx")?;
    let ny = dim("ny")?;
    let z_um = fields
        .get("z_um")
        .map(|v| v.parse::<f64>().map_err(|_| Error::Parse(format!("`z_um` is not a number: {v}"))))
        .transpose()?;
    Ok(RawHeader {
        nx,
        ny,
        z_um,
        cfg_hash: fields.get("cfg_hash").cloned(),
        quantity: fields.get("quantity").cloned().unwrap_or_default(),
    })
}

/// Decodes raw little-endian `f32` samples against a header.
pub fn decode_raw_f32(header: &RawHeader, bytes: &[u8]) -> Result<Array2<f32>> {
    let expected = header
        .nx
        .checked_mul(header.ny)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Parse("header dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Parse(format!(
            "expected {expected} bytes for {}x{} f32, found {}",
            header.nx,
            header.ny,
            bytes.len()
        )));
    }
    let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(Array2::from_shape_vec((header.ny, header.nx), values).expect("length checked"))
}

pub fn header_path(data: &Path) -> PathBuf {
    let mut p = data.as_os_str().to_owned();
    p.push(".hdr");
    PathBuf::from(p)
}

/// Writes `values` to `path` and the header to `path.hdr`.
pub fn write_raw_f32(path: &Path, values: &Array2<f32>, header: &RawHeader) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    fs::write(header_path(path), header.to_text())?;
    Ok(())
}

pub fn read_raw_f32(path: &Path) -> Result<(RawHeader, Array2<f32>)> {
    let hdr_path = header_path(path);
    let text = fs::read_to_string(&hdr_path).map_err(|e| Error::malformed(&hdr_path, e.to_string()))?;
    let header = parse_raw_header(&text).map_err(|e| Error::malformed(&hdr_path, e.to_string()))?;
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let values = decode_raw_f32(&header, &bytes).map_err(|e| Error::malformed(path, e.to_string()))?;
    Ok((header, values))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct ParticleRow {
    hid: u32,
    x_um: f64,
    y_um: f64,
    z_um: f64,
    d_um: f64,
}

/// Particles keyed by hologram id.
pub type ParticleTable = BTreeMap<u32, Vec<Particle>>;

fn check_finite(p: &Particle) -> Result<()> {
    if p.coords().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Parse(format!("non-finite particle coordinate {p:?}")))
    }
}

/// Reads `hid,x_um,y_um,z_um,d_um` rows. Extra columns are ignored, so
/// prediction files parse too.
pub fn read_particles_csv<R: Read>(reader: R) -> Result<ParticleTable> {
    let mut table = ParticleTable::new();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    for row in rdr.deserialize() {
        let row: ParticleRow = row?;
        let p = Particle::new(row.x_um, row.y_um, row.z_um, row.d_um);
        check_finite(&p)?;
        table.entry(row.hid).or_default().push(p);
    }
    Ok(table)
}

pub fn read_particles_file(path: &Path) -> Result<ParticleTable> {
    let f = fs::File::open(path)?;
    read_particles_csv(f).map_err(|e| Error::malformed(path, e.to_string()))
}

/// Writes truth rows for the given holograms, in the order given.
pub fn write_particles_csv<'a, W: Write>(
    writer: W,
    fields: impl IntoIterator<Item = (u32, &'a [Particle])>,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(["hid", "x_um", "y_um", "z_um", "d_um"])?;
    for (hid, ps) in fields {
        for p in ps {
            w.serialize(ParticleRow { hid, x_um: p.x, y_um: p.y, z_um: p.z, d_um: p.d })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct PredictionRow {
    hid: u32,
    x_um: f64,
    y_um: f64,
    z_um: f64,
    d_um: f64,
    n_members: usize,
    assigned: bool,
    #[serde(default = "unit_score")]
    score: f32,
}

fn unit_score() -> f32 {
    1.0
}

/// Writes `hid,x_um,y_um,z_um,d_um,n_members,assigned,score`, where score
/// is the peak mask probability of the cluster. The header is always
/// written, even with no rows.
pub fn write_predictions_csv<'a, W: Write>(
    writer: W,
    rows: impl IntoIterator<Item = (u32, &'a [PredictedParticle])>,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(["hid", "x_um", "y_um", "z_um", "d_um", "n_members", "assigned", "score"])?;
    for (hid, ps) in rows {
        for p in ps {
            w.serialize(PredictionRow {
                hid,
                x_um: p.particle.x,
                y_um: p.particle.y,
                z_um: p.particle.z,
                d_um: p.particle.d,
                n_members: p.n_members,
                assigned: p.assigned,
                score: p.score,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads prediction rows; a missing `score` column reads as 1.
pub fn read_predictions_csv<R: Read>(reader: R) -> Result<BTreeMap<u32, Vec<PredictedParticle>>> {
    let mut out: BTreeMap<u32, Vec<PredictedParticle>> = BTreeMap::new();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    for row in rdr.deserialize() {
        let r: PredictionRow = row?;
        let particle = Particle::new(r.x_um, r.y_um, r.z_um, r.d_um);
        check_finite(&particle)?;
        out.entry(r.hid).or_default().push(PredictedParticle {
            particle,
            n_members: r.n_members,
            assigned: r.assigned,
            score: r.score,
        });
    }
    Ok(out)
}

pub fn read_predictions_file(path: &Path) -> Result<BTreeMap<u32, Vec<PredictedParticle>>> {
    let f = fs::File::open(path)?;
    read_predictions_csv(f).map_err(|e| Error::malformed(path, e.to_string()))
}

pub fn read_detections_file(path: &Path) -> Result<BTreeMap<u32, Vec<Detection>>> {
    let f = fs::File::open(path)?;
    read_detections_csv(f).map_err(|e| Error::malformed(path, e.to_string()))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct DetectionRow {
    hid: u32,
    plane: usize,
    x_um: f64,
    y_um: f64,
    z_um: f64,
    d_um: f64,
    pixels: usize,
    score: f32,
}

/// Per-plane detections for auditing and threshold sweeps.
pub fn write_detections_csv<'a, W: Write>(
    writer: W,
    rows: impl IntoIterator<Item = (u32, &'a [Detection])>,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(["hid", "plane", "x_um", "y_um", "z_um", "d_um", "pixels", "score"])?;
    for (hid, ds) in rows {
        for d in ds {
            w.serialize(DetectionRow {
                hid,
                plane: d.plane_index,
                x_um: d.x,
                y_um: d.y,
                z_um: d.z,
                d_um: d.d,
                pixels: d.pixel_count,
                score: d.score,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_detections_csv<R: Read>(reader: R) -> Result<BTreeMap<u32, Vec<Detection>>> {
    let mut out: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    for row in rdr.deserialize() {
        let r: DetectionRow = row?;
        let d = Detection {
            x: r.x_um,
            y: r.y_um,
            z: r.z_um,
            d: r.d_um,
            plane_index: r.plane,
            pixel_count: r.pixels,
            score: r.score,
        };
        check_finite(&d.particle())?;
        out.entry(r.hid).or_default().push(d);
    }
    Ok(out)
}

/// Hologram id from a `synthetic_<hid>.<ext>` file name.
pub fn hid_from_path(path: &Path) -> Option<u32> {
    let stem = path.file_stem()?.to_str()?;
    stem.strip_prefix("synthetic_")?.parse().ok()
}
