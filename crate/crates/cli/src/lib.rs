//! Subcommand implementations for the `holorecon` binary.
//!
//! Each `cmd_*` function takes an already-loaded [`PipelineConfig`] and
//! writes its outputs to disk. Run them inside a rayon pool sized to
//! `config.run.workers` (see [`with_workers`]); every output is
//! independent of the pool size.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use holorecon::config::{PipelineConfig, SegmenterKind};
use holorecon::detect3d::{Detection, PredictedParticle};
use holorecon::evaluate::{
    emit_histograms, histogram_svg, metric_report, sweep_holograms, write_histogram_csv, write_metric_report,
    write_sweep_csv, HistogramSpec, COORD_NAMES,
};
use holorecon::io::{self as hio, RawHeader};
use holorecon::optics::{ensemble_mean, IntensityImage, OpticalConfig, Propagator, Refocuser};
use holorecon::pipeline::{Background, HologramResult, ProcessOptions};
use holorecon::segment::{ExternalMasks, OracleSegmenter, Segmenter};
use holorecon::simulate::{
    derive_seed, make_tile_dataset, render_hologram, sample_field, Particle, ParticleField, Split, SplitSpec,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] holorecon::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}

impl CliError {
    /// 2 for configuration problems, 3 for everything data-related.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Data(holorecon::Error::Config(_)) => 2,
            CliError::Data(_) => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Sets a dotted key such as `optics.n_planes=200` on a config. The value is
/// parsed as a TOML value, falling back to a plain string.
pub fn apply_override(cfg: &PipelineConfig, assignment: &str) -> CliResult<PipelineConfig> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{assignment}' is not key=value")))?;
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut root = toml::Value::try_from(cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut node = &mut root;
    for part in &parts[..parts.len() - 1] {
        let table = node.as_table_mut().ok_or_else(|| CliError::Config(format!("'{key}' is not a table path")))?;
        node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| CliError::Config(format!("'{key}' is not a table path")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    let text = toml::to_string(&root).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(holorecon::config::parse_config(&text)?)
}

/// Runs `f` inside a dedicated rayon pool with `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(pool.install(f))
}

fn require_exists(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} {} does not exist", path.display())))
    }
}

pub fn hologram_file_name(hid: u32) -> String {
    format!("synthetic_{hid}.png")
}

#[derive(Debug, Clone, Default)]
pub struct SimulateArgs {
    pub out_dir: PathBuf,
    /// Overrides `simulation.n_holograms`.
    pub n_holograms: Option<usize>,
    /// Overrides `simulation.n_particles`.
    pub n_particles: Option<usize>,
    /// Also cut a tile training set from the train split.
    pub tile_dataset: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub n_holograms: usize,
    pub n_truth_rows: usize,
    pub n_tiles: usize,
}

/// Writes `synthetic_<hid>.png`, `truth.csv`, `splits.csv` and the
/// effective `config.toml` under `out_dir`.
pub fn cmd_simulate(cfg: &PipelineConfig, args: &SimulateArgs) -> CliResult<SimulateSummary> {
    cfg.validate()?;
    let n = args.n_holograms.unwrap_or(cfg.simulation.n_holograms);
    let n_particles = args.n_particles.unwrap_or(cfg.simulation.n_particles);
    let split = match cfg.simulation.split {
        Some(s) if s.total() != n => {
            return Err(CliError::Config(format!("split covers {} holograms, {n} requested", s.total())))
        }
        Some(s) => s,
        None => SplitSpec::proportional(n, derive_seed(cfg.run.seed, u64::MAX)),
    };
    fs::create_dir_all(&args.out_dir)?;

    let rendered: Vec<(ParticleField, IntensityImage)> = (0..n as u32)
        .into_par_iter()
        .map(|hid| {
            let field = sample_field(
                &cfg.optics,
                hid,
                n_particles,
                &cfg.simulation.gamma,
                derive_seed(cfg.run.seed, u64::from(hid)),
            )?;
            let holo = render_hologram(&field, &cfg.optics, &cfg.simulation.render)?;
            Ok((field, holo))
        })
        .collect::<holorecon::Result<_>>()?;

    for (field, holo) in &rendered {
        hio::write_gray(&args.out_dir.join(hologram_file_name(field.hologram_id)), holo)?;
    }
    let mut truth = BufWriter::new(fs::File::create(args.out_dir.join("truth.csv"))?);
    hio::write_particles_csv(&mut truth, rendered.iter().map(|(f, _)| (f.hologram_id, f.particles.as_slice())))?;
    truth.flush()?;

    let assignment = split.assign();
    let mut splits = csv::Writer::from_path(args.out_dir.join("splits.csv")).map_err(holorecon::Error::from)?;
    splits.write_record(["hid", "split"]).map_err(holorecon::Error::from)?;
    for (hid, s) in &assignment {
        let name = match s {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        };
        splits.write_record([hid.to_string(), name.to_string()]).map_err(holorecon::Error::from)?;
    }
    splits.flush()?;
    fs::write(args.out_dir.join("config.toml"), cfg.to_toml()?)?;

    let mut n_tiles = 0;
    if args.tile_dataset {
        let train: BTreeSet<u32> = assignment.iter().filter(|(_, s)| *s == Split::Train).map(|(h, _)| *h).collect();
        let (fields, holos): (Vec<ParticleField>, Vec<IntensityImage>) =
            rendered.into_iter().filter(|(f, _)| train.contains(&f.hologram_id)).unzip();
        n_tiles =
            make_tile_dataset(&holos, &fields, &cfg.optics, &cfg.dataset_spec(), &args.out_dir.join("tiles"))?.len();
    }
    Ok(SimulateSummary { n_holograms: n, n_truth_rows: n * n_particles, n_tiles })
}

#[derive(Debug, Clone, Default)]
pub struct ReconstructArgs {
    pub hologram: PathBuf,
    pub out_dir: PathBuf,
    /// Depths in micrometres.
    pub z_um: Vec<f64>,
    /// Plane indices; their bin centers are added to `z_um`.
    pub planes: Vec<usize>,
    /// Per-pixel background image instead of the configured gray level.
    pub background: Option<PathBuf>,
    /// Also write an 8-bit preview (amplitude x 127).
    pub png: bool,
}

/// Writes one amplitude plane per requested depth as `<stem>_z<k>.f32`
/// plus header. Returns the written paths.
pub fn cmd_reconstruct(cfg: &PipelineConfig, args: &ReconstructArgs) -> CliResult<Vec<PathBuf>> {
    cfg.validate()?;
    require_exists(&args.hologram, "hologram")?;
    let mut depths = args.z_um.clone();
    for &j in &args.planes {
        if j >= cfg.optics.n_planes {
            return Err(CliError::Config(format!("plane {j} out of range (n_planes = {})", cfg.optics.n_planes)));
        }
        depths.push(cfg.optics.plane_center(j));
    }
    if depths.is_empty() {
        return Err(CliError::Config("no depths requested".into()));
    }
    let background = load_background(cfg, args.background.as_deref())?;
    let raw = hio::read_gray(&args.hologram)?;
    let h_c = normalize(&raw, &background)?;
    let refocus = Refocuser::new(&h_c, &cfg.optics)?;
    fs::create_dir_all(&args.out_dir)?;
    let stem = args.hologram.file_stem().and_then(|s| s.to_str()).unwrap_or("hologram").to_string();
    let cfg_hash = cfg.optics.hash();

    let planes: Vec<IntensityImage> = depths.par_iter().map(|&z| refocus.amplitude_at(z)).collect();
    let mut written = Vec::new();
    for (k, (amp, &z)) in planes.iter().zip(&depths).enumerate() {
        let path = args.out_dir.join(format!("{stem}_z{k}.f32"));
        let mut header = RawHeader::new(cfg.optics.nx, cfg.optics.ny, "amplitude");
        header.z_um = Some(z);
        header.cfg_hash = Some(cfg_hash.clone());
        let values = amp.values().mapv(|v| v as f32);
        hio::write_raw_f32(&path, &values, &header)?;
        if args.png {
            let preview = IntensityImage::new(amp.values().mapv(|v| (v * 127.0).clamp(0.0, 255.0).round()));
            hio::write_gray(&path.with_extension("png"), &preview)?;
        }
        written.push(path);
    }
    Ok(written)
}

fn load_background(cfg: &PipelineConfig, path: Option<&Path>) -> CliResult<Background> {
    match path {
        Some(p) => {
            require_exists(p, "background image")?;
            Ok(Background::Image(hio::read_gray(p)?))
        }
        None => Ok(Background::Level(cfg.detection.background_level)),
    }
}

fn normalize(raw: &IntensityImage, background: &Background) -> holorecon::Result<IntensityImage> {
    match background {
        Background::Level(level) => Ok(IntensityImage::new(raw.values().mapv(|v| v / level))),
        Background::Image(img) => holorecon::optics::divide_by_background(raw, img),
    }
}

#[derive(Debug, Clone, Default)]
pub struct ProcessArgs {
    /// Hologram files, or directories holding `synthetic_<hid>.*` files.
    pub inputs: Vec<PathBuf>,
    pub out: PathBuf,
    /// Optional per-plane detection table, the input of `sweep`.
    pub detections_out: Option<PathBuf>,
    /// Truth table; required by the oracle segmenter.
    pub truth: Option<PathBuf>,
    /// Divide by the mean of all inputs instead of a constant level.
    pub ensemble_background: bool,
}

/// Input holograms with their ids: `synthetic_<hid>` names keep their id,
/// anything else is numbered by position.
pub fn resolve_inputs(inputs: &[PathBuf]) -> CliResult<Vec<(u32, PathBuf)>> {
    let mut files = Vec::new();
    for p in inputs {
        require_exists(p, "input")?;
        if p.is_dir() {
            let mut found: Vec<(u32, PathBuf)> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter_map(|f| hio::hid_from_path(&f).map(|h| (h, f)))
                .collect();
            found.sort();
            files.extend(found.into_iter().map(|(_, f)| f));
        } else {
            files.push(p.clone());
        }
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(files.len());
    for (k, f) in files.into_iter().enumerate() {
        let hid = hio::hid_from_path(&f).unwrap_or(k as u32);
        if !seen.insert(hid) {
            return Err(holorecon::Error::IdMismatch(format!("hologram id {hid} appears twice")).into());
        }
        out.push((hid, f));
    }
    Ok(out)
}

/// Processes every input hologram in order and writes the predictions CSV
/// (header always present). Planes run in parallel within each hologram.
pub fn cmd_process(cfg: &PipelineConfig, args: &ProcessArgs) -> CliResult<Vec<HologramResult>> {
    cfg.validate()?;
    let inputs = resolve_inputs(&args.inputs)?;
    let mut opts: ProcessOptions = cfg.process_options();

    let truth = match (&cfg.segmenter.kind, &args.truth) {
        (SegmenterKind::Oracle, Some(t)) => {
            require_exists(t, "truth table")?;
            Some(hio::read_particles_file(t)?)
        }
        (SegmenterKind::Oracle, None) if !inputs.is_empty() => {
            return Err(CliError::Config("the oracle segmenter needs --truth".into()))
        }
        _ => None,
    };
    let external = match cfg.segmenter.kind {
        SegmenterKind::External => {
            let (dir, manifest) = match (&cfg.segmenter.mask_dir, &cfg.segmenter.manifest) {
                (Some(d), Some(m)) => (d.clone(), m.clone()),
                _ => {
                    return Err(CliError::Config(
                        "external masks need segmenter.mask_dir and segmenter.manifest".into(),
                    ))
                }
            };
            require_exists(&dir, "mask directory")?;
            require_exists(&manifest, "mask manifest")?;
            Some(ExternalMasks::open(&dir, &manifest)?)
        }
        _ => None,
    };
    let focus = cfg.segmenter.focus();

    let holograms: Vec<(u32, IntensityImage)> =
        inputs.iter().map(|(hid, p)| Ok((*hid, hio::read_gray(p)?))).collect::<CliResult<_>>()?;
    if args.ensemble_background && !holograms.is_empty() {
        let imgs: Vec<IntensityImage> = holograms.iter().map(|(_, h)| h.clone()).collect();
        opts.background = Background::Image(ensemble_mean(&imgs)?);
    }

    let mut results = Vec::with_capacity(holograms.len());
    for (hid, holo) in &holograms {
        let oracle;
        let seg: &dyn Segmenter = match cfg.segmenter.kind {
            SegmenterKind::Oracle => {
                let particles = truth.as_ref().and_then(|t| t.get(hid)).cloned().unwrap_or_default();
                oracle = OracleSegmenter::new(&ParticleField::new(*hid, particles), &cfg.optics);
                &oracle
            }
            SegmenterKind::Focus => &focus,
            SegmenterKind::External => external.as_ref().expect("opened above"),
        };
        log::info!("processing hologram {hid}");
        results.push(holorecon::pipeline::process_hologram(*hid, holo, &opts, seg)?);
    }

    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let preds: Vec<(u32, Vec<PredictedParticle>)> = results.iter().map(|r| (r.hid, r.predictions())).collect();
    let mut w = BufWriter::new(fs::File::create(&args.out)?);
    hio::write_predictions_csv(&mut w, preds.iter().map(|(h, p)| (*h, p.as_slice())))?;
    w.flush()?;
    if let Some(path) = &args.detections_out {
        let mut w = BufWriter::new(fs::File::create(path)?);
        hio::write_detections_csv(&mut w, results.iter().map(|r| (r.hid, r.detections.as_slice())))?;
        w.flush()?;
    }
    Ok(results)
}

#[derive(Debug, Clone, Default)]
pub struct EvaluateArgs {
    pub predictions: PathBuf,
    pub truth: PathBuf,
    pub out_dir: PathBuf,
    /// Pairing distance counted as a hit; defaults to `matching.threshold_um`.
    pub hit_threshold_um: Option<f64>,
    /// Per-plane detections; enables `sweep.csv`.
    pub detections: Option<PathBuf>,
    /// Clustering thresholds for the sweep; defaults to a log grid.
    pub thresholds: Vec<f64>,
    pub hist_bins: usize,
}

/// Default sweep grid: 25 log-spaced thresholds from 1 um to 1 m.
pub fn default_thresholds() -> Vec<f64> {
    holorecon::evaluate::log_thresholds(1.0, 1e6, 25)
}

fn check_ids<T, U>(pred: &BTreeMap<u32, T>, truth: &BTreeMap<u32, U>) -> CliResult<()> {
    let stray: Vec<String> = pred.keys().filter(|h| !truth.contains_key(h)).map(u32::to_string).collect();
    if stray.is_empty() {
        Ok(())
    } else {
        Err(holorecon::Error::IdMismatch(format!("hologram ids {} have no truth rows", stray.join(", "))).into())
    }
}

/// Writes `metrics.csv`, `histograms.csv`, `hist_<coord>.svg` and, with
/// detections, `sweep.csv`. Returns the written paths.
pub fn cmd_evaluate(cfg: &PipelineConfig, args: &EvaluateArgs) -> CliResult<Vec<PathBuf>> {
    cfg.validate()?;
    require_exists(&args.predictions, "predictions")?;
    require_exists(&args.truth, "truth table")?;
    let preds = hio::read_predictions_file(&args.predictions)?;
    let truth = hio::read_particles_file(&args.truth)?;
    check_ids(&preds, &truth)?;
    fs::create_dir_all(&args.out_dir)?;
    let mut written = Vec::new();

    let threshold = args.hit_threshold_um.unwrap_or(cfg.matching.threshold_um);
    let rows = metric_report(&preds, &truth, threshold);
    let path = args.out_dir.join("metrics.csv");
    write_metric_report(&mut BufWriter::new(fs::File::create(&path)?), &rows)?;
    written.push(path);

    let pred_particles: BTreeMap<u32, Vec<Particle>> =
        preds.iter().map(|(h, ps)| (*h, ps.iter().map(|p| p.particle).collect())).collect();
    let spec = HistogramSpec::for_config(&cfg.optics, args.hist_bins.max(1), cfg.simulation.gamma.d_cap_um);
    let hist = emit_histograms(&pred_particles, &truth, &spec);
    let path = args.out_dir.join("histograms.csv");
    write_histogram_csv(&mut BufWriter::new(fs::File::create(&path)?), &hist)?;
    written.push(path);
    for coord in COORD_NAMES {
        let path = args.out_dir.join(format!("hist_{coord}.svg"));
        fs::write(&path, histogram_svg(&hist, coord))?;
        written.push(path);
    }

    if let Some(det_path) = &args.detections {
        let path = args.out_dir.join("sweep.csv");
        run_sweep(cfg, det_path, &truth, &args.thresholds, &path)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, Default)]
pub struct SweepArgs {
    pub detections: PathBuf,
    pub truth: PathBuf,
    pub out: PathBuf,
    pub thresholds: Vec<f64>,
}

/// Re-clusters stored detections at each threshold and writes the sweep CSV.
pub fn cmd_sweep(cfg: &PipelineConfig, args: &SweepArgs) -> CliResult<()> {
    cfg.validate()?;
    require_exists(&args.detections, "detections")?;
    require_exists(&args.truth, "truth table")?;
    let truth = hio::read_particles_file(&args.truth)?;
    run_sweep(cfg, &args.detections, &truth, &args.thresholds, &args.out)
}

fn run_sweep(
    cfg: &PipelineConfig,
    det_path: &Path,
    truth: &BTreeMap<u32, Vec<Particle>>,
    thresholds: &[f64],
    out: &Path,
) -> CliResult<()> {
    let mut dets: BTreeMap<u32, Vec<Detection>> = hio::read_detections_file(det_path)?;
    check_ids(&dets, truth)?;
    for hid in truth.keys() {
        dets.entry(*hid).or_default();
    }
    let thresholds = if thresholds.is_empty() { default_thresholds() } else { thresholds.to_vec() };
    let rows = sweep_holograms(&dets, truth, &thresholds, &cfg.matching)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_sweep_csv(&mut BufWriter::new(fs::File::create(out)?), &rows)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BenchArgs {
    /// Planes reconstructed per size.
    pub n_planes: usize,
    /// Optional CSV destination for the timing rows.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub stage: &'static str,
    pub nx: usize,
    pub ny: usize,
    pub n: usize,
    pub mean_ms: f64,
    pub sd_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub cfg_hash: String,
    pub rows: Vec<TimingRow>,
    /// Per-plane time at twice the pixel count over the time at the
    /// configured size.
    pub scaling_ratio: f64,
}

/// Scaling bound for doubling the pixel count: 2 for the pixel count
/// itself, with room for the log factor and timing noise.
pub const SCALING_LIMIT: f64 = 2.4;

impl BenchReport {
    pub fn scaling_ok(&self) -> bool {
        self.scaling_ratio <= SCALING_LIMIT
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("stage,nx,ny,n,mean_ms,sd_ms,cfg_hash\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{:.4},{:.4},{}\n",
                r.stage, r.nx, r.ny, r.n, r.mean_ms, r.sd_ms, self.cfg_hash
            ));
        }
        s
    }
}

fn mean_sd(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = if samples.len() > 1 {
        (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

fn time_planes(cfg: &OpticalConfig, n_planes: usize) -> holorecon::Result<Vec<f64>> {
    let field = sample_field(cfg, 0, 20, &Default::default(), 7)?;
    let holo = render_hologram(&field, cfg, &Default::default())?;
    let h_c = IntensityImage::new(holo.values().mapv(|v| v / 127.0));
    let refocus = Refocuser::with_propagator(&h_c, Propagator::new(cfg)?)?;
    // Warm-up pass so allocation and planning stay out of the samples.
    let _ = refocus.amplitude_at(cfg.plane_center(0));
    Ok((0..n_planes)
        .map(|j| {
            let z = cfg.plane_center(j * cfg.n_planes / n_planes.max(1));
            let t = Instant::now();
            std::hint::black_box(refocus.amplitude_at(z));
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect())
}

/// Times single-plane reconstruction at the configured size and at twice
/// the pixel count (doubled width), then one full pipeline pass over
/// `n_planes` planes with the configured segmenter (oracle on a simulated
/// field when the segmenter needs truth).
pub fn cmd_bench(cfg: &PipelineConfig, args: &BenchArgs) -> CliResult<BenchReport> {
    cfg.validate()?;
    if args.n_planes == 0 {
        return Err(CliError::Config("n_planes must be >= 1".into()));
    }
    let base = cfg.optics;
    let double = OpticalConfig { nx: base.nx * 2, ..base };
    let mut rows = Vec::new();
    let mut per_plane = Vec::new();
    for c in [base, double] {
        let samples = time_planes(&c, args.n_planes)?;
        let (mean, sd) = mean_sd(&samples);
        per_plane.push(mean);
        rows.push(TimingRow {
            stage: "reconstruct_plane",
            nx: c.nx,
            ny: c.ny,
            n: samples.len(),
            mean_ms: mean,
            sd_ms: sd,
        });
    }

    let optics = OpticalConfig { n_planes: args.n_planes, ..base };
    let opts = ProcessOptions { optics, force_reconstruct: true, ..cfg.process_options() };
    let field = sample_field(&optics, 0, cfg.simulation.n_particles.min(50), &cfg.simulation.gamma, 7)?;
    let holo = render_hologram(&field, &optics, &cfg.simulation.render)?;
    let oracle = OracleSegmenter::new(&field, &optics);
    let focus = cfg.segmenter.focus();
    let seg: &dyn Segmenter = match cfg.segmenter.kind {
        SegmenterKind::Focus => &focus,
        _ => &oracle,
    };
    let t = Instant::now();
    holorecon::pipeline::process_hologram(0, &holo, &opts, seg)?;
    let total = t.elapsed().as_secs_f64() * 1e3;
    rows.push(TimingRow {
        stage: "pipeline_hologram",
        nx: base.nx,
        ny: base.ny,
        n: args.n_planes,
        mean_ms: total,
        sd_ms: 0.0,
    });

    let scaling_ratio = per_plane[1] / per_plane[0];
    let report = BenchReport { cfg_hash: cfg.optics.hash(), rows, scaling_ratio };
    if let Some(out) = &args.out {
        fs::write(out, report.to_csv())?;
    }
    Ok(report)
}
