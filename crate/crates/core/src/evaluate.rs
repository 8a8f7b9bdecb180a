//! Pairing predictions with truth, detection and overlap metrics,
//! threshold sweeps, and per-coordinate histograms.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use ndarray::ArrayView2;

use crate::detect3d::{leader_cluster, Detection, MatchSpec, PredictedParticle};
use crate::error::{Error, Result};
use crate::optics::OpticalConfig;
use crate::simulate::Particle;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair {
    pub pred_index: usize,
    pub true_index: usize,
    pub pred: Particle,
    pub truth: Particle,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairingResult {
    /// In selection order, so distances are non-decreasing.
    pub pairs: Vec<Pair>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_true: Vec<usize>,
}

impl PairingResult {
    /// Pairs at most `threshold` apart.
    pub fn n_within(&self, threshold: f64) -> usize {
        self.pairs.iter().filter(|p| p.distance <= threshold).count()
    }
}

/// Greedy global pairing: repeatedly take the closest remaining
/// `(pred, truth)` pair in `(x, y, z, d)`, ties broken by pred index then
/// truth index, until one side runs out.
pub fn pair_particles(pred: &[Particle], truth: &[Particle]) -> PairingResult {
    let mut cand: Vec<(f64, usize, usize)> = Vec::with_capacity(pred.len() * truth.len());
    for (i, p) in pred.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            cand.push((p.distance(t), i, j));
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut pred_used = vec![false; pred.len()];
    let mut true_used = vec![false; truth.len()];
    let mut pairs = Vec::with_capacity(pred.len().min(truth.len()));
    for (distance, i, j) in cand {
        if pairs.len() == pred.len().min(truth.len()) {
            break;
        }
        if pred_used[i] || true_used[j] {
            continue;
        }
        pred_used[i] = true;
        true_used[j] = true;
        pairs.push(Pair { pred_index: i, true_index: j, pred: pred[i], truth: truth[j], distance });
    }
    let unused = |used: &[bool]| used.iter().enumerate().filter(|(_, u)| !**u).map(|(i, _)| i).collect();
    PairingResult { unmatched_pred: unused(&pred_used), unmatched_true: unused(&true_used), pairs }
}

/// `(2 sum(x y) + 1) / (sum(x) + sum(y) + 1)`.
pub fn smoothed_dice(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    let (mut xy, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        xy += a * b;
        sx += a;
        sy += b;
    }
    Ok((2.0 * xy + 1.0) / (sx + sy + 1.0))
}

/// Smoothed dice of a probability plane against a binary truth plane.
pub fn smoothed_dice_2d(x: ArrayView2<'_, f32>, y: ArrayView2<'_, f32>) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    let (mut xy, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y.iter()) {
        let (a, b) = (f64::from(a), f64::from(b));
        xy += a * b;
        sx += a;
        sy += b;
    }
    Ok((2.0 * xy + 1.0) / (sx + sy + 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Contingency {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

/// Metrics with a zero denominator are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BinaryMetrics {
    pub f1: Option<f64>,
    pub pod: Option<f64>,
    pub far: Option<f64>,
    pub csi: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn binary_metrics(c: &Contingency) -> BinaryMetrics {
    BinaryMetrics {
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        pod: ratio(c.tp, c.tp + c.fn_),
        far: ratio(c.fp, c.tp + c.fp),
        csi: ratio(c.tp, c.tp + c.fp + c.fn_),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RocSummary {
    /// `None` unless both classes are present.
    pub auc: Option<f64>,
    pub max_csi: Option<f64>,
    /// Score threshold (predict positive when `score >= threshold`) at `max_csi`.
    pub threshold: Option<f64>,
}

fn score_key(s: f64) -> i64 {
    let bits = s.to_bits() as i64;
    bits ^ (((bits >> 63) as u64) >> 1) as i64
}

/// Positive and negative counts per distinct score. Accepts bulk counts,
/// so pixel-level curves over whole planes stay cheap.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreCounts {
    counts: BTreeMap<i64, (f64, u64, u64)>,
    /// Positives that no threshold can recover.
    missed: u64,
}

impl ScoreCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, score: f64, positive: bool) {
        self.add_many(score, u64::from(positive), u64::from(!positive));
    }

    pub fn add_many(&mut self, score: f64, positives: u64, negatives: u64) {
        let e = self.counts.entry(score_key(score)).or_insert((score, 0, 0));
        e.1 += positives;
        e.2 += negatives;
    }

    /// Adds every pixel of a probability plane against a binary truth plane
    /// (foreground where truth > 0.5). `None` stands for an all-zero plane.
    pub fn add_plane(
        &mut self,
        probs: Option<ArrayView2<'_, f32>>,
        truth: Option<ArrayView2<'_, f32>>,
        n_pixels: usize,
    ) {
        match (probs, truth) {
            (None, None) => self.add_many(0.0, 0, n_pixels as u64),
            (None, Some(t)) => {
                let pos = t.iter().filter(|&&v| v > 0.5).count() as u64;
                self.add_many(0.0, pos, n_pixels as u64 - pos);
            }
            (Some(p), None) => p.iter().for_each(|&v| self.add(f64::from(v), false)),
            (Some(p), Some(t)) => p.iter().zip(t.iter()).for_each(|(&v, &l)| self.add(f64::from(v), l > 0.5)),
        }
    }

    /// Positives with no score at all, such as undetected particles.
    pub fn add_missed(&mut self, n: u64) {
        self.missed += n;
    }

    pub fn merge(&mut self, other: &ScoreCounts) {
        for &(s, p, n) in other.counts.values() {
            self.add_many(s, p, n);
        }
        self.missed += other.missed;
    }

    /// ROC area by trapezoids over every distinct threshold, and the best
    /// CSI over the same thresholds. Missed positives keep the curve below
    /// a true positive rate of 1.
    pub fn summary(&self) -> RocSummary {
        let total_pos: u64 = self.counts.values().map(|c| c.1).sum::<u64>() + self.missed;
        let total_neg: u64 = self.counts.values().map(|c| c.2).sum();
        let (mut tp, mut fp) = (0u64, 0u64);
        let mut area = 0.0;
        let mut best: Option<(f64, f64)> = None;
        for &(score, p, n) in self.counts.values().rev() {
            let (tp0, fp0) = (tp, fp);
            tp += p;
            fp += n;
            if total_pos > 0 && total_neg > 0 {
                let w = (fp - fp0) as f64 / total_neg as f64;
                area += w * (tp + tp0) as f64 / (2.0 * total_pos as f64);
            }
            if let Some(csi) = ratio(tp, total_pos + fp) {
                if best.is_none_or(|(b, _)| csi > b) {
                    best = Some((csi, score));
                }
            }
        }
        RocSummary {
            auc: (total_pos > 0 && total_neg > 0).then_some(area),
            max_csi: best.map(|b| b.0),
            threshold: best.map(|b| b.1),
        }
    }
}

pub fn auc_and_max_csi(scored: &[(f64, bool)]) -> RocSummary {
    let mut c = ScoreCounts::new();
    for &(s, l) in scored {
        c.add(s, l);
    }
    c.summary()
}

/// Detection-level scores: each prediction scored by its cluster's peak
/// mask probability and labeled by whether it was paired within
/// `threshold`. Unmatched truths are positives that are never detected.
pub fn detection_scores(preds: &[PredictedParticle], pairing: &PairingResult, threshold: f64) -> ScoreCounts {
    let mut hit = vec![false; preds.len()];
    let mut found = 0u64;
    for p in pairing.pairs.iter().filter(|p| p.distance <= threshold) {
        hit[p.pred_index] = true;
        found += 1;
    }
    let n_true = (pairing.pairs.len() + pairing.unmatched_true.len()) as u64;
    let mut c = ScoreCounts::new();
    for (p, h) in preds.iter().zip(hit) {
        c.add(f64::from(p.score), h);
    }
    c.add_missed(n_true - found);
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MatchStats {
    /// Pairs over true count.
    pub match_accuracy: Option<f64>,
    /// `2 pairs / (n_true + n_pred)`.
    pub match_f1: Option<f64>,
    /// Root mean square of the 4-D pair distance.
    pub rmse_um: Option<f64>,
    /// Mean absolute error in `x, y, z, d`.
    pub mae_um: Option<[f64; 4]>,
}

pub fn match_stats(pairing: &PairingResult, n_true: usize, n_pred: usize) -> MatchStats {
    let n = pairing.pairs.len();
    let (rmse_um, mae_um) = if n == 0 {
        (None, None)
    } else {
        let mut sq = 0.0;
        let mut mae = [0.0; 4];
        for p in &pairing.pairs {
            sq += p.distance * p.distance;
            for ((m, a), b) in mae.iter_mut().zip(p.pred.coords()).zip(p.truth.coords()) {
                *m += (a - b).abs();
            }
        }
        (Some((sq / n as f64).sqrt()), Some(mae.map(|m| m / n as f64)))
    };
    MatchStats {
        match_accuracy: (n_true > 0).then(|| n as f64 / n_true as f64),
        match_f1: (n_true + n_pred > 0).then(|| 2.0 * n as f64 / (n_true + n_pred) as f64),
        rmse_um,
        mae_um,
    }
}

/// One row of the metric report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    /// `None` for the pooled row over all holograms.
    pub hid: Option<u32>,
    pub n_true: usize,
    pub n_pred: usize,
    pub n_pairs: usize,
    /// Pairs within the match threshold; these are the true positives.
    pub n_matched: usize,
    pub binary: BinaryMetrics,
    pub roc: RocSummary,
    pub stats: MatchStats,
}

/// Per-hologram rows followed by one pooled row. Holograms present on only
/// one side count as empty on the other.
pub fn metric_report(
    preds: &BTreeMap<u32, Vec<PredictedParticle>>,
    truth: &BTreeMap<u32, Vec<Particle>>,
    threshold: f64,
) -> Vec<MetricRow> {
    let mut ids: Vec<u32> = preds.keys().chain(truth.keys()).copied().collect();
    ids.sort_unstable();
    ids.dedup();

    let mut rows = Vec::with_capacity(ids.len() + 1);
    let mut pooled_pairing = PairingResult::default();
    let mut pooled_scores = ScoreCounts::new();
    let (mut nt_all, mut np_all) = (0, 0);
    for hid in ids {
        let p: &[PredictedParticle] = preds.get(&hid).map_or(&[], Vec::as_slice);
        let t: &[Particle] = truth.get(&hid).map_or(&[], Vec::as_slice);
        let pp: Vec<Particle> = p.iter().map(|x| x.particle).collect();
        let pairing = pair_particles(&pp, t);
        let scores = detection_scores(p, &pairing, threshold);
        let row = build_row(Some(hid), &pairing, t.len(), p.len(), threshold, &scores);
        pooled_scores.merge(&scores);
        pooled_pairing.pairs.extend_from_slice(&pairing.pairs);
        nt_all += t.len();
        np_all += p.len();
        rows.push(row);
    }
    rows.push(build_row(None, &pooled_pairing, nt_all, np_all, threshold, &pooled_scores));
    rows
}

fn build_row(
    hid: Option<u32>,
    pairing: &PairingResult,
    n_true: usize,
    n_pred: usize,
    threshold: f64,
    scores: &ScoreCounts,
) -> MetricRow {
    let tp = pairing.n_within(threshold);
    let c = Contingency { tp: tp as u64, fp: (n_pred - tp) as u64, fn_: (n_true - tp) as u64, tn: 0 };
    MetricRow {
        hid,
        n_true,
        n_pred,
        n_pairs: pairing.pairs.len(),
        n_matched: tp,
        binary: binary_metrics(&c),
        roc: scores.summary(),
        stats: match_stats(pairing, n_true, n_pred),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

pub const METRIC_HEADER: [&str; 18] = [
    "hid",
    "n_true",
    "n_pred",
    "n_pairs",
    "n_matched",
    "f1",
    "auc",
    "max_csi",
    "pod",
    "far",
    "csi",
    "match_accuracy",
    "match_f1",
    "rmse_um",
    "mae_x_um",
    "mae_y_um",
    "mae_z_um",
    "mae_d_um",
];

/// Writes the report; undefined metrics are empty cells and the pooled row
/// has `hid = all`.
pub fn write_metric_report<W: Write>(writer: W, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRIC_HEADER)?;
    for r in rows {
        let mae = |i: usize| cell(r.stats.mae_um.map(|m| m[i]));
        w.write_record([
            r.hid.map_or_else(|| "all".to_string(), |h| h.to_string()),
            r.n_true.to_string(),
            r.n_pred.to_string(),
            r.n_pairs.to_string(),
            r.n_matched.to_string(),
            cell(r.binary.f1),
            cell(r.roc.auc),
            cell(r.roc.max_csi),
            cell(r.binary.pod),
            cell(r.binary.far),
            cell(r.binary.csi),
            cell(r.stats.match_accuracy),
            cell(r.stats.match_f1),
            cell(r.stats.rmse_um),
            mae(0),
            mae(1),
            mae(2),
            mae(3),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub threshold_um: f64,
    pub n_clusters: usize,
    pub n_unassigned: usize,
    /// Predicted count: clusters plus unassigned.
    pub m: usize,
    pub n_true: usize,
    pub n_pairs: usize,
    pub stats: MatchStats,
}

/// Re-clusters `detections` at each threshold and scores the predictions
/// against `truth`. Only the threshold of `base` is varied.
pub fn threshold_sweep(
    detections: &[Detection],
    truth: &[Particle],
    thresholds: &[f64],
    base: &MatchSpec,
) -> Result<Vec<SweepRow>> {
    if thresholds.is_empty() {
        return Err(Error::Empty("threshold list"));
    }
    thresholds
        .iter()
        .map(|&t| {
            let spec = MatchSpec { threshold_um: t, ..*base };
            spec.validate()?;
            let clustering = leader_cluster(detections, &spec);
            let preds: Vec<Particle> = clustering.predictions().iter().map(|p| p.particle).collect();
            let pairing = pair_particles(&preds, truth);
            Ok(SweepRow {
                threshold_um: t,
                n_clusters: clustering.clusters.len(),
                n_unassigned: clustering.unassigned.len(),
                m: clustering.count(),
                n_true: truth.len(),
                n_pairs: pairing.pairs.len(),
                stats: match_stats(&pairing, truth.len(), preds.len()),
            })
        })
        .collect()
}

/// Sweeps every hologram and appends pooled rows (`hid = None`) that sum
/// counts and pool pairs across holograms.
pub fn sweep_holograms(
    detections: &BTreeMap<u32, Vec<Detection>>,
    truth: &BTreeMap<u32, Vec<Particle>>,
    thresholds: &[f64],
    base: &MatchSpec,
) -> Result<Vec<(Option<u32>, SweepRow)>> {
    let mut ids: Vec<u32> = detections.keys().chain(truth.keys()).copied().collect();
    ids.sort_unstable();
    ids.dedup();
    let mut out = Vec::new();
    let mut pooled: Vec<(SweepRow, f64)> = thresholds
        .iter()
        .map(|&t| {
            let row = SweepRow {
                threshold_um: t,
                n_clusters: 0,
                n_unassigned: 0,
                m: 0,
                n_true: 0,
                n_pairs: 0,
                stats: MatchStats::default(),
            };
            (row, 0.0)
        })
        .collect();
    for hid in ids {
        let d: &[Detection] = detections.get(&hid).map_or(&[], Vec::as_slice);
        let t: &[Particle] = truth.get(&hid).map_or(&[], Vec::as_slice);
        let rows = threshold_sweep(d, t, thresholds, base)?;
        for ((acc, sq), r) in pooled.iter_mut().zip(&rows) {
            acc.n_clusters += r.n_clusters;
            acc.n_unassigned += r.n_unassigned;
            acc.m += r.m;
            acc.n_true += r.n_true;
            acc.n_pairs += r.n_pairs;
            *sq += r.stats.rmse_um.map_or(0.0, |e| e * e * r.n_pairs as f64);
        }
        out.extend(rows.into_iter().map(|r| (Some(hid), r)));
    }
    for (mut row, sq) in pooled {
        let pairs = row.n_pairs as f64;
        row.stats = MatchStats {
            match_accuracy: (row.n_true > 0).then(|| pairs / row.n_true as f64),
            match_f1: (row.n_true + row.m > 0).then(|| 2.0 * pairs / (row.n_true + row.m) as f64),
            rmse_um: (row.n_pairs > 0).then(|| (sq / pairs).sqrt()),
            mae_um: None,
        };
        out.push((None, row));
    }
    Ok(out)
}

pub fn write_sweep_csv<W: Write>(writer: W, rows: &[(Option<u32>, SweepRow)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "hid",
        "threshold_um",
        "n_clusters",
        "n_unassigned",
        "m",
        "n_true",
        "n_pairs",
        "match_accuracy",
        "match_f1",
        "rmse_um",
    ])?;
    for (hid, r) in rows {
        w.write_record([
            hid.map_or_else(|| "all".to_string(), |h| h.to_string()),
            format!("{}", r.threshold_um),
            r.n_clusters.to_string(),
            r.n_unassigned.to_string(),
            r.m.to_string(),
            r.n_true.to_string(),
            r.n_pairs.to_string(),
            cell(r.stats.match_accuracy),
            cell(r.stats.match_f1),
            cell(r.stats.rmse_um),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `n` thresholds spaced evenly in log between `lo` and `hi`.
pub fn log_thresholds(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

pub const COORD_NAMES: [&str; 4] = ["x", "y", "z", "d"];

/// Equal-width bins per coordinate; the last bin includes its upper edge
/// and values outside `[lo, hi]` are dropped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramSpec {
    pub n_bins: [usize; 4],
    pub ranges: [(f64, f64); 4],
}

impl HistogramSpec {
    /// Sensor footprint, depth range and `[0, d_max]` for diameters.
    pub fn for_config(cfg: &OpticalConfig, n_bins: usize, d_max_um: f64) -> Self {
        Self {
            n_bins: [n_bins; 4],
            ranges: [(0.0, cfg.width_um()), (0.0, cfg.height_um()), (cfg.z_min_um, cfg.z_max_um), (0.0, d_max_um)],
        }
    }

    fn bin(&self, coord: usize, v: f64) -> Option<usize> {
        let (lo, hi) = self.ranges[coord];
        let n = self.n_bins[coord];
        if !(lo..=hi).contains(&v) || n == 0 {
            return None;
        }
        Some((((v - lo) / (hi - lo) * n as f64) as usize).min(n - 1))
    }

    /// Counts per coordinate and bin for one particle list.
    pub fn counts(&self, particles: &[Particle]) -> [Vec<u64>; 4] {
        let mut out: [Vec<u64>; 4] = std::array::from_fn(|c| vec![0; self.n_bins[c]]);
        for p in particles {
            for (c, v) in p.coords().into_iter().enumerate() {
                if let Some(b) = self.bin(c, v) {
                    out[c][b] += 1;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramRow {
    pub coord: &'static str,
    pub source: &'static str,
    pub lo: f64,
    pub hi: f64,
    pub mean: f64,
    pub sd: f64,
}

fn mean_sd(samples: &[f64]) -> (f64, f64) {
    if samples.is_empty() {
        return (0.0, 0.0);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-bin mean and sample standard deviation of counts across holograms,
/// for predictions and truth. Every hologram id on either side counts,
/// so missing predictions contribute zeros.
pub fn emit_histograms(
    pred: &BTreeMap<u32, Vec<Particle>>,
    truth: &BTreeMap<u32, Vec<Particle>>,
    spec: &HistogramSpec,
) -> Vec<HistogramRow> {
    let mut ids: Vec<u32> = pred.keys().chain(truth.keys()).copied().collect();
    ids.sort_unstable();
    ids.dedup();
    let mut rows = Vec::new();
    for (source, table) in [("pred", pred), ("true", truth)] {
        let per: Vec<[Vec<u64>; 4]> =
            ids.iter().map(|h| spec.counts(table.get(h).map_or(&[], Vec::as_slice))).collect();
        for (c, name) in COORD_NAMES.iter().enumerate() {
            let (lo, hi) = spec.ranges[c];
            let width = (hi - lo) / spec.n_bins[c] as f64;
            for b in 0..spec.n_bins[c] {
                let samples: Vec<f64> = per.iter().map(|h| h[c][b] as f64).collect();
                let (mean, sd) = mean_sd(&samples);
                rows.push(HistogramRow {
                    coord: name,
                    source,
                    lo: lo + b as f64 * width,
                    hi: lo + (b + 1) as f64 * width,
                    mean,
                    sd,
                });
            }
        }
    }
    rows
}

pub fn write_histogram_csv<W: Write>(writer: W, rows: &[HistogramRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["coord", "source", "bin_lo", "bin_hi", "mean", "sd"])?;
    for r in rows {
        w.write_record([
            r.coord.to_string(),
            r.source.to_string(),
            format!("{}", r.lo),
            format!("{}", r.hi),
            format!("{:.6}", r.mean),
            format!("{:.6}", r.sd),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Grouped bar chart of one coordinate: predicted and true mean counts
/// per bin, with one-sd whiskers.
pub fn histogram_svg(rows: &[HistogramRow], coord: &str) -> String {
    let pick =
        |src: &str| -> Vec<&HistogramRow> { rows.iter().filter(|r| r.coord == coord && r.source == src).collect() };
    let (pred, truth) = (pick("pred"), pick("true"));
    let n = pred.len().max(truth.len()).max(1);
    let (w, h, pad) = (640.0, 320.0, 40.0);
    let top = rows.iter().filter(|r| r.coord == coord).map(|r| r.mean + r.sd).fold(1e-9, f64::max);
    let slot = (w - 2.0 * pad) / n as f64;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{pad}" y="20" font-family="sans-serif" font-size="14">{coord} (um)</text>"#);
    for (series, color, offset) in [(&pred, "#1f77b4", 0.0), (&truth, "#ff7f0e", 0.5)] {
        for (i, r) in series.iter().enumerate() {
            let bh = r.mean / top * (h - 2.0 * pad);
            let x = pad + i as f64 * slot + offset * slot;
            let y = h - pad - bh;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{bh:.2}" fill="{color}"/>"#,
                slot * 0.45
            );
            if r.sd > 0.0 {
                let cx = x + slot * 0.225;
                let y1 = h - pad - (r.mean + r.sd) / top * (h - 2.0 * pad);
                let y2 = h - pad - (r.mean - r.sd).max(0.0) / top * (h - 2.0 * pad);
                let _ = writeln!(s, r#"<line x1="{cx:.2}" y1="{y1:.2}" x2="{cx:.2}" y2="{y2:.2}" stroke="black"/>"#);
            }
        }
    }
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#, h - pad, w - pad);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn p(x: f64, y: f64, z: f64, d: f64) -> Particle {
        Particle::new(x, y, z, d)
    }

    fn exhaustive_greedy(pred: &[Particle], truth: &[Particle]) -> Vec<(usize, usize)> {
        let mut left: Vec<usize> = (0..pred.len()).collect();
        let mut right: Vec<usize> = (0..truth.len()).collect();
        let mut out = Vec::new();
        while !left.is_empty() && !right.is_empty() {
            let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
            for &i in &left {
                for &j in &right {
                    let d = pred[i].distance(&truth[j]);
                    if d < best.0 || (d == best.0 && (i, j) < (best.1, best.2)) {
                        best = (d, i, j);
                    }
                }
            }
            out.push((best.1, best.2));
            left.retain(|&i| i != best.1);
            right.retain(|&j| j != best.2);
        }
        out
    }

    #[test]
    fn pairing_fixtures() {
        let a = vec![p(0., 0., 0., 1.), p(5., 5., 5., 2.)];
        let r = pair_particles(&a, &a);
        assert_eq!(r.pairs.len(), 2);
        assert!(r.pairs.iter().all(|q| q.distance == 0.0));
        assert!(r.unmatched_pred.is_empty() && r.unmatched_true.is_empty());

        let r = pair_particles(&[p(0., 0., 0., 1.)], &a);
        assert_eq!(r.pairs.len(), 1);
        assert_eq!(r.unmatched_true, vec![1]);
    }

    #[test]
    fn dice_fixtures() {
        assert_eq!(smoothed_dice(&[0.0; 4], &[0.0; 4]).unwrap(), 1.0);
        assert_eq!(smoothed_dice(&[1., 0., 1.], &[1., 0., 1.]).unwrap(), 1.0);
        assert_abs_diff_eq!(smoothed_dice(&[1., 0., 1., 0.], &[1., 1., 0., 0.]).unwrap(), 0.6, epsilon = 1e-12);
        assert!(smoothed_dice(&[1.0], &[]).is_err());
    }

    #[test]
    fn binary_metric_fixtures() {
        let m = binary_metrics(&Contingency { tp: 10, ..Default::default() });
        assert_eq!((m.pod, m.far, m.csi, m.f1), (Some(1.0), Some(0.0), Some(1.0), Some(1.0)));
        let m = binary_metrics(&Contingency { tp: 3, fp: 1, fn_: 2, tn: 4 });
        assert_abs_diff_eq!(m.pod.unwrap(), 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(m.far.unwrap(), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(m.csi.unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(m.f1.unwrap(), 2.0 / 3.0, epsilon = 1e-12);
        let m = binary_metrics(&Contingency { fp: 5, ..Default::default() });
        assert_eq!((m.pod, m.far, m.csi), (None, Some(1.0), Some(0.0)));
    }

    #[test]
    fn auc_fixtures() {
        let r = auc_and_max_csi(&[(0.9, true), (0.8, true), (0.2, false), (0.1, false)]);
        assert_eq!((r.auc, r.max_csi), (Some(1.0), Some(1.0)));
        assert_eq!(r.threshold, Some(0.8));
        let r = auc_and_max_csi(&[(0.5, true), (0.5, false), (0.5, true), (0.5, false)]);
        assert_eq!(r.auc, Some(0.5));
        let r = auc_and_max_csi(&[(0.9, true), (0.6, false), (0.4, true), (0.1, false)]);
        assert_abs_diff_eq!(r.auc.unwrap(), 0.75, epsilon = 1e-12);
        assert_eq!(auc_and_max_csi(&[(0.3, true), (0.4, true)]).auc, None);
    }

    #[test]
    fn match_stat_fixtures() {
        let a = vec![p(0., 0., 0., 1.), p(10., 0., 0., 1.)];
        let r = pair_particles(&a, &a);
        let s = match_stats(&r, 2, 2);
        assert_eq!((s.match_accuracy, s.match_f1, s.rmse_um), (Some(1.0), Some(1.0), Some(0.0)));

        let pred = vec![p(0., 0., 0., 1.), p(10., 0., 0., 1.), p(500., 0., 0., 1.), p(900., 0., 0., 1.)];
        let r = pair_particles(&pred, &a);
        let s = match_stats(&r, 2, 4);
        assert_eq!(s.match_accuracy, Some(1.0));
        assert_abs_diff_eq!(s.match_f1.unwrap(), 2.0 / 3.0, epsilon = 1e-12);

        let pred = vec![p(3., 0., 0., 1.), p(100., 4., 0., 1.), p(200., 0., 0., 1.)];
        let truth = vec![p(0., 0., 0., 1.), p(100., 0., 0., 1.), p(200., 0., 0., 1.)];
        let s = match_stats(&pair_particles(&pred, &truth), 3, 3);
        assert_abs_diff_eq!(s.rmse_um.unwrap(), (25.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.mae_um.unwrap()[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.mae_um.unwrap()[1], 4.0 / 3.0, epsilon = 1e-12);
        assert_eq!(match_stats(&PairingResult::default(), 0, 0), MatchStats::default());
    }

    #[test]
    fn sweep_extremes() {
        let dets: Vec<Detection> = (0..5)
            .map(|i| Detection {
                x: 100.0 * i as f64,
                y: 0.0,
                z: 20_000.0,
                d: 10.0,
                plane_index: i,
                pixel_count: 4,
                score: 1.0,
            })
            .collect();
        let rows = threshold_sweep(&dets, &[], &[1e-9, 1e9], &MatchSpec::default()).unwrap();
        assert_eq!(rows[0].m, 5);
        assert_eq!(rows[1].m, 1);
        assert!(threshold_sweep(&dets, &[], &[], &MatchSpec::default()).is_err());
    }

    #[test]
    fn report_has_empty_cells_for_undefined() {
        let mut preds = BTreeMap::new();
        preds.insert(1u32, vec![]);
        let mut truth = BTreeMap::new();
        truth.insert(1u32, vec![p(0., 0., 20_000., 10.)]);
        let rows = metric_report(&preds, &truth, 1000.0);
        let mut buf = Vec::new();
        write_metric_report(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert_eq!(line, "1,1,0,0,0,0.000000,,,0.000000,,0.000000,0.000000,0.000000,,,,,");
        assert!(text.lines().nth(2).unwrap().starts_with("all,"));
    }

    #[test]
    fn histograms_identical_and_flat() {
        let cfg = OpticalConfig::default();
        let spec = HistogramSpec::for_config(&cfg, 10, 200.0);
        let field = crate::simulate::sample_field(&cfg, 0, 5000, &Default::default(), 5).unwrap();
        let mut t = BTreeMap::new();
        t.insert(0u32, field.particles.clone());
        let rows = emit_histograms(&t, &t, &spec);
        let half = rows.len() / 2;
        for (a, b) in rows[..half].iter().zip(&rows[half..]) {
            assert_eq!((a.coord, a.mean), (b.coord, b.mean));
        }
        let z: Vec<f64> = rows[half..].iter().filter(|r| r.coord == "z").map(|r| r.mean).collect();
        let e = 500.0;
        let chi2: f64 = z.iter().map(|o| (o - e).powi(2) / e).sum();
        // 9 degrees of freedom; 27.88 is the 0.999 quantile.
        assert!(chi2 < 27.88, "{chi2}");

        let empty = emit_histograms(&BTreeMap::new(), &t, &spec);
        assert!(empty.iter().filter(|r| r.source == "pred").all(|r| r.mean == 0.0));
        assert!(histogram_svg(&rows, "z").starts_with("<svg"));
    }

    #[test]
    fn pixel_counts_match_explicit_scores() {
        use ndarray::array;
        let probs = array![[0.9f32, 0.2], [0.6, 0.0]];
        let truth = array![[1.0f32, 0.0], [1.0, 0.0]];
        let mut c = ScoreCounts::new();
        c.add_plane(Some(probs.view()), Some(truth.view()), 4);
        c.add_plane(None, Some(truth.view()), 4);
        let f = |v: f32| f64::from(v);
        let explicit = auc_and_max_csi(&[
            (f(0.9), true),
            (f(0.2), false),
            (f(0.6), true),
            (0.0, false),
            (0.0, true),
            (0.0, false),
            (0.0, true),
            (0.0, false),
        ]);
        assert_eq!(c.summary(), explicit);
    }

    fn particles(max: usize) -> impl Strategy<Value = Vec<Particle>> {
        prop::collection::vec((0..20i32, 0..20i32, 0..20i32, 1..5i32), 0..=max)
            .prop_map(|v| v.into_iter().map(|(x, y, z, d)| p(x as f64, y as f64, z as f64, d as f64)).collect())
    }

    proptest! {
        #[test]
        fn pairing_matches_exhaustive(pred in particles(8), truth in particles(8)) {
            let r = pair_particles(&pred, &truth);
            let got: Vec<(usize, usize)> = r.pairs.iter().map(|q| (q.pred_index, q.true_index)).collect();
            prop_assert_eq!(got, exhaustive_greedy(&pred, &truth));
            prop_assert_eq!(r.pairs.len(), pred.len().min(truth.len()));
            prop_assert_eq!(r.unmatched_pred.len() + r.pairs.len(), pred.len());
            prop_assert_eq!(r.unmatched_true.len() + r.pairs.len(), truth.len());
        }

        #[test]
        fn pairing_distances_symmetric(pred in particles(8), truth in particles(8)) {
            let mut a: Vec<f64> = pair_particles(&pred, &truth).pairs.iter().map(|q| q.distance).collect();
            let mut b: Vec<f64> = pair_particles(&truth, &pred).pairs.iter().map(|q| q.distance).collect();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn binary_identities(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50) {
            let m = binary_metrics(&Contingency { tp, fp, fn_, tn: 0 });
            if let (Some(csi), Some(f1)) = (m.csi, m.f1) {
                prop_assert!((f1 - 2.0 * csi / (1.0 + csi)).abs() < 1e-12);
            }
            if let (Some(csi), Some(pod)) = (m.csi, m.pod) {
                prop_assert!(csi <= pod + 1e-15);
            }
            if tp > 0 {
                prop_assert!(m.csi.unwrap() <= 1.0 - m.far.unwrap() + 1e-15);
            }
        }

        #[test]
        fn auc_monotone_invariant(items in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..40)) {
            let a = auc_and_max_csi(&items);
            let mapped: Vec<(f64, bool)> = items.iter().map(|&(s, l)| (3.0 * s.powi(3) + 1.0, l)).collect();
            let b = auc_and_max_csi(&mapped);
            prop_assert_eq!(a.auc.map(|v| (v * 1e12).round()), b.auc.map(|v| (v * 1e12).round()));
            prop_assert_eq!(a.max_csi, b.max_csi);
        }

        #[test]
        fn dice_properties(bits in prop::collection::vec(any::<bool>(), 1..64), extra in 1usize..10) {
            let y: Vec<f64> = bits.iter().map(|&b| f64::from(u8::from(b))).collect();
            prop_assert_eq!(smoothed_dice(&y, &y).unwrap(), 1.0);
            let mut x = y.clone();
            x.extend(std::iter::repeat_n(0.0, extra));
            let mut y2 = y.clone();
            y2.extend(std::iter::repeat_n(0.0, extra));
            let mut prev = smoothed_dice(&x, &y2).unwrap();
            for k in 0..extra {
                x[y.len() + k] = 1.0;
                let d = smoothed_dice(&x, &y2).unwrap();
                prop_assert!(d < prev && d > 0.0);
                prev = d;
            }
        }
    }
}
