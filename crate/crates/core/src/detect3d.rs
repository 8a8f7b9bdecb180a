//! Per-plane particle extraction and leader clustering across planes.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::OpticalConfig;
use crate::segment::MaskPlane;
use crate::simulate::Particle;

/// One particle found in one reconstructed plane. Lengths in micrometers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    /// Center of the plane's depth bin.
    pub z: f64,
    pub d: f64,
    pub plane_index: usize,
    pub pixel_count: usize,
    /// Highest mask probability inside the component.
    pub score: f32,
}

impl Detection {
    pub fn particle(&self) -> Particle {
        Particle::new(self.x, self.y, self.z, self.d)
    }
}

/// Bounding box and size of a 4-connected component, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub min_col: usize,
    pub max_col: usize,
    pub min_row: usize,
    pub max_row: usize,
    pub pixel_count: usize,
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        parent[i as usize] = parent[parent[i as usize] as usize];
        i = parent[i as usize];
    }
    i
}

/// Labels 4-connected foreground regions. Returns a label image (0 is
/// background, components numbered from 1 in raster order of their first
/// pixel) and per-component statistics indexed by `label - 1`.
pub fn label_components(mask: ArrayView2<'_, bool>) -> (Array2<u32>, Vec<Component>) {
    let (rows, cols) = mask.dim();
    let mut labels = Array2::<u32>::zeros((rows, cols));
    let mut parent: Vec<u32> = vec![0];

    for r in 0..rows {
        for c in 0..cols {
            if !mask[[r, c]] {
                continue;
            }
            let up = if r > 0 { labels[[r - 1, c]] } else { 0 };
            let left = if c > 0 { labels[[r, c - 1]] } else { 0 };
            labels[[r, c]] = match (up, left) {
                (0, 0) => {
                    let l = parent.len() as u32;
                    parent.push(l);
                    l
                }
                (l, 0) | (0, l) => l,
                (a, b) => {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    if ra != rb {
                        let (lo, hi) = (ra.min(rb), ra.max(rb));
                        parent[hi as usize] = lo;
                    }
                    a.min(b)
                }
            };
        }
    }

    // Provisional labels are created in raster order and merged toward the
    // smaller root, so roots sorted ascending follow first-pixel order.
    let mut final_id = vec![0u32; parent.len()];
    let mut next = 0u32;
    for l in 1..parent.len() as u32 {
        let root = find(&mut parent, l);
        if root == l {
            next += 1;
            final_id[l as usize] = next;
        }
    }
    let mut comps = vec![
        Component { min_col: usize::MAX, max_col: 0, min_row: usize::MAX, max_row: 0, pixel_count: 0 };
        next as usize
    ];
    for ((r, c), l) in labels.indexed_iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = find(&mut parent, *l);
        *l = final_id[root as usize];
        let comp = &mut comps[*l as usize - 1];
        comp.min_col = comp.min_col.min(c);
        comp.max_col = comp.max_col.max(c);
        comp.min_row = comp.min_row.min(r);
        comp.max_row = comp.max_row.max(r);
        comp.pixel_count += 1;
    }
    (labels, comps)
}

/// Binarizes `mask` (probability strictly above `threshold`) and turns each
/// 4-connected component into a detection. Centers are the midpoints of the
/// component's extents; the diameter is its larger extent.
pub fn extract_particles(mask: &MaskPlane, threshold: f32, cfg: &OpticalConfig) -> Vec<Detection> {
    let binary = mask.binarize(threshold);
    let (labels, comps) = label_components(binary.view());
    let mut scores = vec![0f32; comps.len()];
    for (l, &p) in labels.iter().zip(mask.probs.iter()) {
        if *l > 0 {
            let s = &mut scores[*l as usize - 1];
            *s = s.max(p);
        }
    }
    comps
        .iter()
        .zip(scores)
        .map(|(c, score)| {
            let extent_x = (c.max_col - c.min_col + 1) as f64 * cfg.dx_um;
            let extent_y = (c.max_row - c.min_row + 1) as f64 * cfg.dy_um;
            Detection {
                x: cfg.dx_um * (c.min_col + c.max_col) as f64 / 2.0,
                y: cfg.dy_um * (c.min_row + c.max_row) as f64 / 2.0,
                z: mask.z,
                d: extent_x.max(extent_y),
                plane_index: mask.plane_index,
                pixel_count: c.pixel_count,
                score,
            }
        })
        .collect()
}

/// Clustering radius and per-axis weights for `(x, y, z, d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchSpec {
    pub threshold_um: f64,
    pub weights: [f64; 4],
}

impl Default for MatchSpec {
    fn default() -> Self {
        Self { threshold_um: 1000.0, weights: [1.0; 4] }
    }
}

impl MatchSpec {
    pub fn with_threshold(threshold_um: f64) -> Self {
        Self { threshold_um, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_um > 0.0) {
            return Err(Error::Config(format!("match threshold must be > 0, got {}", self.threshold_um)));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("match weights must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Weighted Euclidean distance in `(x, y, z, d)`.
    pub fn distance(&self, a: &Detection, b: &Detection) -> f64 {
        let da = [a.x - b.x, a.y - b.y, a.z - b.z, a.d - b.d];
        da.iter().zip(self.weights.iter()).map(|(v, w)| (w * v) * (w * v)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Members in join order; the first is the leader.
    pub members: Vec<Detection>,
    pub centroid: Particle,
}

impl Cluster {
    fn from_members(members: Vec<Detection>) -> Self {
        let n = members.len() as f64;
        let mut sum = [0.0; 4];
        for m in &members {
            for (s, v) in sum.iter_mut().zip(m.particle().coords()) {
                *s += v;
            }
        }
        let centroid = Particle::new(sum[0] / n, sum[1] / n, sum[2] / n, sum[3] / n);
        Self { members, centroid }
    }

    pub fn score(&self) -> f32 {
        self.members.iter().map(|m| m.score).fold(0.0, f32::max)
    }
}

/// A predicted particle with its provenance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedParticle {
    pub particle: Particle,
    pub n_members: usize,
    /// `false` for detections that no other detection joined.
    pub assigned: bool,
    pub score: f32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Clustering {
    /// Clusters with at least two members, in founding order.
    pub clusters: Vec<Cluster>,
    /// Detections that founded a cluster nobody joined, in founding order.
    pub unassigned: Vec<Detection>,
}

impl Clustering {
    /// Number of predicted particles: clusters plus unassigned detections.
    pub fn count(&self) -> usize {
        self.clusters.len() + self.unassigned.len()
    }

    /// Cluster centroids followed by unassigned detections.
    pub fn predictions(&self) -> Vec<PredictedParticle> {
        let clustered = self.clusters.iter().map(|c| PredictedParticle {
            particle: c.centroid,
            n_members: c.members.len(),
            assigned: true,
            score: c.score(),
        });
        let single = self.unassigned.iter().map(|d| PredictedParticle {
            particle: d.particle(),
            n_members: 1,
            assigned: false,
            score: d.score,
        });
        clustered.chain(single).collect()
    }
}

/// Spatial hash of leaders on a grid of cell size `threshold` in the
/// weighted `(x, y, z)` subspace. Any leader within the threshold lies in
/// one of the 27 neighbouring cells.
struct LeaderIndex {
    cell: f64,
    weights: [f64; 3],
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl LeaderIndex {
    fn new(spec: &MatchSpec) -> Self {
        Self {
            cell: spec.threshold_um,
            weights: [spec.weights[0], spec.weights[1], spec.weights[2]],
            cells: HashMap::new(),
        }
    }

    fn key(&self, d: &Detection) -> [i64; 3] {
        let c = [d.x, d.y, d.z];
        std::array::from_fn(|i| (self.weights[i] * c[i] / self.cell).floor() as i64)
    }

    fn insert(&mut self, d: &Detection, leader: usize) {
        let k = self.key(d);
        self.cells.entry(k).or_default().push(leader);
    }

    /// Smallest leader id within the threshold of `d`.
    fn first_within(&self, d: &Detection, leaders: &[Detection], spec: &MatchSpec) -> Option<usize> {
        let k = self.key(d);
        let mut best: Option<usize> = None;
        for ox in -1..=1 {
            for oy in -1..=1 {
                for oz in -1..=1 {
                    let probe = [k[0].saturating_add(ox), k[1].saturating_add(oy), k[2].saturating_add(oz)];
                    let Some(ids) = self.cells.get(&probe) else { continue };
                    for &id in ids {
                        if best.is_some_and(|b| b <= id) {
                            break;
                        }
                        if spec.distance(d, &leaders[id]) <= spec.threshold_um {
                            best = Some(id);
                            break;
                        }
                    }
                }
            }
        }
        best
    }
}

/// Single-pass leader clustering.
///
/// Detections are visited in order of plane index (stable, so extraction
/// order is kept within a plane). Each detection joins the earliest-founded
/// leader within `spec.threshold_um`, otherwise it founds a new cluster.
pub fn leader_cluster(dets: &[Detection], spec: &MatchSpec) -> Clustering {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by_key(|d| d.plane_index);

    let mut leaders: Vec<Detection> = Vec::new();
    let mut groups: Vec<Vec<Detection>> = Vec::new();
    let mut index = LeaderIndex::new(spec);
    for d in order {
        match index.first_within(d, &leaders, spec) {
            Some(id) => groups[id].push(*d),
            None => {
                index.insert(d, leaders.len());
                leaders.push(*d);
                groups.push(vec![*d]);
            }
        }
    }

    let mut out = Clustering::default();
    for g in groups {
        if g.len() == 1 {
            out.unassigned.push(g[0]);
        } else {
            out.clusters.push(Cluster::from_members(g));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> OpticalConfig {
        OpticalConfig { nx: 32, ny: 32, ..OpticalConfig::default() }
    }

    fn plane_from(pixels: &[(usize, usize)], nx: usize, ny: usize) -> MaskPlane {
        let mut probs = Array2::<f32>::zeros((ny, nx));
        for &(c, r) in pixels {
            probs[[r, c]] = 1.0;
        }
        MaskPlane::new(probs, 20_000.0, 7)
    }

    fn det(x: f64) -> Detection {
        Detection { x, y: 0.0, z: 0.0, d: 1.0, plane_index: 0, pixel_count: 1, score: 1.0 }
    }

    #[test]
    fn empty_mask_has_no_detections() {
        assert!(extract_particles(&plane_from(&[], 8, 8), 0.5, &cfg()).is_empty());
    }

    #[test]
    fn four_connectivity() {
        let m = plane_from(&[(0, 0), (0, 1), (1, 1), (3, 3)], 8, 8);
        assert_eq!(extract_particles(&m, 0.5, &cfg()).len(), 2);
        let diag = plane_from(&[(0, 0), (1, 1)], 8, 8);
        let d = extract_particles(&diag, 0.5, &cfg());
        assert_eq!(d.len(), 2);
        assert!(d.iter().all(|d| d.pixel_count == 1));
    }

    #[test]
    fn u_shape_merges_into_one_label() {
        // Two arms joined only at the bottom row.
        let mut px = vec![];
        for r in 0..5 {
            px.push((0, r));
            px.push((4, r));
        }
        for c in 0..5 {
            px.push((c, 4));
        }
        let (labels, comps) = label_components(plane_from(&px, 6, 6).binarize(0.5).view());
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].pixel_count, 13);
        assert_eq!(labels[[0, 4]], 1);
    }

    #[test]
    fn rectangle_component_geometry() {
        let mut px = vec![];
        for c in 10..=19 {
            for r in 12..=17 {
                px.push((c, r));
            }
        }
        let c = cfg();
        let d = extract_particles(&plane_from(&px, 32, 32), 0.5, &c);
        assert_eq!(d.len(), 1);
        assert!((d[0].x - 14.5 * 2.96).abs() < 1e-12);
        assert!((d[0].y - 14.5 * 2.96).abs() < 1e-12);
        assert!((d[0].d - 29.6).abs() < 1e-12);
        assert_eq!((d[0].z, d[0].plane_index, d[0].pixel_count), (20_000.0, 7, 60));
    }

    #[test]
    fn threshold_is_strict() {
        let mut probs = Array2::<f32>::zeros((4, 4));
        probs[[1, 1]] = 0.5;
        probs[[2, 2]] = 0.51;
        let d = extract_particles(&MaskPlane::new(probs, 0.0, 0), 0.5, &cfg());
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].score, 0.51);
    }

    #[test]
    fn leader_hand_trace() {
        let dets = [det(0.0), det(1.0), det(10.0)];
        let c = leader_cluster(&dets, &MatchSpec::with_threshold(2.0));
        assert_eq!(c.clusters.len(), 1);
        assert_eq!(c.clusters[0].members.len(), 2);
        assert_eq!(c.clusters[0].centroid.x, 0.5);
        assert_eq!(c.unassigned, vec![dets[2]]);
        assert_eq!(c.count(), 2);
    }

    #[test]
    fn leader_extremes() {
        let dets: Vec<_> = (0..10).map(|i| det(i as f64 * 3.0)).collect();
        let all = leader_cluster(&dets, &MatchSpec::with_threshold(1e12));
        assert_eq!((all.clusters.len(), all.unassigned.len()), (1, 0));
        let none = leader_cluster(&dets, &MatchSpec::with_threshold(1e-9));
        assert_eq!(none.count(), 10);
        assert!(none.clusters.is_empty());
        assert!(leader_cluster(&[], &MatchSpec::default()).predictions().is_empty());
    }

    #[test]
    fn joins_first_leader_not_nearest() {
        // Leaders at 0 and 3; a point at 2 is within 2.5 of both.
        let dets = [det(0.0), det(3.0), det(2.0)];
        let c = leader_cluster(&dets, &MatchSpec::with_threshold(2.5));
        assert_eq!(c.clusters.len(), 1);
        assert_eq!(c.clusters[0].members[0].x, 0.0);
        assert_eq!(c.unassigned[0].x, 3.0);
    }

    #[test]
    fn count_can_rise_with_threshold() {
        // With a wider radius the middle point joins the first leader, so
        // the two outer points can no longer share it.
        let at = |x: f64, y: f64| Detection { y, ..det(x) };
        let dets = [at(0.0, 0.0), at(1.5, 0.0), at(2.0, 0.85), at(2.0, -0.85)];
        let small = leader_cluster(&dets, &MatchSpec::with_threshold(1.0)).count();
        let large = leader_cluster(&dets, &MatchSpec::with_threshold(1.5)).count();
        assert_eq!((small, large), (2, 3));
    }

    #[test]
    fn sorted_by_plane_before_clustering() {
        let mut a = det(0.0);
        a.plane_index = 5;
        let mut b = det(1.0);
        b.plane_index = 2;
        let c = leader_cluster(&[a, b], &MatchSpec::with_threshold(2.0));
        assert_eq!(c.clusters[0].members[0].plane_index, 2);
    }
}
