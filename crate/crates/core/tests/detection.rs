use std::collections::VecDeque;

use ndarray::Array2;
use proptest::prelude::*;

use holorecon::detect3d::{extract_particles, label_components, leader_cluster, Detection, MatchSpec};
use holorecon::optics::OpticalConfig;
use holorecon::segment::MaskPlane;
use holorecon::tiling::{build_grid, extract, reassemble, TileSpec};

/// Breadth-first flood fill; components listed in raster order of first pixel,
/// each as (min_col, max_col, min_row, max_row, count).
fn flood_fill(mask: &Array2<bool>) -> Vec<(usize, usize, usize, usize, usize)> {
    let (rows, cols) = mask.dim();
    let mut seen = Array2::from_elem((rows, cols), false);
    let mut out = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if !mask[[r, c]] || seen[[r, c]] {
                continue;
            }
            let mut bbox = (c, c, r, r, 0);
            let mut queue = VecDeque::from([(r, c)]);
            seen[[r, c]] = true;
            while let Some((y, x)) = queue.pop_front() {
                bbox = (bbox.0.min(x), bbox.1.max(x), bbox.2.min(y), bbox.3.max(y), bbox.4 + 1);
                let mut push = |yy: usize, xx: usize| {
                    if mask[[yy, xx]] && !seen[[yy, xx]] {
                        seen[[yy, xx]] = true;
                        queue.push_back((yy, xx));
                    }
                };
                if y > 0 {
                    push(y - 1, x);
                }
                if y + 1 < rows {
                    push(y + 1, x);
                }
                if x > 0 {
                    push(y, x - 1);
                }
                if x + 1 < cols {
                    push(y, x + 1);
                }
            }
            out.push(bbox);
        }
    }
    out
}

fn mask_strategy() -> impl Strategy<Value = Array2<bool>> {
    (1usize..=64, 1usize..=64, 0.05f64..0.7).prop_flat_map(|(r, c, p)| {
        prop::collection::vec(prop::bool::weighted(p), r * c)
            .prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
    })
}

/// Plain leader pass: every detection checks every leader in founding order.
fn reference_leader(dets: &[Detection], spec: &MatchSpec) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by_key(|&i| dets[i].plane_index);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        let found = groups.iter().position(|g| spec.distance(&dets[g[0]], &dets[i]) <= spec.threshold_um);
        match found {
            Some(k) => groups[k].push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
}

fn detections(max: usize) -> impl Strategy<Value = Vec<Detection>> {
    prop::collection::vec((0.0f64..3000.0, 0.0f64..3000.0, 0usize..30, 5.0f64..80.0), 0..=max).prop_map(|v| {
        v.into_iter()
            .map(|(x, y, plane, d)| Detection {
                x,
                y,
                z: 14_000.0 + 144.856 * plane as f64,
                d,
                plane_index: plane,
                pixel_count: 1,
                score: 1.0,
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn labeling_matches_flood_fill(mask in mask_strategy()) {
        let (labels, comps) = label_components(mask.view());
        let got: Vec<_> = comps.iter().map(|c| (c.min_col, c.max_col, c.min_row, c.max_row, c.pixel_count)).collect();
        prop_assert_eq!(got, flood_fill(&mask));
        for ((r, c), &l) in labels.indexed_iter() {
            prop_assert_eq!(l > 0, mask[[r, c]]);
        }
    }

    #[test]
    fn leader_matches_reference(dets in detections(20), t in 1.0f64..3000.0) {
        let spec = MatchSpec::with_threshold(t);
        let got = leader_cluster(&dets, &spec);
        let want = reference_leader(&dets, &spec);
        let multi: Vec<Vec<Detection>> = want.iter().filter(|g| g.len() > 1).map(|g| g.iter().map(|&i| dets[i]).collect()).collect();
        let single: Vec<Detection> = want.iter().filter(|g| g.len() == 1).map(|g| dets[g[0]]).collect();
        let got_multi: Vec<Vec<Detection>> = got.clusters.iter().map(|c| c.members.clone()).collect();
        prop_assert_eq!(got_multi, multi);
        prop_assert_eq!(&got.unassigned, &single);
        prop_assert_eq!(got.count(), want.len());
        let members: usize = got.clusters.iter().map(|c| c.members.len()).sum::<usize>() + got.unassigned.len();
        prop_assert_eq!(members, dets.len());
        for c in &got.clusters {
            let n = c.members.len() as f64;
            let mean_x = c.members.iter().map(|m| m.x).sum::<f64>() / n;
            prop_assert!((c.centroid.x - mean_x).abs() < 1e-9);
        }
    }

    #[test]
    fn far_apart_points_stay_unassigned(n in 1usize..15, t in 1.0f64..100.0) {
        let dets: Vec<Detection> = (0..n)
            .map(|i| Detection { x: 3.0 * t * i as f64, y: 0.0, z: 20_000.0, d: 10.0, plane_index: i, pixel_count: 1, score: 1.0 })
            .collect();
        let r = leader_cluster(&dets, &MatchSpec::with_threshold(t));
        prop_assert!(r.clusters.is_empty());
        prop_assert_eq!(r.unassigned.len(), n);
    }

    #[test]
    fn detections_ignore_tile_order(mask in mask_strategy(), seed in any::<u64>()) {
        let (rows, cols) = mask.dim();
        prop_assume!(rows >= 16 && cols >= 16);
        let cfg = OpticalConfig { nx: cols, ny: rows, ..OpticalConfig::default() };
        let plane = mask.mapv(|b| if b { 1.0f32 } else { 0.0 });
        let grid = build_grid(cols, rows, &TileSpec { tile: 16, step: 8 }, true).unwrap();
        let mut tiles: Vec<_> = (0..grid.len()).map(|i| (i, extract(plane.view(), &grid, i).unwrap())).collect();
        let forward = reassemble(&tiles, &grid).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(tiles.as_mut_slice(), &mut rng);
        let shuffled = reassemble(&tiles, &grid).unwrap();
        prop_assert_eq!(&forward, &plane);
        let a = extract_particles(&MaskPlane::new(forward, 20_000.0, 0), 0.5, &cfg);
        let b = extract_particles(&MaskPlane::new(shuffled, 20_000.0, 0), 0.5, &cfg);
        prop_assert_eq!(a, b);
    }
}

/// Full-sensor tile grid at reduced pixel size: 950 naive tiles over a
/// 4872 / 8 x 3248 / 8 plane with 64 px tiles and 16 px steps.
#[test]
fn reassembly_equals_brute_force_mean() {
    let (nx, ny) = (609, 406);
    let grid = build_grid(nx, ny, &TileSpec { tile: 64, step: 16 }, false).unwrap();
    assert_eq!(grid.len(), 950);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
    let tiles: Vec<(usize, Array2<f32>)> = (0..grid.len())
        .map(|i| (i, Array2::from_shape_simple_fn((64, 64), || rand::Rng::random::<f32>(&mut rng))))
        .collect();
    let out = reassemble(&tiles, &grid).unwrap();
    for &(r, c) in &[(0usize, 0usize), (405, 608), (200, 300), (17, 599), (63, 64), (390, 5)] {
        let mut sum = 0.0f64;
        let mut n = 0;
        for (i, t) in &tiles {
            let (x0, y0) = grid.positions[*i];
            if (x0..x0 + 64).contains(&c) && (y0..y0 + 64).contains(&r) {
                sum += f64::from(t[[r - y0, c - x0]]);
                n += 1;
            }
        }
        assert!((f64::from(out[[r, c]]) - sum / n as f64).abs() < 1e-6, "pixel ({r}, {c})");
    }
}

/// Raising the threshold can raise the count: at 500 um the second point
/// joins the first leader, which leaves the last two without one.
#[test]
fn predicted_count_is_not_monotone_in_threshold() {
    let dets: Vec<Detection> = [(0.0, 500.0), (400.0, 200.0), (600.0, 300.0), (100.0, 0.0)]
        .into_iter()
        .map(|(x, y)| Detection { x, y, z: 20_000.0, d: 10.0, plane_index: 0, pixel_count: 1, score: 1.0 })
        .collect();
    let m = |t: f64| leader_cluster(&dets, &MatchSpec::with_threshold(t)).count();
    assert_eq!(m(400.0), 2);
    assert_eq!(m(500.0), 3);
}
