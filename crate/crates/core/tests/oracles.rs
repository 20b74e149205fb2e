//! Geometry and route queries checked against brute-force references.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use zsim_core::geometry::{Obb, Vec2};
use zsim_core::roads::{nearest_features, RouteFrame};
use zsim_core::scenario::{generate_synthetic, GeneratorConfig, Route, Scenario};

type P = (f64, f64);

fn corners(b: &Obb<f64>) -> Vec<P> {
    b.corners().iter().map(|c| (c.x, c.y)).collect()
}

fn cross(o: P, a: P, b: P) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Sutherland-Hodgman clip of `subject` by the convex CCW polygon `clip`.
fn clip(subject: &[P], clip: &[P]) -> Vec<P> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (ci, pi) = (cross(a, b, cur) >= 0.0, cross(a, b, prev) >= 0.0);
            if ci != pi {
                let (dc, dp) = (cross(a, b, cur), cross(a, b, prev));
                let t = dp / (dp - dc);
                out.push((prev.0 + t * (cur.0 - prev.0), prev.1 + t * (cur.1 - prev.1)));
            }
            if ci {
                out.push(cur);
            }
        }
        if out.is_empty() {
            break;
        }
    }
    out
}

fn area(poly: &[P]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| poly[i].0 * poly[(i + 1) % n].1 - poly[(i + 1) % n].0 * poly[i].1)
        .sum::<f64>()
        .abs()
        * 0.5
}

fn point_segment(p: P, a: P, b: P) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Boundary-sampled distance between two polygons.
fn sampled_distance(a: &[P], b: &[P], per_edge: usize) -> f64 {
    let sample = |poly: &[P]| -> Vec<P> {
        let mut pts = Vec::new();
        for i in 0..poly.len() {
            let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
            for k in 0..per_edge {
                let t = k as f64 / per_edge as f64;
                pts.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
            }
        }
        pts
    };
    let (sa, sb) = (sample(a), sample(b));
    let mut best = f64::INFINITY;
    for &p in &sa {
        for i in 0..b.len() {
            best = best.min(point_segment(p, b[i], b[(i + 1) % b.len()]));
        }
    }
    for &p in &sb {
        for i in 0..a.len() {
            best = best.min(point_segment(p, a[i], a[(i + 1) % a.len()]));
        }
    }
    best
}

fn random_box(rng: &mut ChaCha8Rng) -> Obb<f64> {
    Obb::new(
        Vec2::new(rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)),
        rng.gen_range(-3.2..3.2),
        rng.gen_range(0.5..6.0),
        rng.gen_range(0.5..3.0),
    )
}

#[test]
fn box_overlap_matches_polygon_clipping() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut hits = 0;
    for i in 0..500 {
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        let inter = area(&clip(&corners(&a), &corners(&b)));
        let expected = inter > 1e-9;
        if inter > 0.0 && inter <= 1e-9 {
            continue;
        }
        assert_eq!(a.overlaps(&b), expected, "pair {i}: area {inter}");
        hits += expected as usize;
    }
    assert!(hits > 50 && hits < 450, "{hits} overlapping pairs");
}

#[test]
fn box_distance_matches_sampled_boundary() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..200 {
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        let d = a.distance(&b);
        if a.overlaps(&b) {
            assert_eq!(d, 0.0);
            continue;
        }
        let oracle = sampled_distance(&corners(&a), &corners(&b), 400);
        assert!(d <= oracle + 1e-9, "pair {i}: {d} > {oracle}");
        assert!(oracle - d < 0.01, "pair {i}: {d} vs {oracle}");
    }
    // two parallel 2 x 4 boxes three meters apart laterally
    let a = Obb::new(Vec2::new(0.0, 0.0), 0.0, 4.0, 2.0);
    let b = Obb::new(Vec2::new(0.0, 3.0), 0.0, 4.0, 2.0);
    let oracle = sampled_distance(&corners(&a), &corners(&b), 400);
    assert!((a.distance(&b) - 1.0).abs() < 1e-12);
    assert!((oracle - 1.0).abs() < 1e-12);
}

fn scenarios() -> Vec<Scenario> {
    let cfg = GeneratorConfig {
        count: 12,
        ..Default::default()
    };
    generate_synthetic(&cfg, 99).unwrap()
}

struct OracleLane {
    id: u32,
    left: Vec<P>,
    right: Vec<P>,
    center: Vec<P>,
    s: Vec<f64>,
    valid: (f64, f64),
}

fn oracle_lanes(route: &Route) -> Vec<OracleLane> {
    route
        .lanes
        .iter()
        .map(|l| {
            let left: Vec<P> = l
                .left_border
                .iter()
                .map(|p| (p.x as f64, p.y as f64))
                .collect();
            let right: Vec<P> = l
                .right_border
                .iter()
                .map(|p| (p.x as f64, p.y as f64))
                .collect();
            let center: Vec<P> = left
                .iter()
                .zip(&right)
                .map(|(a, b)| (a.0 + 0.5 * (b.0 - a.0), a.1 + 0.5 * (b.1 - a.1)))
                .collect();
            let mut s = vec![l.valid_interval.0 as f64];
            for i in 1..center.len() {
                let (a, b) = (center[i - 1], center[i]);
                s.push(s[i - 1] + ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt());
            }
            OracleLane {
                id: l.lane_id,
                left,
                right,
                center,
                s,
                valid: (l.valid_interval.0 as f64, l.valid_interval.1 as f64),
            }
        })
        .collect()
}

fn seg_valid(l: &OracleLane, i: usize) -> bool {
    l.s[i] < l.valid.1 && l.s[i + 1] > l.valid.0
}

/// Ray-casting containment in any valid lane quad, boundary included.
fn in_corridor(lanes: &[OracleLane], p: P) -> bool {
    lanes.iter().any(|l| {
        (0..l.center.len() - 1)
            .filter(|&i| seg_valid(l, i))
            .any(|i| {
                let quad = [l.left[i], l.left[i + 1], l.right[i + 1], l.right[i]];
                let on_edge = (0..4).any(|k| point_segment(p, quad[k], quad[(k + 1) % 4]) < 1e-9);
                let mut inside = false;
                for k in 0..4 {
                    let (a, b) = (quad[k], quad[(k + 1) % 4]);
                    if (a.1 > p.1) != (b.1 > p.1) {
                        let x = a.0 + (p.1 - a.1) / (b.1 - a.1) * (b.0 - a.0);
                        if p.0 < x {
                            inside = !inside;
                        }
                    }
                }
                inside || on_edge
            })
    })
}

fn query_point(lanes: &[OracleLane], rng: &mut ChaCha8Rng) -> P {
    let l = &lanes[rng.gen_range(0..lanes.len())];
    let c = l.center[rng.gen_range(0..l.center.len())];
    (
        c.0 + rng.gen_range(-6.0..6.0),
        c.1 + rng.gen_range(-6.0..6.0),
    )
}

#[test]
fn projection_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let scs = scenarios();
    for k in 0..1000 {
        let sc = &scs[k % scs.len()];
        let frame = RouteFrame::<f64>::from_route(&sc.route).unwrap();
        let lanes = oracle_lanes(&sc.route);
        let p = query_point(&lanes, &mut rng);
        let mut dists: Vec<(f64, u32, f64)> = Vec::new();
        for l in &lanes {
            for i in 0..l.center.len() - 1 {
                if !seg_valid(l, i) {
                    continue;
                }
                let (a, b) = (l.center[i], l.center[i + 1]);
                let d = point_segment(p, a, b);
                let len2 = (b.0 - a.0).powi(2) + (b.1 - a.1).powi(2);
                let t = (((p.0 - a.0) * (b.0 - a.0) + (p.1 - a.1) * (b.1 - a.1)) / len2)
                    .clamp(0.0, 1.0);
                let s = (l.s[i] + t * (l.s[i + 1] - l.s[i])).clamp(l.valid.0, l.valid.1);
                dists.push((d, l.id, s));
            }
        }
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let proj = frame.project(Vec2::new(p.0, p.1));
        assert!((proj.d.abs() - dists[0].0).abs() < 1e-9, "query {k}");
        // s is only well defined when the nearest segment of another lane is clearly farther
        let runner_up = dists
            .iter()
            .find(|c| c.1 != dists[0].1)
            .map_or(f64::INFINITY, |c| c.0);
        if runner_up - dists[0].0 > 1e-6 {
            assert_eq!(proj.lane_id, dists[0].1, "query {k}");
            // segments of the same lane share endpoints, so s agrees across near-ties
            assert!(
                (proj.s - dists[0].2).abs() < 1e-6,
                "query {k}: {} vs {}",
                proj.s,
                dists[0].2
            );
        }
        assert_eq!(proj.in_corridor, in_corridor(&lanes, p), "query {k}");
    }
}

#[test]
fn footprint_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let scs = scenarios();
    let mut inside = 0;
    for k in 0..1000 {
        let sc = &scs[k % scs.len()];
        let frame = RouteFrame::<f64>::from_route(&sc.route).unwrap();
        let lanes = oracle_lanes(&sc.route);
        let p = query_point(&lanes, &mut rng);
        let b = Obb::new(Vec2::new(p.0, p.1), rng.gen_range(-3.2..3.2), 4.8, 2.0);
        let expected = corners(&b).into_iter().all(|c| in_corridor(&lanes, c));
        assert_eq!(frame.footprint_on_route(&b), expected, "query {k}");
        inside += expected as usize;
    }
    assert!(inside > 20, "only {inside} footprints on route");
}

#[test]
fn nearest_features_match_full_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let scs = scenarios();
    for k in 0..1000 {
        let sc = &scs[k % scs.len()];
        let lanes = oracle_lanes(&sc.route);
        let p = query_point(&lanes, &mut rng);
        let kk = rng.gen_range(1..40);
        let radius = rng.gen_range(5.0..40.0);
        let mut all: Vec<(f64, usize, usize)> = Vec::new();
        for (fi, f) in sc.road_features.iter().enumerate() {
            for (pi, q) in f.points.iter().enumerate() {
                let d2 = (q.x as f64 - p.0).powi(2) + (q.y as f64 - p.1).powi(2);
                if d2 <= radius * radius {
                    all.push((d2, fi, pi));
                }
            }
        }
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let got = nearest_features(Vec2::new(p.0, p.1), &sc.road_features, kk, radius);
        assert_eq!(got.len(), kk);
        for (slot, g) in got.iter().enumerate() {
            match all.get(slot) {
                Some(&(d2, fi, pi)) => {
                    let q = sc.road_features[fi].points[pi];
                    assert!(g.valid);
                    assert_eq!(
                        (g.point.x, g.point.y),
                        (q.x as f64, q.y as f64),
                        "query {k} slot {slot}"
                    );
                    assert!((g.dist - d2.sqrt()).abs() < 1e-12);
                }
                None => assert!(!g.valid),
            }
        }
    }
}
