//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary under `cargo test`. A criterion listed in
//! `KNOWN_FAILURES` still prints FAIL but does not fail the run; any other
//! failure, or a known failure that starts passing, exits non-zero.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use canopyskel::baselines::{audit_ftsem, ftsem_baseline};
use canopyskel::config::PipelineConfig;
use canopyskel::eval::{label_vertices, to_csv, EvalReport};
use canopyskel::fit::{estimate_radius, fit_chain, polyline_residual, FitConfig};
use canopyskel::geometry::point_segment_distance;
use canopyskel::likelihood::{
    fuse, observed_prob, EllipsoidKernelConfig, GridSpec, LikelihoodGrid,
};
use canopyskel::pipeline::{
    finish, generate_case, prepare, run_sweep, sweep_rows, CaseResult, Method,
};
use canopyskel::skeleton::{build_likelihood_graph, edge_cost, min_cost_path, PathSearchConfig};
use canopyskel::synth::{
    generate_tree, simulate_with_occluders, Occluder, OcclusionParams, TreeGenParams,
};
use canopyskel::{
    BranchCluster, LineSegment, Point3, Provenance, SkeletonGraph, SkeletonVertex, Vector3,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const FUSION_TOL: f64 = 1e-12;
const FUSION_SEQUENCES: usize = 1_000;
const FUSION_BUDGET: Duration = Duration::from_secs(1);

const KERNEL_SAMPLES: usize = 10_000;
const KERNEL_ON_SEGMENT_TOL: f64 = 1e-12;
const KERNEL_BUDGET: Duration = Duration::from_secs(1);

const PATH_GRIDS: usize = 50;
const PATH_COST_TOL: f64 = 1e-12;
const PATH_BUDGET: Duration = Duration::from_secs(10);

const POLYLINES: usize = 100;
const CP_TOL: f64 = 1e-6;
const FIT_SIGMA: f64 = 0.002;
const FIT_BUDGET: Duration = Duration::from_secs(5);

const CYLINDERS: usize = 100;
const RADIUS_REL_TOL: f64 = 0.10;
const RADIUS_MIN_HITS: usize = 95;

const GAP_TREES: u64 = 20;
const GAP_MIN_RECONNECTED: usize = 18;
/// Midpoint of the default occluder radius range.
const GAP_OCCLUDER_RADIUS: f64 = 0.125;
const BRIDGE_TOL: f64 = 0.02;

const TREND_MIN_PRECISION: f64 = 0.90;
const TREND_MIN_PRECISION_D1: f64 = 0.95;
const SWEEP_BUDGET: Duration = Duration::from_secs(600);

/// Criteria whose failure is analysed and expected.
const KNOWN_FAILURES: &[u8] = &[7];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------------------

fn c1_fusion() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut identities = true;
    for _ in 0..FUSION_SEQUENCES {
        let n = rng.random_range(1..=24);
        let mut ps: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        if rng.random_bool(0.1) {
            ps[0] = 0.0;
        }
        let reference = ps.iter().fold(0.0, |acc, &p| fuse(acc, p));
        for _ in 0..5 {
            let mut perm = ps.clone();
            for i in (1..perm.len()).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let v = perm.iter().fold(0.0, |acc, &p| fuse(acc, p));
            worst = worst.max((v - reference).abs());

            // same sequence through the grid's in-place fusion
            let mut grid =
                LikelihoodGrid::new(GridSpec::new(Point3::origin(), 1.0, [1, 1, 1]).unwrap());
            for &p in &perm {
                grid.fuse_at([0, 0, 0], p);
            }
            let g = grid.get(&[0, 0, 0]);
            // the grid drops values below its storage epsilon
            if reference > 1e-6 {
                worst = worst.max((g - reference).abs());
            }
        }
        let x: f64 = rng.random();
        let p: f64 = rng.random();
        identities &= fuse(0.0, x) == x && fuse(p, 1.0) == 1.0 && fuse(1.0, p) == 1.0;
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= FUSION_TOL && identities && elapsed < FUSION_BUDGET,
        format!("max permutation gap {worst:.1e}, identities {identities}, {elapsed:.2?}"),
    )
}

// ---------------------------------------------------------------------------

fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3 {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Axial overshoot and radial distance, computed from scratch.
fn oracle_distances(p: &Point3, a: &Point3, b: &Point3) -> (f64, f64) {
    let l = (b - a).norm();
    let e = (b - a) / l;
    let t = (p - a).dot(&e);
    let axial = if t < 0.0 {
        -t
    } else if t > l {
        t - l
    } else {
        0.0
    };
    let radial = ((p - a) - e * t).norm();
    (axial, radial)
}

fn c2_kernel() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut range_ok, mut on_ok, mut outside_ok, mut mono_ok) = (true, true, true, true);
    for _ in 0..KERNEL_SAMPLES {
        let a = Point3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let len = rng.random_range(0.01..0.5);
        let b = a + unit_vector(&mut rng) * len;
        let c = rng.random_range(0.01..=1.0);
        let radius = rng.random_range(0.005..0.1);
        let k = rng.random_range(0.5..6.0);
        let seg = LineSegment::new(a, b, c, radius).unwrap();
        let cfg = EllipsoidKernelConfig { k };

        let reach = k * len.max(radius) * 1.5;
        let p = a
            + unit_vector(&mut rng) * rng.random_range(0.0..reach)
            + (b - a) * rng.random::<f64>();
        let v = observed_prob(&seg, &p, &cfg);
        range_ok &= (0.0..=c).contains(&v);

        let (da, dr) = oracle_distances(&p, &a, &b);
        let norm = ((da / len).powi(2) + (dr / radius).powi(2)).sqrt();
        if norm >= k * (1.0 + 1e-9) {
            outside_ok &= v == 0.0;
        }

        let on = a + (b - a) * rng.random::<f64>();
        on_ok &= (observed_prob(&seg, &on, &cfg) - c).abs() <= KERNEL_ON_SEGMENT_TOL;

        // step outward axially (past b) and radially, each alone
        let e = (b - a) / len;
        let n = {
            let w = unit_vector(&mut rng);
            let w = w - e * w.dot(&e);
            if w.norm() < 1e-6 {
                continue;
            }
            w.normalize()
        };
        let base_r = rng.random_range(0.0..k * radius);
        let base_a = rng.random_range(0.0..k * len);
        let at = |da: f64, dr: f64| observed_prob(&seg, &(b + e * da + n * dr), &cfg);
        let step = rng.random_range(0.0..0.05);
        mono_ok &= at(base_a + step, base_r) <= at(base_a, base_r) + 1e-15;
        mono_ok &= at(base_a, base_r + step) <= at(base_a, base_r) + 1e-15;
    }
    let elapsed = start.elapsed();
    outcome(
        range_ok && on_ok && outside_ok && mono_ok && elapsed < KERNEL_BUDGET,
        format!("range {range_ok}, on-segment {on_ok}, outside {outside_ok}, monotone {mono_ok}, {elapsed:.2?}"),
    )
}

// ---------------------------------------------------------------------------

/// All-pairs cheapest costs by Floyd-Warshall. Costs are non-negative, so
/// the cheapest walk is also the cheapest simple path.
fn floyd_warshall(adj: &[Vec<(usize, f64)>]) -> Vec<Vec<f64>> {
    let n = adj.len();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (u, row) in adj.iter().enumerate() {
        d[u][u] = 0.0;
        for &(v, w) in row {
            d[u][v] = d[u][v].min(w);
        }
    }
    for k in 0..n {
        for i in 0..n {
            if d[i][k].is_infinite() {
                continue;
            }
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

fn c3_paths() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p_min = PathSearchConfig::default().p_min;
    let mut matched = 0;
    let mut worst = 0.0f64;
    let mut trials = 0;
    while trials < PATH_GRIDS {
        let dims = [
            rng.random_range(1..=5),
            rng.random_range(1..=5),
            rng.random_range(1..=5),
        ];
        let spec = GridSpec::new(Point3::new(-0.3, 0.1, 0.7), 0.02, dims).unwrap();
        let mut grid = LikelihoodGrid::new(spec);
        let mut cells = Vec::new();
        for x in 0..dims[0] as i32 {
            for y in 0..dims[1] as i32 {
                for z in 0..dims[2] as i32 {
                    let p = if rng.random_bool(0.25) {
                        0.0
                    } else {
                        rng.random_range(0.0..=1.0)
                    };
                    if p > 0.0 {
                        grid.set([x, y, z], p).unwrap();
                    }
                    if p >= p_min {
                        cells.push(([x, y, z], p));
                    }
                }
            }
        }
        if cells.len() < 2 {
            continue;
        }
        trials += 1;
        let s = rng.random_range(0..cells.len());
        let t = (s + rng.random_range(1..cells.len())) % cells.len();

        // oracle graph from the cell list alone
        let adj: Vec<Vec<(usize, f64)>> = cells
            .iter()
            .map(|(u, pu)| {
                let mut out: Vec<(usize, f64)> = cells
                    .iter()
                    .enumerate()
                    .filter(|(_, (v, _))| v != u && (0..3).all(|i| (u[i] - v[i]).abs() <= 1))
                    .map(|(j, (_, pv))| (j, (-((pu + pv) / 2.0).ln()).max(0.0)))
                    .collect();
                out.sort_by(|a, b| a.1.total_cmp(&b.1));
                out
            })
            .collect();
        let best = floyd_warshall(&adj)[s][t];

        let graph = build_likelihood_graph(&grid, &PathSearchConfig::default());
        let found = min_cost_path(
            &graph,
            &[spec.center(&cells[s].0)],
            &[spec.center(&cells[t].0)],
        );
        let ok = match (&found, best.is_finite()) {
            (None, false) => true,
            (Some(path), true) => {
                // recompute the returned path's cost from the probabilities
                let p_of = |v: &[i32; 3]| grid.get(v);
                let recomputed: f64 = path
                    .voxels
                    .windows(2)
                    .map(|w| edge_cost(p_of(&w[0]), p_of(&w[1])))
                    .sum();
                let gap = (path.cost - best).abs();
                worst = worst.max(gap);
                gap <= PATH_COST_TOL && (recomputed - path.cost).abs() <= PATH_COST_TOL
            }
            _ => false,
        };
        matched += ok as usize;
    }
    let elapsed = start.elapsed();
    outcome(
        matched == PATH_GRIDS && elapsed < PATH_BUDGET,
        format!("{matched}/{PATH_GRIDS} grids match Floyd-Warshall, max cost gap {worst:.1e}, {elapsed:.2?}"),
    )
}

// ---------------------------------------------------------------------------

/// Three segments with bounded turns so the polyline stays branch-like.
fn random_polyline(rng: &mut ChaCha8Rng) -> [Point3; 4] {
    let mut dir = unit_vector(rng);
    let mut pts = [Point3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ); 4];
    for i in 1..4 {
        if i > 1 {
            let w = unit_vector(rng);
            let perp = (w - dir * w.dot(&dir)).normalize();
            let turn = rng.random_range(0.0..45f64.to_radians());
            dir = (dir * turn.cos() + perp * turn.sin()).normalize();
        }
        pts[i] = pts[i - 1] + dir * rng.random_range(0.05..0.3);
    }
    pts
}

fn sample_polyline(rng: &mut ChaCha8Rng, v: &[Point3; 4]) -> Vec<Point3> {
    let mut pts = vec![v[0], v[3]];
    for i in 0..3 {
        let n = rng.random_range(4..=20);
        for _ in 0..n {
            let t: f64 = rng.random();
            pts.push(v[i] + (v[i + 1] - v[i]) * t);
        }
    }
    pts
}

fn c4_fit() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, FIT_SIGMA).unwrap();
    let cfg = FitConfig::default();
    let (mut exact, mut noisy) = (0, 0);
    let (mut worst_cp, mut worst_rms) = (0.0f64, 0.0f64);
    for i in 0..POLYLINES {
        let truth = random_polyline(&mut rng);
        let pts = sample_polyline(&mut rng, &truth);
        let chain = fit_chain(
            &BranchCluster::new(pts.clone(), 0.9, i as u64, 0).unwrap(),
            &cfg,
        )
        .unwrap();
        let cps = chain.control_points();
        // orientation is canonical, so compare against either direction
        let fwd = cps
            .iter()
            .zip(&truth)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        let rev = cps
            .iter()
            .zip(truth.iter().rev())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        let err = fwd.min(rev);
        worst_cp = worst_cp.max(err);
        exact += (err < CP_TOL) as usize;

        let noisy_pts: Vec<Point3> = pts
            .iter()
            .map(|p| {
                p + Vector3::new(
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                )
            })
            .collect();
        let chain = fit_chain(
            &BranchCluster::new(noisy_pts.clone(), 0.9, i as u64, 0).unwrap(),
            &cfg,
        )
        .unwrap();
        let rms =
            (polyline_residual(&noisy_pts, chain.control_points()) / noisy_pts.len() as f64).sqrt();
        worst_rms = worst_rms.max(rms);
        noisy += (rms <= 2.0 * FIT_SIGMA) as usize;
    }
    let elapsed = start.elapsed();
    outcome(
        exact == POLYLINES && noisy == POLYLINES && elapsed < FIT_BUDGET,
        format!(
            "exact {exact}/{POLYLINES} (max cp error {worst_cp:.1e} m), noisy {noisy}/{POLYLINES} (max rms {worst_rms:.4} m), {elapsed:.2?}"
        ),
    )
}

// ---------------------------------------------------------------------------

fn c5_radius() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut hits = 0;
    for i in 0..CYLINDERS {
        let r = rng.random_range(0.01..=0.08);
        let len = rng.random_range(0.3..1.0);
        let axis = unit_vector(&mut rng);
        let u = {
            let w = unit_vector(&mut rng);
            (w - axis * w.dot(&axis)).normalize()
        };
        let v = axis.cross(&u);
        let origin = Point3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let pts: Vec<Point3> = (0..600)
            .map(|_| {
                let phi = rng.random_range(0.0..2.0 * PI);
                origin + axis * rng.random_range(0.0..len) + (u * phi.cos() + v * phi.sin()) * r
            })
            .collect();
        let est = estimate_radius(&BranchCluster::new(pts, 0.9, i as u64, 0).unwrap()).unwrap();
        hits += ((est - r).abs() <= RADIUS_REL_TOL * r) as usize;
    }
    outcome(
        hits >= RADIUS_MIN_HITS,
        format!("{hits}/{CYLINDERS} within {:.0}%", RADIUS_REL_TOL * 100.0),
    )
}

// ---------------------------------------------------------------------------

fn distance_to(gt: &SkeletonGraph, p: &Point3) -> f64 {
    gt.edges()
        .iter()
        .map(|&(a, b)| {
            point_segment_distance(p, &gt.vertices()[a].position, &gt.vertices()[b].position)
        })
        .fold(f64::INFINITY, f64::min)
}

fn c6_gap() -> Outcome {
    let cfg = PipelineConfig::default();
    let (mut reconnected, mut osr_ok) = (0, true);
    for seed in 0..GAP_TREES {
        let gt = generate_tree(&TreeGenParams {
            depth: 1,
            rng_seed: seed,
            ..TreeGenParams::default()
        })
        .unwrap()
        .skeleton;
        let mid = gt.vertices()[gt.vertex_count() / 2].position;
        let occluder = Occluder {
            center: mid,
            radius: GAP_OCCLUDER_RADIUS,
        };
        let params = OcclusionParams {
            rng_seed: seed,
            ..OcclusionParams::default()
        };
        let obs = simulate_with_occluders(&gt, &params, vec![occluder]).unwrap();
        let prepared = prepare(&obs.clusters, &cfg).unwrap();
        let out = finish(&prepared, &cfg, Method::Likelihood).unwrap();
        let bridge = &out.graph.vertices()[prepared.initial.vertex_count()..];
        let ok = prepared.initial.component_count() > 1
            && out.graph.component_count() == 1
            && !bridge.is_empty()
            && bridge.iter().all(|v| {
                v.provenance == Provenance::PathDerived
                    && distance_to(&gt, &v.position) <= BRIDGE_TOL
            });
        if ok {
            reconnected += 1;
            let report = label_vertices(&out.graph, &gt, cfg.match_radius).unwrap();
            osr_ok &= report.osr > 0.0;
        }
    }
    outcome(
        reconnected >= GAP_MIN_RECONNECTED && osr_ok,
        format!(
            "{reconnected}/{GAP_TREES} reconnected within {BRIDGE_TOL} m, OSR > 0 in all: {osr_ok}"
        ),
    )
}

// ---------------------------------------------------------------------------

fn mean_precision(results: &[CaseResult], method: Method, density: u8) -> f64 {
    let v: Vec<f64> = results
        .iter()
        .filter(|r| r.case.density == density)
        .flat_map(|r| {
            r.outputs
                .iter()
                .filter(|(m, _, _)| *m == method)
                .map(|(_, _, e)| e.precision)
        })
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn c7_trend(results: &[CaseResult], elapsed: Duration) -> Outcome {
    let mut pass = elapsed < SWEEP_BUDGET;
    let mut parts = Vec::new();
    for d in [3u8, 4] {
        let [l, m, f] =
            [Method::Likelihood, Method::Mst, Method::Ftsem].map(|x| mean_precision(results, x, d));
        let ok = l >= m && l >= f && l >= TREND_MIN_PRECISION;
        pass &= ok;
        parts.push(format!(
            "d{d}: likelihood {l:.3} mst {m:.3} ftsem {f:.3} ({})",
            if ok { "ok" } else { "no" }
        ));
    }
    let d1 = mean_precision(results, Method::Likelihood, 1);
    pass &= d1 >= TREND_MIN_PRECISION_D1;
    parts.push(format!("d1 likelihood {d1:.3}"));
    parts.push(format!("sweep {elapsed:.1?}"));
    outcome(pass, parts.join("; "))
}

fn c8_structure(results: &[CaseResult], cfg: &PipelineConfig) -> Outcome {
    let mut violations = BTreeMap::new();
    let mut note = |what: &'static str| *violations.entry(what).or_insert(0usize) += 1;
    for r in results {
        for (m, skel, _) in &r.outputs {
            match m {
                Method::Likelihood => {
                    if !skel.graph.is_acyclic() {
                        note("likelihood cycle");
                    }
                    if skel.graph.component_count() > r.initial_components {
                        note("likelihood component growth");
                    }
                }
                Method::Mst => {
                    if skel.graph.component_count() != 1 {
                        note("mst not connected");
                    }
                }
                Method::Ftsem => {}
            }
        }
    }
    // FTSEM is audited inside the sweep as well; re-derive it here explicitly
    let mut audited = 0;
    for r in results {
        let (_, obs) = generate_case(&r.case, cfg).unwrap();
        let prepared = prepare(&obs.clusters, cfg).unwrap();
        let out = ftsem_baseline(&prepared.initial, &cfg.ftsem).unwrap();
        if audit_ftsem(&prepared.initial, &out, &cfg.ftsem).is_err() {
            note("ftsem threshold violation");
        }
        audited += 1;
    }
    outcome(
        violations.is_empty(),
        format!(
            "{} cases, {audited} ftsem audits, violations {violations:?}",
            results.len()
        ),
    )
}

// ---------------------------------------------------------------------------

fn c9_metrics() -> Outcome {
    let line = |n: usize| {
        let vs = (0..n)
            .map(|i| SkeletonVertex::observed(Point3::new(0.01 * i as f64, 0.0, 0.0), 0.01))
            .collect();
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        SkeletonGraph::from_parts(vs, &edges).unwrap()
    };
    let gt = line(11); // 0.00 .. 0.10 m on the x axis
    let mut checks = Vec::new();

    // 7 observed + 1 path vertex on the line, 2 off it
    let mut vs: Vec<SkeletonVertex> = (0..7)
        .map(|i| SkeletonVertex::observed(Point3::new(0.01 * i as f64, 0.005, 0.0), 0.01))
        .collect();
    vs.push(SkeletonVertex::path_derived(
        Point3::new(0.09, 0.0, 0.015),
        0.01,
    ));
    vs.push(SkeletonVertex::observed(Point3::new(0.05, 0.03, 0.0), 0.01));
    vs.push(SkeletonVertex::path_derived(
        Point3::new(0.2, 0.0, 0.0),
        0.01,
    ));
    let out = SkeletonGraph::from_vertices(vs);
    let r = label_vertices(&out, &gt, 0.02).unwrap();
    // gt vertices 0.00..0.06 and 0.07..0.10 (via the path vertex at 0.09) are matched
    let expected = EvalReport::from_counts(8, 2, 0, 1);
    checks.push((
        "tp=8 fp=2 tp_occ=1",
        (r.tp, r.fp, r.tp_occ, r.osr) == (8, 2, 1, 0.1),
    ));
    checks.push((
        "precision 0.8",
        r.precision == expected.precision && r.precision == 0.8,
    ));
    checks.push(("recall 1", r.recall == 1.0 && r.fn_ == 0));

    // half the gt covered
    let half = SkeletonGraph::from_vertices(
        (0..5)
            .map(|i| SkeletonVertex::observed(Point3::new(0.01 * i as f64, 0.0, 0.0), 0.01))
            .collect(),
    );
    let r = label_vertices(&half, &gt, 0.0).unwrap();
    checks.push((
        "exact-radius recall 5/11",
        r.tp == 5 && r.fn_ == 6 && r.recall == 5.0 / 11.0 && r.precision == 1.0,
    ));

    // perfect skeleton
    let r = label_vertices(&gt, &gt, 0.02).unwrap();
    checks.push((
        "perfect",
        r.precision == 1.0 && r.recall == 1.0 && r.osr == 0.0,
    ));

    let failed: Vec<&str> = checks
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(n, _)| *n)
        .collect();
    outcome(
        failed.is_empty(),
        format!("{} fixtures, failed {failed:?}", checks.len()),
    )
}

// ---------------------------------------------------------------------------

fn c10_determinism(first_csv: &str, cfg: &PipelineConfig) -> Outcome {
    let again = run_sweep(cfg, &Method::ALL).unwrap();
    let second = to_csv(&sweep_rows(&again));
    let lines = first_csv.lines().count();
    outcome(
        first_csv == second,
        format!("{lines} csv lines, byte-identical {}", first_csv == second),
    )
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let mut report = |id: u8, name: &'static str, o: Outcome| {
        println!(
            "criterion {id:>2} {name:<22} {} {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((id, name, o));
    };

    report(1, "fusion algebra", c1_fusion());
    report(2, "kernel correctness", c2_kernel());
    report(3, "path optimality", c3_paths());
    report(4, "b-spline recovery", c4_fit());
    report(5, "radius estimation", c5_radius());
    report(6, "gap bridging", c6_gap());

    let cfg = PipelineConfig::default();
    let start = Instant::now();
    let sweep = run_sweep(&cfg, &Method::ALL).unwrap();
    let elapsed = start.elapsed();
    let csv = to_csv(&sweep_rows(&sweep));
    report(7, "precision trend", c7_trend(&sweep, elapsed));
    report(8, "structural invariants", c8_structure(&sweep, &cfg));
    report(9, "metric arithmetic", c9_metrics());
    report(10, "determinism", c10_determinism(&csv, &cfg));

    let mut unexpected = Vec::new();
    for (id, name, o) in &results {
        let known = KNOWN_FAILURES.contains(id);
        if o.pass == known {
            unexpected.push(format!(
                "{id} ({name}) {}",
                if o.pass {
                    "passed but is listed as known failure"
                } else {
                    "failed"
                }
            ));
        }
    }
    let passed = results.iter().filter(|(_, _, o)| o.pass).count();
    println!(
        "acceptance: {passed}/{} PASS, known failures {KNOWN_FAILURES:?}",
        results.len()
    );
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        for u in &unexpected {
            eprintln!("unexpected: criterion {u}");
        }
        ExitCode::FAILURE
    }
}
