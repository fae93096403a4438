//! End-to-end runs: clusters to skeleton for each method, dataset generation,
//! and the in-memory evaluation sweep.

use std::path::{Path, PathBuf};

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{audit_ftsem, bridge_vertices, ftsem_baseline, mst_baseline};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{label_vertices_flagged, EvalReport, EvalRow};
use crate::fit::fit_chain;
use crate::geometry::{BranchCluster, SegmentChain};
use crate::graph::{Provenance, SkeletonGraph};
use crate::io;
use crate::likelihood::{GridSpec, LikelihoodGrid};
use crate::skeleton::{
    build_initial_graph, build_likelihood_graph, join_subgraphs, laplacian_smooth, sample_vertices,
};
use crate::synth::{
    generate_tree, simulate_observations, GroundTruth, Observation, OcclusionParams, Species,
    TreeGenParams,
};

pub const CLUSTERS_FILE: &str = "clusters.txt";
pub const GT_FILE: &str = "gt_skeleton.txt";
pub const MASK_FILE: &str = "occluded_mask.txt";
pub const META_FILE: &str = "tree.toml";
pub const GRID_FILE: &str = "grid.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Likelihood,
    Mst,
    Ftsem,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Likelihood, Method::Mst, Method::Ftsem];

    pub fn name(self) -> &'static str {
        match self {
            Method::Likelihood => "likelihood",
            Method::Mst => "mst",
            Method::Ftsem => "ftsem",
        }
    }

    pub fn skeleton_file(self) -> String {
        format!("skeleton_{}.txt", self.name())
    }

    pub fn volume_file(self) -> String {
        format!("volume_{}.txt", self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}' (likelihood, mst, ftsem)")))
    }
}

/// Stages shared by every method.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub chains: Vec<SegmentChain>,
    pub grid: LikelihoodGrid,
    /// Forest after smoothing and long-edge removal.
    pub initial: SkeletonGraph,
    pub smoothing_iterations: usize,
}

/// Fits, accumulates, samples, smooths and builds the initial forest.
///
/// Clusters that cannot be fitted are skipped with a warning.
pub fn prepare(clusters: &[BranchCluster], cfg: &PipelineConfig) -> Result<Prepared> {
    let fit_cfg = cfg.fit_config();
    let fitted: Vec<Option<SegmentChain>> = clusters
        .par_iter()
        .map(|c| match fit_chain(c, &fit_cfg) {
            Ok(chain) => Some(chain),
            Err(e) => {
                warn!("skipping cluster {}: {e}", c.id());
                None
            }
        })
        .collect();
    let chains: Vec<SegmentChain> = fitted.into_iter().flatten().collect();
    if chains.is_empty() {
        return Err(Error::EmptyInput("no cluster could be fitted"));
    }

    let spec = GridSpec::enclosing(&chains, &cfg.kernel, cfg.voxel_size)?;
    let mut grid = LikelihoodGrid::new(spec);
    grid.accumulate(&chains, &cfg.kernel);

    let sampled = sample_vertices(&chains, cfg.voxel_size)?;
    let smoothed = laplacian_smooth(&sampled, &cfg.smoothing);
    let initial = build_initial_graph(smoothed.vertices, cfg.voxel_size)?;
    debug!(
        "{} chains, {} grid cells, {} vertices, {} fragments after {} smoothing iterations",
        chains.len(),
        grid.len(),
        initial.vertex_count(),
        initial.component_count(),
        smoothed.iterations
    );
    Ok(Prepared {
        chains,
        grid,
        initial,
        smoothing_iterations: smoothed.iterations,
    })
}

/// A method's output skeleton.
#[derive(Debug, Clone)]
pub struct Skeleton {
    pub graph: SkeletonGraph,
    /// Vertices counted as occluded recoveries when scoring.
    pub occluded_flags: Vec<bool>,
}

/// Per-vertex recovery flags: provenance for the likelihood method, bridge
/// incidence for the single-edge baselines.
pub fn occluded_flags(graph: &SkeletonGraph, method: Method, voxel_size: f64) -> Vec<bool> {
    match method {
        Method::Likelihood => graph
            .vertices()
            .iter()
            .map(|v| v.provenance == Provenance::PathDerived)
            .collect(),
        Method::Mst | Method::Ftsem => bridge_vertices(graph, voxel_size),
    }
}

/// Joins the fragments of `prepared` with `method`.
pub fn finish(prepared: &Prepared, cfg: &PipelineConfig, method: Method) -> Result<Skeleton> {
    let graph = match method {
        Method::Likelihood => {
            let lgraph = build_likelihood_graph(&prepared.grid, &cfg.path_search);
            let out = join_subgraphs(&prepared.initial, &lgraph, &cfg.path_search)?;
            debug!("likelihood joins: {}", out.joins.len());
            out.graph
        }
        Method::Mst => mst_baseline(prepared.initial.vertices())?,
        Method::Ftsem => {
            let out = ftsem_baseline(&prepared.initial, &cfg.ftsem)?;
            audit_ftsem(&prepared.initial, &out, &cfg.ftsem)?;
            out.graph
        }
    };
    if !graph.is_acyclic() {
        return Err(Error::Invariant(format!(
            "{} output has a cycle",
            method.name()
        )));
    }
    let occluded_flags = occluded_flags(&graph, method, cfg.voxel_size);
    Ok(Skeleton {
        graph,
        occluded_flags,
    })
}

pub fn skeletonize(
    clusters: &[BranchCluster],
    cfg: &PipelineConfig,
    method: Method,
) -> Result<Skeleton> {
    finish(&prepare(clusters, cfg)?, cfg, method)
}

/// SplitMix64 finaliser, used to derive independent seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// One (tree, density) entry of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeCase {
    pub id: String,
    pub species: Species,
    pub density: u8,
    pub tree_seed: u64,
    pub occlusion_seed: u64,
}

/// All cases in species, tree, density order.
///
/// The tree seed depends only on species and tree index, so the same tree is
/// observed at every density level.
pub fn dataset_cases(cfg: &PipelineConfig) -> Vec<TreeCase> {
    let d = &cfg.dataset;
    let mut out = Vec::new();
    for &species in &d.species {
        for t in 0..d.trees_per_species {
            let tree_seed = derive_seed(&[cfg.master_seed, species as u64, t as u64]);
            for &density in &d.densities {
                out.push(TreeCase {
                    id: format!("{}_{t:03}_d{density}", species.name()),
                    species,
                    density,
                    tree_seed,
                    occlusion_seed: derive_seed(&[tree_seed, density as u64, 0x6f]),
                });
            }
        }
    }
    out
}

pub fn tree_params(case: &TreeCase, cfg: &PipelineConfig) -> TreeGenParams {
    match &cfg.dataset.tree {
        Some(t) => TreeGenParams {
            rng_seed: case.tree_seed,
            ..t.clone()
        },
        None => TreeGenParams::preset(case.species, case.tree_seed),
    }
}

pub fn occlusion_params(case: &TreeCase, cfg: &PipelineConfig) -> OcclusionParams {
    OcclusionParams {
        rng_seed: case.occlusion_seed,
        foliage_density_level: case.density,
        ..cfg.dataset.occlusion.clone()
    }
}

pub fn generate_case(case: &TreeCase, cfg: &PipelineConfig) -> Result<(GroundTruth, Observation)> {
    let gt = generate_tree(&tree_params(case, cfg))?;
    let obs = simulate_observations(&gt.skeleton, &occlusion_params(case, cfg))?;
    Ok((gt, obs))
}

pub fn write_case(dir: &Path, case: &TreeCase, gt: &GroundTruth, obs: &Observation) -> Result<()> {
    io::write_clusters(&dir.join(CLUSTERS_FILE), &obs.clusters)?;
    io::write_skeleton(&dir.join(GT_FILE), &gt.skeleton)?;
    io::write_text(&dir.join(MASK_FILE), &io::format_mask(&obs.occluded))?;
    let meta = toml::to_string(case).expect("case metadata serialises");
    io::write_text(&dir.join(META_FILE), &meta)
}

pub fn read_case(dir: &Path) -> Result<TreeCase> {
    let path = dir.join(META_FILE);
    toml::from_str(&io::read_text(&path)?).map_err(|e| Error::Parse {
        path,
        line: e.span().map_or(0, |s| s.start),
        msg: e.message().to_string(),
    })
}

/// Generates every case and writes it under `out_dir/<case id>`.
pub fn write_dataset(cfg: &PipelineConfig, out_dir: &Path) -> Result<Vec<TreeCase>> {
    let cases = dataset_cases(cfg);
    cases.par_iter().try_for_each(|case| {
        let (gt, obs) = generate_case(case, cfg)?;
        write_case(&out_dir.join(&case.id), case, &gt, &obs)
    })?;
    Ok(cases)
}

/// Tree directories under `root`, sorted by name: `root` itself when it holds
/// a clusters file, otherwise its immediate subdirectories that do.
pub fn tree_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join(CLUSTERS_FILE).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.join(CLUSTERS_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn evaluate_skeleton(
    skeleton: &Skeleton,
    gt: &SkeletonGraph,
    cfg: &PipelineConfig,
) -> Result<EvalReport> {
    label_vertices_flagged(
        &skeleton.graph,
        gt,
        cfg.match_radius,
        &skeleton.occluded_flags,
    )
}

/// Results for one case across the requested methods.
#[derive(Debug, Clone)]
pub struct CaseResult {
    pub case: TreeCase,
    pub initial_components: usize,
    pub outputs: Vec<(Method, Skeleton, EvalReport)>,
}

pub fn run_case(case: &TreeCase, cfg: &PipelineConfig, methods: &[Method]) -> Result<CaseResult> {
    let (gt, obs) = generate_case(case, cfg)?;
    let prepared = prepare(&obs.clusters, cfg)?;
    let mut outputs = Vec::with_capacity(methods.len());
    for &m in methods {
        let skel = finish(&prepared, cfg, m)?;
        let report = evaluate_skeleton(&skel, &gt.skeleton, cfg)?;
        outputs.push((m, skel, report));
    }
    Ok(CaseResult {
        case: case.clone(),
        initial_components: prepared.initial.component_count(),
        outputs,
    })
}

/// Generates, skeletonizes and scores every case in memory.
///
/// Cases run in parallel; results keep case order, so the rows are the same
/// for any thread count.
pub fn run_sweep(cfg: &PipelineConfig, methods: &[Method]) -> Result<Vec<CaseResult>> {
    cfg.validate()?;
    dataset_cases(cfg)
        .par_iter()
        .map(|case| run_case(case, cfg, methods))
        .collect()
}

pub fn sweep_rows(results: &[CaseResult]) -> Vec<EvalRow> {
    results
        .iter()
        .flat_map(|r| {
            r.outputs.iter().map(|(m, _, report)| EvalRow {
                tree_id: r.case.id.clone(),
                tree_type: r.case.species.name().to_string(),
                method: m.name().to_string(),
                density: r.case.density,
                report: EvalReport {
                    labels: Vec::new(),
                    ..report.clone()
                },
            })
        })
        .collect()
}

/// Runs `f` on a rayon pool with `jobs` threads (0 = rayon's default).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}
