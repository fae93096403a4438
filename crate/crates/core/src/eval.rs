//! Scoring against ground truth: per-vertex TP/FP labels, FN over ground-truth
//! vertices, precision, recall and the occluded skeleton ratio.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rstar::primitives::GeomWithData;
use rstar::RTree;

use crate::error::{Error, Result};
use crate::geometry::{point_segment_distance, Point3};
use crate::graph::{Provenance, SkeletonGraph};

/// Default match radius (m).
pub const MATCH_RADIUS: f64 = 0.02;

pub const CSV_HEADER: &str = "tree_id,method,density,precision,recall,osr,tp,fp,fn,tp_occ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VertexLabel {
    Tp,
    /// True positive recovered through a minimum-cost path.
    TpOcc,
    Fp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    /// Ground-truth vertices with no output vertex within the match radius.
    pub fn_: usize,
    pub tp_occ: usize,
    pub precision: f64,
    pub recall: f64,
    pub osr: f64,
    pub labels: Vec<VertexLabel>,
}

impl EvalReport {
    /// Derives the ratios from raw counts. Empty denominators give 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tp_occ: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        Self {
            tp,
            fp,
            fn_,
            tp_occ,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            osr: ratio(tp_occ, tp + fp),
            labels: Vec::new(),
        }
    }
}

type Indexed = GeomWithData<[f64; 3], usize>;

fn tree_of(points: impl Iterator<Item = Point3>) -> RTree<Indexed> {
    RTree::bulk_load(
        points
            .enumerate()
            .map(|(i, p)| GeomWithData::new([p.x, p.y, p.z], i))
            .collect(),
    )
}

/// Continuous distance queries against the ground-truth polyline.
struct Polyline<'a> {
    gt: &'a SkeletonGraph,
    tree: RTree<Indexed>,
    adj: Vec<Vec<usize>>,
    max_edge: f64,
}

impl<'a> Polyline<'a> {
    fn new(gt: &'a SkeletonGraph) -> Self {
        Self {
            gt,
            tree: tree_of(gt.vertices().iter().map(|v| v.position)),
            adj: gt.adjacency(),
            max_edge: gt
                .edges()
                .iter()
                .map(|&e| gt.edge_length(e))
                .fold(0.0, f64::max),
        }
    }

    /// True when `p` is within `radius` of a ground-truth vertex or edge.
    ///
    /// An edge within `radius` of `p` has an endpoint within
    /// `radius + max_edge`, so only edges at those vertices are tested.
    fn within(&self, p: &Point3, radius: f64) -> bool {
        let reach = radius + self.max_edge;
        let verts = self.gt.vertices();
        self.tree
            .locate_within_distance([p.x, p.y, p.z], reach * reach)
            .any(|hit| {
                let a = hit.data;
                (verts[a].position - p).norm() <= radius
                    || self.adj[a].iter().any(|&b| {
                        point_segment_distance(p, &verts[a].position, &verts[b].position) <= radius
                    })
            })
    }
}

/// Labels `output` against `gt`, counting path-derived true positives as
/// occluded recoveries.
pub fn label_vertices(
    output: &SkeletonGraph,
    gt: &SkeletonGraph,
    radius: f64,
) -> Result<EvalReport> {
    let flags: Vec<bool> = output
        .vertices()
        .iter()
        .map(|v| v.provenance == Provenance::PathDerived)
        .collect();
    label_vertices_flagged(output, gt, radius, &flags)
}

/// Same as [`label_vertices`] with an explicit per-vertex occluded-recovery
/// flag, used for the baselines whose joins are single edges.
pub fn label_vertices_flagged(
    output: &SkeletonGraph,
    gt: &SkeletonGraph,
    radius: f64,
    occ: &[bool],
) -> Result<EvalReport> {
    if output.is_empty() {
        return Err(Error::EmptyInput("output skeleton has no vertices"));
    }
    if gt.is_empty() {
        return Err(Error::EmptyInput("ground-truth skeleton has no vertices"));
    }
    if occ.len() != output.vertex_count() {
        return Err(Error::InvalidGeometry(format!(
            "{} occlusion flags for {} vertices",
            occ.len(),
            output.vertex_count()
        )));
    }
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::Config(format!(
            "match radius must be >= 0, got {radius}"
        )));
    }

    let line = Polyline::new(gt);
    let labels: Vec<VertexLabel> = output
        .vertices()
        .iter()
        .zip(occ)
        .map(|(v, &o)| match (line.within(&v.position, radius), o) {
            (false, _) => VertexLabel::Fp,
            (true, true) => VertexLabel::TpOcc,
            (true, false) => VertexLabel::Tp,
        })
        .collect();

    let out_tree = tree_of(output.vertices().iter().map(|v| v.position));
    let fn_ = gt
        .vertices()
        .iter()
        .filter(|g| {
            let q = [g.position.x, g.position.y, g.position.z];
            out_tree
                .locate_within_distance(q, radius * radius)
                .next()
                .is_none()
        })
        .count();

    let fp = labels.iter().filter(|&&l| l == VertexLabel::Fp).count();
    let tp_occ = labels.iter().filter(|&&l| l == VertexLabel::TpOcc).count();
    let tp = labels.len() - fp;
    let mut report = EvalReport::from_counts(tp, fp, fn_, tp_occ);
    report.labels = labels;
    Ok(report)
}

/// One scored (tree, method) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub tree_id: String,
    /// Species or topology family, used to group rows for the summary.
    pub tree_type: String,
    pub method: String,
    pub density: u8,
    pub report: EvalReport,
}

/// Mean scores for one (tree type, method, density) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryCell {
    pub tree_type: String,
    pub method: String,
    pub density: u8,
    pub trees: usize,
    pub precision: f64,
    pub recall: f64,
    pub osr: f64,
}

/// Per-cell arithmetic means, ordered by (tree type, method, density).
pub fn aggregate(rows: &[EvalRow]) -> Result<Vec<SummaryCell>> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("no evaluation rows to aggregate"));
    }
    let mut cells: BTreeMap<(&str, &str, u8), Vec<&EvalReport>> = BTreeMap::new();
    for r in rows {
        cells
            .entry((&r.tree_type, &r.method, r.density))
            .or_default()
            .push(&r.report);
    }
    Ok(cells
        .into_iter()
        .map(|((tree_type, method, density), reports)| {
            let n = reports.len() as f64;
            let mean = |f: fn(&EvalReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
            SummaryCell {
                tree_type: tree_type.to_string(),
                method: method.to_string(),
                density,
                trees: reports.len(),
                precision: mean(|r| r.precision),
                recall: mean(|r| r.recall),
                osr: mean(|r| r.osr),
            }
        })
        .collect())
}

/// Rows in input order under [`CSV_HEADER`], ratios with six decimals.
pub fn to_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let e = &r.report;
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{},{},{},{}",
            r.tree_id,
            r.method,
            r.density,
            e.precision,
            e.recall,
            e.osr,
            e.tp,
            e.fp,
            e.fn_,
            e.tp_occ
        );
    }
    out
}

/// Methods as rows, densities as columns, `precision/recall/osr` per cell.
pub fn summary_table(cells: &[SummaryCell]) -> String {
    let mut densities: Vec<u8> = cells.iter().map(|c| c.density).collect();
    densities.sort_unstable();
    densities.dedup();
    let mut groups: BTreeMap<(&str, &str), BTreeMap<u8, &SummaryCell>> = BTreeMap::new();
    for c in cells {
        groups
            .entry((&c.tree_type, &c.method))
            .or_default()
            .insert(c.density, c);
    }

    let mut out = format!("{:<10} {:<11}", "type", "method");
    for d in &densities {
        let _ = write!(out, " {:>20}", format!("density {d} (P/R/OSR)"));
    }
    out.push('\n');
    for ((tree_type, method), by_density) in groups {
        let _ = write!(out, "{tree_type:<10} {method:<11}");
        for d in &densities {
            match by_density.get(d) {
                Some(c) => {
                    let _ = write!(
                        out,
                        " {:>20}",
                        format!("{:.3}/{:.3}/{:.3}", c.precision, c.recall, c.osr)
                    );
                }
                None => {
                    let _ = write!(out, " {:>20}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}
