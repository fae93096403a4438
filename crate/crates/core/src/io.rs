//! Line-oriented text formats.
//!
//! Clusters:
//!
//! ```text
//! cluster <id> <confidence> <n>
//! x y z            (n lines)
//! ```
//!
//! Skeleton:
//!
//! ```text
//! skeleton <n_vertices> <n_edges>
//! id x y z radius obs|path
//! u v
//! ```
//!
//! Occlusion mask: `mask <n>` then one `0`/`1` per ground-truth vertex.
//! Grid dump: `grid ox oy oz voxel_size nx ny nz n_cells` then `ix iy iz p`.
//! Volume export: `spheres <n>` then `x y z radius`.
//!
//! Floats are written in Rust's shortest round-trip form, so reading back a
//! written file reproduces every value exactly. Blank lines and lines starting
//! with `#` are ignored on input.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{BranchCluster, Point3};
use crate::graph::{Provenance, SkeletonGraph, SkeletonVertex};
use crate::likelihood::{GridSpec, LikelihoodGrid};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Non-blank, non-comment lines with 1-based line numbers.
struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    path: &'a Path,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str, path: &'a Path) -> Self {
        Self {
            inner: text.lines().enumerate(),
            path,
            last: 0,
        }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            msg: msg.into(),
        }
    }

    fn next_fields(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (i, raw) in self.inner.by_ref() {
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            self.last = i + 1;
            return Some((i + 1, t.split_whitespace().collect()));
        }
        None
    }

    fn expect_fields(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        let last = self.last;
        self.next_fields()
            .ok_or_else(|| self.err(last + 1, format!("unexpected end of file, expected {what}")))
    }

    fn parse<T: FromStr>(&self, line: usize, field: &str, what: &str) -> Result<T> {
        field
            .parse()
            .map_err(|_| self.err(line, format!("cannot parse {what} from '{field}'")))
    }

    fn finite(&self, line: usize, field: &str, what: &str) -> Result<f64> {
        let v: f64 = self.parse(line, field, what)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(line, format!("{what} must be finite, got '{field}'")))
        }
    }

    fn point(&self, line: usize, f: &[&str]) -> Result<Point3> {
        Ok(Point3::new(
            self.finite(line, f[0], "x")?,
            self.finite(line, f[1], "y")?,
            self.finite(line, f[2], "z")?,
        ))
    }

    fn arity(&self, line: usize, f: &[&str], n: usize, what: &str) -> Result<()> {
        if f.len() == n {
            Ok(())
        } else {
            Err(self.err(line, format!("{what} needs {n} fields, found {}", f.len())))
        }
    }

    fn finish(&mut self) -> Result<()> {
        match self.next_fields() {
            Some((line, _)) => Err(self.err(line, "trailing data after last record")),
            None => Ok(()),
        }
    }
}

pub fn format_clusters(clusters: &[BranchCluster]) -> String {
    let mut out = String::new();
    for c in clusters {
        let _ = writeln!(
            out,
            "cluster {} {} {}",
            c.id(),
            c.confidence(),
            c.points().len()
        );
        for p in c.points() {
            let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
        }
    }
    out
}

/// Parses a clusters file; `path` is only used in error messages.
pub fn parse_clusters(text: &str, path: &Path) -> Result<Vec<BranchCluster>> {
    let mut lines = Lines::new(text, path);
    let mut out = Vec::new();
    while let Some((line, f)) = lines.next_fields() {
        if f.first() != Some(&"cluster") {
            return Err(lines.err(line, "expected 'cluster <id> <confidence> <n>'"));
        }
        lines.arity(line, &f, 4, "cluster header")?;
        let id: u64 = lines.parse(line, f[1], "cluster id")?;
        let confidence = lines.finite(line, f[2], "confidence")?;
        let n: usize = lines.parse(line, f[3], "point count")?;
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let (pl, pf) = lines.expect_fields("a point line")?;
            lines.arity(pl, &pf, 3, "point")?;
            points.push(lines.point(pl, &pf)?);
        }
        let cluster = BranchCluster::new(points, confidence, id, 0)
            .map_err(|e| lines.err(line, e.to_string()))?;
        out.push(cluster);
    }
    Ok(out)
}

pub fn read_clusters(path: &Path) -> Result<Vec<BranchCluster>> {
    parse_clusters(&read_text(path)?, path)
}

pub fn write_clusters(path: &Path, clusters: &[BranchCluster]) -> Result<()> {
    write_text(path, &format_clusters(clusters))
}

fn provenance_tag(p: Provenance) -> &'static str {
    match p {
        Provenance::Observed => "obs",
        Provenance::PathDerived => "path",
    }
}

pub fn format_skeleton(g: &SkeletonGraph) -> String {
    let mut out = format!("skeleton {} {}\n", g.vertex_count(), g.edge_count());
    for (i, v) in g.vertices().iter().enumerate() {
        let p = v.position;
        let _ = writeln!(
            out,
            "{i} {} {} {} {} {}",
            p.x,
            p.y,
            p.z,
            v.radius,
            provenance_tag(v.provenance)
        );
    }
    for &(u, v) in g.edges() {
        let _ = writeln!(out, "{u} {v}");
    }
    out
}

pub fn parse_skeleton(text: &str, path: &Path) -> Result<SkeletonGraph> {
    let mut lines = Lines::new(text, path);
    let (line, f) = lines.expect_fields("skeleton header")?;
    if f.first() != Some(&"skeleton") {
        return Err(lines.err(line, "expected 'skeleton <n_vertices> <n_edges>'"));
    }
    lines.arity(line, &f, 3, "skeleton header")?;
    let nv: usize = lines.parse(line, f[1], "vertex count")?;
    let ne: usize = lines.parse(line, f[2], "edge count")?;

    let mut vertices = Vec::with_capacity(nv);
    for i in 0..nv {
        let (l, f) = lines.expect_fields("a vertex line")?;
        lines.arity(l, &f, 6, "vertex")?;
        let id: usize = lines.parse(l, f[0], "vertex id")?;
        if id != i {
            return Err(lines.err(l, format!("vertex id {id} out of order, expected {i}")));
        }
        let position = lines.point(l, &f[1..4])?;
        let radius = lines.finite(l, f[4], "radius")?;
        let provenance = match f[5] {
            "obs" => Provenance::Observed,
            "path" => Provenance::PathDerived,
            other => return Err(lines.err(l, format!("unknown provenance '{other}'"))),
        };
        vertices.push(SkeletonVertex {
            position,
            radius,
            provenance,
        });
    }
    let mut graph = SkeletonGraph::from_vertices(vertices);
    for _ in 0..ne {
        let (l, f) = lines.expect_fields("an edge line")?;
        lines.arity(l, &f, 2, "edge")?;
        let u: usize = lines.parse(l, f[0], "edge endpoint")?;
        let v: usize = lines.parse(l, f[1], "edge endpoint")?;
        graph
            .add_edge(u, v)
            .map_err(|e| lines.err(l, e.to_string()))?;
    }
    lines.finish()?;
    Ok(graph)
}

pub fn read_skeleton(path: &Path) -> Result<SkeletonGraph> {
    parse_skeleton(&read_text(path)?, path)
}

pub fn write_skeleton(path: &Path, g: &SkeletonGraph) -> Result<()> {
    write_text(path, &format_skeleton(g))
}

pub fn format_mask(mask: &[bool]) -> String {
    let mut out = format!("mask {}\n", mask.len());
    for &m in mask {
        out.push_str(if m { "1\n" } else { "0\n" });
    }
    out
}

pub fn parse_mask(text: &str, path: &Path) -> Result<Vec<bool>> {
    let mut lines = Lines::new(text, path);
    let (line, f) = lines.expect_fields("mask header")?;
    if f.first() != Some(&"mask") || f.len() != 2 {
        return Err(lines.err(line, "expected 'mask <n>'"));
    }
    let n: usize = lines.parse(line, f[1], "mask length")?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (l, f) = lines.expect_fields("a mask entry")?;
        match f.as_slice() {
            ["0"] => out.push(false),
            ["1"] => out.push(true),
            _ => return Err(lines.err(l, "mask entries must be 0 or 1")),
        }
    }
    lines.finish()?;
    Ok(out)
}

pub fn read_mask(path: &Path) -> Result<Vec<bool>> {
    parse_mask(&read_text(path)?, path)
}

pub fn format_grid(grid: &LikelihoodGrid) -> String {
    let s = grid.spec();
    let cells = grid.sorted_cells();
    let mut out = format!(
        "grid {} {} {} {} {} {} {} {}\n",
        s.origin.x,
        s.origin.y,
        s.origin.z,
        s.voxel_size,
        s.dims[0],
        s.dims[1],
        s.dims[2],
        cells.len()
    );
    for ([x, y, z], p) in cells {
        let _ = writeln!(out, "{x} {y} {z} {p}");
    }
    out
}

pub fn parse_grid(text: &str, path: &Path) -> Result<LikelihoodGrid> {
    let mut lines = Lines::new(text, path);
    let (line, f) = lines.expect_fields("grid header")?;
    if f.first() != Some(&"grid") {
        return Err(lines.err(line, "expected 'grid ox oy oz voxel_size nx ny nz n_cells'"));
    }
    lines.arity(line, &f, 9, "grid header")?;
    let origin = lines.point(line, &f[1..4])?;
    let voxel = lines.finite(line, f[4], "voxel size")?;
    let dims = [
        lines.parse(line, f[5], "nx")?,
        lines.parse(line, f[6], "ny")?,
        lines.parse(line, f[7], "nz")?,
    ];
    let n: usize = lines.parse(line, f[8], "cell count")?;
    let spec = GridSpec::new(origin, voxel, dims).map_err(|e| lines.err(line, e.to_string()))?;
    let mut grid = LikelihoodGrid::new(spec);
    for _ in 0..n {
        let (l, f) = lines.expect_fields("a grid cell")?;
        lines.arity(l, &f, 4, "grid cell")?;
        let idx = [
            lines.parse(l, f[0], "ix")?,
            lines.parse(l, f[1], "iy")?,
            lines.parse(l, f[2], "iz")?,
        ];
        let p = lines.finite(l, f[3], "probability")?;
        grid.set(idx, p).map_err(|e| lines.err(l, e.to_string()))?;
    }
    lines.finish()?;
    Ok(grid)
}

/// One sphere per vertex, for rendering the recovered volume.
pub fn format_volume(g: &SkeletonGraph) -> String {
    let mut out = format!("spheres {}\n", g.vertex_count());
    for v in g.vertices() {
        let p = v.position;
        let _ = writeln!(out, "{} {} {} {}", p.x, p.y, p.z, v.radius);
    }
    out
}

/// ASCII PLY with per-vertex `cluster` and `confidence` properties.
pub fn clusters_to_ply(clusters: &[BranchCluster]) -> String {
    let n: usize = clusters.iter().map(|c| c.points().len()).sum();
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {n}\nproperty double x\nproperty double y\n\
         property double z\nproperty uint cluster\nproperty double confidence\nend_header\n"
    );
    for c in clusters {
        for p in c.points() {
            let _ = writeln!(out, "{} {} {} {} {}", p.x, p.y, p.z, c.id(), c.confidence());
        }
    }
    out
}

/// Reads an ASCII PLY point cloud into clusters.
///
/// Points are grouped by an integer `cluster` vertex property when present,
/// otherwise all points form cluster 0. Confidence comes from a `confidence`
/// property (first point of each cluster) and defaults to 1.
pub fn ply_to_clusters(text: &str, path: &Path) -> Result<Vec<BranchCluster>> {
    let mut lines = Lines::new(text, path);
    let (l, f) = lines.expect_fields("'ply'")?;
    if f != ["ply"] {
        return Err(lines.err(l, "not a PLY file"));
    }
    let mut count = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    loop {
        let (l, f) = lines.expect_fields("PLY header line")?;
        match f.as_slice() {
            ["format", "ascii", _] => {}
            ["format", ..] => return Err(lines.err(l, "only ASCII PLY is supported")),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                count = Some(lines.parse::<usize>(l, n, "vertex count")?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", "list", ..] if in_vertex => {
                return Err(lines.err(l, "list properties on vertices are not supported"))
            }
            ["property", "list", ..] => {}
            ["property", _, name] => {
                if in_vertex {
                    props.push(name.to_string());
                }
            }
            ["end_header"] => break,
            _ => return Err(lines.err(l, "unrecognised PLY header line")),
        }
    }
    let n = count.ok_or_else(|| lines.err(lines.last, "PLY has no vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (Some(cx), Some(cy), Some(cz)) = (col("x"), col("y"), col("z")) else {
        return Err(lines.err(lines.last, "PLY vertices need x, y and z"));
    };
    let (ccl, ccf) = (col("cluster"), col("confidence"));

    let mut groups: std::collections::BTreeMap<u64, (f64, Vec<Point3>)> = Default::default();
    for _ in 0..n {
        let (l, f) = lines.expect_fields("a PLY vertex")?;
        lines.arity(l, &f, props.len(), "PLY vertex")?;
        let p = lines.point(l, &[f[cx], f[cy], f[cz]])?;
        let id: u64 = match ccl {
            Some(c) => lines.parse(l, f[c], "cluster")?,
            None => 0,
        };
        let conf = match ccf {
            Some(c) => lines.finite(l, f[c], "confidence")?,
            None => 1.0,
        };
        groups.entry(id).or_insert((conf, Vec::new())).1.push(p);
    }
    groups
        .into_iter()
        .map(|(id, (conf, pts))| BranchCluster::new(pts, conf, id, 0))
        .collect()
}
