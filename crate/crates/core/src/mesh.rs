//! Conforming triangulations of rectangles.
//!
//! A [`TriMesh`] stores vertices, counterclockwise triangles and the full
//! interior-edge adjacency needed by the gradient-jump penalty, together with
//! the per-element geometry used during assembly (areas and P1 basis
//! gradients). Meshes are immutable after construction.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point2 = [f64; 2];

/// Relative tolerance for deciding that a vertex lies on a crease segment.
const ON_SEGMENT_TOL: f64 = 1e-10;

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub const fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    /// `[0, 1]²`
    pub const fn unit() -> Self {
        Rect::new(0.0, 1.0, 0.0, 1.0)
    }

    /// `[-0.5, 0.5]²`
    pub const fn centered_unit() -> Self {
        Rect::new(-0.5, 0.5, -0.5, 0.5)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn center(&self) -> Point2 {
        [0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)]
    }

    /// The two diagonals of the rectangle.
    pub fn diagonals(&self) -> Vec<Segment> {
        vec![
            Segment::new([self.x0, self.y0], [self.x1, self.y1]),
            Segment::new([self.x0, self.y1], [self.x1, self.y0]),
        ]
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.x0, self.x1, self.y0, self.y1]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x1 <= self.x0 || self.y1 <= self.y0 {
            return Err(Error::InvalidArgument(format!("degenerate rectangle {self:?}")));
        }
        Ok(())
    }
}

/// Straight segment in the reference plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point2,
    pub b: Point2,
}

impl Segment {
    pub const fn new(a: Point2, b: Point2) -> Self {
        Segment { a, b }
    }

    pub fn length(&self) -> f64 {
        (self.b[0] - self.a[0]).hypot(self.b[1] - self.a[1])
    }

    /// Euclidean distance from `p` to the closed segment.
    pub fn distance_to(&self, p: Point2) -> f64 {
        let (dx, dy) = (self.b[0] - self.a[0], self.b[1] - self.a[1]);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((p[0] - self.a[0]) * dx + (p[1] - self.a[1]) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = [self.a[0] + t * dx, self.a[1] + t * dy];
        (p[0] - q[0]).hypot(p[1] - q[1])
    }
}

/// Structured triangulation pattern of each grid cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Two triangles per cell, split along the lower-left to upper-right diagonal.
    #[default]
    Diagonal,
    /// Four triangles per cell around an added center vertex.
    CrissCross,
}

/// Edge shared by two triangles. The normal points from `left` into `right`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteriorEdge {
    /// Endpoints, ordered counterclockwise with respect to `left`.
    pub vertices: [usize; 2],
    pub left: usize,
    pub right: usize,
    pub length: f64,
    pub normal: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub triangle: usize,
}

/// A crease set Γ and the subdomain label of every triangle.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CreaseSpec {
    pub segments: Vec<Segment>,
    /// One label per triangle, filled in when the spec is attached to a mesh.
    pub subdomain_labels: Vec<usize>,
}

impl CreaseSpec {
    pub fn new(segments: Vec<Segment>) -> Self {
        CreaseSpec {
            segments,
            subdomain_labels: Vec::new(),
        }
    }

    pub fn num_subdomains(&self) -> usize {
        self.subdomain_labels.iter().max().map_or(0, |m| m + 1)
    }
}

#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Point2>,
    triangles: Vec<[usize; 3]>,
    interior_edges: Vec<InteriorEdge>,
    boundary_edges: Vec<BoundaryEdge>,
    crease_edge: Vec<bool>,
    creases: Option<CreaseSpec>,
    h_max: f64,
    areas: Vec<f64>,
    basis_gradients: Vec<[[f64; 2]; 3]>,
}

impl TriMesh {
    /// Builds a mesh from vertices and counterclockwise triangles.
    pub fn new(vertices: Vec<Point2>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::InvalidArgument("mesh has no triangles".into()));
        }
        let nv = vertices.len();
        let mut areas = Vec::with_capacity(triangles.len());
        let mut basis_gradients = Vec::with_capacity(triangles.len());
        let mut h_max = 0.0f64;
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(Error::InvalidArgument(format!(
                    "triangle {t} references a missing vertex"
                )));
            }
            let [p0, p1, p2] = tri.map(|v| vertices[v]);
            let twice_area = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
            if !(twice_area > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "triangle {t} is degenerate or clockwise (signed area {})",
                    0.5 * twice_area
                )));
            }
            areas.push(0.5 * twice_area);
            basis_gradients.push([
                [(p1[1] - p2[1]) / twice_area, (p2[0] - p1[0]) / twice_area],
                [(p2[1] - p0[1]) / twice_area, (p0[0] - p2[0]) / twice_area],
                [(p0[1] - p1[1]) / twice_area, (p1[0] - p0[0]) / twice_area],
            ]);
            for (a, b) in [(p0, p1), (p1, p2), (p2, p0)] {
                h_max = h_max.max((b[0] - a[0]).hypot(b[1] - a[1]));
            }
        }

        // Edges in first-encounter order so that construction is deterministic.
        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut owners: Vec<([usize; 2], Vec<usize>)> = Vec::new();
        for (t, tri) in triangles.iter().enumerate() {
            for i in 0..3 {
                let (a, b) = (tri[i], tri[(i + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let e = *index.entry(key).or_insert_with(|| {
                    owners.push(([a, b], Vec::new()));
                    owners.len() - 1
                });
                owners[e].1.push(t);
            }
        }

        let mut interior_edges = Vec::new();
        let mut boundary_edges = Vec::new();
        for ([a, b], tris) in owners {
            match tris.as_slice() {
                [t] => boundary_edges.push(BoundaryEdge {
                    vertices: [a, b],
                    triangle: *t,
                }),
                [left, right] => {
                    let (pa, pb) = (vertices[a], vertices[b]);
                    let (dx, dy) = (pb[0] - pa[0], pb[1] - pa[1]);
                    let length = dx.hypot(dy);
                    interior_edges.push(InteriorEdge {
                        vertices: [a, b],
                        left: *left,
                        right: *right,
                        length,
                        normal: [dy / length, -dx / length],
                    });
                }
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "edge ({a}, {b}) is shared by {} triangles",
                        tris.len()
                    )))
                }
            }
        }

        let crease_edge = vec![false; interior_edges.len()];
        Ok(TriMesh {
            vertices,
            triangles,
            interior_edges,
            boundary_edges,
            crease_edge,
            creases: None,
            h_max,
            areas,
            basis_gradients,
        })
    }

    /// Flags the interior edges lying on `segments`, checks that every segment
    /// is covered by mesh edges and labels the subdomains they separate.
    pub fn with_creases(mut self, segments: Vec<Segment>) -> Result<Self> {
        let scale = self
            .vertices
            .iter()
            .fold(0.0f64, |m, p| m.max(p[0].abs()).max(p[1].abs()))
            .max(self.h_max);
        let tol = ON_SEGMENT_TOL * scale;
        let on_segment = |s: &Segment, v: usize| s.distance_to(self.vertices[v]) <= tol;

        let mut crease_edge = vec![false; self.interior_edges.len()];
        for (k, seg) in segments.iter().enumerate() {
            let mut covered = 0.0;
            for (e, edge) in self.interior_edges.iter().enumerate() {
                let [a, b] = edge.vertices;
                if on_segment(seg, a) && on_segment(seg, b) {
                    crease_edge[e] = true;
                    covered += edge.length;
                }
            }
            for edge in &self.boundary_edges {
                let [a, b] = edge.vertices;
                if on_segment(seg, a) && on_segment(seg, b) {
                    let (pa, pb) = (self.vertices[a], self.vertices[b]);
                    covered += (pb[0] - pa[0]).hypot(pb[1] - pa[1]);
                }
            }
            let len = seg.length();
            if len == 0.0 || (covered - len).abs() > 1e-9 * len {
                return Err(Error::UnfittedCrease { segment: k });
            }
        }
        self.crease_edge = crease_edge;
        let subdomain_labels = self.label_subdomains();
        self.creases = Some(CreaseSpec {
            segments,
            subdomain_labels,
        });
        Ok(self)
    }

    /// Connected components of the triangle adjacency graph with crease edges removed.
    fn label_subdomains(&self) -> Vec<usize> {
        let nt = self.triangles.len();
        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); nt];
        for (edge, &crease) in self.interior_edges.iter().zip(&self.crease_edge) {
            if !crease {
                neighbors[edge.left].push(edge.right);
                neighbors[edge.right].push(edge.left);
            }
        }
        let mut labels = vec![usize::MAX; nt];
        let mut next = 0;
        let mut queue = VecDeque::new();
        for seed in 0..nt {
            if labels[seed] != usize::MAX {
                continue;
            }
            labels[seed] = next;
            queue.push_back(seed);
            while let Some(t) = queue.pop_front() {
                for &u in &neighbors[t] {
                    if labels[u] == usize::MAX {
                        labels[u] = next;
                        queue.push_back(u);
                    }
                }
            }
            next += 1;
        }
        labels
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn interior_edges(&self) -> &[InteriorEdge] {
        &self.interior_edges
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    /// One flag per interior edge, true when the edge lies on the crease set.
    pub fn crease_edges(&self) -> &[bool] {
        &self.crease_edge
    }

    pub fn creases(&self) -> Option<&CreaseSpec> {
        self.creases.as_ref()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Largest triangle diameter.
    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn area(&self, t: usize) -> f64 {
        self.areas[t]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Gradients of the three P1 hat functions of triangle `t`, in local vertex order.
    pub fn basis_gradients(&self, t: usize) -> &[[f64; 2]; 3] {
        &self.basis_gradients[t]
    }

    pub fn barycenter(&self, t: usize) -> Point2 {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Plain-text dump: one `x y` line per vertex, then one `i j k` line per
    /// triangle (0-based indices).
    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for [x, y] in &self.vertices {
            writeln!(out, "{x} {y}")?;
        }
        for [i, j, k] in &self.triangles {
            writeln!(out, "{i} {j} {k}")?;
        }
        Ok(())
    }

    /// Reads the format written by [`TriMesh::write_dump`].
    pub fn read_dump<R: BufRead>(input: R) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            what: format!("mesh dump line {line}"),
            message,
        };
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<mesh dump>", e))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.len() {
                0 => continue,
                2 if triangles.is_empty() => {
                    let mut p = [0.0; 2];
                    for (slot, f) in p.iter_mut().zip(&fields) {
                        *slot = f.parse().map_err(|e| parse_err(n + 1, format!("{e}")))?;
                    }
                    vertices.push(p);
                }
                3 => {
                    let mut t = [0usize; 3];
                    for (slot, f) in t.iter_mut().zip(&fields) {
                        *slot = f.parse().map_err(|e| parse_err(n + 1, format!("{e}")))?;
                    }
                    triangles.push(t);
                }
                k => return Err(parse_err(n + 1, format!("unexpected {k} fields"))),
            }
        }
        TriMesh::new(vertices, triangles)
    }
}

fn grid_vertices(n: usize, domain: &Rect) -> Vec<Point2> {
    let (dx, dy) = (domain.width() / n as f64, domain.height() / n as f64);
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            // Pin the last row/column to the exact boundary coordinate.
            let x = if i == n { domain.x1 } else { domain.x0 + i as f64 * dx };
            let y = if j == n { domain.y1 } else { domain.y0 + j as f64 * dy };
            vertices.push([x, y]);
        }
    }
    vertices
}

fn check_subdivisions(n: usize, domain: &Rect) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("subdivision count must be at least 1".into()));
    }
    domain.validate()
}

/// Uniform `n × n` grid with every cell split along its rising diagonal.
pub fn structured_square(n: usize, domain: Rect) -> Result<TriMesh> {
    structured_square_with(n, domain, Pattern::Diagonal)
}

pub fn structured_square_with(n: usize, domain: Rect, pattern: Pattern) -> Result<TriMesh> {
    check_subdivisions(n, &domain)?;
    let mut vertices = grid_vertices(n, &domain);
    let node = |i: usize, j: usize| j * (n + 1) + i;
    let mut triangles = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let (v00, v10, v11, v01) = (node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1));
            match pattern {
                Pattern::Diagonal => {
                    triangles.push([v00, v10, v11]);
                    triangles.push([v00, v11, v01]);
                }
                Pattern::CrissCross => {
                    let (a, b) = (vertices[v00], vertices[v11]);
                    vertices.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
                    let c = vertices.len() - 1;
                    triangles.push([v00, v10, c]);
                    triangles.push([v10, v11, c]);
                    triangles.push([v11, v01, c]);
                    triangles.push([v01, v00, c]);
                }
            }
        }
    }
    TriMesh::new(vertices, triangles)
}

/// Criss-cross grid whose edges cover the given crease segments.
///
/// Fails with [`Error::UnfittedCrease`] when some segment cannot be
/// represented by edges of the `n × n` criss-cross grid (e.g. a segment with
/// irrational slope or endpoints off the grid).
pub fn crease_fitted_square(n: usize, domain: Rect, creases: &CreaseSpec) -> Result<TriMesh> {
    structured_square_with(n, domain, Pattern::CrissCross)?.with_creases(creases.segments.clone())
}

/// Quasi-random displacement of at most `amplitude` cell widths per axis,
/// a fixed function of the grid position `(fi, fj)`.
fn jitter(fi: f64, fj: f64, amplitude: f64, dx: f64, dy: f64) -> Point2 {
    [
        amplitude * dx * (1.7 * fi + 2.3 * fj + 0.5).sin(),
        amplitude * dy * (2.9 * fi - 1.3 * fj + 1.1).sin(),
    ]
}

fn check_amplitude(amplitude: f64) -> Result<()> {
    if !(0.0..0.25).contains(&amplitude) {
        return Err(Error::InvalidArgument(format!(
            "perturbation amplitude {amplitude} outside [0, 0.25)"
        )));
    }
    Ok(())
}

/// Diagonal-pattern grid with interior vertices displaced by a fixed
/// quasi-random offset of at most `amplitude` cell widths in each direction.
pub fn perturbed_square(n: usize, domain: Rect, amplitude: f64) -> Result<TriMesh> {
    check_subdivisions(n, &domain)?;
    check_amplitude(amplitude)?;
    let mesh = structured_square(n, domain)?;
    let (dx, dy) = (domain.width() / n as f64, domain.height() / n as f64);
    let mut vertices = mesh.vertices.clone();
    for j in 1..n {
        for i in 1..n {
            let d = jitter(i as f64, j as f64, amplitude, dx, dy);
            let p = &mut vertices[j * (n + 1) + i];
            p[0] += d[0];
            p[1] += d[1];
        }
    }
    TriMesh::new(vertices, mesh.triangles)
}

/// [`crease_fitted_square`] with every vertex that lies neither on the
/// boundary nor on a crease displaced as in [`perturbed_square`]. The
/// displacement breaks the reflection and rotation symmetries of the grid.
pub fn perturbed_crease_fitted_square(n: usize, domain: Rect, creases: &CreaseSpec, amplitude: f64) -> Result<TriMesh> {
    check_subdivisions(n, &domain)?;
    // Criss-cross triangles are half as tall as grid cells.
    if !(0.0..0.125).contains(&amplitude) {
        return Err(Error::InvalidArgument(format!(
            "perturbation amplitude {amplitude} outside [0, 0.125)"
        )));
    }
    let grid = structured_square_with(n, domain, Pattern::CrissCross)?;
    let (dx, dy) = (domain.width() / n as f64, domain.height() / n as f64);
    let tol = 1e-9 * domain.diameter();
    let on_boundary =
        |p: Point2| (p[0] - domain.x0).abs() < tol || (p[0] - domain.x1).abs() < tol || (p[1] - domain.y0).abs() < tol || (p[1] - domain.y1).abs() < tol;
    let vertices = grid
        .vertices
        .iter()
        .map(|&p| {
            if on_boundary(p) || creases.segments.iter().any(|s| s.distance_to(p) < tol) {
                return p;
            }
            // Grid coordinates in half-cell units, so cell centers get their own phase.
            let (fi, fj) = (2.0 * (p[0] - domain.x0) / dx, 2.0 * (p[1] - domain.y0) / dy);
            let d = jitter(0.5 * fi, 0.5 * fj, amplitude, dx, dy);
            [p[0] + d[0], p[1] + d[1]]
        })
        .collect();
    TriMesh::new(vertices, grid.triangles)?.with_creases(creases.segments.clone())
}

/// Marks the triangles whose barycenter lies within distance `d` of the crease set.
pub fn crease_strip_mask(mesh: &TriMesh, creases: &CreaseSpec, d: f64) -> Vec<bool> {
    (0..mesh.num_triangles())
        .map(|t| {
            let c = mesh.barycenter(t);
            creases.segments.iter().any(|s| s.distance_to(c) < d)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn unique_edges(mesh: &TriMesh) -> (usize, usize) {
        // Brute-force edge census straight from the triangle list.
        let mut all = BTreeSet::new();
        let mut count = std::collections::BTreeMap::new();
        for t in mesh.triangles() {
            for i in 0..3 {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                let key = (a.min(b), a.max(b));
                all.insert(key);
                *count.entry(key).or_insert(0) += 1;
            }
        }
        let interior = count.values().filter(|&&c| c == 2).count();
        (all.len(), interior)
    }

    #[test]
    fn smallest_mesh() {
        let mesh = structured_square(1, Rect::unit()).unwrap();
        assert_eq!(mesh.num_triangles(), 2);
        assert_eq!(mesh.interior_edges().len(), 1);
        assert_eq!(mesh.boundary_edges().len(), 4);
    }

    #[test]
    fn two_by_two_area() {
        let mesh = structured_square(2, Rect::unit()).unwrap();
        assert_eq!(mesh.num_triangles(), 8);
        assert!((mesh.total_area() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_subdivisions_rejected() {
        assert!(matches!(
            structured_square(0, Rect::unit()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn interior_edge_count_matches_enumeration() {
        // Enumerate small n directly, then check the closed form 3n² − 2n at n = 32.
        for n in 1..=6 {
            let mesh = structured_square(n, Rect::unit()).unwrap();
            let (_, interior) = unique_edges(&mesh);
            assert_eq!(interior, 3 * n * n - 2 * n);
            assert_eq!(mesh.interior_edges().len(), interior);
        }
        let mesh = structured_square(32, Rect::centered_unit()).unwrap();
        assert_eq!(mesh.interior_edges().len(), 3008);
        assert!((mesh.h_max() - 2f64.sqrt() / 32.0).abs() < 1e-15);
    }

    #[test]
    fn euler_characteristic_and_normals() {
        for pattern in [Pattern::Diagonal, Pattern::CrissCross] {
            let mesh = structured_square_with(5, Rect::new(-1.0, 2.0, 0.0, 1.5), pattern).unwrap();
            let (edges, _) = unique_edges(&mesh);
            let euler = mesh.num_vertices() as i64 - edges as i64 + mesh.num_triangles() as i64;
            assert_eq!(euler, 1);
            assert!((mesh.total_area() - 4.5).abs() < 1e-12 * 4.5);
            for e in mesh.interior_edges() {
                let [a, b] = e.vertices.map(|v| mesh.vertices()[v]);
                let t = [b[0] - a[0], b[1] - a[1]];
                assert!((e.normal[0].hypot(e.normal[1]) - 1.0).abs() < 1e-14);
                assert!((t[0] * e.normal[0] + t[1] * e.normal[1]).abs() < 1e-14);
                // Normal points from the left triangle towards the right one.
                let (cl, cr) = (mesh.barycenter(e.left), mesh.barycenter(e.right));
                assert!((cr[0] - cl[0]) * e.normal[0] + (cr[1] - cl[1]) * e.normal[1] > 0.0);
            }
        }
    }

    #[test]
    fn doubling_halves_h() {
        let coarse = structured_square(8, Rect::unit()).unwrap();
        let fine = structured_square(16, Rect::unit()).unwrap();
        assert!((coarse.h_max() / fine.h_max() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn basis_gradients_partition_unity() {
        let mesh = perturbed_square(4, Rect::unit(), 0.2).unwrap();
        for t in 0..mesh.num_triangles() {
            let g = mesh.basis_gradients(t);
            let sum = [g[0][0] + g[1][0] + g[2][0], g[0][1] + g[1][1] + g[2][1]];
            assert!(sum[0].abs() < 1e-10 && sum[1].abs() < 1e-10);
            // ∇φ_i · (x_j − x_i) = δ-pattern: φ_i drops by one from vertex i to j.
            let tri = mesh.triangles()[t];
            for i in 0..3 {
                for j in 0..3 {
                    let (pi, pj) = (mesh.vertices()[tri[i]], mesh.vertices()[tri[j]]);
                    let dphi = g[i][0] * (pj[0] - pi[0]) + g[i][1] * (pj[1] - pi[1]);
                    let expected = if i == j { 0.0 } else { -1.0 };
                    assert!((dphi - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn diagonal_creases_small() {
        let spec = CreaseSpec::new(Rect::unit().diagonals());
        let mesh = crease_fitted_square(2, Rect::unit(), &spec).unwrap();
        let creases = mesh.creases().unwrap();
        assert_eq!(creases.num_subdomains(), 4);
        // Every point of Γ lies on a flagged edge.
        for seg in &spec.segments {
            for k in 0..=20 {
                let s = k as f64 / 20.0;
                let p = [seg.a[0] + s * (seg.b[0] - seg.a[0]), seg.a[1] + s * (seg.b[1] - seg.a[1])];
                let hit = mesh
                    .interior_edges()
                    .iter()
                    .zip(mesh.crease_edges())
                    .any(|(e, &c)| {
                        c && Segment::new(mesh.vertices()[e.vertices[0]], mesh.vertices()[e.vertices[1]])
                            .distance_to(p)
                            < 1e-12
                    });
                assert!(hit, "Γ point {p:?} not on a crease edge");
            }
        }
    }

    #[test]
    fn diagonal_crease_count_by_walk() {
        let n = 64;
        let spec = CreaseSpec::new(Rect::unit().diagonals());
        let mesh = crease_fitted_square(n, Rect::unit(), &spec).unwrap();
        // Walk each diagonal: mesh vertices on it cut Γ into edge subsegments.
        let mut expected = 0;
        for seg in &spec.segments {
            let on: usize = mesh
                .vertices()
                .iter()
                .filter(|&&p| seg.distance_to(p) < 1e-12)
                .count();
            expected += on - 1;
        }
        let flagged = mesh.crease_edges().iter().filter(|&&c| c).count();
        assert_eq!(flagged, expected);
        assert_eq!(flagged, 4 * n);
    }

    #[test]
    fn irrational_slope_is_unfitted() {
        let seg = Segment::new([0.0, 0.0], [1.0, 1.0 / 2f64.sqrt()]);
        let err = crease_fitted_square(8, Rect::unit(), &CreaseSpec::new(vec![seg])).unwrap_err();
        assert!(matches!(err, Error::UnfittedCrease { segment: 0 }));
    }

    #[test]
    fn axis_crease_labels_two_halves() {
        let seg = Segment::new([0.5, 0.0], [0.5, 1.0]);
        let mesh = crease_fitted_square(4, Rect::unit(), &CreaseSpec::new(vec![seg])).unwrap();
        let spec = mesh.creases().unwrap();
        assert_eq!(spec.num_subdomains(), 2);
        for t in 0..mesh.num_triangles() {
            let left = mesh.barycenter(t)[0] < 0.5;
            assert_eq!(spec.subdomain_labels[t] == spec.subdomain_labels[0], left);
        }
    }

    #[test]
    fn strip_mask_limits() {
        let mesh = perturbed_square(16, Rect::unit(), 0.15).unwrap();
        let spec = CreaseSpec::new(Rect::unit().diagonals());
        assert!(crease_strip_mask(&mesh, &spec, 10.0).iter().all(|&m| m));
        assert!(crease_strip_mask(&mesh, &spec, 0.0).iter().all(|&m| !m));
    }

    #[test]
    fn strip_mask_area() {
        // Analytic area of {dist(x, diagonals) < d} in the unit square: 4w − 4w², w = d√2.
        let (d, n) = (0.02, 64);
        let w = d * 2f64.sqrt();
        let exact = 4.0 * w - 4.0 * w * w;
        let mesh = structured_square(n, Rect::unit()).unwrap();
        let spec = CreaseSpec::new(Rect::unit().diagonals());
        let marked: f64 = crease_strip_mask(&mesh, &spec, d)
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(t, _)| mesh.area(t))
            .sum();
        let h = 1.0 / n as f64;
        let gamma_len = 2.0 * 2f64.sqrt();
        assert!((marked - exact).abs() <= 2.0 * h * gamma_len, "{marked} vs {exact}");
    }

    #[test]
    fn perturbed_mesh_is_not_fitted() {
        let mesh = perturbed_square(8, Rect::unit(), 0.15).unwrap();
        let err = mesh.with_creases(Rect::unit().diagonals()).unwrap_err();
        assert!(matches!(err, Error::UnfittedCrease { .. }));
    }

    #[test]
    fn dump_round_trip() {
        let mesh = structured_square_with(3, Rect::centered_unit(), Pattern::CrissCross).unwrap();
        let mut buf = Vec::new();
        mesh.write_dump(&mut buf).unwrap();
        let back = TriMesh::read_dump(buf.as_slice()).unwrap();
        assert_eq!(back.triangles(), mesh.triangles());
        assert_eq!(back.vertices(), mesh.vertices());
    }

    #[test]
    fn clockwise_triangle_rejected() {
        let err = TriMesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 2, 1]]);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn jittered_fitted_mesh_keeps_creases_and_boundary() {
        let domain = Rect::unit();
        let creases = CreaseSpec::new(domain.diagonals());
        let plain = crease_fitted_square(8, domain, &creases).unwrap();
        let moved = perturbed_crease_fitted_square(8, domain, &creases, 0.1).unwrap();
        assert_eq!(plain.triangles(), moved.triangles());
        assert_eq!(plain.crease_edges(), moved.crease_edges());
        assert!((moved.total_area() - 1.0).abs() < 1e-12);
        let mut shifted = 0;
        for (p, q) in plain.vertices().iter().zip(moved.vertices()) {
            let on_crease = creases.segments.iter().any(|s| s.distance_to(*p) < 1e-12);
            let on_boundary = p.iter().any(|c| c.abs() < 1e-12 || (c - 1.0).abs() < 1e-12);
            if on_crease || on_boundary {
                assert_eq!(p, q);
            } else if p != q {
                shifted += 1;
                assert!((p[0] - q[0]).abs() <= 0.1 / 8.0 + 1e-15 && (p[1] - q[1]).abs() <= 0.1 / 8.0 + 1e-15);
            }
        }
        assert!(shifted > 0);
        assert!(perturbed_crease_fitted_square(8, domain, &creases, 0.2).is_err());
    }
}
