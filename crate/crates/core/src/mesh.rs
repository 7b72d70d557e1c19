//! Conforming quadrilateral meshes of planar domains.
//!
//! Cells are stored counter-clockwise. Boundary edges are oriented so the
//! domain lies on their left, which makes outer loops counter-clockwise and
//! hole loops clockwise; the outward normal of an edge with tangent `t` is
//! `(t[1], -t[0])`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

pub type Point = [f64; 2];

/// Largest refinement level accepted by the generators.
pub const MAX_LEVEL: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub marker: u32,
}

/// An analytic disc removed from the domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn contains_strictly(&self, p: Point) -> bool {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        dx * dx + dy * dy < self.radius * self.radius
    }
}

/// One closed loop of boundary edges, listed in traversal order.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryLoop {
    /// Smallest marker id carried by an edge of the loop.
    pub marker: u32,
    pub edges: Vec<usize>,
    pub vertices: Vec<usize>,
    pub length: f64,
    pub signed_area: f64,
}

impl BoundaryLoop {
    pub fn is_hole(&self) -> bool {
        self.signed_area < 0.0
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("refinement level {0} outside 0..={MAX_LEVEL}")]
    InvalidLevel(u32),
    #[error("hole with center {center:?} and radius {radius} does not lie strictly inside the unit square")]
    HoleOutside { center: Point, radius: f64 },
    #[error("hole radius {radius} exceeds {limit} allowed by the ring construction around {center:?}")]
    HoleTooLarge { center: Point, radius: f64, limit: f64 },
    #[error("vertex {0} has non-finite coordinates")]
    NonFiniteVertex(usize),
    #[error("cell {cell} references vertex {vertex}, which does not exist")]
    MissingVertex { cell: usize, vertex: usize },
    #[error("cell {0} repeats a vertex")]
    RepeatedVertex(usize),
    #[error("cell {0} is inverted, degenerate or not convex")]
    InvertedCell(usize),
    #[error("edge ({0}, {1}) is shared by more than two cells")]
    NonManifoldEdge(usize, usize),
    #[error("boundary edge {index} ({v0}, {v1}) is not on the boundary of the mesh")]
    NotABoundaryEdge { index: usize, v0: usize, v1: usize },
    #[error("boundary edge ({0}, {1}) is listed more than once")]
    DuplicateBoundaryEdge(usize, usize),
    #[error("edge ({0}, {1}) lies on the boundary but has no marker")]
    UnmarkedBoundaryEdge(usize, usize),
    #[error("boundary edge {index} uses undeclared marker {marker}")]
    UnknownMarker { index: usize, marker: u32 },
    #[error("boundary does not form closed loops at vertex {0}")]
    OpenBoundary(usize),
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Point>,
    cells: Vec<[usize; 4]>,
    boundary: Vec<BoundaryEdge>,
    owners: Vec<(usize, usize)>,
    markers: BTreeMap<u32, String>,
    holes: Vec<Ball>,
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

impl Mesh {
    /// Validates and builds a mesh. Boundary edges may be given in either
    /// orientation; they are re-oriented against their owning cell.
    pub fn new(
        vertices: Vec<Point>,
        cells: Vec<[usize; 4]>,
        boundary: Vec<BoundaryEdge>,
        markers: BTreeMap<u32, String>,
    ) -> Result<Self, MeshError> {
        for (i, v) in vertices.iter().enumerate() {
            if !v[0].is_finite() || !v[1].is_finite() {
                return Err(MeshError::NonFiniteVertex(i));
            }
        }
        let mut edge_cells: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
        for (c, cell) in cells.iter().enumerate() {
            for &v in cell {
                if v >= vertices.len() {
                    return Err(MeshError::MissingVertex { cell: c, vertex: v });
                }
            }
            for a in 0..4 {
                for b in a + 1..4 {
                    if cell[a] == cell[b] {
                        return Err(MeshError::RepeatedVertex(c));
                    }
                }
            }
            let p: Vec<Point> = cell.iter().map(|&v| vertices[v]).collect();
            let scale = (0..4)
                .map(|k| {
                    let d = sub(p[(k + 1) % 4], p[k]);
                    d[0].abs().max(d[1].abs())
                })
                .fold(0.0, f64::max);
            for k in 0..4 {
                let next = sub(p[(k + 1) % 4], p[k]);
                let prev = sub(p[(k + 3) % 4], p[k]);
                if cross(next, prev) <= 1e-12 * scale * scale {
                    return Err(MeshError::InvertedCell(c));
                }
            }
            for k in 0..4 {
                let key = edge_key(cell[k], cell[(k + 1) % 4]);
                let list = edge_cells.entry(key).or_default();
                list.push((c, k));
                if list.len() > 2 {
                    return Err(MeshError::NonManifoldEdge(key.0, key.1));
                }
            }
        }

        let mut oriented = Vec::with_capacity(boundary.len());
        let mut owners = Vec::with_capacity(boundary.len());
        let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
        for (i, e) in boundary.iter().enumerate() {
            let [v0, v1] = e.vertices;
            if !markers.contains_key(&e.marker) {
                return Err(MeshError::UnknownMarker { index: i, marker: e.marker });
            }
            let key = edge_key(v0, v1);
            if seen.insert(key, i).is_some() {
                return Err(MeshError::DuplicateBoundaryEdge(key.0, key.1));
            }
            match edge_cells.get(&key) {
                Some(list) if list.len() == 1 => {
                    let (c, k) = list[0];
                    let cell = cells[c];
                    oriented.push(BoundaryEdge { vertices: [cell[k], cell[(k + 1) % 4]], marker: e.marker });
                    owners.push((c, k));
                }
                _ => return Err(MeshError::NotABoundaryEdge { index: i, v0, v1 }),
            }
        }
        let mut unmarked: Vec<(usize, usize)> = edge_cells
            .iter()
            .filter(|(k, list)| list.len() == 1 && !seen.contains_key(k))
            .map(|(k, _)| *k)
            .collect();
        unmarked.sort_unstable();
        if let Some(&(a, b)) = unmarked.first() {
            return Err(MeshError::UnmarkedBoundaryEdge(a, b));
        }

        let mut out_degree: HashMap<usize, usize> = HashMap::new();
        let mut in_degree: HashMap<usize, usize> = HashMap::new();
        for e in &oriented {
            *out_degree.entry(e.vertices[0]).or_default() += 1;
            *in_degree.entry(e.vertices[1]).or_default() += 1;
        }
        let mut bad: Vec<usize> = out_degree
            .iter()
            .filter(|(v, &d)| d != 1 || in_degree.get(v).copied().unwrap_or(0) != 1)
            .map(|(v, _)| *v)
            .collect();
        bad.extend(in_degree.keys().filter(|v| !out_degree.contains_key(v)));
        bad.sort_unstable();
        if let Some(&v) = bad.first() {
            return Err(MeshError::OpenBoundary(v));
        }

        Ok(Mesh { vertices, cells, boundary: oriented, owners, markers, holes: Vec::new() })
    }

    /// Uniform `2^n x 2^n` mesh of the unit square with a single marker.
    pub fn unit_square(n: u32) -> Result<Self, MeshError> {
        if n > MAX_LEVEL {
            return Err(MeshError::InvalidLevel(n));
        }
        let m = 1usize << n;
        let idx = |i: usize, j: usize| j * (m + 1) + i;
        let h = 1.0 / m as f64;
        let mut vertices = Vec::with_capacity((m + 1) * (m + 1));
        for j in 0..=m {
            for i in 0..=m {
                vertices.push([i as f64 * h, j as f64 * h]);
            }
        }
        let mut cells = Vec::with_capacity(m * m);
        for j in 0..m {
            for i in 0..m {
                cells.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
        let mut boundary = Vec::with_capacity(4 * m);
        let mut push = |a: usize, b: usize| boundary.push(BoundaryEdge { vertices: [a, b], marker: 1 });
        for i in 0..m {
            push(idx(i, 0), idx(i + 1, 0));
        }
        for j in 0..m {
            push(idx(m, j), idx(m, j + 1));
        }
        for i in (0..m).rev() {
            push(idx(i + 1, m), idx(i, m));
        }
        for j in (0..m).rev() {
            push(idx(0, j + 1), idx(0, j));
        }
        let markers = BTreeMap::from([(1, "boundary".to_string())]);
        Mesh::new(vertices, cells, boundary, markers)
    }

    /// Unit square with a circular hole. The coarse mesh is a 6 x 6 grid whose
    /// central 2 x 2 block is replaced by a ring of eight cells around the
    /// circle; level `n` splits every coarse cell into `2^n x 2^n`, giving
    /// `40 * 4^n` cells. Marker 1 is the outer boundary, marker 2 the hole.
    pub fn square_with_hole(n: u32, center: Point, radius: f64) -> Result<Self, MeshError> {
        if n > MAX_LEVEL - 2 {
            return Err(MeshError::InvalidLevel(n));
        }
        let [cx, cy] = center;
        let margin = cx.min(1.0 - cx).min(cy).min(1.0 - cy);
        if !(radius > 0.0) || !(margin > radius) || !center.iter().all(|c| c.is_finite()) {
            return Err(MeshError::HoleOutside { center, radius });
        }
        let d = margin / 3.0;
        let limit = 0.8 * d;
        if radius > limit {
            return Err(MeshError::HoleTooLarge { center, radius, limit });
        }
        let m = 1usize << n;
        let lines = |c: f64| -> Vec<f64> {
            let coarse = [0.0, 0.5 * (c - d), c - d, c, c + d, 0.5 * (c + d + 1.0), 1.0];
            let mut fine = Vec::with_capacity(6 * m + 1);
            for w in coarse.windows(2) {
                for a in 0..m {
                    fine.push(w[0] + (w[1] - w[0]) * a as f64 / m as f64);
                }
            }
            fine.push(1.0);
            fine
        };
        let xs = lines(cx);
        let ys = lines(cy);
        let g = 6 * m;
        let inside_block = |i: usize, j: usize| i > 2 * m && i < 4 * m && j > 2 * m && j < 4 * m;

        let mut vertices = Vec::new();
        let mut grid_index = vec![usize::MAX; (g + 1) * (g + 1)];
        for j in 0..=g {
            for i in 0..=g {
                if !inside_block(i, j) {
                    grid_index[j * (g + 1) + i] = vertices.len();
                    vertices.push([xs[i], ys[j]]);
                }
            }
        }
        let gv = |i: usize, j: usize| grid_index[j * (g + 1) + i];

        let mut cells = Vec::with_capacity(40 * m * m);
        for j in 0..g {
            for i in 0..g {
                if i >= 2 * m && i < 4 * m && j >= 2 * m && j < 4 * m {
                    continue;
                }
                cells.push([gv(i, j), gv(i + 1, j), gv(i + 1, j + 1), gv(i, j + 1)]);
            }
        }

        // Block boundary positions counter-clockwise from the right midpoint,
        // expressed as grid indices so the ring shares the grid vertices.
        let ring_len = 8 * m;
        let block_point = |k: usize| -> (usize, usize) {
            let (lo, mid, hi) = (2 * m, 3 * m, 4 * m);
            let p = [(hi, mid), (hi, hi), (mid, hi), (lo, hi), (lo, mid), (lo, lo), (mid, lo), (hi, lo)];
            p[k % 8]
        };
        let outer_grid = |q: usize| -> (usize, usize) {
            let k = q / m;
            let a = q % m;
            let (i0, j0) = block_point(k);
            let (i1, j1) = block_point(k + 1);
            let step = |s: usize, e: usize| -> usize {
                if e > s {
                    s + a
                } else if e < s {
                    s - a
                } else {
                    s
                }
            };
            (step(i0, i1), step(j0, j1))
        };
        let mut ring_index = vec![usize::MAX; ring_len * m];
        for b in 0..m {
            let eta = b as f64 / m as f64;
            for q in 0..ring_len {
                let theta = std::f64::consts::PI * q as f64 / (4 * m) as f64;
                let circle = [cx + radius * theta.cos(), cy + radius * theta.sin()];
                let (i, j) = outer_grid(q);
                let outer = [xs[i], ys[j]];
                ring_index[b * ring_len + q] = vertices.len();
                vertices.push([
                    (1.0 - eta) * circle[0] + eta * outer[0],
                    (1.0 - eta) * circle[1] + eta * outer[1],
                ]);
            }
        }
        let rv = |q: usize, b: usize| -> usize {
            let q = q % ring_len;
            if b == m {
                let (i, j) = outer_grid(q);
                gv(i, j)
            } else {
                ring_index[b * ring_len + q]
            }
        };
        for b in 0..m {
            for q in 0..ring_len {
                cells.push([rv(q, b), rv(q, b + 1), rv(q + 1, b + 1), rv(q + 1, b)]);
            }
        }

        let mut boundary = Vec::with_capacity(24 * m + ring_len);
        for i in 0..g {
            boundary.push(BoundaryEdge { vertices: [gv(i, 0), gv(i + 1, 0)], marker: 1 });
        }
        for j in 0..g {
            boundary.push(BoundaryEdge { vertices: [gv(g, j), gv(g, j + 1)], marker: 1 });
        }
        for i in (0..g).rev() {
            boundary.push(BoundaryEdge { vertices: [gv(i + 1, g), gv(i, g)], marker: 1 });
        }
        for j in (0..g).rev() {
            boundary.push(BoundaryEdge { vertices: [gv(0, j + 1), gv(0, j)], marker: 1 });
        }
        for q in (0..ring_len).rev() {
            boundary.push(BoundaryEdge { vertices: [rv(q + 1, 0), rv(q, 0)], marker: 2 });
        }
        let markers = BTreeMap::from([(1, "outer".to_string()), (2, "hole".to_string())]);
        let mut mesh = Mesh::new(vertices, cells, boundary, markers)?;
        mesh.holes.push(Ball { center, radius });
        Ok(mesh)
    }

    pub fn dim(&self) -> usize {
        2
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn cells(&self) -> &[[usize; 4]] {
        &self.cells
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary
    }

    /// Cell and local edge (0..4, edge `k` joins corners `k` and `k+1`) of a boundary edge.
    pub fn boundary_owner(&self, edge: usize) -> (usize, usize) {
        self.owners[edge]
    }

    pub fn markers(&self) -> &BTreeMap<u32, String> {
        &self.markers
    }

    /// Analytic holes known from generation; empty for imported meshes.
    pub fn holes(&self) -> &[Ball] {
        &self.holes
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_corners(&self, c: usize) -> [Point; 4] {
        self.cells[c].map(|v| self.vertices[v])
    }

    pub fn cell_area(&self, c: usize) -> f64 {
        let p = self.cell_corners(c);
        0.5 * (0..4).map(|k| cross(p[k], p[(k + 1) % 4])).sum::<f64>()
    }

    pub fn area(&self) -> f64 {
        (0..self.cells.len()).map(|c| self.cell_area(c)).sum()
    }

    pub fn edge_length(&self, edge: usize) -> f64 {
        let [a, b] = self.boundary[edge].vertices;
        let d = sub(self.vertices[b], self.vertices[a]);
        d[0].hypot(d[1])
    }

    /// Closed boundary loops, outer loops first, then by marker.
    pub fn boundary_loops(&self) -> Vec<BoundaryLoop> {
        let mut next: HashMap<usize, usize> = HashMap::new();
        for (i, e) in self.boundary.iter().enumerate() {
            next.insert(e.vertices[0], i);
        }
        let mut visited = vec![false; self.boundary.len()];
        let mut loops = Vec::new();
        for start in 0..self.boundary.len() {
            if visited[start] {
                continue;
            }
            let mut edges = Vec::new();
            let mut e = start;
            while !visited[e] {
                visited[e] = true;
                edges.push(e);
                e = next[&self.boundary[e].vertices[1]];
            }
            let vertices: Vec<usize> = edges.iter().map(|&e| self.boundary[e].vertices[0]).collect();
            let length = edges.iter().map(|&e| self.edge_length(e)).sum();
            let signed_area = 0.5
                * edges
                    .iter()
                    .map(|&e| {
                        let [a, b] = self.boundary[e].vertices;
                        cross(self.vertices[a], self.vertices[b])
                    })
                    .sum::<f64>();
            let marker = edges.iter().map(|&e| self.boundary[e].marker).min().unwrap_or(0);
            loops.push(BoundaryLoop { marker, edges, vertices, length, signed_area });
        }
        loops.sort_by(|a, b| {
            (a.is_hole(), a.marker, a.edges[0]).cmp(&(b.is_hole(), b.marker, b.edges[0]))
        });
        loops
    }

    /// Even-odd test against the boundary polygon.
    pub fn contains(&self, p: Point) -> bool {
        let mut inside = false;
        for e in &self.boundary {
            let a = self.vertices[e.vertices[0]];
            let b = self.vertices[e.vertices[1]];
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mesh 2");
        let _ = writeln!(s, "vertices {}", self.vertices.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{} {}", v[0], v[1]);
        }
        let _ = writeln!(s, "cells {}", self.cells.len());
        for c in &self.cells {
            let _ = writeln!(s, "{} {} {} {}", c[0], c[1], c[2], c[3]);
        }
        let _ = writeln!(s, "boundary {}", self.boundary.len());
        for e in &self.boundary {
            let _ = writeln!(s, "{} {} {}", e.vertices[0], e.vertices[1], e.marker);
        }
        let _ = writeln!(s, "markers {}", self.markers.len());
        for (id, name) in &self.markers {
            let _ = writeln!(s, "{id} {name}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, MeshError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| {
                let t = l.trim_start();
                !t.is_empty() && !t.starts_with('#')
            })
            .peekable();
        let last_line = text.lines().count().max(1);
        let mut next_line = |what: &str| -> Result<(usize, &str), MeshError> {
            lines.next().ok_or_else(|| MeshError::Parse {
                line: last_line,
                column: 1,
                message: format!("unexpected end of file, expected {what}"),
            })
        };

        let (ln, l) = next_line("header")?;
        let header = Tokens::new(ln, l);
        header.keyword(0, "mesh")?;
        let dim: usize = header.parse(1, "dimension")?;
        if dim != 2 {
            return Err(header.error(1, format!("unsupported dimension {dim}")));
        }
        header.expect_len(2)?;

        let section = |ln: usize, l: &str, name: &str| -> Result<usize, MeshError> {
            let t = Tokens::new(ln, l);
            t.keyword(0, name)?;
            let count = t.parse(1, "count")?;
            t.expect_len(2)?;
            Ok(count)
        };

        let (ln, l) = next_line("vertices section")?;
        let nv = section(ln, l, "vertices")?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, l) = next_line("vertex")?;
            let t = Tokens::new(ln, l);
            let x: f64 = t.parse(0, "x coordinate")?;
            let y: f64 = t.parse(1, "y coordinate")?;
            t.expect_len(2)?;
            vertices.push([x, y]);
        }

        let (ln, l) = next_line("cells section")?;
        let nc = section(ln, l, "cells")?;
        let mut cells = Vec::with_capacity(nc);
        for _ in 0..nc {
            let (ln, l) = next_line("cell")?;
            let t = Tokens::new(ln, l);
            let mut c = [0usize; 4];
            for (k, slot) in c.iter_mut().enumerate() {
                *slot = t.parse(k, "vertex index")?;
            }
            t.expect_len(4)?;
            cells.push(c);
        }

        let (ln, l) = next_line("boundary section")?;
        let nb = section(ln, l, "boundary")?;
        let mut boundary = Vec::with_capacity(nb);
        for _ in 0..nb {
            let (ln, l) = next_line("boundary edge")?;
            let t = Tokens::new(ln, l);
            let v0 = t.parse(0, "vertex index")?;
            let v1 = t.parse(1, "vertex index")?;
            let marker = t.parse(2, "marker id")?;
            t.expect_len(3)?;
            boundary.push(BoundaryEdge { vertices: [v0, v1], marker });
        }

        let (ln, l) = next_line("markers section")?;
        let nm = section(ln, l, "markers")?;
        let mut markers = BTreeMap::new();
        for _ in 0..nm {
            let (ln, l) = next_line("marker")?;
            let t = Tokens::new(ln, l);
            let id: u32 = t.parse(0, "marker id")?;
            let name = t.rest(1).ok_or_else(|| t.error(1, "missing marker name".into()))?;
            markers.insert(id, name.to_string());
        }
        if let Some((ln, l)) = lines.next() {
            let col = l.len() - l.trim_start().len() + 1;
            return Err(MeshError::Parse { line: ln, column: col, message: "trailing content".into() });
        }
        Mesh::new(vertices, cells, boundary, markers)
    }

    pub fn read(path: &Path) -> Result<Self, MeshError> {
        let text = std::fs::read_to_string(path).map_err(|e| MeshError::Io(format!("{}: {e}", path.display())))?;
        Mesh::from_text(&text)
    }

    pub fn write(&self, path: &Path) -> Result<(), MeshError> {
        std::fs::write(path, self.to_text()).map_err(|e| MeshError::Io(format!("{}: {e}", path.display())))
    }
}

/// Whitespace-separated tokens of one line with their 1-based columns.
struct Tokens<'a> {
    line: usize,
    text: &'a str,
    tokens: Vec<(usize, &'a str)>,
}

impl<'a> Tokens<'a> {
    fn new(line: usize, text: &'a str) -> Self {
        let mut tokens = Vec::new();
        let mut start = None;
        for (i, ch) in text.char_indices() {
            match (ch.is_whitespace(), start) {
                (false, None) => start = Some(i),
                (true, Some(s)) => {
                    tokens.push((s, &text[s..i]));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            tokens.push((s, &text[s..]));
        }
        Tokens { line, text, tokens }
    }

    fn column(&self, k: usize) -> usize {
        match self.tokens.get(k) {
            Some((pos, _)) => pos + 1,
            None => self.text.trim_end().len() + 1,
        }
    }

    fn error(&self, k: usize, message: String) -> MeshError {
        MeshError::Parse { line: self.line, column: self.column(k), message }
    }

    fn keyword(&self, k: usize, word: &str) -> Result<(), MeshError> {
        match self.tokens.get(k) {
            Some((_, t)) if *t == word => Ok(()),
            Some((_, t)) => Err(self.error(k, format!("expected `{word}`, found `{t}`"))),
            None => Err(self.error(k, format!("expected `{word}`"))),
        }
    }

    fn parse<T: std::str::FromStr>(&self, k: usize, what: &str) -> Result<T, MeshError> {
        match self.tokens.get(k) {
            Some((_, t)) => t.parse().map_err(|_| self.error(k, format!("invalid {what} `{t}`"))),
            None => Err(self.error(k, format!("missing {what}"))),
        }
    }

    fn expect_len(&self, n: usize) -> Result<(), MeshError> {
        if self.tokens.len() > n {
            Err(self.error(n, format!("unexpected token `{}`", self.tokens[n].1)))
        } else {
            Ok(())
        }
    }

    fn rest(&self, k: usize) -> Option<&'a str> {
        self.tokens.get(k).map(|(pos, _)| self.text[*pos..].trim_end())
    }
}
