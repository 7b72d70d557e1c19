//! Taylor-Hood Q2/Q1 degrees of freedom and the trace mesh of the unknown boundary.
//!
//! Q2 nodes are the mesh vertices, one node per edge and one per cell.
//! They are split into an interior block (interior nodes plus nodes on the
//! known boundary, the latter flagged as constrained) and a boundary block
//! (nodes on the unknown boundary). Within a block nodes are ordered
//! lexicographically by `(y, x)`.
//!
//! Velocity vectors are laid out as
//! `[interior comp 0, interior comp 1, boundary comp 0, boundary comp 1]`.
//! Pressure dofs are the mesh vertices in mesh order.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::mesh::{Mesh, Point};

pub const DIM: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum FemError {
    #[error("marker {0} does not exist in the mesh")]
    UnknownMarker(u32),
    #[error("marker {0} appears twice in the unknown-boundary list")]
    DuplicateMarker(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Vertex(usize),
    Edge(usize),
    Center(usize),
}

impl NodeKind {
    fn rank(&self) -> u8 {
        match self {
            NodeKind::Vertex(_) => 0,
            NodeKind::Edge(_) => 1,
            NodeKind::Center(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    Interior,
    Known,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Q2Node {
    pub point: Point,
    pub kind: NodeKind,
    pub class: NodeClass,
}

#[derive(Debug, Clone)]
pub struct DofLayout {
    nodes: Vec<Q2Node>,
    cell_nodes: Vec<[usize; 9]>,
    cell_vertices: Vec<[usize; 4]>,
    n_interior: usize,
    n_boundary: usize,
    pressure_count: usize,
    unknown_markers: Vec<u32>,
}

/// Local Q2 node `3 * j + i` sits at reference coordinates `(i - 1, j - 1)`.
/// Corners `0, 1, 2, 3` of the cell map to local nodes `0, 2, 8, 6`.
pub const CORNER_NODES: [usize; 4] = [0, 2, 8, 6];
/// Local node at the midpoint of local edge `k` (corner `k` to corner `k + 1`).
pub const EDGE_NODES: [usize; 4] = [1, 5, 7, 3];
pub const CENTER_NODE: usize = 4;

impl DofLayout {
    /// Classifies nodes against the unknown boundary markers. An empty marker
    /// list makes the whole boundary known.
    pub fn build(mesh: &Mesh, unknown_markers: &[u32]) -> Result<Self, FemError> {
        let mut unknown = BTreeSet::new();
        for &m in unknown_markers {
            if !mesh.markers().contains_key(&m) {
                return Err(FemError::UnknownMarker(m));
            }
            if !unknown.insert(m) {
                return Err(FemError::DuplicateMarker(m));
            }
        }

        let nv = mesh.vertex_count();
        let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edge_points = Vec::new();
        for cell in mesh.cells() {
            for k in 0..4 {
                let (a, b) = (cell[k], cell[(k + 1) % 4]);
                let key = if a < b { (a, b) } else { (b, a) };
                edge_ids.entry(key).or_insert_with(|| {
                    let pa = mesh.vertices()[a];
                    let pb = mesh.vertices()[b];
                    edge_points.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                    edge_points.len() - 1
                });
            }
        }
        let ne = edge_points.len();
        // Raw numbering: vertices, then edges, then cell centers.
        let cell_raw: Vec<[usize; 9]> = mesh
            .cells()
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                let mut local = [0usize; 9];
                for k in 0..4 {
                    local[CORNER_NODES[k]] = cell[k];
                    let (a, b) = (cell[k], cell[(k + 1) % 4]);
                    let key = if a < b { (a, b) } else { (b, a) };
                    local[EDGE_NODES[k]] = nv + edge_ids[&key];
                }
                local[CENTER_NODE] = nv + ne + c;
                local
            })
            .collect();

        let mut raw_nodes: Vec<Q2Node> = Vec::with_capacity(nv + ne + mesh.cell_count());
        for (v, p) in mesh.vertices().iter().enumerate() {
            raw_nodes.push(Q2Node { point: *p, kind: NodeKind::Vertex(v), class: NodeClass::Interior });
        }
        for (e, p) in edge_points.iter().enumerate() {
            raw_nodes.push(Q2Node { point: *p, kind: NodeKind::Edge(e), class: NodeClass::Interior });
        }
        for c in 0..mesh.cell_count() {
            let q = mesh.cell_corners(c);
            let p = [
                0.25 * (q[0][0] + q[1][0] + q[2][0] + q[3][0]),
                0.25 * (q[0][1] + q[1][1] + q[2][1] + q[3][1]),
            ];
            raw_nodes.push(Q2Node { point: p, kind: NodeKind::Center(c), class: NodeClass::Interior });
        }

        for (i, e) in mesh.boundary_edges().iter().enumerate() {
            let (c, k) = mesh.boundary_owner(i);
            let local = &cell_raw[c];
            let ids = [local[CORNER_NODES[k]], local[EDGE_NODES[k]], local[CORNER_NODES[(k + 1) % 4]]];
            let class = if unknown.contains(&e.marker) { NodeClass::Unknown } else { NodeClass::Known };
            for id in ids {
                let node = &mut raw_nodes[id];
                node.class = match (node.class, class) {
                    (NodeClass::Known, _) | (_, NodeClass::Known) => NodeClass::Known,
                    _ => NodeClass::Unknown,
                };
            }
        }

        let mut order: Vec<usize> = (0..raw_nodes.len()).collect();
        order.sort_by(|&a, &b| {
            let (na, nb) = (&raw_nodes[a], &raw_nodes[b]);
            let block = |n: &Q2Node| (n.class == NodeClass::Unknown) as u8;
            block(na)
                .cmp(&block(nb))
                .then(na.point[1].total_cmp(&nb.point[1]))
                .then(na.point[0].total_cmp(&nb.point[0]))
                .then(na.kind.rank().cmp(&nb.kind.rank()))
                .then(a.cmp(&b))
        });
        let mut position = vec![0usize; raw_nodes.len()];
        for (pos, &raw) in order.iter().enumerate() {
            position[raw] = pos;
        }
        let nodes: Vec<Q2Node> = order.iter().map(|&r| raw_nodes[r]).collect();
        let n_boundary = nodes.iter().filter(|n| n.class == NodeClass::Unknown).count();
        let cell_nodes = cell_raw.iter().map(|l| l.map(|r| position[r])).collect();

        Ok(DofLayout {
            n_interior: nodes.len() - n_boundary,
            n_boundary,
            nodes,
            cell_nodes,
            cell_vertices: mesh.cells().to_vec(),
            pressure_count: nv,
            unknown_markers: unknown.into_iter().collect(),
        })
    }

    pub fn nodes(&self) -> &[Q2Node] {
        &self.nodes
    }

    /// Scalar node indices of a cell in local tensor order.
    pub fn cell_nodes(&self, c: usize) -> &[usize; 9] {
        &self.cell_nodes[c]
    }

    /// Pressure dofs of a cell, one per corner.
    pub fn cell_pressure(&self, c: usize) -> &[usize; 4] {
        &self.cell_vertices[c]
    }

    pub fn cell_count(&self) -> usize {
        self.cell_nodes.len()
    }

    /// Number of scalar nodes in the interior block (N).
    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    /// Number of scalar nodes on the unknown boundary (N_b).
    pub fn n_boundary(&self) -> usize {
        self.n_boundary
    }

    pub fn pressure_len(&self) -> usize {
        self.pressure_count
    }

    pub fn interior_len(&self) -> usize {
        DIM * self.n_interior
    }

    pub fn boundary_len(&self) -> usize {
        DIM * self.n_boundary
    }

    pub fn velocity_len(&self) -> usize {
        DIM * (self.n_interior + self.n_boundary)
    }

    pub fn unknown_markers(&self) -> &[u32] {
        &self.unknown_markers
    }

    /// Position of velocity component `comp` at scalar node `node`.
    pub fn velocity_dof(&self, node: usize, comp: usize) -> usize {
        if node < self.n_interior {
            comp * self.n_interior + node
        } else {
            DIM * self.n_interior + comp * self.n_boundary + (node - self.n_interior)
        }
    }

    /// Scalar node and component of a velocity dof.
    pub fn velocity_node(&self, dof: usize) -> (usize, usize) {
        let ni = DIM * self.n_interior;
        if dof < ni {
            (dof % self.n_interior, dof / self.n_interior)
        } else {
            let r = dof - ni;
            (self.n_interior + r % self.n_boundary, r / self.n_boundary)
        }
    }

    /// Constrained flags for the interior velocity block (length `2N`).
    pub fn constrained(&self) -> Vec<bool> {
        let flags: Vec<bool> = self.nodes[..self.n_interior].iter().map(|n| n.class == NodeClass::Known).collect();
        let mut out = flags.clone();
        out.extend(flags);
        out
    }

    pub fn has_constraints(&self) -> bool {
        self.nodes[..self.n_interior].iter().any(|n| n.class == NodeClass::Known)
    }

    pub fn trace_mesh(&self, mesh: &Mesh) -> TraceMesh {
        let mut segments = Vec::new();
        for lp in mesh.boundary_loops() {
            for &e in &lp.edges {
                let edge = mesh.boundary_edges()[e];
                if !self.unknown_markers.contains(&edge.marker) {
                    continue;
                }
                let (c, k) = mesh.boundary_owner(e);
                let local = &self.cell_nodes[c];
                let ids = [local[CORNER_NODES[k]], local[EDGE_NODES[k]], local[CORNER_NODES[(k + 1) % 4]]];
                let nodes = ids.map(|id| if id >= self.n_interior { Some(id - self.n_interior) } else { None });
                segments.push(TraceSegment { edge: e, nodes, length: mesh.edge_length(e) });
            }
        }
        TraceMesh { segments, size: self.n_boundary }
    }
}

/// One boundary edge of the unknown boundary with its three trace nodes
/// (start, midpoint, end). Nodes shared with the known boundary carry `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSegment {
    pub edge: usize,
    pub nodes: [Option<usize>; 3],
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceMesh {
    pub segments: Vec<TraceSegment>,
    pub size: usize,
}

impl TraceMesh {
    pub fn length(&self) -> f64 {
        self.segments.iter().map(|s| s.length).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_block_sizes() {
        let mesh = Mesh::unit_square(6).unwrap();
        let layout = DofLayout::build(&mesh, &[1]).unwrap();
        assert_eq!(layout.velocity_len(), 33282);
        assert_eq!(layout.n_boundary(), 512);
        assert_eq!(layout.pressure_len(), 4225);
        assert!(!layout.has_constraints());
    }

    #[test]
    fn hole_mesh_layout() {
        let mesh = Mesh::square_with_hole(4, [0.5, 0.5], 0.1).unwrap();
        let layout = DofLayout::build(&mesh, &[2]).unwrap();
        assert_eq!(layout.velocity_len(), 82944);
        assert_eq!(layout.n_boundary(), 2 * 8 * 16);
        assert!(layout.has_constraints());
        let known = layout.constrained().iter().filter(|&&c| c).count();
        assert_eq!(known, 2 * 2 * 24 * 16);
    }

    #[test]
    fn blocks_are_lexicographic() {
        let mesh = Mesh::unit_square(2).unwrap();
        let layout = DofLayout::build(&mesh, &[1]).unwrap();
        let nodes = layout.nodes();
        let ni = layout.n_interior();
        for block in [&nodes[..ni], &nodes[ni..]] {
            for w in block.windows(2) {
                let (a, b) = (w[0].point, w[1].point);
                assert!(a[1] < b[1] || (a[1] == b[1] && a[0] <= b[0]));
            }
        }
        assert!(nodes[ni..].iter().all(|n| n.class == NodeClass::Unknown));
    }

    #[test]
    fn velocity_dof_round_trip() {
        let mesh = Mesh::unit_square(2).unwrap();
        let layout = DofLayout::build(&mesh, &[1]).unwrap();
        let mut seen = vec![false; layout.velocity_len()];
        for node in 0..layout.nodes().len() {
            for comp in 0..DIM {
                let d = layout.velocity_dof(node, comp);
                assert!(!seen[d]);
                seen[d] = true;
                assert_eq!(layout.velocity_node(d), (node, comp));
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn trace_mesh_of_hole() {
        let mesh = Mesh::square_with_hole(5, [0.5, 0.5], 0.1).unwrap();
        let layout = DofLayout::build(&mesh, &[2]).unwrap();
        let trace = layout.trace_mesh(&mesh);
        let exact = 2.0 * std::f64::consts::PI * 0.1;
        assert!((trace.length() - exact).abs() / exact < 5e-3);
        assert_eq!(trace.segments.len(), 256);
        assert!(trace.segments.iter().all(|s| s.nodes.iter().all(|n| n.is_some())));
    }

    #[test]
    fn junction_nodes_are_known() {
        use crate::mesh::BoundaryEdge;
        let square = Mesh::unit_square(1).unwrap();
        let boundary = square
            .boundary_edges()
            .iter()
            .enumerate()
            .map(|(i, e)| BoundaryEdge { vertices: e.vertices, marker: if i < 2 { 2 } else { 1 } })
            .collect();
        let markers = [(1, "rest".to_string()), (2, "bottom".to_string())].into_iter().collect();
        let mesh = Mesh::new(square.vertices().to_vec(), square.cells().to_vec(), boundary, markers).unwrap();
        let layout = DofLayout::build(&mesh, &[2]).unwrap();
        assert_eq!(layout.n_boundary(), 3);
        let trace = layout.trace_mesh(&mesh);
        assert_eq!(trace.segments.len(), 2);
        assert_eq!(trace.segments[0].nodes[0], None);
        assert_eq!(trace.segments[1].nodes[2], None);
    }

    #[test]
    fn bad_marker() {
        let mesh = Mesh::unit_square(1).unwrap();
        assert_eq!(DofLayout::build(&mesh, &[7]).unwrap_err(), FemError::UnknownMarker(7));
    }
}
