//! Conforming triangulations of polygonal domains.
//!
//! A [`Mesh`] owns its node coordinates, counterclockwise triangles, and an
//! edge table in which every edge is stored as `[lo, hi]` with `lo < hi`.
//! That ordering is the global tangent orientation used by the edge-element
//! spaces.

use std::collections::HashMap;

use thiserror::Error;

/// Region tag reserved for the default material.
pub const DEFAULT_REGION: u32 = 0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("triangle {triangle} references node {node}, but the mesh has {n_nodes} nodes")]
    IndexOutOfRange {
        triangle: usize,
        node: usize,
        n_nodes: usize,
    },
    #[error("triangle {0} has zero area")]
    DegenerateTriangle(usize),
    #[error("non-conforming triangulation: {0}")]
    NonConforming(String),
    #[error("region tag count {tags} does not match triangle count {triangles}")]
    TagCountMismatch { tags: usize, triangles: usize },
}

/// One entry of the edge table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    /// Endpoints, lower global node index first.
    pub nodes: [usize; 2],
    /// Adjacent triangles; the second slot is `None` on the boundary.
    pub triangles: [Option<usize>; 2],
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.triangles[1].is_none()
    }
}

/// Local edge `i` of a triangle is opposite local vertex `i`, with its
/// endpoints listed in increasing local order.
pub const LOCAL_EDGES: [[usize; 2]; 3] = [[1, 2], [0, 2], [0, 1]];

/// Conforming triangulation with oriented edges and region tags.
#[derive(Debug, Clone)]
pub struct Mesh {
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    region_tags: Vec<u32>,
    edges: Vec<Edge>,
    triangle_edges: Vec<[usize; 3]>,
    boundary_markers: Vec<([usize; 2], u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshQuality {
    /// Largest element diameter.
    pub h: f64,
    /// Smallest element diameter.
    pub h_min: f64,
    /// Largest ratio of diameter to inradius.
    pub shape_ratio: f64,
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl Mesh {
    /// Builds the edge table and adjacency of a triangulation.
    ///
    /// Clockwise triangles are reordered. Hanging nodes, edges shared by
    /// more than two triangles and duplicate triangles are rejected.
    pub fn new(
        nodes: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        region_tags: Vec<u32>,
    ) -> Result<Self, MeshError> {
        if region_tags.len() != triangles.len() {
            return Err(MeshError::TagCountMismatch {
                tags: region_tags.len(),
                triangles: triangles.len(),
            });
        }
        let n_nodes = nodes.len();
        let mut tris = Vec::with_capacity(triangles.len());
        let mut scale = 0.0f64;
        for p in &nodes {
            scale = scale.max(p[0].abs()).max(p[1].abs());
        }
        let area_tol = 1e-14 * scale.max(1e-300).powi(2);
        for (t, tri) in triangles.iter().enumerate() {
            for &n in tri {
                if n >= n_nodes {
                    return Err(MeshError::IndexOutOfRange {
                        triangle: t,
                        node: n,
                        n_nodes,
                    });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::DegenerateTriangle(t));
            }
            let area = signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if area.abs() <= area_tol {
                return Err(MeshError::DegenerateTriangle(t));
            }
            tris.push(if area < 0.0 {
                [tri[0], tri[2], tri[1]]
            } else {
                *tri
            });
        }

        let mut edge_index: HashMap<[usize; 2], usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut triangle_edges = Vec::with_capacity(tris.len());
        let mut seen_tris: HashMap<[usize; 3], usize> = HashMap::new();
        for (t, tri) in tris.iter().enumerate() {
            let mut key = *tri;
            key.sort_unstable();
            if let Some(other) = seen_tris.insert(key, t) {
                return Err(MeshError::NonConforming(format!(
                    "triangles {other} and {t} share all three nodes"
                )));
            }
            let mut te = [0usize; 3];
            for (le, [a, b]) in LOCAL_EDGES.iter().enumerate() {
                let (na, nb) = (tri[*a], tri[*b]);
                let key = if na < nb { [na, nb] } else { [nb, na] };
                let id = *edge_index.entry(key).or_insert_with(|| {
                    edges.push(Edge {
                        nodes: key,
                        triangles: [None, None],
                    });
                    edges.len() - 1
                });
                let e = &mut edges[id];
                if e.triangles[0].is_none() {
                    e.triangles[0] = Some(t);
                } else if e.triangles[1].is_none() {
                    e.triangles[1] = Some(t);
                } else {
                    return Err(MeshError::NonConforming(format!(
                        "edge ({}, {}) is shared by more than two triangles",
                        key[0], key[1]
                    )));
                }
                te[le] = id;
            }
            triangle_edges.push(te);
        }

        let mesh = Mesh {
            nodes,
            triangles: tris,
            region_tags,
            edges,
            triangle_edges,
            boundary_markers: Vec::new(),
        };
        mesh.check_hanging_nodes()?;
        if mesh.euler_characteristic() != 1 {
            log::warn!(
                "mesh has Euler characteristic {} (expected 1 for a simply connected domain)",
                mesh.euler_characteristic()
            );
        }
        Ok(mesh)
    }

    /// A hanging node shows up as a node lying strictly inside a boundary
    /// edge (the coarse side of the hanging configuration has no partner).
    fn check_hanging_nodes(&self) -> Result<(), MeshError> {
        let boundary: Vec<&Edge> = self.edges.iter().filter(|e| e.is_boundary()).collect();
        if boundary.is_empty() {
            return Ok(());
        }
        let mut used = vec![false; self.nodes.len()];
        for tri in &self.triangles {
            for &n in tri {
                used[n] = true;
            }
        }
        for e in boundary {
            let a = self.nodes[e.nodes[0]];
            let b = self.nodes[e.nodes[1]];
            let len = dist(a, b);
            let (xmin, xmax) = (a[0].min(b[0]), a[0].max(b[0]));
            let (ymin, ymax) = (a[1].min(b[1]), a[1].max(b[1]));
            let tol = 1e-10 * len;
            for (n, p) in self.nodes.iter().enumerate() {
                if n == e.nodes[0] || n == e.nodes[1] {
                    continue;
                }
                if p[0] < xmin - tol || p[0] > xmax + tol || p[1] < ymin - tol || p[1] > ymax + tol
                {
                    continue;
                }
                let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                if cross.abs() > tol * len {
                    continue;
                }
                let s = ((p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1])) / (len * len);
                if s > 1e-10 && s < 1.0 - 1e-10 && used[n] {
                    return Err(MeshError::NonConforming(format!(
                        "hanging node {n} lies inside edge ({}, {})",
                        e.nodes[0], e.nodes[1]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Attaches boundary markers (edge endpoints and tag), as read from a
    /// mesh file. Markers are informational only.
    pub fn with_boundary_markers(mut self, markers: Vec<([usize; 2], u32)>) -> Self {
        self.boundary_markers = markers;
        self
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn region_tags(&self) -> &[u32] {
        &self.region_tags
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Global edge ids of the local edges of triangle `t`.
    pub fn triangle_edges(&self, t: usize) -> [usize; 3] {
        self.triangle_edges[t]
    }

    pub fn boundary_markers(&self) -> &[([usize; 2], u32)] {
        &self.boundary_markers
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_boundary_edges(&self) -> usize {
        self.edges.iter().filter(|e| e.is_boundary()).count()
    }

    pub fn n_interior_edges(&self) -> usize {
        self.n_edges() - self.n_boundary_edges()
    }

    /// `V - E + T`; equals 1 for a simply connected triangulated polygon.
    pub fn euler_characteristic(&self) -> i64 {
        self.n_nodes() as i64 - self.n_edges() as i64 + self.n_triangles() as i64
    }

    pub fn vertices(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.vertices(t);
        signed_area(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.area(t)).sum()
    }

    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.vertices(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Nodes touched by at least one boundary edge.
    pub fn boundary_nodes(&self) -> Vec<bool> {
        let mut flags = vec![false; self.n_nodes()];
        for e in self.edges.iter().filter(|e| e.is_boundary()) {
            flags[e.nodes[0]] = true;
            flags[e.nodes[1]] = true;
        }
        flags
    }

    /// `+1` if local edge `le` of triangle `t` runs in the global (lo to hi)
    /// direction when traversed from its lower to its higher local vertex.
    pub fn edge_sign(&self, t: usize, le: usize) -> f64 {
        let tri = self.triangles[t];
        let [a, b] = LOCAL_EDGES[le];
        if tri[a] < tri[b] {
            1.0
        } else {
            -1.0
        }
    }

    /// Splits every triangle into four through its edge midpoints.
    ///
    /// Children of triangle `t` are `4t..4t+4`; the first three share a
    /// vertex with the parent and the fourth is the middle triangle. New
    /// nodes are numbered `V + e` for edge `e`.
    pub fn refine_uniform(&self) -> Mesh {
        let nv = self.n_nodes();
        let mut nodes = self.nodes.clone();
        for e in &self.edges {
            let a = self.nodes[e.nodes[0]];
            let b = self.nodes[e.nodes[1]];
            nodes.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
        }
        let mut triangles = Vec::with_capacity(4 * self.n_triangles());
        let mut tags = Vec::with_capacity(4 * self.n_triangles());
        for (t, &[v0, v1, v2]) in self.triangles.iter().enumerate() {
            let [e0, e1, e2] = self.triangle_edges[t];
            let (m12, m02, m01) = (nv + e0, nv + e1, nv + e2);
            triangles.push([v0, m01, m02]);
            triangles.push([m01, v1, m12]);
            triangles.push([m02, m12, v2]);
            triangles.push([m01, m12, m02]);
            tags.extend_from_slice(&[self.region_tags[t]; 4]);
        }
        let mut markers = Vec::with_capacity(2 * self.boundary_markers.len());
        let lookup: HashMap<[usize; 2], usize> = self
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| (e.nodes, i))
            .collect();
        for &([a, b], tag) in &self.boundary_markers {
            let key = if a < b { [a, b] } else { [b, a] };
            if let Some(&e) = lookup.get(&key) {
                let m = nv + e;
                markers.push(([a, m], tag));
                markers.push(([m, b], tag));
            }
        }
        Mesh::new(nodes, triangles, tags)
            .expect("uniform refinement of a valid mesh is valid")
            .with_boundary_markers(markers)
    }

    /// Applies [`Mesh::refine_uniform`] `levels` times.
    pub fn refined(&self, levels: usize) -> Mesh {
        let mut m = self.clone();
        for _ in 0..levels {
            m = m.refine_uniform();
        }
        m
    }

    pub fn quality(&self) -> MeshQuality {
        let mut h: f64 = 0.0;
        let mut h_min = f64::INFINITY;
        let mut shape_ratio: f64 = 0.0;
        for t in 0..self.n_triangles() {
            let [a, b, c] = self.vertices(t);
            let (la, lb, lc) = (dist(b, c), dist(a, c), dist(a, b));
            let diam = la.max(lb).max(lc);
            let inradius = 2.0 * self.area(t) / (la + lb + lc);
            h = h.max(diam);
            h_min = h_min.min(diam);
            shape_ratio = shape_ratio.max(diam / inradius);
        }
        MeshQuality {
            h,
            h_min,
            shape_ratio,
        }
    }

    /// Unit square with `n x n` cells, each split along its rising diagonal.
    /// Region tags come from `region_fn` evaluated at triangle centroids.
    pub fn unit_square(n: usize, region_fn: impl Fn([f64; 2]) -> u32) -> Mesh {
        assert!(n >= 1, "unit_square needs at least one cell per side");
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                nodes.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
        let tags = triangles
            .iter()
            .map(|&[a, b, c]| {
                let (pa, pb, pc) = (nodes[a], nodes[b], nodes[c]);
                region_fn([(pa[0] + pb[0] + pc[0]) / 3.0, (pa[1] + pb[1] + pc[1]) / 3.0])
            })
            .collect();
        Mesh::new(nodes, triangles, tags).expect("structured square mesh is valid")
    }

    /// Finds the triangle of this mesh containing a point, given a triangle
    /// of a mesh obtained from this one by `levels` uniform refinements.
    pub fn ancestor(fine_triangle: usize, levels: usize) -> usize {
        fine_triangle >> (2 * levels)
    }

    /// Reference coordinates of physical point `x` in triangle `t`.
    pub fn to_reference(&self, t: usize, x: [f64; 2]) -> [f64; 2] {
        let [a, b, c] = self.vertices(t);
        let j = [[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let d = [x[0] - a[0], x[1] - a[1]];
        [
            (j[1][1] * d[0] - j[0][1] * d[1]) / det,
            (-j[1][0] * d[0] + j[0][0] * d[1]) / det,
        ]
    }
}

/// Builds a [`Mesh`]; alias of [`Mesh::new`] matching the free-function
/// style used elsewhere in the crate.
pub fn build_mesh(
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    region_tags: Vec<u32>,
) -> Result<Mesh, MeshError> {
    Mesh::new(nodes, triangles, region_tags)
}

pub fn structured_square_mesh(n: usize, region_fn: impl Fn([f64; 2]) -> u32) -> Mesh {
    Mesh::unit_square(n, region_fn)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Mesh {
        Mesh::unit_square(1, |_| 0)
    }

    #[test]
    fn two_triangle_square_counts() {
        let m = square();
        assert_eq!((m.n_nodes(), m.n_edges(), m.n_triangles()), (4, 5, 2));
        assert_eq!(m.n_boundary_edges(), 4);
        assert_eq!(m.n_interior_edges(), 1);
        assert_eq!(m.euler_characteristic(), 1);
    }

    #[test]
    fn reference_triangle_all_boundary() {
        let m = Mesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]], vec![0]).unwrap();
        assert_eq!((m.n_triangles(), m.n_edges(), m.n_boundary_edges()), (1, 3, 3));
        assert!((m.quality().h - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn clockwise_triangle_is_reordered() {
        let nodes = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let m = Mesh::new(nodes, vec![[0, 1, 2], [0, 3, 2]], vec![0, 0]).unwrap();
        assert!(m.area(0) > 0.0 && m.area(1) > 0.0);
        assert!((m.total_area() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn edges_are_canonically_oriented() {
        let m = Mesh::unit_square(3, |_| 0);
        assert!(m.edges().iter().all(|e| e.nodes[0] < e.nodes[1]));
        for e in m.edges() {
            let interior = e.triangles[1].is_some();
            assert_eq!(interior, !e.is_boundary());
            assert!(e.triangles[0].is_some());
        }
    }

    #[test]
    fn errors_are_reported() {
        let nodes = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(matches!(
            Mesh::new(nodes.clone(), vec![[0, 1, 5]], vec![0]),
            Err(MeshError::IndexOutOfRange { node: 5, .. })
        ));
        let collinear = vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        assert!(matches!(
            Mesh::new(collinear, vec![[0, 1, 2]], vec![0]),
            Err(MeshError::DegenerateTriangle(0))
        ));
        assert!(matches!(
            Mesh::new(nodes, vec![[0, 1, 2], [1, 2, 0]], vec![0, 0]),
            Err(MeshError::NonConforming(_))
        ));
    }

    #[test]
    fn hanging_node_is_rejected() {
        // Left cell split in two, right cell split in four around the midpoint
        // of the shared vertical edge, without splitting the left side.
        let nodes = vec![
            [0.0, 0.0],
            [1.0, 0.0],
            [1.0, 1.0],
            [0.0, 1.0],
            [2.0, 0.0],
            [2.0, 1.0],
            [1.0, 0.5],
        ];
        let tris = vec![[0, 1, 2], [0, 2, 3], [1, 4, 6], [4, 5, 6], [6, 5, 2]];
        assert!(matches!(
            Mesh::new(nodes, tris, vec![0; 5]),
            Err(MeshError::NonConforming(_))
        ));
    }

    #[test]
    fn refinement_counts_and_size() {
        let m = square();
        let r = m.refine_uniform();
        assert_eq!((r.n_nodes(), r.n_edges(), r.n_triangles()), (9, 16, 8));
        assert!((r.quality().h - m.quality().h / 2.0).abs() < 1e-15);
        assert_eq!(m.refined(2).n_triangles(), 16 * m.n_triangles());
        for (i, p) in m.nodes().iter().enumerate() {
            assert_eq!(r.nodes()[i], *p);
        }
    }

    #[test]
    fn refinement_preserves_area_and_euler() {
        let m = Mesh::new(
            vec![[0.0, 0.0], [3.0, 0.2], [2.5, 2.0], [-0.5, 1.7]],
            vec![[0, 1, 2], [0, 2, 3]],
            vec![1, 2],
        )
        .unwrap();
        let a0 = m.total_area();
        let mut r = m.clone();
        for _ in 0..4 {
            r = r.refine_uniform();
            assert_eq!(r.euler_characteristic(), 1);
            assert!((r.total_area() - a0).abs() <= 1e-12 * a0);
        }
        let ratio = r.n_edges() as f64 / r.n_nodes() as f64;
        assert!(ratio > 2.7 && ratio < 3.0, "E/V = {ratio}");
        for t in 0..r.n_triangles() {
            assert_eq!(r.region_tags()[t], m.region_tags()[Mesh::ancestor(t, 4)]);
        }
    }

    #[test]
    fn quality_examples() {
        let q = square().quality();
        assert!((q.h - 2f64.sqrt()).abs() < 1e-15);
        assert!((q.h_min - 2f64.sqrt()).abs() < 1e-15);
        let eq = Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]],
            vec![[0, 1, 2]],
            vec![0],
        )
        .unwrap();
        assert!((eq.quality().shape_ratio - 2.0 * 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn structured_square_regions() {
        let m = Mesh::unit_square(2, |_| 0);
        assert_eq!((m.n_triangles(), m.n_nodes(), m.n_edges()), (8, 9, 16));
        let m = Mesh::unit_square(4, |c| if c[0] < 0.5 { 1 } else { 2 });
        let ones = m.region_tags().iter().filter(|&&t| t == 1).count();
        let twos = m.region_tags().iter().filter(|&&t| t == 2).count();
        assert_eq!((ones, twos), (16, 16));
    }

    #[test]
    fn edge_orientation_independent_of_input_order() {
        let nodes = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let a = Mesh::new(nodes.clone(), vec![[0, 1, 2], [0, 2, 3]], vec![0, 0]).unwrap();
        let b = Mesh::new(nodes, vec![[3, 0, 2], [2, 0, 1]], vec![0, 0]).unwrap();
        let mut ea: Vec<_> = a.edges().iter().map(|e| e.nodes).collect();
        let mut eb: Vec<_> = b.edges().iter().map(|e| e.nodes).collect();
        ea.sort();
        eb.sort();
        assert_eq!(ea, eb);
    }

    #[test]
    fn to_reference_inverts_affine_map() {
        let m = Mesh::unit_square(3, |_| 0);
        for t in 0..m.n_triangles() {
            let [a, b, c] = m.vertices(t);
            let p = [
                a[0] + 0.2 * (b[0] - a[0]) + 0.3 * (c[0] - a[0]),
                a[1] + 0.2 * (b[1] - a[1]) + 0.3 * (c[1] - a[1]),
            ];
            let r = m.to_reference(t, p);
            assert!((r[0] - 0.2).abs() < 1e-13 && (r[1] - 0.3).abs() < 1e-13);
        }
    }
}
