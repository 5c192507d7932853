//! Reference elements, affine/covariant mappings and global dof numbering.
//!
//! Supported spaces:
//!
//! | space                        | local dofs  | global count        |
//! |------------------------------|-------------|---------------------|
//! | Lagrange P1 / P2             | 3 / 6       | V / V + E           |
//! | Nédélec 𝒩0 / 𝒩1 (first kind) | 3 / 8       | E / 2E + 2T         |
//! | broken Nédélec               | 3 / 8       | 3T / 8T             |
//! | discontinuous P0 / P1        | 1 / 3       | T / 3T              |
//! | edge trace P0 / P1           | 1 / 2 per edge | E / 2E           |
//!
//! Nédélec dofs are tangential moments `∫_0^1 v(a + s(b-a))·(b-a) L_m(s) ds`
//! against shifted Legendre polynomials `L_0 = 1`, `L_1 = 2s - 1` on every
//! edge, plus (for 𝒩1) the two moments `∫_T̂ v̂` against constant vectors.
//! Global edge moments use the mesh orientation (lower node index first);
//! element-local ones use the local vertex order, which gives the sign
//! `σ` on `L_0` moments and `σ² = 1` on `L_1` moments.

use nalgebra::{DMatrix, Matrix2};
use thiserror::Error;

use crate::mesh::{Mesh, LOCAL_EDGES};
use crate::quadrature::{gauss_legendre, rule_for_degree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("unsupported space: {0}")]
    UnsupportedSpace(String),
    #[error("singular Jacobian (det = {0:e})")]
    SingularJacobian(f64),
    #[error("coefficient vector has length {got}, space has {expected} dofs")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Lagrange,
    Nedelec,
    DiscontinuousP,
    EdgeTrace,
}

/// Where a reference dof lives and how it acts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DofFunctional {
    /// Point evaluation (Lagrange, discontinuous P).
    PointValue([f64; 2]),
    /// Tangential moment on a local edge against `L_m`.
    TangentialMoment { edge: usize, legendre: usize },
    /// `∫_T̂ v̂ · e_component`.
    InteriorMoment { component: usize },
    /// Coefficient of `L_m` on the edge parameter (trace spaces).
    EdgeLegendre { legendre: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DofEntity {
    Vertex(usize),
    Edge(usize),
    Interior,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DofDescriptor {
    pub entity: DofEntity,
    pub functional: DofFunctional,
}

/// Quadratic vector polynomial in the monomials `1, x, y, x², xy, y²`.
type VecPoly = [[f64; 6]; 2];

fn monomials(p: [f64; 2]) -> [f64; 6] {
    let [x, y] = p;
    [1.0, x, y, x * x, x * y, y * y]
}

fn eval_vec_poly(c: &VecPoly, p: [f64; 2]) -> [f64; 2] {
    let m = monomials(p);
    let dot = |a: &[f64; 6]| a.iter().zip(&m).map(|(a, b)| a * b).sum::<f64>();
    [dot(&c[0]), dot(&c[1])]
}

/// `∂x v_y - ∂y v_x`.
fn curl_vec_poly(c: &VecPoly, p: [f64; 2]) -> f64 {
    let [x, y] = p;
    let dvy_dx = c[1][1] + 2.0 * c[1][3] * x + c[1][4] * y;
    let dvx_dy = c[0][2] + c[0][4] * x + 2.0 * c[0][5] * y;
    dvy_dx - dvx_dy
}

/// Spanning set of `𝒩_k(T̂) = P_k² ⊕ (-y, x) P̊_k`.
fn nedelec_spanning_set(k: usize) -> Vec<VecPoly> {
    let e = |comp: usize, mono: usize| {
        let mut c = [[0.0; 6]; 2];
        c[comp][mono] = 1.0;
        c
    };
    match k {
        0 => {
            let mut rot = [[0.0; 6]; 2];
            rot[0][2] = -1.0;
            rot[1][1] = 1.0;
            vec![e(0, 0), e(1, 0), rot]
        }
        1 => {
            let mut r1 = [[0.0; 6]; 2];
            r1[0][4] = -1.0; // -xy
            r1[1][3] = 1.0; // x²
            let mut r2 = [[0.0; 6]; 2];
            r2[0][5] = -1.0; // -y²
            r2[1][4] = 1.0; // xy
            vec![e(0, 0), e(0, 1), e(0, 2), e(1, 0), e(1, 1), e(1, 2), r1, r2]
        }
        _ => unreachable!(),
    }
}

/// Vertices of the reference triangle.
pub const REF_VERTICES: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

/// Shifted Legendre polynomial on `[0, 1]`.
pub fn legendre01(m: usize, s: f64) -> f64 {
    match m {
        0 => 1.0,
        1 => 2.0 * s - 1.0,
        _ => panic!("edge Legendre degree {m} not supported"),
    }
}

/// Reference finite element on the triangle `(0,0), (1,0), (0,1)`.
#[derive(Debug, Clone)]
pub struct ReferenceElement {
    pub family: Family,
    pub order: usize,
    pub dofs: Vec<DofDescriptor>,
    nedelec_coeffs: Vec<VecPoly>,
}

/// Basis values at one reference point.
#[derive(Debug, Clone, PartialEq)]
pub enum BasisValues {
    Vector { values: Vec<[f64; 2]>, curls: Vec<f64> },
    Scalar { values: Vec<f64>, grads: Vec<[f64; 2]> },
}

fn barycentric(p: [f64; 2]) -> [f64; 3] {
    [1.0 - p[0] - p[1], p[0], p[1]]
}

const BARY_GRADS: [[f64; 2]; 3] = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];

impl ReferenceElement {
    pub fn new(family: Family, order: usize) -> Result<Self, SpaceError> {
        let unsupported = || SpaceError::UnsupportedSpace(format!("{family:?} of order {order}"));
        let mut dofs = Vec::new();
        let mut nedelec_coeffs = Vec::new();
        match family {
            Family::Lagrange => {
                if !(1..=2).contains(&order) {
                    return Err(unsupported());
                }
                for (v, p) in REF_VERTICES.iter().enumerate() {
                    dofs.push(DofDescriptor {
                        entity: DofEntity::Vertex(v),
                        functional: DofFunctional::PointValue(*p),
                    });
                }
                if order == 2 {
                    for (e, [a, b]) in LOCAL_EDGES.iter().enumerate() {
                        let (pa, pb) = (REF_VERTICES[*a], REF_VERTICES[*b]);
                        dofs.push(DofDescriptor {
                            entity: DofEntity::Edge(e),
                            functional: DofFunctional::PointValue([
                                0.5 * (pa[0] + pb[0]),
                                0.5 * (pa[1] + pb[1]),
                            ]),
                        });
                    }
                }
            }
            Family::DiscontinuousP => match order {
                0 => dofs.push(DofDescriptor {
                    entity: DofEntity::Interior,
                    functional: DofFunctional::PointValue([1.0 / 3.0, 1.0 / 3.0]),
                }),
                1 => {
                    for p in REF_VERTICES {
                        dofs.push(DofDescriptor {
                            entity: DofEntity::Interior,
                            functional: DofFunctional::PointValue(p),
                        });
                    }
                }
                _ => return Err(unsupported()),
            },
            Family::EdgeTrace => {
                if order > 1 {
                    return Err(unsupported());
                }
                for m in 0..=order {
                    dofs.push(DofDescriptor {
                        entity: DofEntity::Edge(0),
                        functional: DofFunctional::EdgeLegendre { legendre: m },
                    });
                }
            }
            Family::Nedelec => {
                if order > 1 {
                    return Err(unsupported());
                }
                for e in 0..3 {
                    for m in 0..=order {
                        dofs.push(DofDescriptor {
                            entity: DofEntity::Edge(e),
                            functional: DofFunctional::TangentialMoment { edge: e, legendre: m },
                        });
                    }
                }
                if order == 1 {
                    for c in 0..2 {
                        dofs.push(DofDescriptor {
                            entity: DofEntity::Interior,
                            functional: DofFunctional::InteriorMoment { component: c },
                        });
                    }
                }
                // Dual basis: invert the dof matrix on the spanning set.
                let span = nedelec_spanning_set(order);
                let n = span.len();
                let d = DMatrix::from_fn(n, n, |i, j| {
                    apply_vector_functional(&dofs[i].functional, |p| eval_vec_poly(&span[j], p))
                });
                let inv = d.try_inverse().expect("Nédélec dof matrix is invertible");
                for i in 0..n {
                    let mut c = [[0.0; 6]; 2];
                    for (j, s) in span.iter().enumerate() {
                        for comp in 0..2 {
                            for mono in 0..6 {
                                c[comp][mono] += inv[(j, i)] * s[comp][mono];
                            }
                        }
                    }
                    nedelec_coeffs.push(c);
                }
            }
        }
        Ok(ReferenceElement {
            family,
            order,
            dofs,
            nedelec_coeffs,
        })
    }

    pub fn ndofs(&self) -> usize {
        self.dofs.len()
    }

    /// Nédélec basis values and curls at a reference point.
    pub fn nedelec(&self, p: [f64; 2]) -> (Vec<[f64; 2]>, Vec<f64>) {
        let vals = self.nedelec_coeffs.iter().map(|c| eval_vec_poly(c, p)).collect();
        let curls = self.nedelec_coeffs.iter().map(|c| curl_vec_poly(c, p)).collect();
        (vals, curls)
    }

    /// Scalar basis values and reference gradients.
    pub fn scalar(&self, p: [f64; 2]) -> (Vec<f64>, Vec<[f64; 2]>) {
        let l = barycentric(p);
        match (self.family, self.order) {
            (Family::Lagrange, 1) | (Family::DiscontinuousP, 1) => (l.to_vec(), BARY_GRADS.to_vec()),
            (Family::DiscontinuousP, 0) => (vec![1.0], vec![[0.0, 0.0]]),
            (Family::Lagrange, 2) => {
                let mut vals = Vec::with_capacity(6);
                let mut grads = Vec::with_capacity(6);
                for i in 0..3 {
                    vals.push(l[i] * (2.0 * l[i] - 1.0));
                    let f = 4.0 * l[i] - 1.0;
                    grads.push([f * BARY_GRADS[i][0], f * BARY_GRADS[i][1]]);
                }
                for [a, b] in LOCAL_EDGES {
                    vals.push(4.0 * l[a] * l[b]);
                    grads.push([
                        4.0 * (l[a] * BARY_GRADS[b][0] + l[b] * BARY_GRADS[a][0]),
                        4.0 * (l[a] * BARY_GRADS[b][1] + l[b] * BARY_GRADS[a][1]),
                    ]);
                }
                (vals, grads)
            }
            (Family::EdgeTrace, k) => {
                // Trace bases are 1D; the first coordinate is the edge parameter.
                let vals = (0..=k).map(|m| legendre01(m, p[0])).collect();
                let grads = (0..=k).map(|m| [if m == 1 { 2.0 } else { 0.0 }, 0.0]).collect();
                (vals, grads)
            }
            _ => panic!("scalar evaluation requested on a vector element"),
        }
    }

    pub fn eval_basis(&self, p: [f64; 2]) -> BasisValues {
        match self.family {
            Family::Nedelec => {
                let (values, curls) = self.nedelec(p);
                BasisValues::Vector { values, curls }
            }
            _ => {
                let (values, grads) = self.scalar(p);
                BasisValues::Scalar { values, grads }
            }
        }
    }

    /// Applies reference dof functional `i` to a reference function.
    pub fn apply_functional(&self, i: usize, f: &dyn Fn([f64; 2]) -> FunctionValue) -> f64 {
        match self.dofs[i].functional {
            DofFunctional::PointValue(p) => f(p).scalar(),
            DofFunctional::EdgeLegendre { legendre } => {
                // L2 projection coefficient onto L_m (orthogonal on [0, 1]).
                let (pts, wts) = gauss_legendre(4);
                let norm = 1.0 / (2.0 * legendre as f64 + 1.0);
                pts.iter()
                    .zip(wts)
                    .map(|(s, w)| w * f([*s, 0.0]).scalar() * legendre01(legendre, *s))
                    .sum::<f64>()
                    / norm
            }
            ref func => apply_vector_functional(func, |p| f(p).vector()),
        }
    }
}

/// Value of a test function handed to [`ReferenceElement::apply_functional`].
#[derive(Debug, Clone, Copy)]
pub enum FunctionValue {
    Scalar(f64),
    Vector([f64; 2]),
}

impl FunctionValue {
    fn scalar(self) -> f64 {
        match self {
            FunctionValue::Scalar(v) => v,
            FunctionValue::Vector(_) => panic!("expected a scalar function"),
        }
    }
    fn vector(self) -> [f64; 2] {
        match self {
            FunctionValue::Vector(v) => v,
            FunctionValue::Scalar(_) => panic!("expected a vector function"),
        }
    }
}

fn apply_vector_functional(func: &DofFunctional, f: impl Fn([f64; 2]) -> [f64; 2]) -> f64 {
    match *func {
        DofFunctional::TangentialMoment { edge, legendre } => {
            let [a, b] = LOCAL_EDGES[edge];
            let (pa, pb) = (REF_VERTICES[a], REF_VERTICES[b]);
            let d = [pb[0] - pa[0], pb[1] - pa[1]];
            let (pts, wts) = gauss_legendre(4);
            pts.iter()
                .zip(wts)
                .map(|(s, w)| {
                    let v = f([pa[0] + s * d[0], pa[1] + s * d[1]]);
                    w * (v[0] * d[0] + v[1] * d[1]) * legendre01(legendre, *s)
                })
                .sum()
        }
        DofFunctional::InteriorMoment { component } => {
            let rule = rule_for_degree(6).expect("degree-6 rule");
            rule.integrate_reference(|p| f(p)[component])
        }
        _ => panic!("not a vector functional"),
    }
}

/// Affine map `x = p0 + J x̂` of one triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub vertices: [[f64; 2]; 3],
    pub jacobian: [[f64; 2]; 2],
    pub det: f64,
    /// `J^{-T}`.
    pub inv_t: [[f64; 2]; 2],
}

impl ElementGeometry {
    pub fn new(vertices: [[f64; 2]; 3]) -> Result<Self, SpaceError> {
        let [a, b, c] = vertices;
        let jacobian = [[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]];
        let inv_t = inverse_transpose(jacobian)?;
        let det = jacobian[0][0] * jacobian[1][1] - jacobian[0][1] * jacobian[1][0];
        Ok(ElementGeometry {
            vertices,
            jacobian,
            det,
            inv_t,
        })
    }

    pub fn of(mesh: &Mesh, t: usize) -> Self {
        Self::new(mesh.vertices(t)).expect("mesh triangles are non-degenerate")
    }

    pub fn area(&self) -> f64 {
        0.5 * self.det.abs()
    }

    pub fn map(&self, p: [f64; 2]) -> [f64; 2] {
        let a = self.vertices[0];
        let j = &self.jacobian;
        [
            a[0] + j[0][0] * p[0] + j[0][1] * p[1],
            a[1] + j[1][0] * p[0] + j[1][1] * p[1],
        ]
    }

    /// `J^{-T} v̂`, used for Nédélec values and Lagrange gradients.
    pub fn covariant(&self, v: [f64; 2]) -> [f64; 2] {
        let m = &self.inv_t;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }

    /// `J^T v`, pulls a physical vector field back to the reference cell.
    pub fn pull_back(&self, v: [f64; 2]) -> [f64; 2] {
        let j = &self.jacobian;
        [j[0][0] * v[0] + j[1][0] * v[1], j[0][1] * v[0] + j[1][1] * v[1]]
    }

    pub fn curl(&self, c: f64) -> f64 {
        c / self.det
    }
}

fn inverse_transpose(j: [[f64; 2]; 2]) -> Result<[[f64; 2]; 2], SpaceError> {
    let m = Matrix2::new(j[0][0], j[0][1], j[1][0], j[1][1]);
    let det = m.determinant();
    let scale = m.abs().max();
    if det.abs() <= 1e-14 * scale * scale || !det.is_finite() {
        return Err(SpaceError::SingularJacobian(det));
    }
    let inv = m.try_inverse().ok_or(SpaceError::SingularJacobian(det))?;
    Ok([[inv[(0, 0)], inv[(1, 0)]], [inv[(0, 1)], inv[(1, 1)]]])
}

/// Covariant Piola transform of reference Nédélec values and curls:
/// `v = J^{-T} v̂`, `curl v = curl v̂ / det J`.
pub fn map_covariant(
    ref_values: &[[f64; 2]],
    ref_curls: &[f64],
    jacobian: [[f64; 2]; 2],
) -> Result<(Vec<[f64; 2]>, Vec<f64>), SpaceError> {
    let inv_t = inverse_transpose(jacobian)?;
    let det = jacobian[0][0] * jacobian[1][1] - jacobian[0][1] * jacobian[1][0];
    let values = ref_values
        .iter()
        .map(|v| [inv_t[0][0] * v[0] + inv_t[0][1] * v[1], inv_t[1][0] * v[0] + inv_t[1][1] * v[1]])
        .collect();
    let curls = ref_curls.iter().map(|c| c / det).collect();
    Ok((values, curls))
}

/// A global finite element space on a mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    /// Continuous Lagrange of order 1 or 2; boundary dofs are constrained.
    Lagrange(usize),
    /// Tangentially continuous Nédélec of order 0 or 1.
    Nedelec(usize),
    /// Element-by-element Nédélec of order 0 or 1.
    BrokenNedelec(usize),
    /// Discontinuous polynomials of degree 0 or 1.
    Discontinuous(usize),
    /// Edge polynomials of degree 0 or 1; boundary edges are constrained.
    EdgeTrace(usize),
}

impl Space {
    pub fn family(&self) -> Family {
        match self {
            Space::Lagrange(_) => Family::Lagrange,
            Space::Nedelec(_) | Space::BrokenNedelec(_) => Family::Nedelec,
            Space::Discontinuous(_) => Family::DiscontinuousP,
            Space::EdgeTrace(_) => Family::EdgeTrace,
        }
    }

    pub fn order(&self) -> usize {
        match *self {
            Space::Lagrange(k)
            | Space::Nedelec(k)
            | Space::BrokenNedelec(k)
            | Space::Discontinuous(k)
            | Space::EdgeTrace(k) => k,
        }
    }
}

/// Global numbering of a [`Space`] on a mesh.
///
/// For every element, `local_dofs` entries of `(global index, sign)`; the
/// element restriction of global basis function `g` is `sign` times the
/// mapped reference basis function. For [`Space::EdgeTrace`] the element
/// entries list the trace dofs of the element's three local edges.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub space: Space,
    pub n_dofs: usize,
    pub local_dofs: usize,
    elem_dofs: Vec<usize>,
    elem_signs: Vec<f64>,
    /// Trace spaces only: `k + 1` dofs per edge, edge-major.
    pub edge_dofs: Vec<usize>,
    pub constrained: Vec<bool>,
}

impl DofMap {
    pub fn new(space: Space, mesh: &Mesh) -> Result<Self, SpaceError> {
        let k = space.order();
        let reference = ReferenceElement::new(space.family(), k)?;
        let nt = mesh.n_triangles();
        let (ne, nv) = (mesh.n_edges(), mesh.n_nodes());
        let local = match space {
            Space::EdgeTrace(k) => 3 * (k + 1),
            _ => reference.ndofs(),
        };
        let mut elem_dofs = Vec::with_capacity(nt * local);
        let mut elem_signs = Vec::with_capacity(nt * local);
        let mut edge_dofs = Vec::new();
        let n_dofs;
        let mut constrained;
        match space {
            Space::Lagrange(_) => {
                n_dofs = if k == 1 { nv } else { nv + ne };
                constrained = mesh.boundary_nodes();
                if k == 2 {
                    constrained.extend(mesh.edges().iter().map(|e| e.is_boundary()));
                }
                for t in 0..nt {
                    elem_dofs.extend_from_slice(&mesh.triangles()[t]);
                    if k == 2 {
                        elem_dofs.extend(mesh.triangle_edges(t).iter().map(|e| nv + e));
                    }
                    elem_signs.extend(std::iter::repeat_n(1.0, local));
                }
            }
            Space::Nedelec(_) | Space::BrokenNedelec(_) => {
                let broken = matches!(space, Space::BrokenNedelec(_));
                n_dofs = if broken { nt * local } else if k == 0 { ne } else { 2 * ne + 2 * nt };
                constrained = vec![false; n_dofs];
                for t in 0..nt {
                    let te = mesh.triangle_edges(t);
                    for (le, &e) in te.iter().enumerate() {
                        let sigma = mesh.edge_sign(t, le);
                        for m in 0..=k {
                            elem_dofs.push(if broken {
                                t * local + le * (k + 1) + m
                            } else {
                                e * (k + 1) + m
                            });
                            elem_signs.push(if m == 0 { sigma } else { 1.0 });
                        }
                    }
                    if k == 1 {
                        for c in 0..2 {
                            elem_dofs.push(if broken { t * local + 6 + c } else { 2 * ne + 2 * t + c });
                            elem_signs.push(1.0);
                        }
                    }
                }
            }
            Space::Discontinuous(_) => {
                n_dofs = nt * local;
                constrained = vec![false; n_dofs];
                elem_dofs.extend(0..n_dofs);
                elem_signs.extend(std::iter::repeat_n(1.0, n_dofs));
            }
            Space::EdgeTrace(_) => {
                n_dofs = ne * (k + 1);
                edge_dofs.extend(0..n_dofs);
                constrained = mesh
                    .edges()
                    .iter()
                    .flat_map(|e| std::iter::repeat_n(e.is_boundary(), k + 1))
                    .collect();
                for t in 0..nt {
                    for e in mesh.triangle_edges(t) {
                        for m in 0..=k {
                            elem_dofs.push(e * (k + 1) + m);
                            elem_signs.push(1.0);
                        }
                    }
                }
            }
        }
        Ok(DofMap {
            space,
            n_dofs,
            local_dofs: local,
            elem_dofs,
            elem_signs,
            edge_dofs,
            constrained,
        })
    }

    pub fn element_dofs(&self, t: usize) -> &[usize] {
        &self.elem_dofs[t * self.local_dofs..(t + 1) * self.local_dofs]
    }

    pub fn element_signs(&self, t: usize) -> &[f64] {
        &self.elem_signs[t * self.local_dofs..(t + 1) * self.local_dofs]
    }

    pub fn n_free(&self) -> usize {
        self.constrained.iter().filter(|c| !**c).count()
    }

    pub fn n_constrained(&self) -> usize {
        self.n_dofs - self.n_free()
    }

    /// Compact numbering of the unconstrained dofs.
    pub fn free_numbering(&self) -> Vec<Option<usize>> {
        let mut next = 0;
        self.constrained
            .iter()
            .map(|&c| {
                if c {
                    None
                } else {
                    next += 1;
                    Some(next - 1)
                }
            })
            .collect()
    }

    /// Signed element-local coefficients of a global vector.
    pub fn gather(&self, t: usize, global: &[f64]) -> Vec<f64> {
        self.element_dofs(t)
            .iter()
            .zip(self.element_signs(t))
            .map(|(&g, &s)| s * global[g])
            .collect()
    }
}

pub fn build_dofmap(space: Space, mesh: &Mesh) -> Result<DofMap, SpaceError> {
    DofMap::new(space, mesh)
}

/// Coefficient vector tied to a space.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldCoefficients {
    pub space: Space,
    pub coeffs: Vec<f64>,
}

impl FieldCoefficients {
    pub fn new(dofmap: &DofMap, coeffs: Vec<f64>) -> Result<Self, SpaceError> {
        if coeffs.len() != dofmap.n_dofs {
            return Err(SpaceError::LengthMismatch {
                expected: dofmap.n_dofs,
                got: coeffs.len(),
            });
        }
        Ok(FieldCoefficients {
            space: dofmap.space,
            coeffs,
        })
    }

    pub fn zeros(dofmap: &DofMap) -> Self {
        FieldCoefficients {
            space: dofmap.space,
            coeffs: vec![0.0; dofmap.n_dofs],
        }
    }
}

/// Value and curl of a Nédélec field (conforming or broken) at reference
/// point `p` of triangle `t`.
pub fn eval_nedelec(
    mesh: &Mesh,
    dofmap: &DofMap,
    reference: &ReferenceElement,
    coeffs: &[f64],
    t: usize,
    p: [f64; 2],
) -> ([f64; 2], f64) {
    let geo = ElementGeometry::of(mesh, t);
    let local = dofmap.gather(t, coeffs);
    let (vals, curls) = reference.nedelec(p);
    let mut v = [0.0; 2];
    let mut c = 0.0;
    for i in 0..local.len() {
        v[0] += local[i] * vals[i][0];
        v[1] += local[i] * vals[i][1];
        c += local[i] * curls[i];
    }
    (geo.covariant(v), geo.curl(c))
}

/// Value and gradient of a scalar field (Lagrange or discontinuous) at
/// reference point `p` of triangle `t`.
pub fn eval_scalar(
    mesh: &Mesh,
    dofmap: &DofMap,
    reference: &ReferenceElement,
    coeffs: &[f64],
    t: usize,
    p: [f64; 2],
) -> (f64, [f64; 2]) {
    let geo = ElementGeometry::of(mesh, t);
    let local = dofmap.gather(t, coeffs);
    let (vals, grads) = reference.scalar(p);
    let mut v = 0.0;
    let mut g = [0.0; 2];
    for i in 0..local.len() {
        v += local[i] * vals[i];
        g[0] += local[i] * grads[i][0];
        g[1] += local[i] * grads[i][1];
    }
    (v, geo.covariant(g))
}

/// Canonical interpolant into a Nédélec space (conforming or broken).
///
/// `f(t, x)` evaluates the field on triangle `t` at physical point `x`;
/// edge moments of conforming spaces are taken from the first triangle
/// adjacent to the edge.
pub fn interpolate_nedelec(
    mesh: &Mesh,
    dofmap: &DofMap,
    f: impl Fn(usize, [f64; 2]) -> [f64; 2],
) -> Vec<f64> {
    let k = dofmap.space.order();
    let reference = ReferenceElement::new(Family::Nedelec, k).expect("supported order");
    let mut out = vec![0.0; dofmap.n_dofs];
    let broken = matches!(dofmap.space, Space::BrokenNedelec(_));
    let mut done = vec![false; dofmap.n_dofs];
    for t in 0..mesh.n_triangles() {
        let geo = ElementGeometry::of(mesh, t);
        let dofs = dofmap.element_dofs(t);
        let signs = dofmap.element_signs(t);
        for i in 0..reference.ndofs() {
            let g = dofs[i];
            if done[g] && !broken {
                continue;
            }
            let pulled = |p: [f64; 2]| FunctionValue::Vector(geo.pull_back(f(t, geo.map(p))));
            out[g] = signs[i] * reference.apply_functional(i, &pulled);
            done[g] = true;
        }
    }
    out
}

/// Nodal interpolant into a Lagrange or discontinuous scalar space.
pub fn interpolate_scalar(
    mesh: &Mesh,
    dofmap: &DofMap,
    f: impl Fn(usize, [f64; 2]) -> f64,
) -> Vec<f64> {
    let reference = ReferenceElement::new(dofmap.space.family(), dofmap.space.order())
        .expect("supported space");
    let mut out = vec![0.0; dofmap.n_dofs];
    for t in 0..mesh.n_triangles() {
        let geo = ElementGeometry::of(mesh, t);
        for (i, &g) in dofmap.element_dofs(t).iter().enumerate() {
            if let DofFunctional::PointValue(p) = reference.dofs[i].functional {
                out[g] = f(t, geo.map(p));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn whitney(edge: usize, p: [f64; 2]) -> ([f64; 2], f64) {
        let [a, b] = LOCAL_EDGES[edge];
        let l = barycentric(p);
        let (ga, gb) = (BARY_GRADS[a], BARY_GRADS[b]);
        let v = [l[a] * gb[0] - l[b] * ga[0], l[a] * gb[1] - l[b] * ga[1]];
        (v, 2.0 * (ga[0] * gb[1] - ga[1] * gb[0]))
    }

    #[test]
    fn local_dof_counts() {
        let count = |f, k| ReferenceElement::new(f, k).unwrap().ndofs();
        assert_eq!(count(Family::Nedelec, 0), 3);
        assert_eq!(count(Family::Nedelec, 1), 8);
        assert_eq!(count(Family::DiscontinuousP, 0), 1);
        assert_eq!(count(Family::DiscontinuousP, 1), 3);
        assert_eq!(count(Family::Lagrange, 1), 3);
        assert_eq!(count(Family::Lagrange, 2), 6);
        assert_eq!(count(Family::EdgeTrace, 0), 1);
        assert_eq!(count(Family::EdgeTrace, 1), 2);
        assert!(ReferenceElement::new(Family::Nedelec, 2).is_err());
        assert!(ReferenceElement::new(Family::Lagrange, 0).is_err());
    }

    #[test]
    fn lowest_order_nedelec_matches_whitney_forms() {
        let r = ReferenceElement::new(Family::Nedelec, 0).unwrap();
        for p in [[0.1, 0.2], [0.5, 0.5], [0.0, 0.0], [0.3, 0.05]] {
            let (vals, curls) = r.nedelec(p);
            for e in 0..3 {
                let (w, c) = whitney(e, p);
                assert!((vals[e][0] - w[0]).abs() < 1e-13 && (vals[e][1] - w[1]).abs() < 1e-13);
                assert!((curls[e] - c).abs() < 1e-13);
            }
        }
        // Edge {v1, v2}: curl = 2 ∇λ1 × ∇λ2 = 2.
        assert!((r.nedelec([0.2, 0.2]).1[0] - 2.0).abs() < 1e-13);
    }

    #[test]
    fn lagrange_nodal_and_partition_of_unity() {
        for k in 1..=2 {
            let r = ReferenceElement::new(Family::Lagrange, k).unwrap();
            for (i, d) in r.dofs.iter().enumerate() {
                let DofFunctional::PointValue(p) = d.functional else { unreachable!() };
                let (vals, _) = r.scalar(p);
                for (j, v) in vals.iter().enumerate() {
                    assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
                }
            }
            for p in [[0.1, 0.7], [0.33, 0.33], [0.9, 0.05]] {
                let (vals, grads) = r.scalar(p);
                assert!((vals.iter().sum::<f64>() - 1.0).abs() < 1e-14);
                let gs = grads.iter().fold([0.0, 0.0], |a, g| [a[0] + g[0], a[1] + g[1]]);
                assert!(gs[0].abs() < 1e-13 && gs[1].abs() < 1e-13);
            }
        }
    }

    #[test]
    fn covariant_map_examples() {
        let r = ReferenceElement::new(Family::Nedelec, 0).unwrap();
        let (v, c) = r.nedelec([0.25, 0.25]);
        let (pv, pc) = map_covariant(&v, &c, [[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(pv, v);
        assert_eq!(pc, c);
        let s = 3.0;
        let (_, pc) = map_covariant(&v, &c, [[s, 0.0], [0.0, s]]).unwrap();
        for (a, b) in pc.iter().zip(&c) {
            assert!((a - b / (s * s)).abs() < 1e-14);
        }
        assert!(matches!(
            map_covariant(&v, &c, [[1.0, 2.0], [2.0, 4.0]]),
            Err(SpaceError::SingularJacobian(_))
        ));
    }

    #[test]
    fn dofmap_counts_on_two_triangle_square() {
        let m = Mesh::unit_square(1, |_| 0);
        assert_eq!(DofMap::new(Space::Nedelec(0), &m).unwrap().n_dofs, 5);
        assert_eq!(DofMap::new(Space::BrokenNedelec(0), &m).unwrap().n_dofs, 6);
        let trace = DofMap::new(Space::EdgeTrace(0), &m).unwrap();
        assert_eq!(trace.n_free(), 1);
        let p1 = DofMap::new(Space::Lagrange(1), &m).unwrap();
        assert_eq!((p1.n_constrained(), p1.n_free()), (4, 0));
        let n1 = DofMap::new(Space::Nedelec(1), &m).unwrap();
        assert_eq!(n1.n_dofs, 2 * 5 + 2 * 2);
        assert_eq!(DofMap::new(Space::Discontinuous(1), &m).unwrap().n_dofs, 6);
        assert_eq!(DofMap::new(Space::Lagrange(2), &m).unwrap().n_dofs, 9);
    }

    #[test]
    fn shared_edges_have_consistent_signs() {
        let m = Mesh::unit_square(3, |_| 0);
        let d = DofMap::new(Space::Nedelec(0), &m).unwrap();
        for (e, edge) in m.edges().iter().enumerate() {
            for t in edge.triangles.iter().flatten() {
                let le = m.triangle_edges(*t).iter().position(|&x| x == e).unwrap();
                let [a, b] = LOCAL_EDGES[le];
                let tri = m.triangles()[*t];
                let expected = if tri[a] < tri[b] { 1.0 } else { -1.0 };
                assert_eq!(d.element_signs(*t)[le], expected);
                assert_eq!(d.element_dofs(*t)[le], e);
            }
        }
    }
}
