//! Discrete nonlinear problems for both formulations.
//!
//! * [`PrimalProblem`]: vector potential `a` in continuous Lagrange `P_p`
//!   with `a = 0` on the boundary, residual
//!   `(f'(Curl a), Curl v) + (σ a, v) - (j, v)`.
//! * [`MixedProblem`]: field `H` in Nédélec `𝒩_k`, potential `a` in
//!   discontinuous `P_k`. Newton steps are computed by hybridization:
//!   `H` is broken element by element, tangential continuity is enforced
//!   by a trace multiplier `â` in edge `P_k`, local unknowns are eliminated
//!   and only the symmetric positive definite trace system is solved
//!   globally.
//!
//! Both are addressed by the formulation order `o` (`p = o`, `k = o - 1`);
//! quadrature of degree below `2o` is refused.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::fe_spaces::{
    legendre01, DofMap, ElementGeometry, Family, ReferenceElement, Space, SpaceError, REF_VERTICES,
};
use crate::material::{MaterialError, MaterialLaw, MaterialMap};
use crate::mesh::{Mesh, LOCAL_EDGES};
use crate::quadrature::{gauss_legendre, rule_for_degree, QuadRule, QuadratureError};
use crate::solver::{
    newton, norm2, solve_banded_lu, solve_spd, LinearSolver, NewtonOptions, NonlinearProblem, SolveReport, SolverError,
    SparseSymmetric, TripletBuilder,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("quadrature of degree {degree} is too weak for order {order} (need at least {required})")]
    QuadratureTooWeak { degree: usize, order: usize, required: usize },
    #[error("material map has not been certified")]
    UncertifiedMaterial,
    #[error("unsupported order {0} (supported: 1, 2)")]
    UnsupportedOrder(usize),
    #[error("state vector has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("local block of triangle {0} is not positive definite")]
    LocalBlockSingular(usize),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

impl AssemblyError {
    /// Command-line exit status: 2 when the solver ran and failed, 1 for
    /// bad input.
    pub fn exit_code(&self) -> u8 {
        match self {
            AssemblyError::Solver(_) | AssemblyError::LocalBlockSingular(_) => 2,
            _ => 1,
        }
    }

    /// The Newton report carried by solver failures, if any.
    pub fn report(&self) -> Option<&SolveReport> {
        match self {
            AssemblyError::Solver(SolverError::NotConverged { report })
            | AssemblyError::Solver(SolverError::LineSearchFailed { report }) => Some(report),
            _ => None,
        }
    }
}

/// Which discretization to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Formulation {
    /// Vector potential in Lagrange elements.
    Primal,
    /// Hybridized mixed method in Nédélec / discontinuous elements.
    Mixed,
}

impl Formulation {
    pub fn name(&self) -> &'static str {
        match self {
            Formulation::Primal => "primal",
            Formulation::Mixed => "mixed",
        }
    }
}

impl std::str::FromStr for Formulation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "primal" | "vector-potential" => Ok(Formulation::Primal),
            "mixed" | "hybrid" => Ok(Formulation::Mixed),
            _ => Err(format!("unknown formulation '{s}' (expected 'primal' or 'mixed')")),
        }
    }
}

/// Smallest admissible quadrature degree for order `o`.
pub fn required_degree(order: usize) -> usize {
    2 * order
}

/// Checks a rule against the order and returns it.
pub fn check_rule(rule: &'static QuadRule, order: usize) -> Result<&'static QuadRule, AssemblyError> {
    let required = required_degree(order);
    if rule.degree < required {
        return Err(AssemblyError::QuadratureTooWeak {
            degree: rule.degree,
            order,
            required,
        });
    }
    Ok(rule)
}

/// The default rule for order `o`: degree `2o`.
pub fn default_rule(order: usize) -> Result<&'static QuadRule, AssemblyError> {
    Ok(rule_for_degree(required_degree(order))?)
}

fn check_order(order: usize) -> Result<(), AssemblyError> {
    if !(1..=2).contains(&order) {
        return Err(AssemblyError::UnsupportedOrder(order));
    }
    Ok(())
}

fn check_len(x: &[f64], expected: usize) -> Result<(), AssemblyError> {
    if x.len() != expected {
        return Err(AssemblyError::LengthMismatch { expected, got: x.len() });
    }
    Ok(())
}

fn mat_vec2(m: &[[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// `Curl v = (∂y v, -∂x v)` of a scalar with gradient `g`.
fn curl_of_gradient(g: [f64; 2]) -> [f64; 2] {
    [g[1], -g[0]]
}

/// Counter-clockwise traversal sign of each local edge relative to its
/// lower-to-higher local vertex direction.
const CCW_LOCAL_SIGN: [f64; 3] = [1.0, -1.0, 1.0];

/// Orientation of triangle `t` along local edge `le`: `+1` if the
/// counter-clockwise boundary of `t` runs along the global edge direction.
pub fn trace_orientation(mesh: &Mesh, t: usize, le: usize) -> f64 {
    CCW_LOCAL_SIGN[le] * mesh.edge_sign(t, le)
}

/// Quadrature data of one element, shared by residual and Jacobian.
struct PrimalElement<'a> {
    weights: Vec<f64>,
    curls: Vec<Vec<[f64; 2]>>,
    law: &'a MaterialLaw,
    mass: DMatrix<f64>,
    source: DVector<f64>,
}

/// Vector potential discretization in Lagrange `P_p`.
pub struct PrimalProblem<'a> {
    mesh: &'a Mesh,
    order: usize,
    dofs: DofMap,
    free: Vec<Option<usize>>,
    n_free: usize,
    elements: Vec<PrimalElement<'a>>,
    rule: &'static QuadRule,
    linear_solver: LinearSolver,
    last_size: (usize, usize),
}

impl<'a> PrimalProblem<'a> {
    pub fn new(mesh: &'a Mesh, materials: &'a MaterialMap, order: usize) -> Result<Self, AssemblyError> {
        Self::with_rule(mesh, materials, order, default_rule(order.clamp(1, 2))?)
    }

    pub fn with_rule(
        mesh: &'a Mesh,
        materials: &'a MaterialMap,
        order: usize,
        rule: &'static QuadRule,
    ) -> Result<Self, AssemblyError> {
        check_order(order)?;
        check_rule(rule, order)?;
        if !materials.is_certified() {
            return Err(AssemblyError::UncertifiedMaterial);
        }
        materials.check_tags(mesh.region_tags())?;
        let dofs = DofMap::new(Space::Lagrange(order), mesh)?;
        let reference = ReferenceElement::new(Family::Lagrange, order)?;
        let free = dofs.free_numbering();
        let n_free = dofs.n_free();
        let elements = (0..mesh.n_triangles())
            .into_par_iter()
            .map(|t| {
                let geo = ElementGeometry::of(mesh, t);
                let tag = mesh.region_tags()[t];
                let region = materials.region(tag).expect("tags checked");
                let n = reference.ndofs();
                let mut weights = Vec::with_capacity(rule.len());
                let mut curls = Vec::with_capacity(rule.len());
                let mut mass = DMatrix::zeros(n, n);
                let mut source = DVector::zeros(n);
                for q in 0..rule.len() {
                    let p = rule.ref_point(q);
                    let w = rule.weights[q] * geo.area();
                    let (vals, grads) = reference.scalar(p);
                    let j = materials.current_at(tag, geo.map(p));
                    for i in 0..n {
                        source[i] += w * j * vals[i];
                        for l in 0..n {
                            mass[(i, l)] += w * region.sigma * vals[i] * vals[l];
                        }
                    }
                    weights.push(w);
                    curls.push(grads.iter().map(|&g| curl_of_gradient(geo.covariant(g))).collect());
                }
                PrimalElement {
                    weights,
                    curls,
                    law: &region.law,
                    mass,
                    source,
                }
            })
            .collect();
        Ok(PrimalProblem {
            mesh,
            order,
            dofs,
            free,
            n_free,
            elements,
            rule,
            linear_solver: LinearSolver::Cholesky,
            last_size: (0, 0),
        })
    }

    pub fn set_linear_solver(&mut self, s: LinearSolver) {
        self.linear_solver = s;
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dofmap(&self) -> &DofMap {
        &self.dofs
    }

    pub fn mesh(&self) -> &Mesh {
        self.mesh
    }

    pub fn rule(&self) -> &'static QuadRule {
        self.rule
    }

    /// Number of unknowns (free Lagrange dofs).
    pub fn n_unknowns(&self) -> usize {
        self.n_free
    }

    /// Global coefficients (boundary dofs zero) from a free-dof vector.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        self.free.iter().map(|f| f.map_or(0.0, |i| x[i])).collect()
    }

    /// Free-dof vector from global coefficients.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n_free];
        for (g, f) in self.free.iter().enumerate() {
            if let Some(i) = f {
                x[*i] = full[g];
            }
        }
        x
    }

    fn local_coeffs(&self, t: usize, x: &[f64]) -> Vec<f64> {
        self.dofs
            .element_dofs(t)
            .iter()
            .map(|&g| self.free[g].map_or(0.0, |i| x[i]))
            .collect()
    }

    fn element_flux(e: &PrimalElement, coeffs: &[f64], q: usize) -> [f64; 2] {
        let mut b = [0.0; 2];
        for (c, cu) in coeffs.iter().zip(&e.curls[q]) {
            b[0] += c * cu[0];
            b[1] += c * cu[1];
        }
        b
    }

    fn element_residual(&self, t: usize, x: &[f64]) -> DVector<f64> {
        let e = &self.elements[t];
        let c = self.local_coeffs(t, x);
        let n = c.len();
        let cv = DVector::from_column_slice(&c);
        let mut r = &e.mass * &cv - &e.source;
        for q in 0..e.weights.len() {
            let h = e.law.f_grad(Self::element_flux(e, &c, q));
            for i in 0..n {
                r[i] += e.weights[q] * dot2(h, e.curls[q][i]);
            }
        }
        r
    }

    fn element_jacobian(&self, t: usize, x: &[f64]) -> DMatrix<f64> {
        let e = &self.elements[t];
        let c = self.local_coeffs(t, x);
        let n = c.len();
        let mut k = e.mass.clone();
        for q in 0..e.weights.len() {
            let hess = e.law.f_hess(Self::element_flux(e, &c, q));
            for j in 0..n {
                let hc = mat_vec2(&hess, e.curls[q][j]);
                for i in 0..n {
                    k[(i, j)] += e.weights[q] * dot2(hc, e.curls[q][i]);
                }
            }
        }
        k
    }

    /// Residual on the free dofs.
    pub fn residual(&self, x: &[f64]) -> Result<Vec<f64>, AssemblyError> {
        check_len(x, self.n_free)?;
        let locals: Vec<DVector<f64>> = (0..self.mesh.n_triangles())
            .into_par_iter()
            .map(|t| self.element_residual(t, x))
            .collect();
        let mut r = vec![0.0; self.n_free];
        for (t, rl) in locals.iter().enumerate() {
            for (i, &g) in self.dofs.element_dofs(t).iter().enumerate() {
                if let Some(f) = self.free[g] {
                    r[f] += rl[i];
                }
            }
        }
        Ok(r)
    }

    /// Jacobian on the free dofs.
    pub fn jacobian(&self, x: &[f64]) -> Result<SparseSymmetric, AssemblyError> {
        check_len(x, self.n_free)?;
        let locals: Vec<DMatrix<f64>> = (0..self.mesh.n_triangles())
            .into_par_iter()
            .map(|t| self.element_jacobian(t, x))
            .collect();
        let n = self.dofs.local_dofs;
        let mut trip = TripletBuilder::with_capacity(self.n_free, locals.len() * n * n);
        for (t, k) in locals.iter().enumerate() {
            let d = self.dofs.element_dofs(t);
            for i in 0..n {
                let Some(fi) = self.free[d[i]] else { continue };
                for j in 0..n {
                    if let Some(fj) = self.free[d[j]] {
                        trip.add(fi, fj, k[(i, j)]);
                    }
                }
            }
        }
        Ok(trip.build())
    }

    /// `B = Curl a` at reference point `p` of triangle `t`.
    pub fn flux_at(&self, x: &[f64], t: usize, p: [f64; 2]) -> [f64; 2] {
        let reference = ReferenceElement::new(Family::Lagrange, self.order).expect("supported");
        let geo = ElementGeometry::of(self.mesh, t);
        let (_, grads) = reference.scalar(p);
        let c = self.local_coeffs(t, x);
        let mut b = [0.0; 2];
        for (ci, g) in c.iter().zip(grads) {
            let cu = curl_of_gradient(geo.covariant(g));
            b[0] += ci * cu[0];
            b[1] += ci * cu[1];
        }
        b
    }

    /// `a` at reference point `p` of triangle `t`.
    pub fn potential_at(&self, x: &[f64], t: usize, p: [f64; 2]) -> f64 {
        let reference = ReferenceElement::new(Family::Lagrange, self.order).expect("supported");
        let (vals, _) = reference.scalar(p);
        self.local_coeffs(t, x).iter().zip(vals).map(|(c, v)| c * v).sum()
    }

    /// Runs damped Newton from `x0` (zero if `None`).
    pub fn solve(&mut self, x0: Option<Vec<f64>>, opts: &NewtonOptions) -> Result<PrimalSolution, AssemblyError> {
        self.linear_solver = opts.linear_solver;
        let x0 = x0.unwrap_or_else(|| vec![0.0; self.n_free]);
        check_len(&x0, self.n_free)?;
        let (x, report) = newton(self, x0, opts)?;
        Ok(PrimalSolution { a: x, report })
    }
}

impl NonlinearProblem for PrimalProblem<'_> {
    type Error = AssemblyError;

    fn residual_norm(&self, x: &[f64]) -> Result<f64, AssemblyError> {
        Ok(norm2(&self.residual(x)?))
    }

    fn reference_norm(&self) -> Result<f64, AssemblyError> {
        self.residual_norm(&vec![0.0; self.n_free])
    }

    fn direction(&mut self, x: &[f64]) -> Result<Vec<f64>, AssemblyError> {
        let r = self.residual(x)?;
        let k = self.jacobian(x)?;
        self.last_size = (k.dim(), k.nnz());
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        Ok(solve_spd(&k, &rhs, self.linear_solver)?)
    }

    fn system_size(&self) -> (usize, usize) {
        self.last_size
    }
}

/// Converged primal state: free-dof coefficients and the Newton record.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalSolution {
    pub a: Vec<f64>,
    pub report: SolveReport,
}

/// Quadrature and state-independent blocks of one mixed element.
struct MixedElement<'a> {
    weights: Vec<f64>,
    /// Mapped (unsigned) reference Nédélec basis at the quadrature points.
    psi: Vec<Vec<[f64; 2]>>,
    /// `b[(j, i)] = (curl ψ_i, φ_j)`.
    b: DMatrix<f64>,
    /// `(σ φ_j, φ_l)`.
    c: DMatrix<f64>,
    /// Trace coupling, rows ordered by local edge then Legendre degree.
    l: DMatrix<f64>,
    source: DVector<f64>,
    law: &'a MaterialLaw,
}

/// Eliminated local saddle point block
/// `K = [[M, -Bᵀ], [-B, -C]]` of one element.
struct LocalBlock {
    minv: DMatrix<f64>,
    /// `B M⁻¹`.
    p: DMatrix<f64>,
    dinv: DMatrix<f64>,
    bt: DMatrix<f64>,
}

impl LocalBlock {
    fn new(t: usize, m: DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<Self, AssemblyError> {
        let minv = m
            .cholesky()
            .ok_or(AssemblyError::LocalBlockSingular(t))?
            .inverse();
        let p = b * &minv;
        let bt = b.transpose();
        let d = c + &p * &bt;
        let dinv = d.cholesky().ok_or(AssemblyError::LocalBlockSingular(t))?.inverse();
        Ok(LocalBlock { minv, p, dinv, bt })
    }

    /// Solves `K (y; z) = (f; g)`.
    fn solve(&self, f: &DVector<f64>, g: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let z = -(&self.dinv * (g + &self.p * f));
        let y = &self.minv * (f + &self.bt * &z);
        (y, z)
    }

    /// Upper-left block of `K⁻¹`.
    fn x_hh(&self) -> DMatrix<f64> {
        &self.minv - self.p.transpose() * &self.dinv * &self.p
    }
}

/// Newton increment of the hybrid system, element by element.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridIncrement {
    /// Broken `δH`, `local_dofs` coefficients per element in the
    /// element's (unsigned) reference basis.
    pub dh_local: Vec<f64>,
    /// `δa` in discontinuous `P_k` numbering.
    pub da: Vec<f64>,
    /// `δâ` on all trace dofs (zero on the boundary).
    pub dtrace: Vec<f64>,
}

/// Hybridized mixed discretization of order `o = k + 1`.
pub struct MixedProblem<'a> {
    mesh: &'a Mesh,
    k: usize,
    hdofs: DofMap,
    adofs: DofMap,
    tdofs: DofMap,
    trace_free: Vec<Option<usize>>,
    n_trace_free: usize,
    elements: Vec<MixedElement<'a>>,
    reference: ReferenceElement,
    dg: ReferenceElement,
    rule: &'static QuadRule,
    linear_solver: LinearSolver,
    last_size: (usize, usize),
    last_trace: Vec<f64>,
}

impl<'a> MixedProblem<'a> {
    pub fn new(mesh: &'a Mesh, materials: &'a MaterialMap, order: usize) -> Result<Self, AssemblyError> {
        Self::with_rule(mesh, materials, order, default_rule(order.clamp(1, 2))?)
    }

    pub fn with_rule(
        mesh: &'a Mesh,
        materials: &'a MaterialMap,
        order: usize,
        rule: &'static QuadRule,
    ) -> Result<Self, AssemblyError> {
        check_order(order)?;
        check_rule(rule, order)?;
        if !materials.is_certified() {
            return Err(AssemblyError::UncertifiedMaterial);
        }
        materials.check_tags(mesh.region_tags())?;
        let k = order - 1;
        let hdofs = DofMap::new(Space::Nedelec(k), mesh)?;
        let adofs = DofMap::new(Space::Discontinuous(k), mesh)?;
        let tdofs = DofMap::new(Space::EdgeTrace(k), mesh)?;
        let reference = ReferenceElement::new(Family::Nedelec, k)?;
        let dg = ReferenceElement::new(Family::DiscontinuousP, k)?;
        let trace_free = tdofs.free_numbering();
        let n_trace_free = tdofs.n_free();
        let (gl_pts, gl_wts) = gauss_legendre(k + 2);
        let elements = (0..mesh.n_triangles())
            .into_par_iter()
            .map(|t| {
                let geo = ElementGeometry::of(mesh, t);
                let tag = mesh.region_tags()[t];
                let region = materials.region(tag).expect("tags checked");
                let n = reference.ndofs();
                let m = dg.ndofs();
                let mut weights = Vec::with_capacity(rule.len());
                let mut psi = Vec::with_capacity(rule.len());
                let mut b = DMatrix::zeros(m, n);
                let mut c = DMatrix::zeros(m, m);
                let mut source = DVector::zeros(m);
                for q in 0..rule.len() {
                    let p = rule.ref_point(q);
                    let w = rule.weights[q] * geo.area();
                    let (vals, curls) = reference.nedelec(p);
                    let (phi, _) = dg.scalar(p);
                    let j = materials.current_at(tag, geo.map(p));
                    for jq in 0..m {
                        source[jq] += w * j * phi[jq];
                        for i in 0..n {
                            b[(jq, i)] += w * geo.curl(curls[i]) * phi[jq];
                        }
                        for l in 0..m {
                            c[(jq, l)] += w * region.sigma * phi[jq] * phi[l];
                        }
                    }
                    weights.push(w);
                    psi.push(vals.iter().map(|&v| geo.covariant(v)).collect());
                }
                // ∫_E μ_m (ψ_i · t) ds with the global edge parameter, as
                // ∫_0^1 μ_m(s) ψ̂_i(x̂(s)) · (x̂_hi - x̂_lo) ds on the reference cell.
                let mut l = DMatrix::zeros(3 * (k + 1), n);
                for (le, [a, bb]) in LOCAL_EDGES.iter().enumerate() {
                    let (lo, hi) = if mesh.edge_sign(t, le) > 0.0 { (*a, *bb) } else { (*bb, *a) };
                    let (plo, phi_) = (REF_VERTICES[lo], REF_VERTICES[hi]);
                    let d = [phi_[0] - plo[0], phi_[1] - plo[1]];
                    let eps = trace_orientation(mesh, t, le);
                    for (s, w) in gl_pts.iter().zip(gl_wts) {
                        let (vals, _) = reference.nedelec([plo[0] + s * d[0], plo[1] + s * d[1]]);
                        for mm in 0..=k {
                            let mu = legendre01(mm, *s);
                            for i in 0..n {
                                l[(le * (k + 1) + mm, i)] += eps * w * mu * dot2(vals[i], d);
                            }
                        }
                    }
                }
                MixedElement {
                    weights,
                    psi,
                    b,
                    c,
                    l,
                    source,
                    law: &region.law,
                }
            })
            .collect();
        Ok(MixedProblem {
            mesh,
            k,
            hdofs,
            adofs,
            last_trace: vec![0.0; tdofs.n_dofs],
            tdofs,
            trace_free,
            n_trace_free,
            elements,
            reference,
            dg,
            rule,
            linear_solver: LinearSolver::Cholesky,
            last_size: (0, 0),
        })
    }

    pub fn set_linear_solver(&mut self, s: LinearSolver) {
        self.linear_solver = s;
    }

    pub fn order(&self) -> usize {
        self.k + 1
    }

    pub fn mesh(&self) -> &Mesh {
        self.mesh
    }

    pub fn rule(&self) -> &'static QuadRule {
        self.rule
    }

    pub fn h_dofmap(&self) -> &DofMap {
        &self.hdofs
    }

    pub fn a_dofmap(&self) -> &DofMap {
        &self.adofs
    }

    pub fn trace_dofmap(&self) -> &DofMap {
        &self.tdofs
    }

    /// Length of the state vector `[H; a]`.
    pub fn n_state(&self) -> usize {
        self.hdofs.n_dofs + self.adofs.n_dofs
    }

    /// Unknowns of the condensed trace system.
    pub fn n_trace_unknowns(&self) -> usize {
        self.n_trace_free
    }

    /// Trace multiplier from the most recent Newton step.
    pub fn last_trace(&self) -> &[f64] {
        &self.last_trace
    }

    fn split<'x>(&self, x: &'x [f64]) -> (&'x [f64], &'x [f64]) {
        x.split_at(self.hdofs.n_dofs)
    }

    fn local_state(&self, t: usize, x: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let (h, a) = self.split(x);
        (
            DVector::from_vec(self.hdofs.gather(t, h)),
            DVector::from_vec(self.adofs.gather(t, a)),
        )
    }

    fn field_at(e: &MixedElement, h: &DVector<f64>, q: usize) -> [f64; 2] {
        let mut v = [0.0; 2];
        for (c, p) in h.iter().zip(&e.psi[q]) {
            v[0] += c * p[0];
            v[1] += c * p[1];
        }
        v
    }

    /// Local residuals `F1 = (g'(H), ψ) - (a, curl ψ)` and
    /// `F2 = (curl H, φ) + (σ a, φ) - (j, φ)`.
    fn element_residual(&self, t: usize, x: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let e = &self.elements[t];
        let (h, a) = self.local_state(t, x);
        let mut f1 = -(e.b.transpose() * &a);
        for q in 0..e.weights.len() {
            let b = e.law.g_grad(Self::field_at(e, &h, q));
            for i in 0..h.len() {
                f1[i] += e.weights[q] * dot2(b, e.psi[q][i]);
            }
        }
        let f2 = &e.b * &h + &e.c * &a - &e.source;
        (f1, f2)
    }

    fn element_hessian_block(&self, t: usize, h: &DVector<f64>) -> DMatrix<f64> {
        let e = &self.elements[t];
        let n = h.len();
        let mut m = DMatrix::zeros(n, n);
        for q in 0..e.weights.len() {
            let hess = e.law.g_hess(Self::field_at(e, h, q));
            for j in 0..n {
                let hp = mat_vec2(&hess, e.psi[q][j]);
                for i in 0..n {
                    m[(i, j)] += e.weights[q] * dot2(hp, e.psi[q][i]);
                }
            }
        }
        m
    }

    /// Residual of the conforming mixed system: `[F1` tested with
    /// conforming `𝒩_k`, `F2]`.
    pub fn residual(&self, x: &[f64]) -> Result<Vec<f64>, AssemblyError> {
        check_len(x, self.n_state())?;
        let locals: Vec<_> = (0..self.mesh.n_triangles())
            .into_par_iter()
            .map(|t| self.element_residual(t, x))
            .collect();
        let nh = self.hdofs.n_dofs;
        let mut r = vec![0.0; self.n_state()];
        for (t, (f1, f2)) in locals.iter().enumerate() {
            for ((&g, &s), v) in self.hdofs.element_dofs(t).iter().zip(self.hdofs.element_signs(t)).zip(f1.iter()) {
                r[g] += s * v;
            }
            for (&g, v) in self.adofs.element_dofs(t).iter().zip(f2.iter()) {
                r[nh + g] += v;
            }
        }
        Ok(r)
    }

    fn local_blocks(&self, x: &[f64]) -> Result<Vec<(LocalBlock, DVector<f64>, DVector<f64>)>, AssemblyError> {
        (0..self.mesh.n_triangles())
            .into_par_iter()
            .map(|t| {
                let (h, _) = self.local_state(t, x);
                let (f1, f2) = self.element_residual(t, x);
                let m = self.element_hessian_block(t, &h);
                let e = &self.elements[t];
                let block = LocalBlock::new(t, m, &e.b, &e.c)?;
                Ok((block, -f1, -f2))
            })
            .collect()
    }

    /// Condensed trace matrix and right-hand side at state `x`.
    pub fn condensed_system(&self, x: &[f64]) -> Result<(SparseSymmetric, Vec<f64>), AssemblyError> {
        check_len(x, self.n_state())?;
        let blocks = self.local_blocks(x)?;
        Ok(self.condense(&blocks))
    }

    fn condense(&self, blocks: &[(LocalBlock, DVector<f64>, DVector<f64>)]) -> (SparseSymmetric, Vec<f64>) {
        let locals: Vec<(DMatrix<f64>, DVector<f64>)> = blocks
            .par_iter()
            .enumerate()
            .map(|(t, (blk, r, w))| {
                let l = &self.elements[t].l;
                let s = l * blk.x_hh() * l.transpose();
                let (y, _) = blk.solve(r, &-w);
                (s, -(l * y))
            })
            .collect();
        let nl = 3 * (self.k + 1);
        let mut trip = TripletBuilder::with_capacity(self.n_trace_free, locals.len() * nl * nl);
        let mut rhs = vec![0.0; self.n_trace_free];
        for (t, (s, g)) in locals.iter().enumerate() {
            let d = self.tdofs.element_dofs(t);
            for i in 0..nl {
                let Some(fi) = self.trace_free[d[i]] else { continue };
                rhs[fi] += g[i];
                for j in 0..nl {
                    if let Some(fj) = self.trace_free[d[j]] {
                        trip.add(fi, fj, s[(i, j)]);
                    }
                }
            }
        }
        (trip.build(), rhs)
    }

    /// One Newton increment through static condensation.
    pub fn hybrid_increment(&self, x: &[f64]) -> Result<(HybridIncrement, (usize, usize)), AssemblyError> {
        check_len(x, self.n_state())?;
        let blocks = self.local_blocks(x)?;
        let (s, rhs) = self.condense(&blocks);
        let size = (s.dim(), s.nnz());
        let free = if s.dim() == 0 {
            Vec::new()
        } else {
            solve_spd(&s, &rhs, self.linear_solver)?
        };
        let dtrace: Vec<f64> = self.trace_free.iter().map(|f| f.map_or(0.0, |i| free[i])).collect();
        let recovered: Vec<(DVector<f64>, DVector<f64>)> = blocks
            .par_iter()
            .enumerate()
            .map(|(t, (blk, r, w))| {
                let l = &self.elements[t].l;
                let th = DVector::from_iterator(
                    l.nrows(),
                    self.tdofs.element_dofs(t).iter().map(|&g| dtrace[g]),
                );
                blk.solve(&(r + l.transpose() * th), &-w)
            })
            .collect();
        let mut dh_local = Vec::with_capacity(recovered.len() * self.hdofs.local_dofs);
        let mut da = vec![0.0; self.adofs.n_dofs];
        for (t, (dh, dat)) in recovered.iter().enumerate() {
            dh_local.extend(dh.iter());
            for (&g, v) in self.adofs.element_dofs(t).iter().zip(dat.iter()) {
                da[g] = *v;
            }
        }
        Ok((HybridIncrement { dh_local, da, dtrace }, size))
    }

    /// The same increment from the uncondensed saddle point system
    /// `[[M, -Bᵀ, -Lᵀ], [B, C, 0], [L, 0, 0]]`, solved by banded LU with
    /// partial pivoting. Meant as a reference on small meshes.
    pub fn monolithic_increment(&self, x: &[f64]) -> Result<HybridIncrement, AssemblyError> {
        check_len(x, self.n_state())?;
        let nt = self.mesh.n_triangles();
        let n = self.hdofs.local_dofs;
        let m = self.adofs.local_dofs;
        let (nh, na) = (nt * n, nt * m);
        let size = nh + na + self.n_trace_free;
        let mut a = Vec::with_capacity(nt * (n + m) * (n + m + 6));
        let mut rhs = vec![0.0; size];
        for t in 0..nt {
            let e = &self.elements[t];
            let (h, _) = self.local_state(t, x);
            let (f1, f2) = self.element_residual(t, x);
            let mm = self.element_hessian_block(t, &h);
            let (h0, a0) = (t * n, nh + t * m);
            for i in 0..n {
                rhs[h0 + i] = -f1[i];
                for j in 0..n {
                    a.push((h0 + i, h0 + j, mm[(i, j)]));
                }
                for j in 0..m {
                    a.push((h0 + i, a0 + j, -e.b[(j, i)]));
                    a.push((a0 + j, h0 + i, e.b[(j, i)]));
                }
            }
            for j in 0..m {
                rhs[a0 + j] = -f2[j];
                for l in 0..m {
                    a.push((a0 + j, a0 + l, e.c[(j, l)]));
                }
            }
            for (r, &g) in self.tdofs.element_dofs(t).iter().enumerate() {
                let Some(f) = self.trace_free[g] else { continue };
                let row = nh + na + f;
                for i in 0..n {
                    a.push((h0 + i, row, -e.l[(r, i)]));
                    a.push((row, h0 + i, e.l[(r, i)]));
                }
            }
        }
        let sol = solve_banded_lu(size, &a, &rhs)?;
        let mut da = vec![0.0; self.adofs.n_dofs];
        for t in 0..nt {
            for (j, &g) in self.adofs.element_dofs(t).iter().enumerate() {
                da[g] = sol[nh + t * m + j];
            }
        }
        let dtrace = self
            .trace_free
            .iter()
            .map(|f| f.map_or(0.0, |i| sol[nh + na + i]))
            .collect();
        Ok(HybridIncrement {
            dh_local: sol[..nh].to_vec(),
            da,
            dtrace,
        })
    }

    /// Averages broken element coefficients into conforming `𝒩_k`
    /// coefficients.
    pub fn conforming_from_local(&self, local: &[f64]) -> Vec<f64> {
        let n = self.hdofs.local_dofs;
        let mut sum = vec![0.0; self.hdofs.n_dofs];
        let mut count = vec![0u8; self.hdofs.n_dofs];
        for t in 0..self.mesh.n_triangles() {
            for (i, (&g, &s)) in self.hdofs.element_dofs(t).iter().zip(self.hdofs.element_signs(t)).enumerate() {
                sum[g] += s * local[t * n + i];
                count[g] += 1;
            }
        }
        sum.iter().zip(&count).map(|(s, &c)| s / f64::from(c.max(1))).collect()
    }

    /// Largest tangential jump of a broken field across interior edges,
    /// sampled at `k + 2` points per edge.
    pub fn max_tangential_jump(&self, local: &[f64]) -> f64 {
        let n = self.hdofs.local_dofs;
        let samples = self.k + 2;
        let mut worst: f64 = 0.0;
        for edge in self.mesh.edges() {
            let [Some(t1), Some(t2)] = edge.triangles else { continue };
            let [p, q] = edge.nodes.map(|i| self.mesh.nodes()[i]);
            let d = [q[0] - p[0], q[1] - p[1]];
            for s in 0..samples {
                let u = (s as f64 + 0.5) / samples as f64;
                let x = [p[0] + u * d[0], p[1] + u * d[1]];
                let tangential = |t: usize| {
                    let geo = ElementGeometry::of(self.mesh, t);
                    let (vals, _) = self.reference.nedelec(self.mesh.to_reference(t, x));
                    let mut v = [0.0; 2];
                    for i in 0..n {
                        v[0] += local[t * n + i] * vals[i][0];
                        v[1] += local[t * n + i] * vals[i][1];
                    }
                    dot2(geo.covariant(v), d)
                };
                worst = worst.max((tangential(t1) - tangential(t2)).abs());
            }
        }
        worst
    }

    /// `B = g'(H)` at reference point `p` of triangle `t`.
    pub fn flux_at(&self, x: &[f64], t: usize, p: [f64; 2]) -> [f64; 2] {
        let e = &self.elements[t];
        e.law.g_grad(self.field_value(x, t, p))
    }

    /// `H` at reference point `p` of triangle `t`.
    pub fn field_value(&self, x: &[f64], t: usize, p: [f64; 2]) -> [f64; 2] {
        let (h, _) = self.local_state(t, x);
        let geo = ElementGeometry::of(self.mesh, t);
        let (vals, _) = self.reference.nedelec(p);
        let mut v = [0.0; 2];
        for (c, b) in h.iter().zip(vals) {
            v[0] += c * b[0];
            v[1] += c * b[1];
        }
        geo.covariant(v)
    }

    /// `a` at reference point `p` of triangle `t`.
    pub fn potential_at(&self, x: &[f64], t: usize, p: [f64; 2]) -> f64 {
        let (_, a) = self.local_state(t, x);
        let (vals, _) = self.dg.scalar(p);
        a.iter().zip(vals).map(|(c, v)| c * v).sum()
    }

    /// Runs damped Newton from `x0` (zero if `None`).
    pub fn solve(&mut self, x0: Option<Vec<f64>>, opts: &NewtonOptions) -> Result<MixedSolution, AssemblyError> {
        self.linear_solver = opts.linear_solver;
        let x0 = x0.unwrap_or_else(|| vec![0.0; self.n_state()]);
        check_len(&x0, self.n_state())?;
        let (x, report) = newton(self, x0, opts)?;
        let nh = self.hdofs.n_dofs;
        Ok(MixedSolution {
            h: x[..nh].to_vec(),
            a: x[nh..].to_vec(),
            trace: self.last_trace.clone(),
            report,
        })
    }
}

impl NonlinearProblem for MixedProblem<'_> {
    type Error = AssemblyError;

    fn residual_norm(&self, x: &[f64]) -> Result<f64, AssemblyError> {
        Ok(norm2(&self.residual(x)?))
    }

    fn reference_norm(&self) -> Result<f64, AssemblyError> {
        self.residual_norm(&vec![0.0; self.n_state()])
    }

    fn direction(&mut self, x: &[f64]) -> Result<Vec<f64>, AssemblyError> {
        let (inc, size) = self.hybrid_increment(x)?;
        self.last_size = size;
        let mut d = self.conforming_from_local(&inc.dh_local);
        d.extend_from_slice(&inc.da);
        self.last_trace = inc.dtrace;
        Ok(d)
    }

    fn system_size(&self) -> (usize, usize) {
        self.last_size
    }
}

/// Converged mixed state.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSolution {
    /// Conforming `𝒩_k` coefficients of `H`.
    pub h: Vec<f64>,
    /// Discontinuous `P_k` coefficients of `a`.
    pub a: Vec<f64>,
    /// Trace multiplier `â` (zero on the boundary).
    pub trace: Vec<f64>,
    pub report: SolveReport,
}

impl MixedSolution {
    pub fn state(&self) -> Vec<f64> {
        let mut x = self.h.clone();
        x.extend_from_slice(&self.a);
        x
    }
}

/// Wall-clock helper for callers timing assembly and solve phases.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed().as_secs_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::{BrauerParams, IsotropicSplineLaw, RegionMaterial, MU0};

    fn nonlinear_map() -> MaterialMap {
        let law = IsotropicSplineLaw::brauer(&BrauerParams::synthetic(), 3.0, 60).unwrap();
        let mut m = MaterialMap::uniform(RegionMaterial::new(MaterialLaw::linear(MU0)).with_current(1e3));
        m.insert(1, RegionMaterial::new(MaterialLaw::spline(law)).with_sigma(5e3).with_current(2e4));
        m.certified().unwrap()
    }

    fn mesh() -> Mesh {
        Mesh::unit_square(3, |c| u32::from(c[0] < 0.5))
    }

    fn state(n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|i| scale * ((i as f64 * 0.77).sin() + 0.3)).collect()
    }

    /// H around a few hundred A/m (the knee of the synthetic law), a in Wb/m.
    fn mixed_state(p: &MixedProblem, a_scale: f64) -> Vec<f64> {
        let nh = p.h_dofmap().n_dofs;
        let mut x = state(nh, 3000.0 / p.mesh().n_triangles() as f64);
        x.extend(state(p.n_state() - nh, a_scale));
        x
    }

    #[test]
    fn weak_quadrature_is_refused() {
        let m = mesh();
        let mats = nonlinear_map();
        let r2 = rule_for_degree(2).unwrap();
        assert!(matches!(
            MixedProblem::with_rule(&m, &mats, 2, r2),
            Err(AssemblyError::QuadratureTooWeak { degree: 2, order: 2, required: 4 })
        ));
        assert!(MixedProblem::with_rule(&m, &mats, 1, r2).is_ok());
        assert!(matches!(
            PrimalProblem::with_rule(&m, &mats, 2, rule_for_degree(1).unwrap()),
            Err(AssemblyError::QuadratureTooWeak { .. })
        ));
        let uncertified = MaterialMap::uniform(RegionMaterial::new(MaterialLaw::linear(1.0)));
        assert!(matches!(
            MixedProblem::new(&m, &uncertified, 1),
            Err(AssemblyError::UncertifiedMaterial)
        ));
        assert!(matches!(MixedProblem::new(&m, &mats, 3), Err(AssemblyError::UnsupportedOrder(3))));
    }

    #[test]
    fn primal_jacobian_matches_finite_differences() {
        let m = mesh();
        let mats = nonlinear_map();
        for order in 1..=2 {
            let p = PrimalProblem::new(&m, &mats, order).unwrap();
            let x = state(p.n_unknowns(), 0.3);
            let k = p.jacobian(&x).unwrap();
            let dir = state(p.n_unknowns(), 1.0);
            let eps = 1e-6;
            let xp: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + eps * d).collect();
            let xm: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a - eps * d).collect();
            let (rp, rm) = (p.residual(&xp).unwrap(), p.residual(&xm).unwrap());
            let kd = k.matvec(&dir);
            let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
            let err = kd.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-6 * norm2(&kd), "order {order}: {err:e}");
            k.check_symmetric(1e-12).unwrap();
        }
    }

    #[test]
    fn hybrid_matches_monolithic() {
        let m = mesh();
        let mats = nonlinear_map();
        for order in 1..=2 {
            let p = MixedProblem::new(&m, &mats, order).unwrap();
            let x = mixed_state(&p, 0.5);
            let (h, _) = p.hybrid_increment(&x).unwrap();
            let mono = p.monolithic_increment(&x).unwrap();
            for (a, b) in [(&h.dh_local, &mono.dh_local), (&h.da, &mono.da), (&h.dtrace, &mono.dtrace)] {
                let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                assert!(diff <= 1e-10 * norm2(b), "order {order}: {diff:e}");
            }
        }
    }

    #[test]
    fn recovered_increment_is_conforming_and_is_a_newton_step() {
        let m = mesh();
        let mats = nonlinear_map();
        for order in 1..=2 {
            let p = MixedProblem::new(&m, &mats, order).unwrap();
            let x = mixed_state(&p, 0.2);
            let (inc, _) = p.hybrid_increment(&x).unwrap();
            let scale = norm2(&inc.dh_local);
            assert!(p.max_tangential_jump(&inc.dh_local) <= 1e-10 * scale.max(1.0));
            // Linearized residual vanishes along the increment.
            let mut d = p.conforming_from_local(&inc.dh_local);
            d.extend_from_slice(&inc.da);
            let eps = 1e-6;
            let xp: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + eps * b).collect();
            let xm: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a - eps * b).collect();
            let r0 = p.residual(&x).unwrap();
            let (rp, rm) = (p.residual(&xp).unwrap(), p.residual(&xm).unwrap());
            let lin: Vec<f64> = (0..r0.len()).map(|i| r0[i] + (rp[i] - rm[i]) / (2.0 * eps)).collect();
            assert!(norm2(&lin) <= 1e-6 * norm2(&r0), "order {order}: {:e}", norm2(&lin) / norm2(&r0));
        }
    }

    #[test]
    fn linear_problems_take_one_newton_step() {
        let m = mesh();
        let mats = MaterialMap::uniform(RegionMaterial::new(MaterialLaw::linear(2.0)).with_current(1.0))
            .certified()
            .unwrap();
        let opts = NewtonOptions::default();
        let s = MixedProblem::new(&m, &mats, 2).unwrap().solve(None, &opts).unwrap();
        assert_eq!(s.report.iterations, 1);
        let s = PrimalProblem::new(&m, &mats, 2).unwrap().solve(None, &opts).unwrap();
        assert_eq!(s.report.iterations, 1);
    }

    #[test]
    fn nonlinear_newton_converges() {
        let m = mesh();
        let mats = nonlinear_map();
        let opts = NewtonOptions::default();
        let s = MixedProblem::new(&m, &mats, 1).unwrap().solve(None, &opts).unwrap();
        assert!(s.report.converged && s.report.is_strictly_decreasing());
        let s = PrimalProblem::new(&m, &mats, 1).unwrap().solve(None, &opts).unwrap();
        assert!(s.report.converged && s.report.is_strictly_decreasing());
    }
}
