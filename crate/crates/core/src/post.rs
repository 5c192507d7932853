//! Flux post-processing, error norms, benchmark cases and the drivers
//! behind convergence studies and formulation comparisons.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use crate::assembly::{AssemblyError, Formulation, MixedProblem, PrimalProblem};
use crate::fe_spaces::{eval_scalar, interpolate_nedelec, interpolate_scalar, DofMap, Family, ReferenceElement};
use crate::io::{read_material_file, read_mesh_file, CaseKind, IoError, StudyConfig, VtkData, VtkField};
use crate::material::{BrauerParams, IsotropicSplineLaw, MaterialError, MaterialLaw, MaterialMap, RegionMaterial, MU0};
use crate::mesh::Mesh;
use crate::quadrature::{rule_for_degree, QuadRule};
use crate::solver::{solve_spd, NewtonOptions, SolveReport};

/// Piecewise polynomial vector field, degree 0 (one value per element) or
/// 1 (values at the three vertices of each element).
#[derive(Debug, Clone, PartialEq)]
pub struct FluxField {
    pub degree: usize,
    pub values: Vec<[f64; 2]>,
}

impl FluxField {
    fn per_element(&self) -> usize {
        if self.degree == 0 {
            1
        } else {
            3
        }
    }

    pub fn n_elements(&self) -> usize {
        self.values.len() / self.per_element()
    }

    /// Value at reference point `p` of element `t`.
    pub fn eval(&self, t: usize, p: [f64; 2]) -> [f64; 2] {
        if self.degree == 0 {
            return self.values[t];
        }
        let l = [1.0 - p[0] - p[1], p[0], p[1]];
        let v = &self.values[3 * t..3 * t + 3];
        [
            l[0] * v[0][0] + l[1] * v[1][0] + l[2] * v[2][0],
            l[0] * v[0][1] + l[1] * v[1][1] + l[2] * v[2][1],
        ]
    }

    /// Element mean values.
    pub fn cell_means(&self) -> Vec<[f64; 2]> {
        (0..self.n_elements()).map(|t| self.eval(t, [1.0 / 3.0, 1.0 / 3.0])).collect()
    }
}

const VERTEX_REF: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

/// `B_h = Curl a_h`, represented exactly (degree `p - 1`).
pub fn post_b_primal(problem: &PrimalProblem, x: &[f64]) -> FluxField {
    post_b_lagrange(problem.mesh(), problem.dofmap(), &problem.expand(x))
}

/// `Curl` of a Lagrange field given by all its global coefficients.
pub fn post_b_lagrange(mesh: &Mesh, dofmap: &DofMap, coeffs: &[f64]) -> FluxField {
    let order = dofmap.space.order();
    let reference = ReferenceElement::new(Family::Lagrange, order).expect("Lagrange order 1 or 2");
    let degree = order - 1;
    let points: &[[f64; 2]] = if degree == 0 { &[[1.0 / 3.0, 1.0 / 3.0]] } else { &VERTEX_REF };
    let mut values = Vec::with_capacity(mesh.n_triangles() * points.len());
    for t in 0..mesh.n_triangles() {
        for &p in points {
            let (_, g) = eval_scalar(mesh, dofmap, &reference, coeffs, t, p);
            values.push([g[1], -g[0]]);
        }
    }
    FluxField { degree, values }
}

/// `B_h`: elementwise L² projection of `g'(H_h)` onto `P_k²`, computed with
/// the formulation's quadrature rule.
pub fn post_b_mixed(problem: &MixedProblem, x: &[f64]) -> FluxField {
    let nt = problem.mesh().n_triangles();
    let degree = problem.order() - 1;
    let rule = problem.rule();
    let mut values = Vec::with_capacity(nt * if degree == 0 { 1 } else { 3 });
    for t in 0..nt {
        let samples: Vec<([f64; 2], [f64; 2])> = (0..rule.len())
            .map(|q| (rule.ref_point(q), problem.flux_at(x, t, rule.ref_point(q))))
            .collect();
        values.extend(project_local(rule, degree, &samples));
    }
    FluxField { degree, values }
}

/// L² projection onto `P_0` or `P_1` on one element from values at the
/// points of `rule` (area factors cancel).
fn project_local(rule: &QuadRule, degree: usize, samples: &[([f64; 2], [f64; 2])]) -> Vec<[f64; 2]> {
    if degree == 0 {
        let mut m = [0.0; 2];
        for (q, (_, v)) in samples.iter().enumerate() {
            m[0] += rule.weights[q] * v[0];
            m[1] += rule.weights[q] * v[1];
        }
        return vec![m];
    }
    let mut mass = nalgebra::Matrix3::<f64>::zeros();
    let mut rhs = nalgebra::Matrix3x2::<f64>::zeros();
    for (q, (p, v)) in samples.iter().enumerate() {
        let l = [1.0 - p[0] - p[1], p[0], p[1]];
        let w = rule.weights[q];
        for i in 0..3 {
            rhs[(i, 0)] += w * l[i] * v[0];
            rhs[(i, 1)] += w * l[i] * v[1];
            for j in 0..3 {
                mass[(i, j)] += w * l[i] * l[j];
            }
        }
    }
    let sol = mass.cholesky().expect("P1 mass matrix is SPD").solve(&rhs);
    (0..3).map(|i| [sol[(i, 0)], sol[(i, 1)]]).collect()
}

/// `sqrt(Σ_T ∫_T |a - b|²)` with the given rule; `a` and `b` take an
/// element and a reference point.
pub fn l2_error(
    mesh: &Mesh,
    a: impl Fn(usize, [f64; 2]) -> [f64; 2],
    b: impl Fn(usize, [f64; 2]) -> [f64; 2],
    rule: &QuadRule,
) -> f64 {
    let mut sum = 0.0;
    for t in 0..mesh.n_triangles() {
        let area = mesh.area(t);
        for q in 0..rule.len() {
            let p = rule.ref_point(q);
            let (u, v) = (a(t, p), b(t, p));
            sum += rule.weights[q] * area * ((u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2));
        }
    }
    sum.sqrt()
}

fn error_rule() -> &'static QuadRule {
    rule_for_degree(6).expect("degree-6 rule")
}

/// `‖field - exact‖_L²` with a degree-6 rule.
pub fn l2_error_closed_form(mesh: &Mesh, field: &FluxField, exact: impl Fn([f64; 2]) -> [f64; 2]) -> f64 {
    let geo: Vec<_> = (0..mesh.n_triangles()).map(|t| mesh.vertices(t)).collect();
    let map = |t: usize, p: [f64; 2]| {
        let [a, b, c] = geo[t];
        [
            a[0] + (b[0] - a[0]) * p[0] + (c[0] - a[0]) * p[1],
            a[1] + (b[1] - a[1]) * p[0] + (c[1] - a[1]) * p[1],
        ]
    };
    l2_error(mesh, |t, p| field.eval(t, p), |t, p| exact(map(t, p)), error_rule())
}

/// `‖coarse - fine‖_L²` where `fine_mesh` is `levels` uniform refinements
/// of `coarse_mesh`; integrated exactly on the fine mesh.
pub fn l2_error_nested(
    coarse_mesh: &Mesh,
    coarse: &FluxField,
    fine_mesh: &Mesh,
    fine: &FluxField,
    levels: usize,
) -> f64 {
    let rule = rule_for_degree(4).expect("degree-4 rule");
    let coarse_at = |t: usize, p: [f64; 2]| {
        let [a, b, c] = fine_mesh.vertices(t);
        let x = [
            a[0] + (b[0] - a[0]) * p[0] + (c[0] - a[0]) * p[1],
            a[1] + (b[1] - a[1]) * p[0] + (c[1] - a[1]) * p[1],
        ];
        let tc = Mesh::ancestor(t, levels);
        coarse.eval(tc, coarse_mesh.to_reference(tc, x))
    };
    l2_error(fine_mesh, coarse_at, |t, p| fine.eval(t, p), rule)
}

/// `log2(e_prev / e)`.
pub fn eoc(previous: f64, current: f64) -> f64 {
    (previous / current).log2()
}

/// Closed-form potential `a = A sin(πx) sin(πy)` on the unit square with
/// its derived flux, field and current density for a given law.
#[derive(Debug, Clone)]
pub struct ManufacturedCase {
    pub amplitude: f64,
    pub law: MaterialLaw,
    pub sigma: f64,
}

impl ManufacturedCase {
    /// `μ = 1`, `A = 1`: `j = (2π² + σ) sin(πx) sin(πy)`.
    pub fn linear(sigma: f64) -> Self {
        ManufacturedCase {
            amplitude: 1.0,
            law: MaterialLaw::linear(1.0),
            sigma,
        }
    }

    /// Synthetic Brauer spline law, amplitude chosen so that `|B|` reaches
    /// the saturated part of the curve.
    pub fn nonlinear(sigma: f64) -> Result<Self, MaterialError> {
        let law = IsotropicSplineLaw::brauer(&BrauerParams::synthetic(), 3.0, 300)?;
        Ok(ManufacturedCase {
            amplitude: 0.5,
            law: MaterialLaw::spline(law),
            sigma,
        })
    }

    pub fn a(&self, x: [f64; 2]) -> f64 {
        self.amplitude * (PI * x[0]).sin() * (PI * x[1]).sin()
    }

    /// `B = Curl a = (∂y a, -∂x a)`.
    pub fn b(&self, x: [f64; 2]) -> [f64; 2] {
        let (sx, cx) = (PI * x[0]).sin_cos();
        let (sy, cy) = (PI * x[1]).sin_cos();
        [self.amplitude * PI * sx * cy, -self.amplitude * PI * cx * sy]
    }

    /// `H = f'(B)`.
    pub fn h(&self, x: [f64; 2]) -> [f64; 2] {
        self.law.f_grad(self.b(x))
    }

    /// `j = curl H + σ a`, from `∂_i H = f''(B) ∂_i B`.
    pub fn j(&self, x: [f64; 2]) -> f64 {
        let (sx, cx) = (PI * x[0]).sin_cos();
        let (sy, cy) = (PI * x[1]).sin_cos();
        let a2 = self.amplitude * PI * PI;
        let (axx, ayy, axy) = (-a2 * sx * sy, -a2 * sx * sy, a2 * cx * cy);
        let fh = self.law.f_hess(self.b(x));
        let dxb = [axy, -axx];
        let dyb = [ayy, -axy];
        // curl H = ∂x H_y - ∂y H_x
        let dxh_y = fh[1][0] * dxb[0] + fh[1][1] * dxb[1];
        let dyh_x = fh[0][0] * dyb[0] + fh[0][1] * dyb[1];
        dxh_y - dyh_x + self.sigma * self.a(x)
    }

    /// Uniform material with the manufactured current density; certified.
    pub fn materials(&self) -> Result<MaterialMap, MaterialError> {
        let this = Arc::new(self.clone());
        MaterialMap::uniform(RegionMaterial::new(self.law.clone()).with_sigma(self.sigma))
            .with_current_fn(move |x| this.j(x))
            .certified()
    }
}

/// Region tag of the 2×2 checkerboard: 1 on the lower-left/upper-right
/// squares, 2 elsewhere.
pub fn checkerboard_tag(c: [f64; 2]) -> u32 {
    if (c[0] < 0.5) == (c[1] < 0.5) {
        1
    } else {
        2
    }
}

/// Unit square split into `n × n` cells with checkerboard regions.
pub fn checkerboard_mesh(n: usize) -> Mesh {
    Mesh::unit_square(n, checkerboard_tag)
}

/// Region 1 has `μ = ratio`, region 2 `μ = 1`; unit current everywhere.
pub fn checkerboard_materials(ratio: f64) -> Result<MaterialMap, MaterialError> {
    let mut m = MaterialMap::new();
    m.insert(1, RegionMaterial::new(MaterialLaw::linear(ratio)).with_current(1.0));
    m.insert(2, RegionMaterial::new(MaterialLaw::linear(1.0)).with_current(1.0));
    m.certified()
}

/// Region 1 is synthetic Brauer iron, region 2 air (`μ0`), both carrying
/// `current` in A/m². Around `1e4` the iron saturates near the center.
pub fn checkerboard_nonlinear_materials(current: f64) -> Result<MaterialMap, MaterialError> {
    let law = IsotropicSplineLaw::brauer(&BrauerParams::synthetic(), 3.0, 300)?;
    let mut m = MaterialMap::new();
    m.insert(1, RegionMaterial::new(MaterialLaw::spline(law)).with_current(current));
    m.insert(2, RegionMaterial::new(MaterialLaw::linear(MU0)).with_current(current));
    m.certified()
}

/// What a study is run on.
#[derive(Debug, Clone)]
pub enum StudyCase {
    Manufactured(ManufacturedCase),
    /// Coarsest mesh and materials; errors against a finer reference.
    Mesh { mesh: Mesh, materials: MaterialMap },
}

#[derive(Debug, Clone)]
pub struct StudySpec {
    pub case: StudyCase,
    pub formulations: Vec<Formulation>,
    pub order: usize,
    /// Number of meshes: the coarsest and `levels - 1` refinements.
    pub levels: usize,
    /// Used by the manufactured case.
    pub base_n: usize,
    pub newton: NewtonOptions,
    pub warm_start: bool,
}

impl StudySpec {
    /// Study described by a configuration file. Materials read from disk
    /// are certified with `seed`.
    pub fn from_config(c: &StudyConfig, seed: u64) -> Result<Self, IoError> {
        let case = match c.case {
            CaseKind::Manufactured => StudyCase::Manufactured(ManufacturedCase::linear(c.sigma)),
            CaseKind::ManufacturedNonlinear => StudyCase::Manufactured(ManufacturedCase::nonlinear(c.sigma)?),
            CaseKind::Checkerboard => {
                if c.base_n % 2 != 0 {
                    return Err(IoError::Config(format!("checkerboard needs an even base_n, got {}", c.base_n)));
                }
                StudyCase::Mesh {
                    mesh: checkerboard_mesh(c.base_n),
                    materials: checkerboard_materials(c.ratio)?,
                }
            }
            CaseKind::Mesh => {
                let (mesh_path, mat_path) = c.mesh.as_ref().zip(c.materials.as_ref()).expect("validated");
                let mesh = read_mesh_file(mesh_path)?;
                let mut materials = read_material_file(mat_path)?;
                materials.check_tags(mesh.region_tags())?;
                materials.certify(1000, seed)?;
                StudyCase::Mesh { mesh, materials }
            }
        };
        Ok(StudySpec {
            case,
            formulations: c.formulation.formulations(),
            order: c.order,
            levels: c.levels,
            base_n: c.base_n,
            newton: NewtonOptions {
                tol: c.tol,
                max_iter: c.max_iter,
                ..NewtonOptions::default()
            },
            warm_start: c.warm_start,
        })
    }
}

/// One line of a convergence table.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub formulation: Formulation,
    pub order: usize,
    pub level: usize,
    pub h: f64,
    pub error: f64,
    pub eoc: Option<f64>,
    pub newton_iterations: usize,
    pub wall_time_seconds: f64,
    pub ndofs: usize,
    pub nnz: usize,
    pub report: SolveReport,
}

/// A study that stopped early, with the rows completed before the failure.
#[derive(Debug)]
pub struct StudyError {
    pub rows: Vec<StudyRow>,
    pub error: AssemblyError,
}

impl std::fmt::Display for StudyError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "study failed after {} rows: {}", self.rows.len(), self.error)
    }
}

impl std::error::Error for StudyError {}

/// Solution of one formulation on one mesh.
struct LevelResult {
    x: Vec<f64>,
    flux: FluxField,
    report: SolveReport,
    time: f64,
    ndofs: usize,
    nnz: usize,
}

fn solve_primal(
    mesh: &Mesh,
    materials: &MaterialMap,
    order: usize,
    opts: &NewtonOptions,
    warm: Option<(&Mesh, &[f64])>,
) -> Result<LevelResult, AssemblyError> {
    let start = Instant::now();
    let mut p = PrimalProblem::new(mesh, materials, order)?;
    let x0 = match warm {
        Some((coarse_mesh, xc)) => {
            let coarse = PrimalProblem::new(coarse_mesh, materials, order)?;
            Some(prolong_primal(&coarse, xc, &p))
        }
        None => None,
    };
    let s = p.solve(x0, opts)?;
    let time = start.elapsed().as_secs_f64();
    let flux = post_b_primal(&p, &s.a);
    let (ndofs, nnz) = if s.report.unknowns > 0 {
        (s.report.unknowns, s.report.nnz)
    } else {
        let j = p.jacobian(&s.a)?;
        (j.dim(), j.nnz())
    };
    Ok(LevelResult {
        x: s.a,
        flux,
        report: s.report,
        time,
        ndofs,
        nnz,
    })
}

fn solve_mixed(
    mesh: &Mesh,
    materials: &MaterialMap,
    order: usize,
    opts: &NewtonOptions,
    warm: Option<(&Mesh, &[f64])>,
) -> Result<LevelResult, AssemblyError> {
    let start = Instant::now();
    let mut p = MixedProblem::new(mesh, materials, order)?;
    let x0 = match warm {
        Some((coarse_mesh, xc)) => {
            let coarse = MixedProblem::new(coarse_mesh, materials, order)?;
            Some(prolong_mixed(&coarse, xc, &p))
        }
        None => None,
    };
    let s = p.solve(x0, opts)?;
    let time = start.elapsed().as_secs_f64();
    let x = s.state();
    let flux = post_b_mixed(&p, &x);
    let (ndofs, nnz) = if s.report.unknowns > 0 {
        (s.report.unknowns, s.report.nnz)
    } else {
        let (m, _) = p.condensed_system(&x)?;
        (m.dim(), m.nnz())
    };
    Ok(LevelResult {
        x,
        flux,
        report: s.report,
        time,
        ndofs,
        nnz,
    })
}

fn solve_formulation(
    f: Formulation,
    mesh: &Mesh,
    materials: &MaterialMap,
    order: usize,
    opts: &NewtonOptions,
    warm: Option<(&Mesh, &[f64])>,
) -> Result<LevelResult, AssemblyError> {
    match f {
        Formulation::Primal => solve_primal(mesh, materials, order, opts, warm),
        Formulation::Mixed => solve_mixed(mesh, materials, order, opts, warm),
    }
}

/// Interpolates a primal solution on a mesh into the problem on its
/// uniform refinement.
pub fn prolong_primal(coarse: &PrimalProblem, xc: &[f64], fine: &PrimalProblem) -> Vec<f64> {
    let (cm, fm) = (coarse.mesh(), fine.mesh());
    let full = interpolate_scalar(fm, fine.dofmap(), |t, x| {
        let tc = Mesh::ancestor(t, 1);
        coarse.potential_at(xc, tc, cm.to_reference(tc, x))
    });
    fine.restrict(&full)
}

/// Interpolates a mixed state on a mesh into the problem on its uniform
/// refinement; exact since the spaces are nested.
pub fn prolong_mixed(coarse: &MixedProblem, xc: &[f64], fine: &MixedProblem) -> Vec<f64> {
    let (cm, fm) = (coarse.mesh(), fine.mesh());
    let mut x = interpolate_nedelec(fm, fine.h_dofmap(), |t, x| {
        let tc = Mesh::ancestor(t, 1);
        coarse.field_value(xc, tc, cm.to_reference(tc, x))
    });
    x.extend(interpolate_scalar(fm, fine.a_dofmap(), |t, x| {
        let tc = Mesh::ancestor(t, 1);
        coarse.potential_at(xc, tc, cm.to_reference(tc, x))
    }));
    x
}

/// Runs every formulation on the refinement hierarchy and tabulates the
/// flux error and its observed order.
///
/// The manufactured case is measured against its closed form; mesh cases
/// against the order-2 mixed solution on one further refinement.
pub fn convergence_study(spec: &StudySpec) -> Result<Vec<StudyRow>, StudyError> {
    let (base, materials, exact) = match &spec.case {
        StudyCase::Manufactured(c) => {
            let m = c.materials().map_err(|e| StudyError {
                rows: Vec::new(),
                error: e.into(),
            })?;
            (Mesh::unit_square(spec.base_n, |_| 0), m, Some(c))
        }
        StudyCase::Mesh { mesh, materials } => (mesh.clone(), materials.clone(), None),
    };
    let mut meshes = vec![base];
    for _ in 1..spec.levels {
        meshes.push(meshes.last().unwrap().refine_uniform());
    }
    let mut rows = Vec::new();
    let mut fluxes: Vec<Vec<FluxField>> = Vec::new();
    for &f in &spec.formulations {
        let mut prev: Option<Vec<f64>> = None;
        let mut per_level = Vec::new();
        for (level, mesh) in meshes.iter().enumerate() {
            let warm = match (&prev, spec.warm_start && level > 0) {
                (Some(x), true) => Some((&meshes[level - 1], x.as_slice())),
                _ => None,
            };
            let r = match solve_formulation(f, mesh, &materials, spec.order, &spec.newton, warm) {
                Ok(r) => r,
                Err(error) => return Err(StudyError { rows, error }),
            };
            let error = exact.map_or(f64::NAN, |c| l2_error_closed_form(mesh, &r.flux, |x| c.b(x)));
            log::info!(
                "{} order {} level {level}: {} Newton iterations, error {error:e}",
                f.name(),
                spec.order,
                r.report.iterations
            );
            rows.push(StudyRow {
                formulation: f,
                order: spec.order,
                level,
                h: mesh.quality().h,
                error,
                eoc: None,
                newton_iterations: r.report.iterations,
                wall_time_seconds: r.time,
                ndofs: r.ndofs,
                nnz: r.nnz,
                report: r.report,
            });
            per_level.push(r.flux);
            prev = Some(r.x);
        }
        fluxes.push(per_level);
    }
    if exact.is_none() {
        let fine = meshes.last().unwrap().refine_uniform();
        let reference = match solve_mixed(&fine, &materials, 2, &spec.newton, None) {
            Ok(r) => r,
            Err(error) => return Err(StudyError { rows, error }),
        };
        let n = spec.levels;
        for (fi, per_level) in fluxes.iter().enumerate() {
            for (level, flux) in per_level.iter().enumerate() {
                rows[fi * n + level].error =
                    l2_error_nested(&meshes[level], flux, &fine, &reference.flux, n - level);
            }
        }
    }
    for i in 1..rows.len() {
        if rows[i].formulation == rows[i - 1].formulation {
            rows[i].eoc = Some(eoc(rows[i - 1].error, rows[i].error));
        }
    }
    Ok(rows)
}

/// Table with one row per level: `formulation,order,level,h,ndofs,nnz,iter,time,error,eoc`.
/// Timings print as `-` when `timings` is false.
pub fn study_csv(rows: &[StudyRow], timings: bool) -> String {
    let mut s = String::from("formulation,order,level,h,ndofs,nnz,iter,time,error,eoc\n");
    for r in rows {
        let time = if timings {
            format!("{:.3}", r.wall_time_seconds)
        } else {
            "-".to_string()
        };
        let eoc = r.eoc.map_or(String::new(), |e| format!("{e:.3}"));
        let _ = writeln!(
            s,
            "{},{},{},{:.6e},{},{},{},{},{:.6e},{}",
            r.formulation.name(),
            r.order,
            r.level,
            r.h,
            r.ndofs,
            r.nnz,
            r.newton_iterations,
            time,
            r.error,
            eoc
        );
    }
    s
}

/// Size and cost of one Newton step for one formulation and order.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub formulation: Formulation,
    pub order: usize,
    pub ndofs: usize,
    pub nnz: usize,
    /// Factorization and solve of the final linear system.
    pub solve_seconds: f64,
}

/// Builds both formulations of orders 1 and 2 on one mesh and times the
/// linear solve of the first Newton step.
pub fn compare_formulations(mesh: &Mesh, materials: &MaterialMap) -> Result<Vec<CompareRow>, AssemblyError> {
    let mut rows = Vec::new();
    for order in 1..=2 {
        let p = PrimalProblem::new(mesh, materials, order)?;
        let x = vec![0.0; p.n_unknowns()];
        let k = p.jacobian(&x)?;
        let r: Vec<f64> = p.residual(&x)?.iter().map(|v| -v).collect();
        let start = Instant::now();
        solve_spd(&k, &r, Default::default())?;
        rows.push(CompareRow {
            formulation: Formulation::Primal,
            order,
            ndofs: k.dim(),
            nnz: k.nnz(),
            solve_seconds: start.elapsed().as_secs_f64(),
        });
        let m = MixedProblem::new(mesh, materials, order)?;
        let (s, rhs) = m.condensed_system(&vec![0.0; m.n_state()])?;
        let start = Instant::now();
        solve_spd(&s, &rhs, Default::default())?;
        rows.push(CompareRow {
            formulation: Formulation::Mixed,
            order,
            ndofs: s.dim(),
            nnz: s.nnz(),
            solve_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(rows)
}

/// `order,primal_ndofs,primal_nnz,primal_time,dual_ndofs,dual_nnz,dual_time,ratio`.
pub fn compare_csv(rows: &[CompareRow], timings: bool) -> String {
    let mut s = String::from("order,primal_ndofs,primal_nnz,primal_time,dual_ndofs,dual_nnz,dual_time,ratio\n");
    let t = |v: f64| if timings { format!("{v:.4}") } else { "-".into() };
    for order in 1..=2 {
        let find = |f| rows.iter().find(|r| r.order == order && r.formulation == f);
        if let (Some(p), Some(d)) = (find(Formulation::Primal), find(Formulation::Mixed)) {
            let _ = writeln!(
                s,
                "{order},{},{},{},{},{},{},{:.4}",
                p.ndofs,
                p.nnz,
                t(p.solve_seconds),
                d.ndofs,
                d.nnz,
                t(d.solve_seconds),
                d.ndofs as f64 / p.ndofs as f64
            );
        }
    }
    s
}

/// Plain-text Newton log.
pub fn format_report(report: &SolveReport) -> String {
    let mut s = format!(
        "converged: {}\niterations: {}\nreference residual: {:e}\nunknowns: {}\nnnz: {}\n",
        report.converged, report.iterations, report.reference_norm, report.unknowns, report.nnz
    );
    s.push_str("iteration,relative_residual,step\n");
    for (i, r) in report.residuals.iter().enumerate() {
        let step = if i == 0 {
            String::new()
        } else {
            format!("{}", report.steps[i - 1])
        };
        let _ = writeln!(s, "{i},{r:e},{step}");
    }
    s
}

/// Cell data for VTK: `a` at the element centroid, mean flux `B`, `|B|`.
pub fn vtk_fields(a_cell: Vec<f64>, flux: &FluxField) -> Vec<VtkField> {
    let b = flux.cell_means();
    let mag = b.iter().map(|v| v[0].hypot(v[1])).collect();
    vec![
        VtkField::new("a", VtkData::CellScalar(a_cell)),
        VtkField::new("B", VtkData::CellVector(b)),
        VtkField::new("B_magnitude", VtkData::CellScalar(mag)),
    ]
}

/// Solves one formulation on a mesh and returns state, flux, cell values
/// of `a` and `|H|`, and the Newton report.
pub struct SolveOutput {
    pub flux: FluxField,
    pub a_cell: Vec<f64>,
    pub h_cell: Vec<f64>,
    pub report: SolveReport,
    pub ndofs: usize,
}

pub fn solve_case(
    mesh: &Mesh,
    materials: &MaterialMap,
    formulation: Formulation,
    order: usize,
    opts: &NewtonOptions,
) -> Result<SolveOutput, AssemblyError> {
    let c = [1.0 / 3.0, 1.0 / 3.0];
    let nt = mesh.n_triangles();
    match formulation {
        Formulation::Primal => {
            let mut p = PrimalProblem::new(mesh, materials, order)?;
            let s = p.solve(None, opts)?;
            let flux = post_b_primal(&p, &s.a);
            let a_cell = (0..nt).map(|t| p.potential_at(&s.a, t, c)).collect();
            let h_cell = (0..nt)
                .map(|t| {
                    let law = &materials.region(mesh.region_tags()[t]).expect("checked").law;
                    let h = law.f_grad(p.flux_at(&s.a, t, c));
                    h[0].hypot(h[1])
                })
                .collect();
            Ok(SolveOutput {
                flux,
                a_cell,
                h_cell,
                ndofs: p.n_unknowns(),
                report: s.report,
            })
        }
        Formulation::Mixed => {
            let mut p = MixedProblem::new(mesh, materials, order)?;
            let s = p.solve(None, opts)?;
            let x = s.state();
            let flux = post_b_mixed(&p, &x);
            let a_cell = (0..nt).map(|t| p.potential_at(&x, t, c)).collect();
            let h_cell = (0..nt)
                .map(|t| {
                    let h = p.field_value(&x, t, c);
                    h[0].hypot(h[1])
                })
                .collect();
            Ok(SolveOutput {
                flux,
                a_cell,
                h_cell,
                ndofs: p.n_trace_unknowns(),
                report: s.report,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l2_error_examples() {
        let m = Mesh::unit_square(3, |_| 0);
        let rule = rule_for_degree(2).unwrap();
        assert_eq!(l2_error(&m, |_, _| [1.0, 2.0], |_, _| [1.0, 2.0], rule), 0.0);
        let e = l2_error(&m, |_, _| [0.0, 0.0], |_, _| [1.0, 0.0], rule);
        assert!((e - 1.0).abs() < 1e-14);
        let c = 0.25;
        let e = l2_error(&m, |_, p| [p[0], 0.0], |_, p| [p[0] + c, 0.0], rule);
        assert!((e - c).abs() < 1e-14);
    }

    #[test]
    fn eoc_of_synthetic_sequence() {
        for p in [0.5, 1.0, 2.0] {
            let e: Vec<f64> = (0..5).map(|i| 3.0 * 2f64.powf(-p * i as f64)).collect();
            for w in e.windows(2) {
                assert!((eoc(w[0], w[1]) - p).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn manufactured_linear_case() {
        let c = ManufacturedCase::linear(0.0);
        let x = [0.3, 0.7];
        let expect = 2.0 * PI * PI * c.a(x);
        assert!((c.j(x) - expect).abs() < 1e-12);
        let b = c.b([0.5, 0.5]);
        assert!(b[0].abs() < 1e-15 && b[1].abs() < 1e-15);
        assert!(c.a([0.0, 0.4]).abs() < 1e-15 && c.a([1.0, 0.4]).abs() < 1e-15);
        let cs = ManufacturedCase::linear(3.0);
        assert!((cs.j(x) - (2.0 * PI * PI + 3.0) * cs.a(x)).abs() < 1e-12);
    }

    #[test]
    fn lagrange_flux_of_linear_potential() {
        let m = Mesh::unit_square(2, |_| 0);
        for order in 1..=2 {
            let dofs = DofMap::new(crate::fe_spaces::Space::Lagrange(order), &m).unwrap();
            let a = interpolate_scalar(&m, &dofs, |_, x| x[0]);
            let flux = post_b_lagrange(&m, &dofs, &a);
            for t in 0..m.n_triangles() {
                let b = flux.eval(t, [0.2, 0.3]);
                assert!(b[0].abs() < 1e-14 && (b[1] + 1.0).abs() < 1e-14);
            }
        }
    }
}
