//! Sparse symmetric storage, SPD linear solvers and the damped Newton loop.
//!
//! The direct solver is an envelope (skyline) Cholesky factorization after
//! reverse Cuthill–McKee reordering, followed by one step of iterative
//! refinement. A Jacobi-preconditioned conjugate gradient is available for
//! systems whose envelope would be too large.

use std::collections::VecDeque;
use std::time::Instant;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("matrix is not symmetric: |a[{row},{col}] - a[{col},{row}]| = {diff:e}")]
    NotSymmetric { row: usize, col: usize, diff: f64 },
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("conjugate gradient stalled after {iterations} iterations (relative residual {residual:e})")]
    PcgNotConverged { iterations: usize, residual: f64 },
    #[error("line search failed in Newton iteration {}", report.iterations + 1)]
    LineSearchFailed { report: Box<SolveReport> },
    #[error("Newton did not converge in {} iterations (relative residual {:e})", report.iterations, report.final_residual())]
    NotConverged { report: Box<SolveReport> },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("matrix is singular (zero pivot in column {0})")]
    Singular(usize),
}

/// Symmetric matrix in compressed sparse row form with both triangles
/// stored and sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetric {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Accumulates `(row, col, value)` contributions; duplicates are summed.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        TripletBuilder {
            n,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        TripletBuilder {
            n,
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.entries.push((row, col, value));
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn build(self) -> SparseSymmetric {
        SparseSymmetric::from_triplets(self.n, self.entries)
    }
}

impl SparseSymmetric {
    pub fn from_triplets(n: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseSymmetric {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn from_dense(a: &[Vec<f64>]) -> Self {
        let n = a.len();
        let mut e = Vec::new();
        for (i, row) in a.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    e.push((i, j, v));
                }
            }
        }
        Self::from_triplets(n, e)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored entries of the full (both-triangle) matrix.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, v)| v * x[j]).sum()
            })
            .collect()
    }

    /// Largest `|a_ij - a_ji|`, with its location.
    pub fn asymmetry(&self) -> (f64, usize, usize) {
        let mut worst = (0.0, 0, 0);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let d = (v - self.get(j, i)).abs();
                if d > worst.0 {
                    worst = (d, i, j);
                }
            }
        }
        worst
    }

    /// Fails unless `|a_ij - a_ji| <= rel_tol * max|a|` everywhere.
    pub fn check_symmetric(&self, rel_tol: f64) -> Result<(), SolverError> {
        let (diff, row, col) = self.asymmetry();
        if diff > rel_tol * self.max_abs() {
            return Err(SolverError::NotSymmetric { row, col, diff });
        }
        Ok(())
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                row[j] = v;
            }
        }
        d
    }
}

/// Reverse Cuthill–McKee ordering: `perm[new] = old`.
pub fn rcm_ordering(a: &SparseSymmetric) -> Vec<usize> {
    let n = a.dim();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(a, seed, &degree);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = a.row(v).0.iter().copied().filter(|&w| !visited[w]).collect();
            nbrs.sort_by_key(|&w| (degree[w], w));
            for w in nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// BFS level structure from `root`: (last level, depth).
fn bfs_levels(a: &SparseSymmetric, root: usize) -> (Vec<usize>, usize) {
    let mut dist = std::collections::HashMap::new();
    dist.insert(root, 0usize);
    let mut queue = VecDeque::from([root]);
    let mut depth = 0;
    let mut last = vec![root];
    while let Some(v) = queue.pop_front() {
        let d = dist[&v];
        for &w in a.row(v).0 {
            if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w) {
                e.insert(d + 1);
                queue.push_back(w);
                if d + 1 > depth {
                    depth = d + 1;
                    last.clear();
                }
                if d + 1 == depth {
                    last.push(w);
                }
            }
        }
    }
    (last, depth)
}

fn pseudo_peripheral(a: &SparseSymmetric, seed: usize, degree: &[usize]) -> usize {
    let mut root = seed;
    let (mut last, mut depth) = bfs_levels(a, root);
    loop {
        let cand = *last.iter().min_by_key(|&&v| (degree[v], v)).unwrap();
        let (l2, d2) = bfs_levels(a, cand);
        if d2 <= depth {
            return root;
        }
        root = cand;
        last = l2;
        depth = d2;
    }
}

/// Band LU factor `P A Qᵀ = L U` of a general sparse matrix: `Q` is a
/// reverse Cuthill–McKee ordering of the symmetrized pattern, `P` adds
/// partial pivoting within the band.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    perm: Vec<usize>,
    band: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    /// Factors the matrix given as `(row, col, value)` triplets; duplicates
    /// are summed.
    pub fn factor(n: usize, entries: &[(usize, usize, f64)]) -> Result<Self, SolverError> {
        let mut pattern = TripletBuilder::with_capacity(n, 2 * entries.len() + n);
        for i in 0..n {
            pattern.add(i, i, 1.0);
        }
        for &(i, j, _) in entries {
            pattern.add(i, j, 1.0);
            pattern.add(j, i, 1.0);
        }
        let perm = rcm_ordering(&pattern.build());
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let (mut kl, mut ku) = (0, 0);
        for &(i, j, _) in entries {
            let (pi, pj) = (inv[i], inv[j]);
            kl = kl.max(pi.saturating_sub(pj));
            ku = ku.max(pj.saturating_sub(pi));
        }
        let mut lu = BandedLu {
            n,
            kl,
            ku,
            perm,
            band: vec![0.0; n * (2 * kl + ku + 1)],
            pivots: Vec::with_capacity(n),
        };
        for &(i, j, v) in entries {
            let k = lu.at(inv[i], inv[j]);
            lu.band[k] += v;
        }
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let p = (k..=last)
                .max_by(|&r, &s| lu.band[lu.at(r, k)].abs().total_cmp(&lu.band[lu.at(s, k)].abs()))
                .unwrap();
            let pivot = lu.band[lu.at(p, k)];
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(SolverError::Singular(k));
            }
            let end = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=end {
                    let (a, b) = (lu.at(k, j), lu.at(p, j));
                    lu.band.swap(a, b);
                }
            }
            lu.pivots.push(p);
            for i in k + 1..=last {
                let ik = lu.at(i, k);
                let l = lu.band[ik] / pivot;
                lu.band[ik] = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=end {
                    let (ij, kj) = (lu.at(i, j), lu.at(k, j));
                    lu.band[ij] -= l * lu.band[kj];
                }
            }
        }
        Ok(lu)
    }

    /// Row `i` holds columns `i - kl ..= i + kl + ku`; pivoting widens `U`
    /// by `kl`.
    fn at(&self, i: usize, j: usize) -> usize {
        i * (2 * self.kl + self.ku + 1) + j + self.kl - i
    }

    /// Lower and upper bandwidth of the reordered matrix.
    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        for k in 0..n {
            x.swap(k, self.pivots[k]);
            for i in k + 1..=(k + self.kl).min(n - 1) {
                x[i] -= self.band[self.at(i, k)] * x[k];
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..=(k + self.kl + self.ku).min(n - 1) {
                s -= self.band[self.at(k, j)] * x[j];
            }
            x[k] = s / self.band[self.at(k, k)];
        }
        let mut out = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = x[new];
        }
        out
    }
}

/// Solves a general sparse system given as triplets with [`BandedLu`] and
/// one step of iterative refinement.
pub fn solve_banded_lu(n: usize, entries: &[(usize, usize, f64)], b: &[f64]) -> Result<Vec<f64>, SolverError> {
    if b.len() != n {
        return Err(SolverError::DimensionMismatch { expected: n, got: b.len() });
    }
    let lu = BandedLu::factor(n, entries)?;
    let mut x = lu.solve(b);
    let mut r = b.to_vec();
    for &(i, j, v) in entries {
        r[i] -= v * x[j];
    }
    for (xi, di) in x.iter_mut().zip(lu.solve(&r)) {
        *xi += di;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite("banded solve"));
    }
    Ok(x)
}

/// Envelope Cholesky factor `P A Pᵀ = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    perm: Vec<usize>,
    /// First stored column of each (permuted) row.
    first: Vec<usize>,
    /// Offset of each row's envelope in `data`; the diagonal is last.
    start: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(a: &SparseSymmetric) -> Result<Self, SolverError> {
        let n = a.dim();
        let perm = rcm_ordering(a);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (new, &old) in perm.iter().enumerate() {
            for &c in a.row(old).0 {
                first[new] = first[new].min(inv[c]);
            }
        }
        let mut start = vec![0; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0; start[n]];
        for (new, &old) in perm.iter().enumerate() {
            let (cols, vals) = a.row(old);
            for (&c, &v) in cols.iter().zip(vals) {
                let j = inv[c];
                if j <= new {
                    data[start[new] + j - first[new]] = v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let mut s = data[start[i] + j - fi];
                let ri = &data[start[i] + k0 - fi..start[i] + j - fi];
                let rj = &data[start[j] + k0 - fj..start[j] + j - fj];
                s -= ri.iter().zip(rj).map(|(x, y)| x * y).sum::<f64>();
                data[start[i] + j - fi] = s / data[start[j + 1] - 1];
            }
            let row = &data[start[i]..start[i + 1] - 1];
            let d = data[start[i + 1] - 1] - row.iter().map(|x| x * x).sum::<f64>();
            if !(d > 0.0) {
                return Err(SolverError::NotPositiveDefinite {
                    pivot: perm[i],
                    value: d,
                });
            }
            data[start[i + 1] - 1] = d.sqrt();
        }
        Ok(EnvelopeCholesky {
            perm,
            first,
            start,
            data,
        })
    }

    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1] - 1];
            let s: f64 = row.iter().zip(&y[fi..i]).map(|(l, v)| l * v).sum();
            y[i] = (y[i] - s) / self.data[self.start[i + 1] - 1];
        }
        for i in (0..n).rev() {
            y[i] /= self.data[self.start[i + 1] - 1];
            let fi = self.first[i];
            let yi = y[i];
            let row = &self.data[self.start[i]..self.start[i + 1] - 1];
            for (l, v) in row.iter().zip(&mut y[fi..i]) {
                *v -= l * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned conjugate gradients from a zero initial guess.
pub fn pcg(a: &SparseSymmetric, b: &[f64], rel_tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize), SolverError> {
    let n = a.dim();
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            if d > 0.0 {
                Ok(1.0 / d)
            } else {
                Err(SolverError::NotPositiveDefinite { pivot: i, value: d })
            }
        })
        .collect::<Result<_, _>>()?;
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        let ap = a.matvec(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(SolverError::NotPositiveDefinite { pivot: 0, value: pap });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm2(&r) <= rel_tol * bnorm {
            return Ok((x, it));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(SolverError::PcgNotConverged {
        iterations: max_iter,
        residual: norm2(&r) / bnorm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinearSolver {
    Cholesky,
    Pcg { rel_tol: f64, max_iter: usize },
}

impl Default for LinearSolver {
    fn default() -> Self {
        LinearSolver::Cholesky
    }
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub fn solve_spd(a: &SparseSymmetric, b: &[f64], method: LinearSolver) -> Result<Vec<f64>, SolverError> {
    if b.len() != a.dim() {
        return Err(SolverError::DimensionMismatch {
            expected: a.dim(),
            got: b.len(),
        });
    }
    a.check_symmetric(1e-12)?;
    let x = match method {
        LinearSolver::Cholesky => {
            let f = EnvelopeCholesky::factor(a)?;
            let mut x = f.solve(b);
            let ax = a.matvec(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
            let dx = f.solve(&r);
            for (x, d) in x.iter_mut().zip(dx) {
                *x += d;
            }
            x
        }
        LinearSolver::Pcg { rel_tol, max_iter } => pcg(a, b, rel_tol, max_iter)?.0,
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite("linear solve"));
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Relative residual tolerance.
    pub tol: f64,
    /// Used instead when the reference residual is zero.
    pub abs_tol: f64,
    pub max_iter: usize,
    /// Sufficient decrease constant `c` in `‖R(x+τδ)‖ <= (1 - cτ)‖R(x)‖`.
    pub armijo_c: f64,
    /// Step reduction factor.
    pub beta: f64,
    pub min_step: f64,
    pub linear_solver: LinearSolver,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-8,
            abs_tol: 1e-12,
            max_iter: 50,
            armijo_c: 1e-4,
            beta: 0.5,
            min_step: 2f64.powi(-20),
            linear_solver: LinearSolver::Cholesky,
        }
    }
}

/// Record of one nonlinear solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Relative residual before the first and after every iteration.
    pub residuals: Vec<f64>,
    /// Accepted damping factors.
    pub steps: Vec<f64>,
    pub reference_norm: f64,
    pub converged: bool,
    pub unknowns: usize,
    pub nnz: usize,
    pub wall_time: f64,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::NAN)
    }

    pub fn is_strictly_decreasing(&self) -> bool {
        self.residuals.windows(2).all(|w| w[1] < w[0])
    }
}

/// A nonlinear system `R(x) = 0` with a Newton direction provider.
pub trait NonlinearProblem {
    type Error: From<SolverError>;

    /// Euclidean norm of the assembled residual at `x`.
    fn residual_norm(&self, x: &[f64]) -> Result<f64, Self::Error>;

    /// `‖R‖` at the zero state; relative residuals are measured against it.
    fn reference_norm(&self) -> Result<f64, Self::Error>;

    /// The Newton increment at `x`.
    fn direction(&mut self, x: &[f64]) -> Result<Vec<f64>, Self::Error>;

    /// Size of the last linear system (unknowns, stored nonzeros).
    fn system_size(&self) -> (usize, usize) {
        (0, 0)
    }
}

/// Damped Newton with Armijo backtracking on the residual norm.
///
/// Iterates until `‖R(x)‖ <= tol ‖R(0)‖`; the damping factor is the largest
/// `τ = β^m` with `‖R(x + τδ)‖ <= (1 - cτ)‖R(x)‖`.
pub fn newton<P: NonlinearProblem>(
    problem: &mut P,
    x0: Vec<f64>,
    opts: &NewtonOptions,
) -> Result<(Vec<f64>, SolveReport), P::Error> {
    let clock = Instant::now();
    let mut x = x0;
    let reference = problem.reference_norm()?;
    let (scale, tol) = if reference > 0.0 {
        (reference, opts.tol)
    } else {
        (1.0, opts.abs_tol)
    };
    let mut report = SolveReport {
        reference_norm: reference,
        ..SolveReport::default()
    };
    let mut res = problem.residual_norm(&x)?;
    if !res.is_finite() {
        return Err(SolverError::NonFinite("residual").into());
    }
    report.residuals.push(res / scale);
    while res / scale > tol {
        if report.iterations == opts.max_iter {
            report.wall_time = clock.elapsed().as_secs_f64();
            return Err(SolverError::NotConverged {
                report: Box::new(report),
            }
            .into());
        }
        let dx = problem.direction(&x)?;
        (report.unknowns, report.nnz) = problem.system_size();
        let mut tau = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(x, d)| x + tau * d).collect();
            let r = problem.residual_norm(&trial)?;
            if r.is_finite() && r <= (1.0 - opts.armijo_c * tau) * res {
                break Some((trial, r));
            }
            tau *= opts.beta;
            if tau < opts.min_step {
                break None;
            }
        };
        let Some((trial, r)) = accepted else {
            report.wall_time = clock.elapsed().as_secs_f64();
            return Err(SolverError::LineSearchFailed {
                report: Box::new(report),
            }
            .into());
        };
        log::debug!("newton iteration {}: tau = {tau}, residual = {:e}", report.iterations + 1, r / scale);
        x = trial;
        res = r;
        report.iterations += 1;
        report.steps.push(tau);
        report.residuals.push(res / scale);
    }
    report.converged = true;
    report.wall_time = clock.elapsed().as_secs_f64();
    Ok((x, report))
}
