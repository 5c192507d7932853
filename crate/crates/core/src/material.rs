//! Magnetic material laws as convex energy/coenergy pairs.
//!
//! Every law exposes the coenergy side `g(H)` (used by the mixed method,
//! `B = g'(H)`) and the energy side `f(B)` (used by the vector potential
//! method, `H = f'(B)`), together with their Hessians. Nonlinear iron is an
//! isotropic law `f(B) = f̃(|B|)` whose derivative `f̃'` is a monotone cubic
//! spline fitted to a Brauer reluctivity curve or to measured B–H data; the
//! coenergy spline `g̃'` is built as its numerical inverse.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("invalid Brauer parameters k1={k1}, k2={k2}, k3={k3}")]
    InvalidParams { k1: f64, k2: f64, k3: f64 },
    #[error("invalid law parameter: {0}")]
    InvalidLaw(String),
    #[error("knots must be strictly increasing and start at 0")]
    InvalidKnots,
    #[error("fitted derivative is not increasing on interval {interval} ([{lo}, {hi}])")]
    MonotonicityViolation { interval: usize, lo: f64, hi: f64 },
    #[error("curve values are not strictly increasing at index {0}")]
    NotStrictlyIncreasing(usize),
    #[error("duality roundtrip error {0:e} exceeds tolerance")]
    DualityRoundtrip(f64),
    #[error("material is not uniformly monotone: sampled alpha = {0:e}")]
    MonotonicityFailure(f64),
    #[error("certification needs at least 1000 samples, got {0}")]
    TooFewSamples(usize),
    #[error("no material for region {0} and no default region 0")]
    MissingRegion(u32),
    #[error("negative conductivity {sigma} in region {region}")]
    NegativeConductivity { region: u32, sigma: f64 },
}

/// Vacuum permeability in H/m.
pub const MU0: f64 = 4.0e-7 * std::f64::consts::PI;

type Vec2 = [f64; 2];
type Mat2 = [[f64; 2]; 2];

fn norm(v: Vec2) -> f64 {
    v[0].hypot(v[1])
}

/// `B = mu H`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearLaw {
    pub mu: f64,
}

/// `B = mu (H + M)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagnetLaw {
    pub mu: f64,
    pub magnetization: Vec2,
}

/// Brauer reluctivity `nu(b) = k1 exp(k2 b²) + k3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrauerParams {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

impl BrauerParams {
    pub fn validate(&self) -> Result<(), MaterialError> {
        let BrauerParams { k1, k2, k3 } = *self;
        let finite = k1.is_finite() && k2.is_finite() && k3.is_finite();
        if !finite || k1 < 0.0 || k2 < 0.0 || k3 < 0.0 || k1 + k3 <= 0.0 {
            return Err(MaterialError::InvalidParams { k1, k2, k3 });
        }
        Ok(())
    }

    /// A synthetic SI parameter set (`nu` in m/H): `nu(0) = 405`, i.e. a
    /// relative permeability near 2000, saturating around `|B| ≈ 1.7 T`.
    /// Not fitted to any real steel.
    pub fn synthetic() -> Self {
        BrauerParams {
            k1: 5.0,
            k2: 2.0,
            k3: 400.0,
        }
    }
}

pub fn brauer_reluctivity(b: f64, params: &BrauerParams) -> Result<f64, MaterialError> {
    params.validate()?;
    Ok(params.k1 * (params.k2 * b * b).exp() + params.k3)
}

/// C¹ piecewise cubic Hermite function on `[x_0, x_n]`, continued linearly
/// beyond `x_n` with its end slope; carries its exact antiderivative.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCubic {
    knots: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    /// `∫_{x_0}^{x_i}` of the spline.
    cumulative: Vec<f64>,
}

impl MonotoneCubic {
    /// Fits knot data with Fritsch–Carlson slope limiting. With `slopes`
    /// given, those are limited; otherwise they are estimated from the
    /// neighbouring secants.
    pub fn fit(knots: &[f64], values: &[f64], slopes: Option<&[f64]>) -> Result<Self, MaterialError> {
        let n = knots.len();
        if n < 2 || values.len() != n || slopes.is_some_and(|s| s.len() != n) {
            return Err(MaterialError::InvalidKnots);
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) || !knots.iter().all(|x| x.is_finite()) {
            return Err(MaterialError::InvalidKnots);
        }
        if let Some(i) = values.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(MaterialError::NotStrictlyIncreasing(i + 1));
        }
        let secants: Vec<f64> = (0..n - 1)
            .map(|i| (values[i + 1] - values[i]) / (knots[i + 1] - knots[i]))
            .collect();
        let mut m: Vec<f64> = match slopes {
            Some(s) => s.to_vec(),
            None => (0..n)
                .map(|i| match i {
                    0 => secants[0],
                    _ if i == n - 1 => secants[n - 2],
                    _ => 0.5 * (secants[i - 1] + secants[i]),
                })
                .collect(),
        };
        for i in 0..n - 1 {
            let d = secants[i];
            m[i] = m[i].max(0.0);
            m[i + 1] = m[i + 1].max(0.0);
            let (a, b) = (m[i] / d, m[i + 1] / d);
            let r2 = a * a + b * b;
            if r2 > 9.0 {
                let tau = 3.0 / r2.sqrt();
                m[i] = tau * a * d;
                m[i + 1] = tau * b * d;
            }
        }
        let mut cumulative = vec![0.0; n];
        for i in 0..n - 1 {
            let h = knots[i + 1] - knots[i];
            cumulative[i + 1] =
                cumulative[i] + h * (0.5 * (values[i] + values[i + 1]) + h * (m[i] - m[i + 1]) / 12.0);
        }
        Ok(MonotoneCubic {
            knots: knots.to_vec(),
            values: values.to_vec(),
            slopes: m,
            cumulative,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn x_max(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    fn locate(&self, x: f64) -> usize {
        let i = self.knots.partition_point(|&k| k <= x);
        i.saturating_sub(1).min(self.knots.len() - 2)
    }

    /// Value, derivative and antiderivative (from `x_0`) at `x >= x_0`.
    pub fn eval_all(&self, x: f64) -> (f64, f64, f64) {
        let n = self.knots.len();
        if x >= self.knots[n - 1] {
            let dx = x - self.knots[n - 1];
            let (v, s) = (self.values[n - 1], self.slopes[n - 1]);
            return (v + s * dx, s, self.cumulative[n - 1] + v * dx + 0.5 * s * dx * dx);
        }
        let i = self.locate(x);
        let h = self.knots[i + 1] - self.knots[i];
        let t = (x - self.knots[i]) / h;
        let (y0, y1, m0, m1) = (self.values[i], self.values[i + 1], self.slopes[i], self.slopes[i + 1]);
        let (t2, t3) = (t * t, t * t * t);
        let value = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + h * (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + h * (t3 - t2) * m1;
        let deriv = ((6.0 * t2 - 6.0 * t) * (y0 - y1)) / h
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (3.0 * t2 - 2.0 * t) * m1;
        let t4 = t2 * t2;
        let integral = self.cumulative[i]
            + h * ((0.5 * t4 - t3 + t) * y0
                + h * (0.25 * t4 - 2.0 * t3 / 3.0 + 0.5 * t2) * m0
                + (-0.5 * t4 + t3) * y1
                + h * (0.25 * t4 - t3 / 3.0) * m1);
        (value, deriv, integral)
    }

    pub fn value(&self, x: f64) -> f64 {
        self.eval_all(x).0
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.eval_all(x).1
    }

    pub fn integral(&self, x: f64) -> f64 {
        self.eval_all(x).2
    }

    /// Smallest derivative over 10 samples per interval, with the interval
    /// where it occurs.
    pub fn min_sampled_derivative(&self) -> (f64, usize) {
        let mut worst = (f64::INFINITY, 0);
        for i in 0..self.knots.len() - 1 {
            let (a, b) = (self.knots[i], self.knots[i + 1]);
            for s in 0..10 {
                let x = a + (b - a) * s as f64 / 9.0;
                let d = self.derivative(x.min(b - 1e-15 * b.abs()));
                if d < worst.0 {
                    worst = (d, i);
                }
            }
        }
        worst
    }

    /// Rejects the fit unless the derivative is strictly positive on every
    /// interval (sampled).
    fn certify_increasing(&self) -> Result<(), MaterialError> {
        let (d, i) = self.min_sampled_derivative();
        if !(d > 0.0) {
            return Err(MaterialError::MonotonicityViolation {
                interval: i,
                lo: self.knots[i],
                hi: self.knots[i + 1],
            });
        }
        Ok(())
    }
}

/// Fits `f̃'` (the map `|B| -> |H|`) to the Brauer curve `nu(b) b` on the
/// given knots, using the exact derivative of the curve as Hermite slopes.
pub fn fit_energy_spline(params: &BrauerParams, knots: &[f64]) -> Result<MonotoneCubic, MaterialError> {
    params.validate()?;
    if knots.first() != Some(&0.0) {
        return Err(MaterialError::InvalidKnots);
    }
    let BrauerParams { k1, k2, k3 } = *params;
    let values: Vec<f64> = knots.iter().map(|&b| (k1 * (k2 * b * b).exp() + k3) * b).collect();
    let slopes: Vec<f64> = knots
        .iter()
        .map(|&b| {
            let e = (k2 * b * b).exp();
            k1 * e + k3 + 2.0 * k1 * k2 * b * b * e
        })
        .collect();
    let spline = MonotoneCubic::fit(knots, &values, Some(&slopes))?;
    spline.certify_increasing()?;
    Ok(spline)
}

/// Uniform knots `0, b_max/n, ..., b_max`.
pub fn uniform_knots(b_max: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| b_max * i as f64 / n as f64).collect()
}

/// Maximum of `|g̃'(f̃'(b)) - b| / b` over `samples` points in `(0, b_max]`.
pub fn duality_roundtrip_error(f_tilde: &MonotoneCubic, g_tilde: &MonotoneCubic, samples: usize) -> f64 {
    let b_max = f_tilde.x_max();
    (1..=samples)
        .map(|i| {
            let b = b_max * i as f64 / samples as f64;
            (g_tilde.value(f_tilde.value(b)) - b).abs() / b
        })
        .fold(0.0, f64::max)
}

const DUALITY_TOL: f64 = 1e-8;

/// Builds the coenergy spline `g̃'` with `g̃'(f̃'(b)) = b`.
///
/// The inverse is tabulated at the knots of `f̃'` with inverse slopes
/// `1 / f̃''`; knot intervals are halved until the roundtrip error at
/// interval midpoints and at 100 uniform samples is below `1e-8`.
pub fn dualize(f_tilde: &MonotoneCubic) -> Result<MonotoneCubic, MaterialError> {
    let mut knots = f_tilde.knots().to_vec();
    for _ in 0..12 {
        let mut hs = Vec::with_capacity(knots.len());
        let mut slopes = Vec::with_capacity(knots.len());
        for &b in &knots {
            let (v, d, _) = f_tilde.eval_all(b);
            if !(d > 0.0) {
                return Err(MaterialError::NotStrictlyIncreasing(hs.len()));
            }
            hs.push(v);
            slopes.push(1.0 / d);
        }
        let g = MonotoneCubic::fit(&hs, &knots, Some(&slopes))?;
        let mid_err = knots
            .windows(2)
            .map(|w| {
                let b = 0.5 * (w[0] + w[1]);
                (g.value(f_tilde.value(b)) - b).abs() / b
            })
            .fold(0.0, f64::max);
        let err = mid_err.max(duality_roundtrip_error(f_tilde, &g, 100));
        if err <= 0.5 * DUALITY_TOL {
            g.certify_increasing()?;
            return Ok(g);
        }
        let mut finer = Vec::with_capacity(2 * knots.len());
        for w in knots.windows(2) {
            finer.push(w[0]);
            finer.push(0.5 * (w[0] + w[1]));
        }
        finer.push(*knots.last().unwrap());
        knots = finer;
    }
    Err(MaterialError::DualityRoundtrip(f64::NAN))
}

/// Isotropic law `f(B) = f̃(|B|)`, `g(H) = g̃(|H|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotropicSplineLaw {
    pub f_tilde: MonotoneCubic,
    pub g_tilde: MonotoneCubic,
    /// Lower bound of the eigenvalues of `g''` over the sampled range.
    pub alpha: f64,
    /// Upper bound of the eigenvalues of `g''` over the sampled range.
    pub c_a: f64,
}

impl IsotropicSplineLaw {
    pub fn from_energy_spline(f_tilde: MonotoneCubic) -> Result<Self, MaterialError> {
        if f_tilde.knots()[0] != 0.0 || f_tilde.values()[0] != 0.0 {
            return Err(MaterialError::InvalidKnots);
        }
        f_tilde.certify_increasing()?;
        let g_tilde = dualize(&f_tilde)?;
        let (alpha, c_a) = hessian_eigen_range(&g_tilde);
        if !(alpha > 0.0) {
            return Err(MaterialError::MonotonicityFailure(alpha));
        }
        Ok(IsotropicSplineLaw {
            f_tilde,
            g_tilde,
            alpha,
            c_a,
        })
    }

    pub fn brauer(params: &BrauerParams, b_max: f64, intervals: usize) -> Result<Self, MaterialError> {
        Self::from_energy_spline(fit_energy_spline(params, &uniform_knots(b_max, intervals))?)
    }

    /// Builds the law from measured `(|B| in T, |H| in A/m)` pairs; the
    /// origin is added if missing.
    pub fn from_bh_curve(points: &[(f64, f64)]) -> Result<Self, MaterialError> {
        let mut b: Vec<f64> = Vec::with_capacity(points.len() + 1);
        let mut h: Vec<f64> = Vec::with_capacity(points.len() + 1);
        if points.first().is_none_or(|p| p.0 != 0.0) {
            b.push(0.0);
            h.push(0.0);
        }
        for &(pb, ph) in points {
            b.push(pb);
            h.push(ph);
        }
        if h[0] != 0.0 {
            return Err(MaterialError::InvalidKnots);
        }
        let f = MonotoneCubic::fit(&b, &h, None)?;
        Self::from_energy_spline(f)
    }
}

/// Range of `g̃''(r)` and `g̃'(r)/r` (the eigenvalues of `g''`) over 10
/// samples per knot interval and the linear continuation.
fn hessian_eigen_range(g: &MonotoneCubic) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let mut visit = |r: f64| {
        let (v, d, _) = g.eval_all(r);
        let radial = if r > 0.0 { v / r } else { d };
        lo = lo.min(d).min(radial);
        hi = hi.max(d).max(radial);
    };
    for w in g.knots().windows(2) {
        for s in 0..10 {
            visit(w[0] + (w[1] - w[0]) * s as f64 / 10.0);
        }
    }
    let x = g.x_max();
    for f in [1.0, 2.0, 10.0, 1e3] {
        visit(x * f);
    }
    (lo, hi)
}

/// One region's constitutive law.
#[derive(Debug, Clone, PartialEq)]
pub enum MaterialLaw {
    Linear(LinearLaw),
    Magnet(MagnetLaw),
    Spline(Arc<IsotropicSplineLaw>),
}

fn isotropic_grad(r: f64, deriv_at: impl Fn(f64) -> f64, v: Vec2) -> Vec2 {
    if r == 0.0 {
        return [0.0, 0.0];
    }
    let s = deriv_at(r) / r;
    [s * v[0], s * v[1]]
}

fn isotropic_hess(v: Vec2, spline: &MonotoneCubic) -> Mat2 {
    let r = norm(v);
    let (val, d, _) = spline.eval_all(r);
    if r == 0.0 {
        return [[d, 0.0], [0.0, d]];
    }
    let radial = val / r;
    let u = [v[0] / r, v[1] / r];
    let mut m = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let id = if i == j { 1.0 } else { 0.0 };
            m[i][j] = d * u[i] * u[j] + radial * (id - u[i] * u[j]);
        }
    }
    m
}

impl MaterialLaw {
    pub fn linear(mu: f64) -> Self {
        MaterialLaw::Linear(LinearLaw { mu })
    }

    pub fn magnet(mu: f64, magnetization: Vec2) -> Self {
        MaterialLaw::Magnet(MagnetLaw { mu, magnetization })
    }

    pub fn spline(law: IsotropicSplineLaw) -> Self {
        MaterialLaw::Spline(Arc::new(law))
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        match self {
            MaterialLaw::Linear(l) if !(l.mu > 0.0 && l.mu.is_finite()) => {
                Err(MaterialError::InvalidLaw(format!("permeability {} must be positive", l.mu)))
            }
            MaterialLaw::Magnet(m) if !(m.mu > 0.0 && m.mu.is_finite()) => {
                Err(MaterialError::InvalidLaw(format!("permeability {} must be positive", m.mu)))
            }
            _ => Ok(()),
        }
    }

    pub fn is_linear(&self) -> bool {
        !matches!(self, MaterialLaw::Spline(_))
    }

    /// Coenergy density `g(H)`.
    pub fn g(&self, h: Vec2) -> f64 {
        match self {
            MaterialLaw::Linear(l) => 0.5 * l.mu * (h[0] * h[0] + h[1] * h[1]),
            MaterialLaw::Magnet(m) => {
                let s = [h[0] + m.magnetization[0], h[1] + m.magnetization[1]];
                0.5 * m.mu * (s[0] * s[0] + s[1] * s[1])
            }
            MaterialLaw::Spline(s) => s.g_tilde.integral(norm(h)),
        }
    }

    /// `B = g'(H)`.
    pub fn g_grad(&self, h: Vec2) -> Vec2 {
        match self {
            MaterialLaw::Linear(l) => [l.mu * h[0], l.mu * h[1]],
            MaterialLaw::Magnet(m) => [
                m.mu * (h[0] + m.magnetization[0]),
                m.mu * (h[1] + m.magnetization[1]),
            ],
            MaterialLaw::Spline(s) => isotropic_grad(norm(h), |r| s.g_tilde.value(r), h),
        }
    }

    pub fn g_hess(&self, h: Vec2) -> Mat2 {
        match self {
            MaterialLaw::Linear(LinearLaw { mu }) | MaterialLaw::Magnet(MagnetLaw { mu, .. }) => {
                [[*mu, 0.0], [0.0, *mu]]
            }
            MaterialLaw::Spline(s) => isotropic_hess(h, &s.g_tilde),
        }
    }

    /// Energy density `f(B)`.
    pub fn f(&self, b: Vec2) -> f64 {
        match self {
            MaterialLaw::Linear(l) => (b[0] * b[0] + b[1] * b[1]) / (2.0 * l.mu),
            MaterialLaw::Magnet(m) => {
                let s = [b[0] - m.mu * m.magnetization[0], b[1] - m.mu * m.magnetization[1]];
                (s[0] * s[0] + s[1] * s[1]) / (2.0 * m.mu)
            }
            MaterialLaw::Spline(s) => s.f_tilde.integral(norm(b)),
        }
    }

    /// `H = f'(B)`.
    pub fn f_grad(&self, b: Vec2) -> Vec2 {
        match self {
            MaterialLaw::Linear(l) => [b[0] / l.mu, b[1] / l.mu],
            MaterialLaw::Magnet(m) => [b[0] / m.mu - m.magnetization[0], b[1] / m.mu - m.magnetization[1]],
            MaterialLaw::Spline(s) => isotropic_grad(norm(b), |r| s.f_tilde.value(r), b),
        }
    }

    pub fn f_hess(&self, b: Vec2) -> Mat2 {
        match self {
            MaterialLaw::Linear(LinearLaw { mu }) | MaterialLaw::Magnet(MagnetLaw { mu, .. }) => {
                [[1.0 / mu, 0.0], [0.0, 1.0 / mu]]
            }
            MaterialLaw::Spline(s) => isotropic_hess(b, &s.f_tilde),
        }
    }

    /// Field magnitude up to which certification samples are drawn.
    pub fn natural_range(&self) -> f64 {
        match self {
            MaterialLaw::Linear(_) => 1.0,
            MaterialLaw::Magnet(m) => norm(m.magnetization).max(1.0) * 2.0,
            MaterialLaw::Spline(s) => 2.0 * s.g_tilde.x_max(),
        }
    }
}

/// Free-function forms of the law evaluations.
pub fn g_grad(law: &MaterialLaw, h: Vec2) -> Vec2 {
    law.g_grad(h)
}

pub fn g_hess(law: &MaterialLaw, h: Vec2) -> Mat2 {
    law.g_hess(h)
}

/// Empirical constants of uniform monotonicity and Lipschitz continuity
/// of `g'`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub alpha: f64,
    pub c_a: f64,
}

fn sample_disk(rng: &mut ChaCha8Rng, radius: f64) -> Vec2 {
    let r = radius * rng.random::<f64>().sqrt();
    let th = std::f64::consts::TAU * rng.random::<f64>();
    [r * th.cos(), r * th.sin()]
}

/// Samples `n_samples` random pairs `y, z` with `|y|, |z| <= h_max` and
/// returns the extreme ratios `<g'(y)-g'(z), y-z> / |y-z|²` (alpha) and
/// `|g'(y)-g'(z)| / |y-z|` (C_a).
pub fn certify_lemma1(
    law: &MaterialLaw,
    h_max: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Certificate, MaterialError> {
    if n_samples < 1000 {
        return Err(MaterialError::TooFewSamples(n_samples));
    }
    law.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alpha = f64::INFINITY;
    let mut c_a: f64 = 0.0;
    let mut taken = 0;
    while taken < n_samples {
        let y = sample_disk(&mut rng, h_max);
        let z = sample_disk(&mut rng, h_max);
        let d = [y[0] - z[0], y[1] - z[1]];
        let dn2 = d[0] * d[0] + d[1] * d[1];
        if dn2 < 1e-12 * h_max * h_max {
            continue;
        }
        let (gy, gz) = (law.g_grad(y), law.g_grad(z));
        let dg = [gy[0] - gz[0], gy[1] - gz[1]];
        alpha = alpha.min((dg[0] * d[0] + dg[1] * d[1]) / dn2);
        c_a = c_a.max(norm(dg) / dn2.sqrt());
        taken += 1;
    }
    if !(alpha > 0.0) {
        return Err(MaterialError::MonotonicityFailure(alpha));
    }
    Ok(Certificate { alpha, c_a })
}

/// Law, conductivity and applied current of one region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMaterial {
    pub law: MaterialLaw,
    pub sigma: f64,
    pub current: f64,
}

impl RegionMaterial {
    pub fn new(law: MaterialLaw) -> Self {
        RegionMaterial {
            law,
            sigma: 0.0,
            current: 0.0,
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_current(mut self, current: f64) -> Self {
        self.current = current;
        self
    }
}

pub type SourceFn = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;

/// Region tag to material assignment, plus an optional spatially varying
/// current density added to the per-region constants.
#[derive(Clone, Default)]
pub struct MaterialMap {
    regions: BTreeMap<u32, RegionMaterial>,
    current_fn: Option<SourceFn>,
    certificates: Option<BTreeMap<u32, Certificate>>,
}

impl fmt::Debug for MaterialMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MaterialMap")
            .field("regions", &self.regions)
            .field("current_fn", &self.current_fn.is_some())
            .field("certificates", &self.certificates)
            .finish()
    }
}

impl MaterialMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every region gets the same law (stored under the default tag).
    pub fn uniform(material: RegionMaterial) -> Self {
        let mut m = Self::new();
        m.insert(crate::mesh::DEFAULT_REGION, material);
        m
    }

    pub fn insert(&mut self, tag: u32, material: RegionMaterial) -> &mut Self {
        self.regions.insert(tag, material);
        self.certificates = None;
        self
    }

    pub fn with_current_fn(mut self, f: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static) -> Self {
        self.current_fn = Some(Arc::new(f));
        self
    }

    pub fn regions(&self) -> impl Iterator<Item = (&u32, &RegionMaterial)> {
        self.regions.iter()
    }

    /// Material of a region, falling back to the default region 0.
    pub fn region(&self, tag: u32) -> Result<&RegionMaterial, MaterialError> {
        self.regions
            .get(&tag)
            .or_else(|| self.regions.get(&crate::mesh::DEFAULT_REGION))
            .ok_or(MaterialError::MissingRegion(tag))
    }

    pub fn current_at(&self, tag: u32, x: [f64; 2]) -> f64 {
        let base = self.regions.get(&tag).or_else(|| self.regions.get(&0)).map_or(0.0, |r| r.current);
        base + self.current_fn.as_ref().map_or(0.0, |f| f(x))
    }

    pub fn is_linear(&self) -> bool {
        self.regions.values().all(|r| r.law.is_linear())
    }

    pub fn has_sources(&self) -> bool {
        self.current_fn.is_some()
            || self.regions.values().any(|r| {
                r.current != 0.0 || matches!(r.law, MaterialLaw::Magnet(m) if m.magnetization != [0.0, 0.0])
            })
    }

    /// Checks that every tag of a mesh resolves to a material.
    pub fn check_tags(&self, tags: &[u32]) -> Result<(), MaterialError> {
        for &t in tags {
            let r = self.region(t)?;
            if !(r.sigma >= 0.0) {
                return Err(MaterialError::NegativeConductivity { region: t, sigma: r.sigma });
            }
        }
        Ok(())
    }

    /// Runs [`certify_lemma1`] on every law; solvers refuse uncertified maps.
    pub fn certify(&mut self, n_samples: usize, seed: u64) -> Result<&BTreeMap<u32, Certificate>, MaterialError> {
        let mut certs = BTreeMap::new();
        for (&tag, r) in &self.regions {
            if !(r.sigma >= 0.0) {
                return Err(MaterialError::NegativeConductivity { region: tag, sigma: r.sigma });
            }
            let c = certify_lemma1(&r.law, r.law.natural_range(), n_samples, seed)?;
            certs.insert(tag, c);
        }
        self.certificates = Some(certs);
        Ok(self.certificates.as_ref().unwrap())
    }

    /// [`MaterialMap::certify`] with 1000 samples and seed 0.
    pub fn certified(mut self) -> Result<Self, MaterialError> {
        self.certify(1000, 0)?;
        Ok(self)
    }

    pub fn certificates(&self) -> Option<&BTreeMap<u32, Certificate>> {
        self.certificates.as_ref()
    }

    pub fn is_certified(&self) -> bool {
        self.certificates.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brauer_law() -> IsotropicSplineLaw {
        IsotropicSplineLaw::brauer(&BrauerParams::synthetic(), 3.0, 60).unwrap()
    }

    #[test]
    fn law_gradient_examples() {
        assert_eq!(MaterialLaw::linear(1.0).g_grad([2.0, 0.0]), [2.0, 0.0]);
        let m = 5.0e5;
        let b = MaterialLaw::magnet(MU0, [0.0, m]).g_grad([0.0, 0.0]);
        assert_eq!(b, [0.0, MU0 * m]);
        let s = MaterialLaw::spline(brauer_law());
        assert_eq!(s.g_grad([0.0, 0.0]), [0.0, 0.0]);
        assert_eq!(MaterialLaw::linear(3.0).g_hess([1.0, -2.0]), [[3.0, 0.0], [0.0, 3.0]]);
    }

    #[test]
    fn isotropic_hessian_on_axis() {
        let law = brauer_law();
        let s = MaterialLaw::spline(law.clone());
        let r = 40.0;
        let h = s.g_hess([r, 0.0]);
        let (v, d, _) = law.g_tilde.eval_all(r);
        assert!((h[0][0] - d).abs() <= 1e-14 * d.abs());
        assert!((h[1][1] - v / r).abs() <= 1e-14 * (v / r).abs());
        assert_eq!(h[0][1], 0.0);
        // g''(H) H is parallel to H
        let hv = [3.0, 4.0];
        let m = s.g_hess(hv);
        let w = [m[0][0] * hv[0] + m[0][1] * hv[1], m[1][0] * hv[0] + m[1][1] * hv[1]];
        assert!((w[0] * hv[1] - w[1] * hv[0]).abs() < 1e-12 * norm(w) * norm(hv));
    }

    #[test]
    fn brauer_examples() {
        let p = BrauerParams { k1: 2.0, k2: 0.5, k3: 3.0 };
        assert_eq!(brauer_reluctivity(0.0, &p).unwrap(), 5.0);
        let lin = BrauerParams { k1: 0.0, k2: 1.0, k3: 7.0 };
        assert_eq!(brauer_reluctivity(1.7, &lin).unwrap(), 7.0);
        let mut prev = 0.0;
        for i in 0..50 {
            let v = brauer_reluctivity(i as f64 * 0.1, &p).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        assert!(matches!(
            brauer_reluctivity(1.0, &BrauerParams { k1: -1.0, k2: 0.0, k3: 1.0 }),
            Err(MaterialError::InvalidParams { .. })
        ));
        assert!(brauer_reluctivity(1.0, &BrauerParams { k1: 0.0, k2: 0.0, k3: 0.0 }).is_err());
    }

    #[test]
    fn linear_brauer_recovers_linear_law() {
        let p = BrauerParams { k1: 0.0, k2: 0.0, k3: 1.0 };
        let knots = uniform_knots(2.0, 8);
        let f = fit_energy_spline(&p, &knots).unwrap();
        for &b in &knots {
            assert!((f.value(b) - b).abs() < 1e-12);
            assert!((f.integral(b) - 0.5 * b * b).abs() < 1e-12);
        }
        let g = dualize(&f).unwrap();
        for h in [0.0, 0.3, 1.9, 5.0] {
            assert!((g.value(h) - h).abs() < 1e-12);
            assert!((g.integral(h) - 0.5 * h * h).abs() < 1e-12);
        }
    }

    #[test]
    fn scaled_quadratic_dualizes_to_scaled_quadratic() {
        let mu = 4.0;
        let knots = uniform_knots(2.0, 4);
        let vals: Vec<f64> = knots.iter().map(|b| b / mu).collect();
        let f = MonotoneCubic::fit(&knots, &vals, None).unwrap();
        let g = dualize(&f).unwrap();
        for h in [0.1, 0.25, 0.5] {
            assert!((g.integral(h) - 0.5 * mu * h * h).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_spline_properties() {
        let law = brauer_law();
        assert_eq!(law.f_tilde.value(0.0), 0.0);
        assert_eq!(law.g_tilde.value(0.0), 0.0);
        let (dmin, _) = law.f_tilde.min_sampled_derivative();
        assert!(dmin > 0.0);
        assert!(duality_roundtrip_error(&law.f_tilde, &law.g_tilde, 100) <= 1e-8);
        assert!(law.alpha > 0.0 && law.alpha <= law.c_a && law.c_a.is_finite());
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(matches!(
            MonotoneCubic::fit(&[0.0, 1.0, 1.0], &[0.0, 1.0, 2.0], None),
            Err(MaterialError::InvalidKnots)
        ));
        assert!(matches!(
            MonotoneCubic::fit(&[0.0, 1.0, 2.0], &[0.0, 1.0, 1.0], None),
            Err(MaterialError::NotStrictlyIncreasing(2))
        ));
        assert!(fit_energy_spline(&BrauerParams::synthetic(), &[0.5, 1.0]).is_err());
    }

    #[test]
    fn certificate_examples() {
        let mu = 2.5;
        let c = certify_lemma1(&MaterialLaw::linear(mu), 10.0, 1000, 0).unwrap();
        assert!((c.alpha - mu).abs() < 1e-10 && (c.c_a - mu).abs() < 1e-10);
        let c = certify_lemma1(&MaterialLaw::magnet(mu, [3.0, -1.0]), 10.0, 1000, 1).unwrap();
        assert!((c.alpha - mu).abs() < 1e-10 && (c.c_a - mu).abs() < 1e-10);
        let law = brauer_law();
        let s = MaterialLaw::spline(law.clone());
        let c = certify_lemma1(&s, s.natural_range(), 2000, 2).unwrap();
        assert!(c.alpha > 0.0 && c.alpha <= c.c_a);
        assert!(c.alpha >= law.alpha * (1.0 - 1e-9));
        assert!(c.c_a <= law.c_a * (1.0 + 1e-9));
        assert!(matches!(
            certify_lemma1(&s, 1.0, 10, 0),
            Err(MaterialError::TooFewSamples(10))
        ));
    }

    #[test]
    fn bh_curve_import() {
        // Linear-looking curve with a knee.
        let pts = [(0.5, 100.0), (1.0, 220.0), (1.5, 600.0), (1.8, 3000.0), (2.0, 12000.0)];
        let law = IsotropicSplineLaw::from_bh_curve(&pts).unwrap();
        assert!((law.f_tilde.value(1.5) - 600.0).abs() < 1e-9);
        assert!(duality_roundtrip_error(&law.f_tilde, &law.g_tilde, 100) <= 1e-8);
        assert!(IsotropicSplineLaw::from_bh_curve(&[(1.0, 5.0), (2.0, 4.0)]).is_err());
    }

    #[test]
    fn material_map_lookup() {
        let mut m = MaterialMap::uniform(RegionMaterial::new(MaterialLaw::linear(1.0)).with_current(2.0));
        m.insert(3, RegionMaterial::new(MaterialLaw::linear(5.0)).with_sigma(1.0));
        assert_eq!(m.region(7).unwrap().law, MaterialLaw::linear(1.0));
        assert_eq!(m.region(3).unwrap().sigma, 1.0);
        assert_eq!(m.current_at(9, [0.0, 0.0]), 2.0);
        assert!(!m.is_certified());
        let m = m.certified().unwrap();
        assert!(m.is_certified());
        let empty = MaterialMap::new();
        assert!(matches!(empty.region(1), Err(MaterialError::MissingRegion(1))));
        let mut neg = MaterialMap::uniform(RegionMaterial::new(MaterialLaw::linear(1.0)).with_sigma(-1.0));
        assert!(neg.certify(1000, 0).is_err());
    }
}
