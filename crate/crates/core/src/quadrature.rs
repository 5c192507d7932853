//! Symmetric triangle quadrature (Dunavant family) and Gauss–Legendre rules
//! on the unit interval.
//!
//! Every shipped triangle rule has strictly positive weights. Rules are
//! checked against the exact monomial integrals
//! `∫_T̂ x^p y^q = p! q! / (p + q + 2)!` the first time they are requested.

use std::sync::OnceLock;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("no triangle rule of degree {0} (supported: 1..=6)")]
    UnsupportedDegree(usize),
    #[error("degenerate triangle (area {0:e})")]
    DegenerateTriangle(f64),
    #[error("rule of degree {degree} failed its exactness check on x^{p} y^{q} (error {error:e})")]
    ExactnessViolated {
        degree: usize,
        p: u32,
        q: u32,
        error: f64,
    },
}

/// Quadrature rule on the reference triangle `(0,0), (1,0), (0,1)`.
///
/// Points are barycentric `(λ0, λ1, λ2)`, i.e. `x = λ1`, `y = λ2`. Weights
/// sum to one; multiply by the element area at use sites.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Reference-triangle `(x, y)` coordinates of point `i`.
    pub fn ref_point(&self, i: usize) -> [f64; 2] {
        [self.points[i][1], self.points[i][2]]
    }

    /// Integral of `f` over the reference triangle.
    pub fn integrate_reference(&self, f: impl Fn([f64; 2]) -> f64) -> f64 {
        0.5 * (0..self.len())
            .map(|i| self.weights[i] * f(self.ref_point(i)))
            .sum::<f64>()
    }

    /// Largest relative monomial error over all `x^p y^q`, `p + q <= degree`.
    pub fn exactness_error(&self, degree: usize) -> (f64, u32, u32) {
        let mut worst = (0.0, 0, 0);
        for total in 0..=degree as u32 {
            for p in 0..=total {
                let q = total - p;
                let exact = monomial_integral(p, q);
                let approx = self.integrate_reference(|x| x[0].powi(p as i32) * x[1].powi(q as i32));
                let err = ((approx - exact) / exact).abs();
                if err > worst.0 {
                    worst = (err, p, q);
                }
            }
        }
        worst
    }

    fn validate(&self) -> Result<(), QuadratureError> {
        let (error, p, q) = self.exactness_error(self.degree);
        let wsum: f64 = self.weights.iter().sum();
        let positive = self.weights.iter().all(|&w| w > 0.0);
        if error > 1e-13 || (wsum - 1.0).abs() > 1e-14 || !positive {
            return Err(QuadratureError::ExactnessViolated {
                degree: self.degree,
                p,
                q,
                error,
            });
        }
        Ok(())
    }
}

/// `∫_T̂ x^p y^q dx dy = p! q! / (p + q + 2)!` on the reference triangle.
pub fn monomial_integral(p: u32, q: u32) -> f64 {
    let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
    fact(p) * fact(q) / fact(p + q + 2)
}

fn push_centroid(r: &mut QuadRule, w: f64) {
    r.points.push([1.0 / 3.0; 3]);
    r.weights.push(w);
}

fn push_s21(r: &mut QuadRule, a: f64, w: f64) {
    let c = 1.0 - 2.0 * a;
    for p in [[c, a, a], [a, c, a], [a, a, c]] {
        r.points.push(p);
        r.weights.push(w);
    }
}

fn push_s111(r: &mut QuadRule, a: f64, b: f64, w: f64) {
    let c = 1.0 - a - b;
    for p in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
        r.points.push(p);
        r.weights.push(w);
    }
}

fn empty(degree: usize) -> QuadRule {
    QuadRule {
        points: Vec::new(),
        weights: Vec::new(),
        degree,
    }
}

fn build_rule(degree: usize) -> QuadRule {
    let mut r = empty(degree);
    match degree {
        1 => push_centroid(&mut r, 1.0),
        2 => push_s21(&mut r, 1.0 / 6.0, 1.0 / 3.0),
        // The 4-point degree-3 rule has a negative weight, so degree 3 uses
        // the 6-point degree-4 rule.
        3 | 4 => {
            r.degree = 4;
            push_s21(&mut r, 0.445_948_490_915_964_886_318_33, 0.223_381_589_678_011_465_695_01);
            push_s21(&mut r, 0.091_576_213_509_770_743_459_571, 0.109_951_743_655_321_867_638_33);
        }
        5 => {
            let s15 = 15f64.sqrt();
            push_centroid(&mut r, 9.0 / 40.0);
            push_s21(&mut r, (6.0 - s15) / 21.0, (155.0 - s15) / 1200.0);
            push_s21(&mut r, (6.0 + s15) / 21.0, (155.0 + s15) / 1200.0);
        }
        6 => {
            push_s21(&mut r, 0.249_286_745_170_910_661_628_53, 0.116_786_275_726_378_971_511_01);
            push_s21(&mut r, 0.063_089_014_491_502_174_584_595, 0.050_844_906_370_206_739_973_340);
            push_s111(
                &mut r,
                0.053_145_049_844_817_111_371_758,
                0.310_352_451_033_784_211_145_24,
                0.082_851_075_618_373_810_924_493,
            );
        }
        _ => unreachable!(),
    }
    r
}

static RULES: OnceLock<Vec<Result<QuadRule, QuadratureError>>> = OnceLock::new();

/// The smallest shipped positive-weight rule exact for degree `d`.
///
/// `d = 2` gives the 3-point rule, `d = 4` the 6-point rule.
pub fn rule_for_degree(d: usize) -> Result<&'static QuadRule, QuadratureError> {
    if !(1..=6).contains(&d) {
        return Err(QuadratureError::UnsupportedDegree(d));
    }
    let rules = RULES.get_or_init(|| {
        (1..=6)
            .map(|d| {
                let r = build_rule(d);
                r.validate().map(|_| r)
            })
            .collect()
    });
    rules[d - 1].as_ref().map_err(Clone::clone)
}

/// `Σ w_i |T| f(x_i)` over the triangle with the given vertices.
pub fn integrate_on_element(
    f: impl Fn([f64; 2]) -> f64,
    vertices: [[f64; 2]; 3],
    rule: &QuadRule,
) -> Result<f64, QuadratureError> {
    let [a, b, c] = vertices;
    let area = 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]));
    let scale = [a, b, c]
        .iter()
        .map(|p| p[0].abs().max(p[1].abs()))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    if area.abs() <= 1e-14 * scale * scale {
        return Err(QuadratureError::DegenerateTriangle(area));
    }
    let mut sum = 0.0;
    for (p, w) in rule.points.iter().zip(&rule.weights) {
        let x = [
            p[0] * a[0] + p[1] * b[0] + p[2] * c[0],
            p[0] * a[1] + p[1] * b[1] + p[2] * c[1],
        ];
        sum += w * f(x);
    }
    Ok(sum * area.abs())
}

/// Gauss–Legendre rule on `[0, 1]` with `n` points (`1..=4`), exact for
/// polynomials of degree `2n - 1`. Weights sum to one.
pub fn gauss_legendre(n: usize) -> (&'static [f64], &'static [f64]) {
    const P1: [f64; 1] = [0.5];
    const W1: [f64; 1] = [1.0];
    const P2: [f64; 2] = [0.211_324_865_405_187_117_745_43, 0.788_675_134_594_812_882_254_57];
    const W2: [f64; 2] = [0.5, 0.5];
    const P3: [f64; 3] = [0.112_701_665_379_258_311_482_07, 0.5, 0.887_298_334_620_741_688_517_93];
    const W3: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];
    const P4: [f64; 4] = [
        0.069_431_844_202_973_712_388_027,
        0.330_009_478_207_571_867_598_67,
        0.669_990_521_792_428_132_401_33,
        0.930_568_155_797_026_287_611_97,
    ];
    const W4: [f64; 4] = [
        0.173_927_422_568_726_928_686_53,
        0.326_072_577_431_273_071_313_47,
        0.326_072_577_431_273_071_313_47,
        0.173_927_422_568_726_928_686_53,
    ];
    match n {
        1 => (&P1, &W1),
        2 => (&P2, &W2),
        3 => (&P3, &W3),
        4 => (&P4, &W4),
        _ => panic!("gauss_legendre supports 1..=4 points, got {n}"),
    }
}
