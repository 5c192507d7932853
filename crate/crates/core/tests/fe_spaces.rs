mod common;

use common::{jittered_square, random_vec};
use magfem::fe_spaces::{
    eval_nedelec, eval_scalar, interpolate_nedelec, map_covariant, DofMap, ElementGeometry, Family,
    FunctionValue, ReferenceElement, Space, REF_VERTICES,
};
use magfem::mesh::LOCAL_EDGES;
use magfem::quadrature::{gauss_legendre, rule_for_degree};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn families() -> Vec<(Family, usize)> {
    vec![
        (Family::Nedelec, 0),
        (Family::Nedelec, 1),
        (Family::Lagrange, 1),
        (Family::Lagrange, 2),
        (Family::DiscontinuousP, 0),
        (Family::DiscontinuousP, 1),
    ]
}

#[test]
fn reference_elements_are_unisolvent() {
    for (family, k) in families() {
        let r = ReferenceElement::new(family, k).unwrap();
        for j in 0..r.ndofs() {
            let basis = |p: [f64; 2]| match family {
                Family::Nedelec => FunctionValue::Vector(r.nedelec(p).0[j]),
                _ => FunctionValue::Scalar(r.scalar(p).0[j]),
            };
            for i in 0..r.ndofs() {
                let v = r.apply_functional(i, &basis);
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((v - expected).abs() < 1e-12, "{family:?}{k}: dof {i} of basis {j} = {v}");
            }
        }
    }
}

#[test]
fn random_conforming_fields_have_continuous_tangential_traces() {
    for k in 0..=1 {
        let mesh = jittered_square(5, 0.25, 11 + k as u64);
        let dm = DofMap::new(Space::Nedelec(k), &mesh).unwrap();
        let reference = ReferenceElement::new(Family::Nedelec, k).unwrap();
        let coeffs = random_vec(dm.n_dofs, 3);
        let mut worst: f64 = 0.0;
        for edge in mesh.edges() {
            let [Some(t1), Some(t2)] = edge.triangles else { continue };
            let [p, q] = edge.nodes.map(|i| mesh.nodes()[i]);
            let d = [q[0] - p[0], q[1] - p[1]];
            for s in [0.1, 0.37, 0.5, 0.81] {
                let x = [p[0] + s * d[0], p[1] + s * d[1]];
                let trace = |t: usize| {
                    let (v, _) = eval_nedelec(&mesh, &dm, &reference, &coeffs, t, mesh.to_reference(t, x));
                    v[0] * d[0] + v[1] * d[1]
                };
                worst = worst.max((trace(t1) - trace(t2)).abs());
            }
        }
        assert!(worst <= 1e-11, "k = {k}: tangential jump {worst:e}");
    }
}

#[test]
fn gradients_of_lagrange_fields_lie_in_nedelec_spaces() {
    // grad P_{k+1} ⊂ 𝒩_k, so interpolation reproduces it and its curl vanishes.
    for k in 0..=1 {
        let mesh = jittered_square(4, 0.2, 5);
        let lag = DofMap::new(Space::Lagrange(k + 1), &mesh).unwrap();
        let lref = ReferenceElement::new(Family::Lagrange, k + 1).unwrap();
        let ned = DofMap::new(Space::Nedelec(k), &mesh).unwrap();
        let nref = ReferenceElement::new(Family::Nedelec, k).unwrap();
        let phi = random_vec(lag.n_dofs, 8);
        let grad = |t: usize, x: [f64; 2]| eval_scalar(&mesh, &lag, &lref, &phi, t, mesh.to_reference(t, x)).1;
        let h = interpolate_nedelec(&mesh, &ned, grad);
        for t in 0..mesh.n_triangles() {
            for p in [[0.2, 0.3], [0.6, 0.1], [0.1, 0.1]] {
                let (v, c) = eval_nedelec(&mesh, &ned, &nref, &h, t, p);
                let g = eval_scalar(&mesh, &lag, &lref, &phi, t, p).1;
                let scale = 1.0 + g[0].abs() + g[1].abs();
                assert!((v[0] - g[0]).abs() < 1e-10 * scale && (v[1] - g[1]).abs() < 1e-10 * scale);
                assert!(c.abs() < 1e-9 * scale, "curl of a gradient = {c:e}");
            }
        }
    }
}

#[test]
fn reference_curls_span_the_pressure_space() {
    for k in 0..=1 {
        let r = ReferenceElement::new(Family::Nedelec, k).unwrap();
        let pts = [[0.2, 0.2], [0.6, 0.2], [0.2, 0.6], [0.1, 0.3]];
        let rows: Vec<Vec<f64>> = pts.iter().map(|&p| r.nedelec(p).1).collect();
        let m = DMatrix::from_fn(pts.len(), r.ndofs(), |i, j| rows[i][j]);
        let rank = m.svd(false, false).singular_values.iter().filter(|s| **s > 1e-10).count();
        assert_eq!(rank, if k == 0 { 1 } else { 3 }, "k = {k}");
    }
}

fn triangle_strategy() -> impl Strategy<Value = [[f64; 2]; 3]> {
    prop::array::uniform3(prop::array::uniform2(-2.0..2.0f64)).prop_filter("non-degenerate", |v| {
        let det = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[1][1] - v[0][1]) * (v[2][0] - v[0][0]);
        det.abs() > 0.05
    })
}

proptest! {
    #[test]
    fn covariant_map_preserves_tangential_edge_moments(verts in triangle_strategy(), k in 0usize..=1) {
        let geo = ElementGeometry::new(verts).unwrap();
        let r = ReferenceElement::new(Family::Nedelec, k).unwrap();
        let (pts, wts) = gauss_legendre(4);
        for (e, [a, b]) in LOCAL_EDGES.iter().enumerate() {
            let (xa, xb) = (verts[*a], verts[*b]);
            let d = [xb[0] - xa[0], xb[1] - xa[1]];
            let (ra, rb) = (REF_VERTICES[*a], REF_VERTICES[*b]);
            let dr = [rb[0] - ra[0], rb[1] - ra[1]];
            for m in 0..=k {
                let mut phys = vec![0.0; r.ndofs()];
                let mut refm = vec![0.0; r.ndofs()];
                for (s, w) in pts.iter().zip(wts) {
                    let p = [ra[0] + s * dr[0], ra[1] + s * dr[1]];
                    let (vals, curls) = r.nedelec(p);
                    let (mapped, _) = map_covariant(&vals, &curls, geo.jacobian).unwrap();
                    let lm = if m == 0 { 1.0 } else { 2.0 * s - 1.0 };
                    for i in 0..r.ndofs() {
                        phys[i] += w * lm * (mapped[i][0] * d[0] + mapped[i][1] * d[1]);
                        refm[i] += w * lm * (vals[i][0] * dr[0] + vals[i][1] * dr[1]);
                    }
                }
                for i in 0..r.ndofs() {
                    prop_assert!((phys[i] - refm[i]).abs() < 1e-12, "edge {e} m {m} basis {i}");
                    let expected = if i == e * (k + 1) + m { 1.0 } else { 0.0 };
                    prop_assert!((refm[i] - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn mapped_curl_satisfies_stokes(verts in triangle_strategy(), k in 0usize..=1) {
        // ∫_T curl v = ∮_∂T v · t on the physical triangle, either orientation.
        let geo = ElementGeometry::new(verts).unwrap();
        let r = ReferenceElement::new(Family::Nedelec, k).unwrap();
        let rule = rule_for_degree(4).unwrap();
        let (pts, wts) = gauss_legendre(4);
        let area = geo.area();
        for i in 0..r.ndofs() {
            let mut lhs = 0.0;
            for (q, w) in rule.points.iter().zip(&rule.weights) {
                let (vals, curls) = r.nedelec([q[1], q[2]]);
                let (_, c) = map_covariant(&vals, &curls, geo.jacobian).unwrap();
                lhs += w * area * c[i];
            }
            let mut rhs = 0.0;
            let orient = geo.det.signum();
            for (a, b) in [(0, 1), (1, 2), (2, 0)] {
                let (xa, xb) = (verts[a], verts[b]);
                let d = [xb[0] - xa[0], xb[1] - xa[1]];
                let (ra, rb) = (REF_VERTICES[a], REF_VERTICES[b]);
                for (s, w) in pts.iter().zip(wts) {
                    let p = [ra[0] + s * (rb[0] - ra[0]), ra[1] + s * (rb[1] - ra[1])];
                    let (vals, curls) = r.nedelec(p);
                    let (v, _) = map_covariant(&vals, &curls, geo.jacobian).unwrap();
                    rhs += orient * w * (v[i][0] * d[0] + v[i][1] * d[1]);
                }
            }
            prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()), "basis {i}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn lagrange_gradients_map_with_inverse_transpose(verts in triangle_strategy(), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        // The nodal interpolant of the linear u = a x + b y has gradient (a, b).
        let geo = ElementGeometry::new(verts).unwrap();
        let r = ReferenceElement::new(Family::Lagrange, 1).unwrap();
        let (_, grads) = r.scalar([0.3, 0.3]);
        let mut g = [0.0; 2];
        for (v, gr) in verts.iter().zip(&grads) {
            let u = a * v[0] + b * v[1];
            let mapped = geo.covariant(*gr);
            g[0] += u * mapped[0];
            g[1] += u * mapped[1];
        }
        prop_assert!((g[0] - a).abs() < 1e-10 && (g[1] - b).abs() < 1e-10);
    }
}
