#![allow(dead_code)]

use magfem::mesh::Mesh;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Unit square mesh with interior nodes moved by up to `jitter / n`.
pub fn jittered_square(n: usize, jitter: f64, seed: u64) -> Mesh {
    let base = Mesh::unit_square(n, |c| u32::from(c[0] + 0.3 * c[1] < 0.6));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boundary = base.boundary_nodes();
    let nodes = base
        .nodes()
        .iter()
        .zip(&boundary)
        .map(|(p, &b)| {
            if b {
                *p
            } else {
                let d = jitter / n as f64;
                [p[0] + d * rng.random_range(-1.0..1.0), p[1] + d * rng.random_range(-1.0..1.0)]
            }
        })
        .collect();
    Mesh::new(nodes, base.triangles().to_vec(), base.region_tags().to_vec()).unwrap()
}

pub fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
