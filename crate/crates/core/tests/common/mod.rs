#![allow(dead_code)]

use elastodyn::assembly::StageState;
use elastodyn::mesh::{tet_geometry, Mesh};
use elastodyn::timeint::State;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Gaussian elimination with partial pivoting.
pub fn lu_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        assert!(a[piv][k] != 0.0, "singular matrix");
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            if f != 0.0 {
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

pub fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, m, k) = (a.len(), b[0].len(), b.len());
    (0..n).map(|i| (0..m).map(|j| (0..k).map(|l| a[i][l] * b[l][j]).sum()).collect()).collect()
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn diff_norm(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

pub fn max_abs(m: &[Vec<f64>]) -> f64 {
    m.iter().flatten().fold(0.0, |a: f64, v| a.max(v.abs()))
}

pub fn random_vec(r: &mut StdRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * r.gen_range(-1.0..1.0)).collect()
}

/// A single, slightly irregular tetrahedron with no boundary facets.
pub fn single_tet_mesh() -> Mesh {
    let nodes = vec![[0.0, 0.0, 0.0], [0.1, 0.01, 0.0], [0.02, 0.09, 0.01], [0.01, 0.02, 0.11]];
    let tets = vec![[0, 1, 2, 3]];
    let x = [nodes[0], nodes[1], nodes[2], nodes[3]];
    assert!(tet_geometry(&x).volume > 0.0);
    let mut h: f64 = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            let d: f64 = (0..3).map(|k| (x[i][k] - x[j][k]).powi(2)).sum::<f64>().sqrt();
            h = h.max(d);
        }
    }
    Mesh { nodes, tets, boundary_facets: Vec::new(), element_diameters: vec![h] }
}

/// Random state with displacement amplitude `u_amp` and pressure amplitude
/// `p_amp`; rates are of unit-like size in the matching units.
pub fn random_state(r: &mut StdRng, nn: usize, u_amp: f64, p_amp: f64) -> State {
    State {
        u: random_vec(r, 3 * nn, u_amp),
        p: random_vec(r, nn, p_amp),
        v: random_vec(r, 3 * nn, 1.0),
        udot: random_vec(r, 3 * nn, 1.0),
        pdot: random_vec(r, nn, p_amp),
        vdot: random_vec(r, 3 * nn, 10.0),
    }
}

pub fn random_stage(r: &mut StdRng, nn: usize, u_amp: f64, p_amp: f64) -> StageState {
    let y = random_state(r, nn, u_amp, p_amp);
    StageState { u: y.u, p: y.p, v: y.v, pdot: y.pdot, vdot: y.vdot }
}
