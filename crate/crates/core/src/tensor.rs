//! Small dense 3×3 helpers, generic over [`Scalar`].

use crate::dual::Scalar;

pub type Mat3<T> = [[T; 3]; 3];

pub fn identity<T: Scalar>() -> Mat3<T> {
    let mut m = [[T::zero(); 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = T::cst(1.0);
    }
    m
}

pub fn lift<T: Scalar>(m: &Mat3<f64>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = T::cst(m[i][j]);
        }
    }
    out
}

pub fn values<T: Scalar>(m: &Mat3<T>) -> Mat3<f64> {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[i][j].re();
        }
    }
    out
}

pub fn det<T: Scalar>(m: &Mat3<T>) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Inverse via the adjugate; the caller guarantees `det != 0`.
pub fn inverse_with_det<T: Scalar>(m: &Mat3<T>, d: T) -> Mat3<T> {
    let inv_d = T::cst(1.0) / d;
    [
        [
            (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_d,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_d,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_d,
        ],
        [
            (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_d,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_d,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_d,
        ],
        [
            (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_d,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_d,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_d,
        ],
    ]
}

pub fn transpose<T: Scalar>(m: &Mat3<T>) -> Mat3<T> {
    let mut out = *m;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

pub fn matmul<T: Scalar>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut s = a[i][0] * b[0][j];
            s += a[i][1] * b[1][j];
            s += a[i][2] * b[2][j];
            out[i][j] = s;
        }
    }
    out
}

/// `aᵀ b`
pub fn tmatmul<T: Scalar>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut s = a[0][i] * b[0][j];
            s += a[1][i] * b[1][j];
            s += a[2][i] * b[2][j];
            out[i][j] = s;
        }
    }
    out
}

pub fn trace<T: Scalar>(m: &Mat3<T>) -> T {
    m[0][0] + m[1][1] + m[2][2]
}

/// Double contraction `a : b`.
pub fn ddot<T: Scalar>(a: &Mat3<T>, b: &Mat3<T>) -> T {
    let mut s = T::zero();
    for i in 0..3 {
        for j in 0..3 {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

pub fn scale<T: Scalar>(m: &Mat3<T>, s: T) -> Mat3<T> {
    let mut out = *m;
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v = *v * s;
        }
    }
    out
}

pub fn norm(m: &Mat3<f64>) -> f64 {
    ddot(m, m).sqrt()
}

pub fn mat_vec(m: &Mat3<f64>, v: &[f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2];
    }
    out
}

pub fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}
