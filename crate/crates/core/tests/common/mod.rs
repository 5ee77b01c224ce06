//! Independent SU(2) oracle on explicit 2×2 complex matrices.
#![allow(dead_code)]

use num_complex::Complex64 as C;

use geodephase::su2::{Rotor, Vec3};

pub type Mat2 = [[C; 2]; 2];

pub fn eye() -> Mat2 {
    [[C::new(1.0, 0.0), C::new(0.0, 0.0)], [C::new(0.0, 0.0), C::new(1.0, 0.0)]]
}

pub fn mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[C::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn dagger(a: &Mat2) -> Mat2 {
    [[a[0][0].conj(), a[1][0].conj()], [a[0][1].conj(), a[1][1].conj()]]
}

/// `v·σ` with the Pauli matrices.
pub fn sigma_dot(v: Vec3) -> Mat2 {
    [
        [C::new(v[2], 0.0), C::new(v[0], -v[1])],
        [C::new(v[0], v[1]), C::new(-v[2], 0.0)],
    ]
}

/// `exp(−i·r·σ/2)` summed as a Taylor series until terms vanish.
pub fn expm_rotation(r: Vec3) -> Mat2 {
    let h = sigma_dot(r);
    let mi = C::new(0.0, -0.5);
    let a = [[h[0][0] * mi, h[0][1] * mi], [h[1][0] * mi, h[1][1] * mi]];
    let mut sum = eye();
    let mut term = eye();
    for k in 1..60 {
        term = mul(&term, &a);
        let inv = 1.0 / k as f64;
        for row in term.iter_mut() {
            for x in row.iter_mut() {
                *x *= inv;
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                sum[i][j] += term[i][j];
            }
        }
        if term.iter().flatten().all(|x| x.norm() < 1e-20) {
            break;
        }
    }
    sum
}

/// Matrix of a rotor written as `w·1 − i·v·σ`.
pub fn rotor_matrix(r: &Rotor) -> Mat2 {
    let [w, x, y, z] = r.quaternion();
    let s = sigma_dot([x, y, z]);
    let mut m = eye();
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] = m[i][j] * w - C::new(0.0, 1.0) * s[i][j];
        }
    }
    m
}

/// Largest entry difference, minimized over the global sign.
pub fn distance_up_to_sign(a: &Mat2, b: &Mat2) -> f64 {
    let d = |s: f64| {
        (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| (a[i][j] - b[i][j] * s).norm())
            .fold(0.0, f64::max)
    };
    d(1.0).min(d(-1.0))
}

/// Polarization after `U`: components of `U (u·σ) U†`.
pub fn act(u_mat: &Mat2, u: Vec3) -> Vec3 {
    let rho = mul(&mul(u_mat, &sigma_dot(u)), &dagger(u_mat));
    [rho[1][0].re, rho[1][0].im, rho[0][0].re]
}
