//! SU(2) rotors acting on the polarization vector of a two-level system.
//!
//! A [`Rotor`] is stored as a unit quaternion `(w, x, y, z)` and stands for the
//! 2×2 unitary `U = w·1 − i(x σx + y σy + z σz)`, i.e. `U = exp(−i φ n·σ / 2)`
//! for `Rotor::from_axis_angle(n, φ)`. Its adjoint action `ρ → UρU†` on the
//! density operator `ρ = (1 + u·σ)/2` is an active right-handed rotation of the
//! polarization vector `u` by `φ` about `n`.

use std::f64::consts::TAU;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Compositions between renormalizations in [`RotorChain`].
pub const RENORMALIZE_EVERY: usize = 1024;

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Unit quaternion representation of an SU(2) element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotor {
    w: f64,
    v: Vec3,
}

impl Default for Rotor {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotor {
    pub const fn identity() -> Self {
        Self {
            w: 1.0,
            v: [0.0, 0.0, 0.0],
        }
    }

    /// Rotation by `angle` about `axis`. The axis is normalized; a zero axis
    /// yields the identity.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = norm(axis);
        if n == 0.0 {
            return Self::identity();
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let k = s / n;
        Self {
            w: c,
            v: [axis[0] * k, axis[1] * k, axis[2] * k],
        }
    }

    /// Exponential map: rotation by `|r|` about `r / |r|`.
    pub fn from_rotation_vector(r: Vec3) -> Self {
        let angle = norm(r);
        if angle == 0.0 {
            return Self::identity();
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let k = s / angle;
        Self {
            w: c,
            v: [r[0] * k, r[1] * k, r[2] * k],
        }
    }

    pub fn rx(angle: f64) -> Self {
        Self::from_axis_angle([1.0, 0.0, 0.0], angle)
    }

    pub fn ry(angle: f64) -> Self {
        Self::from_axis_angle([0.0, 1.0, 0.0], angle)
    }

    pub fn rz(angle: f64) -> Self {
        Self::from_axis_angle([0.0, 0.0, 1.0], angle)
    }

    /// Builds a rotor from raw quaternion components, normalizing them.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "quaternion ({w}, {x}, {y}, {z}) cannot be normalized"
            )));
        }
        Ok(Self {
            w: w / n,
            v: [x / n, y / n, z / n],
        })
    }

    /// Quaternion components `[w, x, y, z]`.
    pub fn quaternion(&self) -> [f64; 4] {
        [self.w, self.v[0], self.v[1], self.v[2]]
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + dot(self.v, self.v)).sqrt()
    }

    pub fn renormalized(self) -> Self {
        let n = self.norm();
        Self {
            w: self.w / n,
            v: scale(self.v, 1.0 / n),
        }
    }

    /// Canonical `(axis, angle)` with `angle ∈ [0, 2π)`. The sign of the
    /// quaternion is fixed so that `w ≥ 0`, which puts the angle in `[0, π]`.
    /// The identity reports the `z` axis.
    pub fn axis_angle(&self) -> (Vec3, f64) {
        let (w, v) = if self.w < 0.0 {
            (-self.w, scale(self.v, -1.0))
        } else {
            (self.w, self.v)
        };
        let s = norm(v);
        if s == 0.0 {
            return ([0.0, 0.0, 1.0], 0.0);
        }
        let angle = (2.0 * s.atan2(w)).rem_euclid(TAU);
        (scale(v, 1.0 / s), angle)
    }

    /// Hamilton product without renormalization: apply `b`, then `self`.
    #[inline]
    pub fn mul_raw(self, b: Rotor) -> Rotor {
        let a = self;
        let c = cross(a.v, b.v);
        Rotor {
            w: a.w * b.w - dot(a.v, b.v),
            v: [
                a.w * b.v[0] + b.w * a.v[0] + c[0],
                a.w * b.v[1] + b.w * a.v[1] + c[1],
                a.w * b.v[2] + b.w * a.v[2] + c[2],
            ],
        }
    }

    pub fn inverse(self) -> Rotor {
        Rotor {
            w: self.w,
            v: scale(self.v, -1.0),
        }
    }

    /// Adjoint action on a 3-vector.
    #[inline]
    pub fn rotate(&self, u: Vec3) -> Vec3 {
        let t = scale(cross(self.v, u), 2.0);
        let c = cross(self.v, t);
        [
            u[0] + self.w * t[0] + c[0],
            u[1] + self.w * t[1] + c[1],
            u[2] + self.w * t[2] + c[2],
        ]
    }

    /// Conjugation `frame · self · frame⁻¹`: the same rotation expressed in
    /// coordinates rotated by `frame`.
    #[inline]
    pub fn conjugated_by(self, frame: Rotor) -> Rotor {
        Rotor {
            w: self.w,
            v: frame.rotate(self.v),
        }
    }

    /// True when both rotors have the same action on every polarization
    /// vector, i.e. the quaternions agree up to overall sign.
    pub fn same_action(&self, other: &Rotor, tol: f64) -> bool {
        let q = self.quaternion();
        let p = other.quaternion();
        let plus = q.iter().zip(p).all(|(a, b)| (a - b).abs() <= tol);
        let minus = q.iter().zip(p).all(|(a, b)| (a + b).abs() <= tol);
        plus || minus
    }
}

impl fmt::Display for Rotor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (n, phi) = self.axis_angle();
        write!(f, "R([{:.6}, {:.6}, {:.6}], {:.6})", n[0], n[1], n[2], phi)
    }
}

/// `a ∘ b`: apply `b`, then `a`. The result is renormalized.
pub fn compose(a: Rotor, b: Rotor) -> Rotor {
    a.mul_raw(b).renormalized()
}

pub fn inverse(r: Rotor) -> Rotor {
    r.inverse()
}

pub fn apply(r: Rotor, u: Polarization) -> Polarization {
    Polarization(r.rotate(u.0))
}

/// Accumulates a long product of rotors, renormalizing every
/// [`RENORMALIZE_EVERY`] factors.
#[derive(Clone, Copy, Debug, Default)]
pub struct RotorChain {
    total: Rotor,
    since_renorm: usize,
}

impl RotorChain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(r: Rotor) -> Self {
        Self {
            total: r,
            since_renorm: 0,
        }
    }

    /// Applies `r` after everything accumulated so far.
    #[inline]
    pub fn push_after(&mut self, r: Rotor) {
        self.total = r.mul_raw(self.total);
        self.bump();
    }

    /// Applies `r` before everything accumulated so far (body-frame update).
    #[inline]
    pub fn push_before(&mut self, r: Rotor) {
        self.total = self.total.mul_raw(r);
        self.bump();
    }

    #[inline]
    fn bump(&mut self) {
        self.since_renorm += 1;
        if self.since_renorm >= RENORMALIZE_EVERY {
            self.total = self.total.renormalized();
            self.since_renorm = 0;
        }
    }

    pub fn rotor(&self) -> Rotor {
        self.total
    }

    pub fn finish(self) -> Rotor {
        self.total.renormalized()
    }
}

/// Polarization vector `u = Tr[ρσ]` of the doublet.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec3", into = "Vec3")]
pub struct Polarization(Vec3);

impl Polarization {
    pub const NORM_SLACK: f64 = 1e-12;

    pub fn new(u: Vec3) -> Result<Self> {
        let n = norm(u);
        if !n.is_finite() || n > 1.0 + Self::NORM_SLACK {
            return Err(Error::InvalidArgument(format!(
                "polarization |u| = {n} exceeds 1"
            )));
        }
        Ok(Self(u))
    }

    pub const fn z_up() -> Self {
        Self([0.0, 0.0, 1.0])
    }

    pub fn vector(&self) -> Vec3 {
        self.0
    }

    pub fn z(&self) -> f64 {
        self.0[2]
    }

    pub fn length(&self) -> f64 {
        norm(self.0)
    }
}

impl Default for Polarization {
    fn default() -> Self {
        Self::z_up()
    }
}

impl TryFrom<Vec3> for Polarization {
    type Error = Error;

    fn try_from(u: Vec3) -> Result<Self> {
        Self::new(u)
    }
}

impl From<Polarization> for Vec3 {
    fn from(p: Polarization) -> Vec3 {
        p.0
    }
}
