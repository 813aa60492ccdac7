//! Quaternion director kinematics.
//!
//! A rod element carries a quaternion `q = (q1, q2, q3, q4)` with `q4` the
//! real part. The material directors `d1, d2, d3` are read off the rotation
//! encoded by `q`; `d3` is the element axis. Strain rates and angular
//! velocities follow from the six constant skew matrices `B_k` (material
//! frame) and `B_k^0` (reference frame).

use crate::error::{Error, Result};
use crate::scalar::{Real, Vec3, Vec4};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion<T: Real> {
    pub coords: Vec4<T>,
}

impl<T: Real> Quaternion<T> {
    pub fn new(q1: T, q2: T, q3: T, q4: T) -> Self {
        Self {
            coords: Vec4::new(q1, q2, q3, q4),
        }
    }

    pub fn identity() -> Self {
        Self::new(T::zero(), T::zero(), T::zero(), T::one())
    }

    pub fn from_coords(coords: Vec4<T>) -> Self {
        Self { coords }
    }

    /// Rotation by `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let n = axis.dot(&axis).sqrt();
        let half = angle / T::lit(2.0);
        let s = half.sin() / n;
        Self::new(axis.x * s, axis.y * s, axis.z * s, half.cos())
    }

    pub fn q1(&self) -> T {
        self.coords[0]
    }
    pub fn q2(&self) -> T {
        self.coords[1]
    }
    pub fn q3(&self) -> T {
        self.coords[2]
    }
    pub fn q4(&self) -> T {
        self.coords[3]
    }

    pub fn norm_squared(&self) -> T {
        self.coords.dot(&self.coords)
    }

    pub fn norm(&self) -> T {
        self.norm_squared().sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if !(n > T::zero()) || !n.is_finite() {
            return Err(Error::Domain(format!("quaternion norm {n} is not positive")));
        }
        Ok(Self::from_coords(self.coords / n))
    }

    /// Hamilton product `self ⊗ rhs` in scalar-last layout.
    pub fn mul(&self, rhs: &Self) -> Self {
        let (av, aw) = (self.vector(), self.q4());
        let (bv, bw) = (rhs.vector(), rhs.q4());
        let v = bv * aw + av * bw + av.cross(&bv);
        Self::new(v.x, v.y, v.z, aw * bw - av.dot(&bv))
    }

    fn vector(&self) -> Vec3<T> {
        Vec3::new(self.q1(), self.q2(), self.q3())
    }
}

/// Right-handed orthonormal triad attached to a rod element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectorFrame<T: Real> {
    pub d1: Vec3<T>,
    pub d2: Vec3<T>,
    pub d3: Vec3<T>,
}

/// Strain rates `u` (1/length), body angular velocity `omega` and reference
/// angular velocity `omega0` (1/time).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialRates<T: Real> {
    pub u: Vec3<T>,
    pub omega: Vec3<T>,
    pub omega0: Vec3<T>,
}

fn checked_norm_squared<T: Real>(q: &Quaternion<T>) -> Result<T> {
    let s = q.norm_squared();
    if !(s > T::zero()) || !s.is_finite() {
        return Err(Error::Domain(format!(
            "quaternion {:?} has zero or non-finite norm",
            q.coords.as_slice()
        )));
    }
    Ok(s)
}

/// Unnormalized director components; each is a quadratic form in `q`.
fn raw_directors<T: Real>(q: &Quaternion<T>) -> [Vec3<T>; 3] {
    let (q1, q2, q3, q4) = (q.q1(), q.q2(), q.q3(), q.q4());
    let two = T::lit(2.0);
    [
        Vec3::new(
            q1 * q1 - q2 * q2 - q3 * q3 + q4 * q4,
            two * (q1 * q2 + q3 * q4),
            two * (q1 * q3 - q2 * q4),
        ),
        Vec3::new(
            two * (q1 * q2 - q3 * q4),
            -q1 * q1 + q2 * q2 - q3 * q3 + q4 * q4,
            two * (q2 * q3 + q1 * q4),
        ),
        Vec3::new(
            two * (q1 * q3 + q2 * q4),
            two * (q2 * q3 - q1 * q4),
            -q1 * q1 - q2 * q2 + q3 * q3 + q4 * q4,
        ),
    ]
}

/// Directors of `q`, divided by `‖q‖²` so that a slightly drifted quaternion
/// still yields an orthonormal frame.
pub fn directors_from_quaternion<T: Real>(q: &Quaternion<T>) -> Result<DirectorFrame<T>> {
    let s = checked_norm_squared(q)?;
    let [d1, d2, d3] = raw_directors(q);
    Ok(DirectorFrame {
        d1: d1 / s,
        d2: d2 / s,
        d3: d3 / s,
    })
}

/// Unchecked normalized director `k` (0-based) for hot loops where the norm
/// has already been validated.
#[inline]
pub(crate) fn director<T: Real>(q: &Quaternion<T>, k: usize) -> Vec3<T> {
    raw_directors(q)[k] / q.norm_squared()
}

/// `(∂d3/∂q)ᵀ w` for the normalized third director.
pub(crate) fn d3_pullback<T: Real>(q: &Quaternion<T>, w: &Vec3<T>) -> Vec4<T> {
    let (q1, q2, q3, q4) = (q.q1(), q.q2(), q.q3(), q.q4());
    let two = T::lit(2.0);
    let s = q.norm_squared();
    // Rows of ∂D3/∂q.
    let jx = Vec4::new(q3, q4, q1, q2) * two;
    let jy = Vec4::new(-q4, q3, q2, -q1) * two;
    let jz = Vec4::new(-q1, -q2, q3, q4) * two;
    let raw = raw_directors(q)[2];
    let direct = (jx * w.x + jy * w.y + jz * w.z) / s;
    let radial = q.coords * (two * raw.dot(w) / (s * s));
    direct - radial
}

/// `(∂d_k/∂q)ᵀ w` for normalized director `k` (0-based). The raw director
/// is a quadratic form, so its partials follow exactly from polarization.
pub(crate) fn director_pullback<T: Real>(q: &Quaternion<T>, k: usize, w: &Vec3<T>) -> Vec4<T> {
    let two = T::lit(2.0);
    let s = q.norm_squared();
    let raw = raw_directors(q)[k];
    let mut direct = Vec4::zeros();
    for m in 0..4 {
        let mut plus = q.coords;
        let mut minus = q.coords;
        plus[m] += T::one();
        minus[m] -= T::one();
        let d = raw_directors(&Quaternion::from_coords(plus))[k] - raw_directors(&Quaternion::from_coords(minus))[k];
        direct[m] = d.dot(w) / (two * s);
    }
    direct - q.coords * (two * raw.dot(w) / (s * s))
}

pub type SkewMatrix = [[i8; 4]; 4];

/// Material-frame matrices `B1, B2, B3`.
pub const B_MATERIAL: [SkewMatrix; 3] = [
    [[0, 0, 0, 1], [0, 0, 1, 0], [0, -1, 0, 0], [-1, 0, 0, 0]],
    [[0, 0, -1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, -1, 0, 0]],
    [[0, 1, 0, 0], [-1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]],
];

/// Reference-frame matrices `B1⁰, B2⁰, B3⁰`.
pub const B_REFERENCE: [SkewMatrix; 3] = [
    [[0, 0, 0, 1], [0, 0, -1, 0], [0, 1, 0, 0], [-1, 0, 0, 0]],
    [[0, 0, 1, 0], [0, 0, 0, 1], [-1, 0, 0, 0], [0, -1, 0, 0]],
    [[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]],
];

/// All six skew matrices as `(B1, B2, B3, B1⁰, B2⁰, B3⁰)`.
pub fn b_matrices() -> [SkewMatrix; 6] {
    [
        B_MATERIAL[0],
        B_MATERIAL[1],
        B_MATERIAL[2],
        B_REFERENCE[0],
        B_REFERENCE[1],
        B_REFERENCE[2],
    ]
}

#[inline]
pub(crate) fn apply_skew<T: Real>(b: &SkewMatrix, q: &Vec4<T>) -> Vec4<T> {
    let mut out = Vec4::zeros();
    for (r, row) in b.iter().enumerate() {
        let mut acc = T::zero();
        for (c, &e) in row.iter().enumerate() {
            match e {
                1 => acc += q[c],
                -1 => acc -= q[c],
                _ => {}
            }
        }
        out[r] = acc;
    }
    out
}

/// Strain rates and angular velocities from a quaternion and its spatial
/// (`dq_dsigma`) and temporal (`dq_dt`) derivatives.
pub fn material_rates<T: Real>(
    q: &Quaternion<T>,
    dq_dsigma: &Vec4<T>,
    dq_dt: &Vec4<T>,
) -> Result<MaterialRates<T>> {
    let s = checked_norm_squared(q)?;
    let scale = T::lit(2.0) / s;
    let rate = |b: &SkewMatrix, d: &Vec4<T>| apply_skew(b, &q.coords).dot(d) * scale;
    let triple = |bs: &[SkewMatrix; 3], d: &Vec4<T>| {
        Vec3::new(rate(&bs[0], d), rate(&bs[1], d), rate(&bs[2], d))
    };
    Ok(MaterialRates {
        u: triple(&B_MATERIAL, dq_dsigma),
        omega: triple(&B_MATERIAL, dq_dt),
        omega0: triple(&B_REFERENCE, dq_dt),
    })
}

/// Quaternion rate produced by a body-frame angular velocity,
/// `q̇ = ½ q ⊗ (ω, 0)`. Diagnostic only; the integrator advances quaternions
/// as generalized coordinates.
pub fn quaternion_rate<T: Real>(q: &Quaternion<T>, omega: &Vec3<T>) -> Vec4<T> {
    let w = Quaternion::new(omega.x, omega.y, omega.z, T::zero());
    q.mul(&w).coords * T::lit(0.5)
}
