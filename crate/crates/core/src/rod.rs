//! Discrete single rod: rest geometry, stretch/bend/penalty energies, their
//! analytic gradients, lumped masses and boundary conditions.
//!
//! A rod with `N` control points has `N − 1` elements. Element `j` spans
//! points `j` and `j + 1` and carries quaternion `q_j` at its midpoint.
//! Generalized coordinates are interleaved per node,
//! `[r_0, q_0, r_1, q_1, …, r_{N−2}, q_{N−2}, r_{N−1}]`, giving
//! `3N + 4(N − 1)` scalars.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{apply_skew, d3_pullback, director, Quaternion, B_MATERIAL};
use crate::scalar::{norm3, Real, Vec3, Vec4};

/// Which bending/twisting rigidities to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StiffnessVariant {
    /// `K11 = K22 = E·π·r⁴/4`, `K33 = G·π·r⁴/2`.
    #[default]
    Corrected,
    /// The original element formulation, `K11 = K22 = E·π·r²/4`,
    /// `K33 = G·π·r²/2`, which overstates rigidity for thin rods.
    CordeOriginal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RodParameters<T: Real> {
    /// Young's modulus used for bending, Pa.
    pub youngs_bend: T,
    /// Young's modulus used for stretching, Pa.
    pub youngs_stretch: T,
    /// Shear modulus, Pa. `None` means `E_b / 3`.
    pub shear_modulus: Option<T>,
    /// kg/m³
    pub density: T,
    /// m
    pub radius: T,
    /// m
    pub length: T,
    /// Centerline/director penalty constant `K_p`.
    pub penalty: T,
    /// Rest strain rates `û`, 1/m.
    pub intrinsic_curvature: Vec3<T>,
    pub num_points: usize,
    pub stiffness_variant: StiffnessVariant,
    /// Generalized mass of each quaternion coordinate, kg·m². `None` uses the
    /// polar-inertia lumping `ρ·π·r⁴/2·l`.
    pub quaternion_mass: Option<T>,
}

impl<T: Real> RodParameters<T> {
    /// Isotropic rod with `E_s = E_b = youngs`, default penalty `1e4` and a
    /// straight rest shape.
    pub fn new(youngs: T, density: T, radius: T, length: T, num_points: usize) -> Self {
        Self {
            youngs_bend: youngs,
            youngs_stretch: youngs,
            shear_modulus: None,
            density,
            radius,
            length,
            penalty: T::lit(1e4),
            intrinsic_curvature: Vec3::zeros(),
            num_points,
            stiffness_variant: StiffnessVariant::Corrected,
            quaternion_mass: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("youngs_bend", self.youngs_bend),
            ("youngs_stretch", self.youngs_stretch),
            ("density", self.density),
            ("radius", self.radius),
            ("length", self.length),
            ("shear_modulus", self.shear_modulus()),
        ];
        for (name, v) in positive {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.penalty >= T::zero()) || !self.penalty.is_finite() {
            return Err(Error::Config(format!("penalty must be non-negative, got {}", self.penalty)));
        }
        if let Some(j) = self.quaternion_mass {
            if !(j > T::zero()) || !j.is_finite() {
                return Err(Error::Config(format!("quaternion_mass must be positive, got {j}")));
            }
        }
        if self.num_points < 3 {
            return Err(Error::Config(format!(
                "num_points must be at least 3, got {}",
                self.num_points
            )));
        }
        Ok(())
    }

    pub fn shear_modulus(&self) -> T {
        self.shear_modulus.unwrap_or(self.youngs_bend / T::lit(3.0))
    }

    pub fn num_elements(&self) -> usize {
        self.num_points - 1
    }

    pub fn rest_length(&self) -> T {
        self.length / T::from_usize(self.num_elements()).unwrap()
    }

    pub fn area(&self) -> T {
        T::PI() * self.radius * self.radius
    }

    /// `K_s = E_s·π·r²`, N.
    pub fn stretch_stiffness(&self) -> T {
        self.youngs_stretch * self.area()
    }

    /// Diagonal of the bending/twisting stiffness tensor, N·m².
    pub fn stiffness_tensor(&self) -> Vec3<T> {
        let r2 = self.radius * self.radius;
        let section = match self.stiffness_variant {
            StiffnessVariant::Corrected => T::PI() * r2 * r2,
            StiffnessVariant::CordeOriginal => T::PI() * r2,
        };
        let bend = self.youngs_bend * section / T::lit(4.0);
        let twist = self.shear_modulus() * section / T::lit(2.0);
        Vec3::new(bend, bend, twist)
    }

    /// Number of generalized coordinates for the unconstrained rod.
    pub fn num_coordinates(&self) -> usize {
        3 * self.num_points + 4 * self.num_elements()
    }
}

/// Position and orientation of the rod base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasePose<T: Real> {
    pub position: Vec3<T>,
    pub orientation: Quaternion<T>,
}

impl<T: Real> BasePose<T> {
    pub fn new(position: Vec3<T>, orientation: Quaternion<T>) -> Self {
        Self {
            position,
            orientation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RodState<T: Real> {
    pub points: Vec<Vec3<T>>,
    pub quaternions: Vec<Quaternion<T>>,
    pub point_velocities: Vec<Vec3<T>>,
    pub quaternion_rates: Vec<Vec4<T>>,
}

impl<T: Real> RodState<T> {
    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn tip(&self) -> Vec3<T> {
        *self.points.last().expect("rod has points")
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if n < 3 || self.quaternions.len() != n - 1 {
            return Err(Error::Config(format!(
                "rod state needs N >= 3 points and N - 1 quaternions, got {} and {}",
                n,
                self.quaternions.len()
            )));
        }
        for (j, w) in self.points.windows(2).enumerate() {
            if !(norm3(&(w[1] - w[0])) > T::lit(1e-12)) {
                return Err(Error::DegenerateGeometry(format!("points {j} and {} coincide", j + 1)));
            }
        }
        for (j, q) in self.quaternions.iter().enumerate() {
            let n = q.norm();
            if !(n >= T::lit(0.5) && n <= T::lit(2.0)) {
                return Err(Error::Domain(format!("quaternion {j} has norm {n} outside [0.5, 2]")));
            }
        }
        Ok(())
    }

    /// Flatten positions into the interleaved coordinate layout.
    pub fn coordinates(&self) -> Vec<T> {
        interleave(&self.points, |j| self.quaternions[j].coords)
    }

    pub fn velocities(&self) -> Vec<T> {
        interleave(&self.point_velocities, |j| self.quaternion_rates[j])
    }

    /// Overwrite positions and velocities from interleaved vectors.
    pub fn set_coordinates(&mut self, x: &[T], v: &[T]) {
        let n = self.points.len();
        for i in 0..n {
            let o = 7 * i;
            self.points[i] = Vec3::new(x[o], x[o + 1], x[o + 2]);
            self.point_velocities[i] = Vec3::new(v[o], v[o + 1], v[o + 2]);
            if i + 1 < n {
                self.quaternions[i] =
                    Quaternion::from_coords(Vec4::new(x[o + 3], x[o + 4], x[o + 5], x[o + 6]));
                self.quaternion_rates[i] = Vec4::new(v[o + 3], v[o + 4], v[o + 5], v[o + 6]);
            }
        }
    }

    /// Largest `‖t̂_j − d3(q_j)‖` over all elements.
    pub fn max_director_defect(&self) -> T {
        self.points
            .windows(2)
            .zip(&self.quaternions)
            .map(|(w, q)| {
                let e = w[1] - w[0];
                norm3(&(e / norm3(&e) - director(q, 2)))
            })
            .fold(T::zero(), T::max)
    }

    pub fn max_point_speed(&self) -> T {
        self.point_velocities
            .iter()
            .map(norm3)
            .fold(T::zero(), T::max)
    }

    pub fn kinetic_energy(&self, mass: &RodMass<T>) -> T {
        let pts: T = self
            .point_velocities
            .iter()
            .zip(&mass.points)
            .map(|(v, m)| *m * v.dot(v))
            .sum();
        let quats: T = self
            .quaternion_rates
            .iter()
            .zip(&mass.quaternions)
            .map(|(v, m)| *m * v.dot(v))
            .sum();
        (pts + quats) / T::lit(2.0)
    }
}

pub(crate) fn interleave<T: Real>(points: &[Vec3<T>], quat: impl Fn(usize) -> Vec4<T>) -> Vec<T> {
    let n = points.len();
    let mut out = Vec::with_capacity(7 * n - 4);
    for (i, p) in points.iter().enumerate() {
        out.extend_from_slice(p.as_slice());
        if i + 1 < n {
            out.extend_from_slice(quat(i).as_slice());
        }
    }
    out
}

/// Straight rod at rest along the base `d3`, equally spaced, every element
/// sharing the base orientation.
pub fn make_rod<T: Real>(params: &RodParameters<T>, base: &BasePose<T>) -> Result<RodState<T>> {
    params.validate()?;
    let orientation = base.orientation.normalized()?;
    let axis = director(&orientation, 2);
    let l = params.rest_length();
    let n = params.num_points;
    let points = (0..n)
        .map(|i| base.position + axis * (l * T::from_usize(i).unwrap()))
        .collect();
    Ok(RodState {
        points,
        quaternions: vec![orientation; n - 1],
        point_velocities: vec![Vec3::zeros(); n],
        quaternion_rates: vec![Vec4::zeros(); n - 1],
    })
}

/// A concentrated load on one control point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLoad<T: Real> {
    pub index: usize,
    pub force: Vec3<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryConditions<T: Real> {
    /// When set, point 0 is frozen at this pose and element 0 bends against
    /// the frozen base frame through a half-element junction.
    pub clamp: Option<BasePose<T>>,
    pub point_loads: Vec<PointLoad<T>>,
    pub gravity: Option<Vec3<T>>,
}

impl<T: Real> BoundaryConditions<T> {
    pub fn free() -> Self {
        Self {
            clamp: None,
            point_loads: Vec::new(),
            gravity: None,
        }
    }

    pub fn clamped(base: BasePose<T>) -> Self {
        Self {
            clamp: Some(base),
            ..Self::free()
        }
    }

    pub fn with_load(mut self, index: usize, force: Vec3<T>) -> Self {
        self.point_loads.push(PointLoad { index, force });
        self
    }

    pub fn clamped_base(&self) -> bool {
        self.clamp.is_some()
    }

    pub fn validate(&self, num_points: usize) -> Result<()> {
        for load in &self.point_loads {
            if load.index >= num_points {
                return Err(Error::Config(format!(
                    "load index {} out of range for {num_points} points",
                    load.index
                )));
            }
            if self.clamped_base() && load.index == 0 {
                return Err(Error::Config("load applied to the clamped base point".into()));
            }
        }
        Ok(())
    }

    fn anchor(&self) -> Option<&Quaternion<T>> {
        self.clamp.as_ref().map(|c| &c.orientation)
    }
}

fn rest_lengths<T: Real>(params: &RodParameters<T>) -> impl Iterator<Item = T> {
    let l = params.rest_length();
    std::iter::repeat(l).take(params.num_elements())
}

/// `½·K_s·Σ l_j (‖e_j‖/l_j − 1)²`.
pub fn stretch_energy<T: Real>(state: &RodState<T>, params: &RodParameters<T>) -> T {
    let ks = params.stretch_stiffness();
    state
        .points
        .windows(2)
        .zip(rest_lengths(params))
        .map(|(w, l)| {
            let strain = norm3(&(w[1] - w[0])) / l - T::one();
            l * strain * strain
        })
        .sum::<T>()
        * ks
        / T::lit(2.0)
}

/// One bending junction between quaternions `a` and `b` over length `lbar`.
struct Junction<T: Real> {
    u: Vec3<T>,
    du_da: [Vec4<T>; 3],
    du_db: [Vec4<T>; 3],
}

fn junction<T: Real>(a: &Quaternion<T>, b: &Quaternion<T>, lbar: T, with_grad: bool) -> Junction<T> {
    let two = T::lit(2.0);
    let m = (a.coords + b.coords) / two;
    let s = m.dot(&m);
    let mut u = Vec3::zeros();
    let mut du_da = [Vec4::zeros(); 3];
    let mut du_db = [Vec4::zeros(); 3];
    for k in 0..3 {
        let ba = apply_skew(&B_MATERIAL[k], &a.coords);
        let c = ba.dot(&b.coords);
        u[k] = two * c / (s * lbar);
        if with_grad {
            let bb = apply_skew(&B_MATERIAL[k], &b.coords);
            let radial = m * (c / (s * s));
            du_da[k] = (-bb / s - radial) * (two / lbar);
            du_db[k] = (ba / s - radial) * (two / lbar);
        }
    }
    Junction { u, du_da, du_db }
}

/// Iterate `(a, b, lbar, a_index)` over bending junctions; `a_index` is
/// `None` for the frozen base frame.
fn junctions<'a, T: Real>(
    state: &'a RodState<T>,
    params: &RodParameters<T>,
    anchor: Option<&'a Quaternion<T>>,
) -> impl Iterator<Item = (&'a Quaternion<T>, &'a Quaternion<T>, T, Option<usize>)> + 'a {
    let l = params.rest_length();
    let half = l / T::lit(2.0);
    let base = anchor.map(|a| (a, &state.quaternions[0], half, None));
    let interior = state
        .quaternions
        .windows(2)
        .enumerate()
        .map(move |(j, w)| (&w[0], &w[1], l, Some(j)));
    base.into_iter().chain(interior)
}

/// `½·Σ_j l̄_j Σ_k K_kk (u_k − û_k)²` over interior junctions, plus the base
/// junction against `anchor` when the rod is clamped.
pub fn bend_energy<T: Real>(
    state: &RodState<T>,
    params: &RodParameters<T>,
    anchor: Option<&Quaternion<T>>,
) -> T {
    let k = params.stiffness_tensor();
    let rest = params.intrinsic_curvature;
    junctions(state, params, anchor)
        .map(|(a, b, lbar, _)| {
            let d = junction(a, b, lbar, false).u - rest;
            lbar * (k.x * d.x * d.x + k.y * d.y * d.y + k.z * d.z * d.z)
        })
        .sum::<T>()
        / T::lit(2.0)
}

/// `½·K_p·Σ l_j ‖e_j/‖e_j‖ − d3(q_j)‖²`.
pub fn penalty_energy<T: Real>(state: &RodState<T>, params: &RodParameters<T>) -> Result<T> {
    let mut total = T::zero();
    for (j, ((w, q), l)) in state
        .points
        .windows(2)
        .zip(&state.quaternions)
        .zip(rest_lengths(params))
        .enumerate()
    {
        let e = w[1] - w[0];
        let len = norm3(&e);
        if !(len > T::lit(1e-12)) {
            return Err(Error::DegenerateGeometry(format!("element {j} has zero length")));
        }
        let defect = e / len - director(q, 2);
        total += l * defect.dot(&defect);
    }
    Ok(total * params.penalty / T::lit(2.0))
}

pub fn total_energy<T: Real>(
    state: &RodState<T>,
    params: &RodParameters<T>,
    bc: &BoundaryConditions<T>,
) -> Result<T> {
    Ok(stretch_energy(state, params)
        + bend_energy(state, params, bc.anchor())
        + penalty_energy(state, params)?)
}

/// Per-point and per-quaternion partial derivatives of an energy.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGradient<T: Real> {
    pub points: Vec<Vec3<T>>,
    pub quaternions: Vec<Vec4<T>>,
}

impl<T: Real> EnergyGradient<T> {
    fn zeros(n: usize) -> Self {
        Self {
            points: vec![Vec3::zeros(); n],
            quaternions: vec![Vec4::zeros(); n - 1],
        }
    }

    pub fn flatten(&self) -> Vec<T> {
        interleave(&self.points, |j| self.quaternions[j])
    }
}

/// Analytic gradient of [`total_energy`].
pub fn energy_gradient<T: Real>(
    state: &RodState<T>,
    params: &RodParameters<T>,
    anchor: Option<&Quaternion<T>>,
) -> Result<EnergyGradient<T>> {
    let n = state.points.len();
    let mut g = EnergyGradient::zeros(n);
    let ks = params.stretch_stiffness();
    let kp = params.penalty;

    for (j, ((w, q), l)) in state
        .points
        .windows(2)
        .zip(&state.quaternions)
        .zip(rest_lengths(params))
        .enumerate()
    {
        let e = w[1] - w[0];
        let len = norm3(&e);
        if !(len > T::lit(1e-12)) {
            return Err(Error::DegenerateGeometry(format!("element {j} has zero length")));
        }
        let t = e / len;

        // Stretch: ∂/∂e = K_s (len/l − 1) t
        let mut de = t * (ks * (len / l - T::one()));

        // Penalty: ∂/∂e = K_p l (I − t tᵀ) w / len, ∂/∂q = −K_p l (∂d3/∂q)ᵀ w
        let defect = t - director(q, 2);
        de += (defect - t * t.dot(&defect)) * (kp * l / len);
        g.quaternions[j] -= d3_pullback(q, &defect) * (kp * l);

        g.points[j + 1] += de;
        g.points[j] -= de;
    }

    let k = params.stiffness_tensor();
    let rest = params.intrinsic_curvature;
    for (a, b, lbar, a_index) in junctions(state, params, anchor) {
        let jn = junction(a, b, lbar, true);
        let b_index = a_index.map_or(0, |i| i + 1);
        for kk in 0..3 {
            let coef = lbar * k[kk] * (jn.u[kk] - rest[kk]);
            if let Some(ai) = a_index {
                g.quaternions[ai] += jn.du_da[kk] * coef;
            }
            g.quaternions[b_index] += jn.du_db[kk] * coef;
        }
    }
    Ok(g)
}

/// Lumped masses: half-element point masses and per-element quaternion
/// generalized masses.
#[derive(Debug, Clone, PartialEq)]
pub struct RodMass<T: Real> {
    pub points: Vec<T>,
    pub quaternions: Vec<T>,
}

impl<T: Real> RodMass<T> {
    pub fn flatten(&self) -> Vec<T> {
        let n = self.points.len();
        let mut out = Vec::with_capacity(7 * n - 4);
        for i in 0..n {
            out.extend(std::iter::repeat(self.points[i]).take(3));
            if i + 1 < n {
                out.extend(std::iter::repeat(self.quaternions[i]).take(4));
            }
        }
        out
    }

    pub fn total_point_mass(&self) -> T {
        self.points.iter().copied().sum()
    }
}

pub fn mass_matrix<T: Real>(params: &RodParameters<T>) -> RodMass<T> {
    let n = params.num_points;
    let l = params.rest_length();
    let line_density = params.density * params.area();
    let points = (0..n)
        .map(|i| {
            let adjacent = if i == 0 || i == n - 1 { l } else { l + l };
            line_density * adjacent / T::lit(2.0)
        })
        .collect();
    let r2 = params.radius * params.radius;
    let polar = params.density * T::PI() * r2 * r2 / T::lit(2.0) * l;
    let quaternions = vec![params.quaternion_mass.unwrap_or(polar); n - 1];
    RodMass {
        points,
        quaternions,
    }
}

/// Generalized force `−∇E + external loads (+ gravity)` in the interleaved
/// layout; entries of clamped coordinates are zero.
pub fn assemble_forces<T: Real>(
    state: &RodState<T>,
    params: &RodParameters<T>,
    bc: &BoundaryConditions<T>,
) -> Result<Vec<T>> {
    let grad = energy_gradient(state, params, bc.anchor())?;
    let mut points: Vec<Vec3<T>> = grad.points.iter().map(|g| -g).collect();
    let quats: Vec<Vec4<T>> = grad.quaternions.iter().map(|g| -g).collect();
    for load in &bc.point_loads {
        points[load.index] += load.force;
    }
    if let Some(gravity) = bc.gravity {
        let mass = mass_matrix(params);
        for (p, m) in points.iter_mut().zip(&mass.points) {
            *p += gravity * *m;
        }
    }
    if bc.clamped_base() {
        points[0] = Vec3::zeros();
    }
    Ok(interleave(&points, |j| quats[j]))
}
