//! Tendon running through a lumen of a clamped catheter, tied together by
//! penalty forces.
//!
//! Three constraints act between the rods:
//! - lumen: every tendon point except the distal one is pulled onto the
//!   lumen line, either along the offset direction `d_t` of its parent
//!   element only or across the whole cross-section;
//! - endpoint compliance: the tendon tip is tethered to the lumen tip;
//! - endpoint coupling: the tendon tip is held at distance `r_L` from the
//!   catheter tip.
//!
//! Coupled coordinates are the catheter's free coordinates followed by all
//! tendon coordinates.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{director, director_pullback, Quaternion};
use crate::implicit::{
    normalize_rod_quaternions, rod_point_speed, run_to_equilibrium_with, Dynamics, EquilibriumRun,
    IntegratorConfig, RodSystem, StepReport,
};
use crate::rod::{make_rod, BasePose, BoundaryConditions, RodParameters, RodState};
use crate::scalar::{norm3, Real, Vec3, Vec4};
use crate::sparsity::{rod_node_range, PatternBuilder, SparsityPattern};

/// How lumen forces on tendon points are reacted onto the catheter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReactionMode {
    /// Each parent catheter point receives the negated mean of its
    /// children's forces; the tip tether is not reacted.
    #[default]
    Average,
    /// Each lumen point receives the negated sum, and the tip tether is
    /// reacted onto the lumen tip. Reactions act on the lumen wall, so the
    /// catheter frames also receive the moment of the offset `r_L·d_t`.
    /// Coupling forces and moments cancel exactly.
    Sum,
}

/// Which displacement of a tendon point away from the lumen is penalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LumenConstraint {
    /// Only the component along `d_t`. The tendon may leave the lumen
    /// sideways, along the other cross-section direction, without resistance.
    #[default]
    Offset,
    /// Both components perpendicular to the parent's `d3`.
    Transverse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingConfig<T: Real> {
    /// Distance from catheter centerline to lumen line, m.
    pub lumen_offset: T,
    /// `(α_w, β_w)`, normalized so that `d_t = α_w·d1 + β_w·d2` is a unit vector.
    pub direction_weights: (T, T),
    pub lumen_constant: T,
    pub endpoint_compliance_constant: T,
    pub endpoint_coupling_constant: T,
    pub reaction_mode: ReactionMode,
    pub lumen_constraint: LumenConstraint,
}

impl<T: Real> CouplingConfig<T> {
    pub fn new(lumen_offset: T, lumen: T, compliance: T, coupling: T) -> Self {
        Self {
            lumen_offset,
            direction_weights: (T::one(), T::zero()),
            lumen_constant: lumen,
            endpoint_compliance_constant: compliance,
            endpoint_coupling_constant: coupling,
            reaction_mode: ReactionMode::Average,
            lumen_constraint: LumenConstraint::Offset,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.direction_weights;
        if !(a * a + b * b > T::zero()) {
            return Err(Error::Config("direction weights must not both be zero".into()));
        }
        for (name, v) in [
            ("lumen_offset", self.lumen_offset),
            ("lumen_constant", self.lumen_constant),
            ("endpoint_compliance_constant", self.endpoint_compliance_constant),
            ("endpoint_coupling_constant", self.endpoint_coupling_constant),
        ] {
            if !(v >= T::zero()) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    fn weights(&self) -> (T, T) {
        let (a, b) = self.direction_weights;
        let n = (a * a + b * b).sqrt();
        (a / n, b / n)
    }

    fn decoupled(&self) -> bool {
        self.lumen_constant == T::zero()
            && self.endpoint_compliance_constant == T::zero()
            && self.endpoint_coupling_constant == T::zero()
    }
}

/// Unit lumen offset direction of one catheter element.
pub fn offset_direction<T: Real>(q: &Quaternion<T>, coupling: &CouplingConfig<T>) -> Vec3<T> {
    let (a, b) = coupling.weights();
    director(q, 0) * a + director(q, 1) * b
}

/// Generalized force on `q` from a force `w` applied at `lever` from the
/// element's first point, the lever being fixed in the element's frame.
fn lever_pullback<T: Real>(q: &Quaternion<T>, lever: &Vec3<T>, w: &Vec3<T>) -> Vec4<T> {
    (0..3).fold(Vec4::zeros(), |g, k| g + director_pullback(q, k, w) * lever.dot(&director(q, k)))
}

fn element_of_point(i: usize, num_points: usize) -> usize {
    i.min(num_points - 2)
}

/// `L_i = r_i + r_L·d_t(q)` using the element that starts at point `i`
/// (the last element for the tip).
pub fn lumen_points<T: Real>(catheter: &RodState<T>, coupling: &CouplingConfig<T>) -> Vec<Vec3<T>> {
    let n = catheter.num_points();
    catheter
        .points
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let q = &catheter.quaternions[element_of_point(i, n)];
            r + offset_direction(q, coupling) * coupling.lumen_offset
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationEntry<T: Real> {
    /// Catheter element owning the nearest lumen point.
    pub parent: usize,
    /// Index of the nearest lumen point.
    pub lumen_index: usize,
    /// Signed lumen compliance `(L_j − p_i)·d_t`, m.
    pub compliance: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration<T: Real> {
    pub entries: Vec<RegistrationEntry<T>>,
}

impl<T: Real> Registration<T> {
    /// Largest `|C_L|` over the points that carry a lumen force.
    pub fn max_compliance(&self) -> T {
        let k = self.entries.len().saturating_sub(1);
        self.entries[..k]
            .iter()
            .map(|e| e.compliance.abs())
            .fold(T::zero(), T::max)
    }

    /// Same parents, compliances re-evaluated at new states.
    pub fn refresh(&self, tendon: &RodState<T>, lumen: &[Vec3<T>], catheter: &RodState<T>, coupling: &CouplingConfig<T>) -> Self {
        let entries = self
            .entries
            .iter()
            .zip(&tendon.points)
            .map(|(e, p)| {
                let dt = offset_direction(&catheter.quaternions[e.parent], coupling);
                RegistrationEntry {
                    compliance: (lumen[e.lumen_index] - p).dot(&dt),
                    ..*e
                }
            })
            .collect();
        Self { entries }
    }
}

/// Register every tendon point to the element owning its nearest lumen
/// point; ties go to the lower index.
pub fn register_tendon<T: Real>(
    tendon: &RodState<T>,
    lumen: &[Vec3<T>],
    catheter: &RodState<T>,
    coupling: &CouplingConfig<T>,
) -> Result<Registration<T>> {
    if lumen.is_empty() {
        return Err(Error::Domain("lumen has no points".into()));
    }
    let n = catheter.num_points();
    let entries = tendon
        .points
        .iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = T::infinity();
            for (j, l) in lumen.iter().enumerate() {
                let s = l - p;
                let d = s.dot(&s);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            let parent = element_of_point(best, n);
            let dt = offset_direction(&catheter.quaternions[parent], coupling);
            RegistrationEntry {
                parent,
                lumen_index: best,
                compliance: (lumen[best] - p).dot(&dt),
            }
        })
        .collect();
    Ok(Registration { entries })
}

/// Per-point lumen forces on the tendon and their reactions on the
/// catheter. The distal tendon point is governed by the endpoint
/// constraints instead and receives no lumen force.
#[derive(Debug, Clone, PartialEq)]
pub struct LumenForces<T: Real> {
    pub tendon: Vec<Vec3<T>>,
    pub catheter: Vec<Vec3<T>>,
}

pub fn lumen_forces<T: Real>(
    reg: &Registration<T>,
    catheter: &RodState<T>,
    tendon: &RodState<T>,
    lumen: &[Vec3<T>],
    coupling: &CouplingConfig<T>,
) -> LumenForces<T> {
    let nt = reg.entries.len();
    let mut on_tendon = vec![Vec3::zeros(); nt];
    let mut totals = vec![Vec3::zeros(); catheter.num_points()];
    let mut counts = vec![0usize; catheter.num_points()];
    for (i, e) in reg.entries.iter().enumerate().take(nt.saturating_sub(1)) {
        let q = &catheter.quaternions[e.parent];
        let f = match coupling.lumen_constraint {
            LumenConstraint::Offset => offset_direction(q, coupling) * (coupling.lumen_constant * e.compliance),
            LumenConstraint::Transverse => {
                let s = lumen[e.lumen_index] - tendon.points[i];
                let d3 = director(q, 2);
                (s - d3 * d3.dot(&s)) * coupling.lumen_constant
            }
        };
        on_tendon[i] = f;
        totals[e.lumen_index] += f;
        counts[e.lumen_index] += 1;
    }
    let catheter = totals
        .into_iter()
        .zip(counts)
        .map(|(f, c)| match (coupling.reaction_mode, c) {
            (_, 0) => Vec3::zeros(),
            (ReactionMode::Average, c) => -f / T::from_usize(c).unwrap(),
            (ReactionMode::Sum, _) => -f,
        })
        .collect();
    LumenForces {
        tendon: on_tendon,
        catheter,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndpointForces<T: Real> {
    /// Tether of the tendon tip to the lumen tip, on the tendon tip.
    pub compliance: Vec3<T>,
    /// Coupling spring force on the tendon tip; the catheter tip receives
    /// its negation.
    pub coupling: Vec3<T>,
    /// `C_E = ‖L_tip − t_tip‖`, m.
    pub compliance_measure: T,
    /// `C_C = ‖t_tip − r_tip‖ − r_L`, m.
    pub coupling_measure: T,
}

pub fn endpoint_forces<T: Real>(
    catheter: &RodState<T>,
    tendon: &RodState<T>,
    coupling: &CouplingConfig<T>,
) -> EndpointForces<T> {
    let n = catheter.num_points();
    let q = &catheter.quaternions[n - 2];
    let lumen_tip = catheter.tip() + offset_direction(q, coupling) * coupling.lumen_offset;
    let t = tendon.tip();
    let tether = lumen_tip - t;
    let compliance = tether * coupling.endpoint_compliance_constant;

    let sep = t - catheter.tip();
    let d = norm3(&sep);
    let c_c = d - coupling.lumen_offset;
    // Attractive toward the rest separation: a stretched spring pulls the
    // tendon tip back toward the catheter tip.
    let coupling_force = if d < T::lit(1e-12) {
        Vec3::zeros()
    } else {
        -sep * (coupling.endpoint_coupling_constant * c_c / d)
    };
    EndpointForces {
        compliance,
        coupling: coupling_force,
        compliance_measure: norm3(&tether),
        coupling_measure: c_c,
    }
}

/// All coupling and actuation point forces for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLoads<T: Real> {
    pub catheter: Vec<Vec3<T>>,
    pub tendon: Vec<Vec3<T>>,
    pub registration: Registration<T>,
    pub endpoint: EndpointForces<T>,
    /// Actuation force on the proximal tendon node.
    pub actuation: Vec3<T>,
    /// Generalized forces on the catheter quaternions from reactions
    /// applied at lumen points rather than on the centerline.
    pub frame: Vec<Vec4<T>>,
}

impl<T: Real> CouplingLoads<T> {
    /// Vector sum of coupling forces over both rods, actuation excluded.
    pub fn net_coupling_force(&self) -> Vec3<T> {
        let mut net: Vec3<T> = self.catheter.iter().sum::<Vec3<T>>() + self.tendon.iter().sum::<Vec3<T>>();
        net -= self.actuation;
        net
    }
}

pub fn coupling_loads<T: Real>(
    catheter: &RodState<T>,
    tendon: &RodState<T>,
    coupling: &CouplingConfig<T>,
    actuation_force: T,
    frozen: Option<&Registration<T>>,
) -> Result<CouplingLoads<T>> {
    let lumen = lumen_points(catheter, coupling);
    let registration = match frozen {
        Some(r) => r.refresh(tendon, &lumen, catheter, coupling),
        None => register_tendon(tendon, &lumen, catheter, coupling)?,
    };
    let lumen_f = lumen_forces(&registration, catheter, tendon, &lumen, coupling);
    let endpoint = endpoint_forces(catheter, tendon, coupling);
    let mut cat = lumen_f.catheter;
    let mut ten = lumen_f.tendon;
    let nc = cat.len();
    let nt = ten.len();
    let mut frame = vec![Vec4::zeros(); nc - 1];
    ten[nt - 1] += endpoint.compliance + endpoint.coupling;
    cat[nc - 1] -= endpoint.coupling;
    if coupling.reaction_mode == ReactionMode::Sum {
        // Each reaction acts where the tendon touches the catheter, a point
        // carried by the parent element's frame.
        for (i, e) in registration.entries.iter().enumerate().take(nt - 1) {
            let lever = tendon.points[i] - catheter.points[e.lumen_index];
            frame[e.parent] += lever_pullback(&catheter.quaternions[e.parent], &lever, &-ten[i]);
        }
        cat[nc - 1] -= endpoint.compliance;
        let lever = tendon.tip() - catheter.tip();
        frame[nc - 2] += lever_pullback(&catheter.quaternions[nc - 2], &lever, &-endpoint.compliance);
    }
    let pull = tendon.points[0] - tendon.points[1];
    let len = norm3(&pull);
    if !(len > T::lit(1e-12)) {
        return Err(Error::DegenerateGeometry("first tendon element has zero length".into()));
    }
    let actuation = pull * (actuation_force / len);
    ten[0] += actuation;
    Ok(CouplingLoads {
        catheter: cat,
        tendon: ten,
        registration,
        endpoint,
        actuation,
        frame,
    })
}

/// Catheter clamped at its base with one tendon in its lumen.
#[derive(Debug, Clone)]
pub struct CoupledSystem<T: Real> {
    pub catheter: RodSystem<T>,
    pub tendon: RodSystem<T>,
    pub coupling: CouplingConfig<T>,
    /// Magnitude of the pull on the proximal tendon node, N.
    pub actuation_force: T,
    registration: Registration<T>,
    max_net_coupling: Cell<f64>,
}

impl<T: Real> CoupledSystem<T> {
    /// Straight catheter from `base` with the tendon laid exactly on its
    /// lumen line.
    pub fn new(
        catheter: RodParameters<T>,
        tendon: RodParameters<T>,
        coupling: CouplingConfig<T>,
        actuation_force: T,
        base: BasePose<T>,
    ) -> Result<Self> {
        coupling.validate()?;
        let cat_state = make_rod(&catheter, &base)?;
        let q = base.orientation.normalized()?;
        let offset = offset_direction(&q, &coupling) * coupling.lumen_offset;
        let tendon_base = BasePose::new(base.position + offset, q);
        let mut tendon = tendon;
        tendon.length = catheter.length;
        let ten_state = make_rod(&tendon, &tendon_base)?;
        let lumen = lumen_points(&cat_state, &coupling);
        let registration = register_tendon(&ten_state, &lumen, &cat_state, &coupling)?;
        Ok(Self {
            catheter: RodSystem::new(catheter, BoundaryConditions::clamped(base), cat_state)?,
            tendon: RodSystem::new(tendon, BoundaryConditions::free(), ten_state)?,
            coupling,
            actuation_force,
            registration,
            max_net_coupling: Cell::new(0.0),
        })
    }

    /// Registration of the committed state. Parents are held fixed within
    /// a step so the force stays smooth for Newton, and refreshed on commit.
    pub fn registration(&self) -> &Registration<T> {
        &self.registration
    }

    fn split<'a>(&self, x: &'a [T]) -> (&'a [T], &'a [T]) {
        x.split_at(self.catheter.dof())
    }

    pub fn loads(&self) -> Result<CouplingLoads<T>> {
        coupling_loads(
            self.catheter.state(),
            self.tendon.state(),
            &self.coupling,
            self.actuation_force,
            Some(&self.registration),
        )
    }

    /// Largest `‖Σ coupling forces‖` seen over all force evaluations so far, N.
    pub fn max_net_coupling_force(&self) -> f64 {
        self.max_net_coupling.get()
    }

    pub fn reset_monitor(&self) {
        self.max_net_coupling.set(0.0);
    }
}

/// Coordinate offset of catheter point `i` inside the clamped catheter block.
fn catheter_point_offset(i: usize) -> Option<usize> {
    (i > 0).then(|| 7 * i - 3)
}

impl<T: Real> Dynamics<T> for CoupledSystem<T> {
    fn dof(&self) -> usize {
        self.catheter.dof() + self.tendon.dof()
    }

    fn positions(&self) -> Vec<T> {
        let mut x = self.catheter.positions();
        x.extend(self.tendon.positions());
        x
    }

    fn velocities(&self) -> Vec<T> {
        let mut v = self.catheter.velocities();
        v.extend(self.tendon.velocities());
        v
    }

    fn mass(&self) -> Vec<T> {
        let mut m = self.catheter.mass();
        m.extend(self.tendon.mass());
        m
    }

    fn net_force(&self, x: &[T]) -> Result<Vec<T>> {
        let (xc, xt) = self.split(x);
        let mut fc = self.catheter.net_force(xc)?;
        let mut ft = self.tendon.net_force(xt)?;
        let cat = self.catheter.state_at(xc);
        let ten = self.tendon.state_at(xt);
        let loads = coupling_loads(&cat, &ten, &self.coupling, self.actuation_force, Some(&self.registration))?;
        let net = norm3(&loads.net_coupling_force()).to_f64_lossy();
        if net > self.max_net_coupling.get() {
            self.max_net_coupling.set(net);
        }
        for (i, f) in loads.catheter.iter().enumerate() {
            if let Some(o) = catheter_point_offset(i) {
                for k in 0..3 {
                    fc[o + k] += f[k];
                }
            }
        }
        for (i, f) in loads.tendon.iter().enumerate() {
            for k in 0..3 {
                ft[7 * i + k] += f[k];
            }
        }
        for (e, g) in loads.frame.iter().enumerate() {
            for k in 0..4 {
                fc[7 * e + k] += g[k];
            }
        }
        fc.extend(ft);
        Ok(fc)
    }

    fn sparsity(&self, x: &[T]) -> SparsityPattern {
        let (xc, xt) = self.split(x);
        let cat = self.catheter.state_at(xc);
        let ten = self.tendon.state_at(xt);
        coupled_sparsity(&cat, &ten, &self.coupling, Some(&self.registration))
    }

    fn normalize(&self, x: &mut [T]) {
        let split = self.catheter.dof();
        let (xc, xt) = x.split_at_mut(split);
        self.catheter.normalize(xc);
        normalize_rod_quaternions(xt, self.tendon.params.num_points, 0);
    }

    fn commit(&mut self, x: &[T], v: &[T]) {
        let split = self.catheter.dof();
        self.catheter.commit(&x[..split], &v[..split]);
        self.tendon.commit(&x[split..], &v[split..]);
        let (cat, ten) = (self.catheter.state(), self.tendon.state());
        let lumen = lumen_points(cat, &self.coupling);
        if let Ok(reg) = register_tendon(ten, &lumen, cat, &self.coupling) {
            self.registration = reg;
        }
    }

    fn max_point_speed(&self, v: &[T]) -> T {
        let split = self.catheter.dof();
        let c = self.catheter.max_point_speed(&v[..split]);
        let t = rod_point_speed(&v[split..], self.tendon.params.num_points, 0);
        c.max(t)
    }

    fn tip(&self) -> Vec3<T> {
        self.catheter.tip()
    }
}

/// Structural Jacobian pattern of the coupled force over the coupled
/// coordinates. Without a given registration, one is computed from the states.
pub fn coupled_sparsity<T: Real>(
    catheter: &RodState<T>,
    tendon: &RodState<T>,
    coupling: &CouplingConfig<T>,
    registration: Option<&Registration<T>>,
) -> SparsityPattern {
    let nc = catheter.num_points();
    let nt = tendon.num_points();
    let cat_dof = 7 * nc - 4 - 3;
    let ten_dof = 7 * nt - 4;
    let mut b = PatternBuilder::new(cat_dof + ten_dof);

    // Catheter ranges shifted past the clamped base point.
    let cat_range = |r: std::ops::Range<usize>| r.start.max(3) - 3..r.end - 3;
    let cat_point = |i: usize| -> std::ops::Range<usize> {
        catheter_point_offset(i).map_or(0..0, |o| o..o + 3)
    };
    let cat_quat = |j: usize| -> std::ops::Range<usize> { 7 * j..7 * j + 4 };
    let ten_point = |i: usize| cat_dof + 7 * i..cat_dof + 7 * i + 3;

    for i in 0..nc - 1 {
        b.couple(cat_range(rod_node_range(i, nc)), cat_range(rod_node_range(i + 1, nc)));
    }
    for i in 0..nt - 1 {
        let (a, c) = (rod_node_range(i, nt), rod_node_range(i + 1, nt));
        b.couple(cat_dof + a.start..cat_dof + a.end, cat_dof + c.start..cat_dof + c.end);
    }
    if coupling.decoupled() {
        return b.build();
    }

    let fresh = match registration {
        Some(_) => None,
        None => register_tendon(tendon, &lumen_points(catheter, coupling), catheter, coupling).ok(),
    };
    if let Some(reg) = registration.or(fresh.as_ref()) {
        // Children of one lumen point are coupled through the reaction average.
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); nc];
        for (i, e) in reg.entries.iter().enumerate().take(nt - 1) {
            let tp = ten_point(i);
            b.couple(tp.clone(), cat_point(e.lumen_index));
            b.couple(tp.clone(), cat_quat(e.parent));
            b.couple(cat_point(e.lumen_index), cat_quat(e.parent));
            children[e.lumen_index].push(i);
        }
        for kids in children.iter().filter(|k| k.len() > 1) {
            for &a in kids {
                for &c in kids {
                    b.couple(ten_point(a), ten_point(c));
                }
            }
        }
    }
    // Endpoint constraints: tendon tip, catheter tip and the last catheter
    // quaternion that places the lumen tip.
    let tip = ten_point(nt - 1);
    b.couple(tip.clone(), cat_point(nc - 1));
    b.couple(tip, cat_quat(nc - 2));
    b.couple(cat_point(nc - 1), cat_quat(nc - 2));
    b.build()
}

/// Run the coupled system to rest.
pub fn simulate_coupled<T: Real>(
    system: &mut CoupledSystem<T>,
    config: &IntegratorConfig<T>,
    observe: impl FnMut(&CoupledSystem<T>, &StepReport<T>),
) -> Result<EquilibriumRun<T>> {
    run_to_equilibrium_with(system, config, observe)
}
