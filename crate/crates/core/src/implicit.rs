//! Damped semi-implicit Euler stepping over generalized coordinates.
//!
//! One step solves `x = x_t + ξ·h·ẋ_t + h²·M⁻¹·F(x)` for `x` with Newton's
//! method, using a forward-difference Jacobian compressed through the
//! structural sparsity of `F` and a banded LU solve. Velocities are the
//! finite difference of accepted positions.

use serde::Serialize;

use crate::banded::BandMatrix;
use crate::error::{Error, Result};
use crate::rod::{
    assemble_forces, mass_matrix, total_energy, BoundaryConditions, RodParameters, RodState,
};
use crate::scalar::{max_abs, norm3, Real, Vec3};
use crate::sparsity::{single_rod_sparsity, SparsityPattern};

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig<T: Real> {
    /// Step size `h`, s.
    pub timestep: T,
    /// Velocity carry-over `ξ` in `[0, 1]`.
    pub damping: T,
    pub residual_tol: T,
    pub max_newton_iters: usize,
    pub max_steps: usize,
    /// m/s
    pub convergence_velocity_tol: T,
    /// Consecutive quiet steps required to declare equilibrium.
    pub settle_steps: usize,
    /// Step-size halvings tried before a step is declared failed.
    pub max_halvings: usize,
}

impl<T: Real> Default for IntegratorConfig<T> {
    fn default() -> Self {
        Self {
            timestep: T::lit(0.3),
            damping: T::lit(0.9),
            residual_tol: T::lit(1e-10),
            max_newton_iters: 50,
            max_steps: 5000,
            convergence_velocity_tol: T::lit(1e-8),
            settle_steps: 3,
            max_halvings: 4,
        }
    }
}

impl<T: Real> IntegratorConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.timestep > T::zero()) || !self.timestep.is_finite() {
            return Err(Error::Config(format!("timestep must be positive, got {}", self.timestep)));
        }
        if !(self.damping >= T::zero() && self.damping <= T::one()) {
            return Err(Error::Config(format!("damping must lie in [0, 1], got {}", self.damping)));
        }
        if !(self.residual_tol > T::zero()) || !(self.convergence_velocity_tol > T::zero()) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.max_newton_iters == 0 || self.settle_steps == 0 {
            return Err(Error::Config("max_newton_iters and settle_steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepReport<T: Real> {
    pub newton_iterations: usize,
    /// `‖f‖∞ / (1 + ‖x‖∞)` of the step residual at the accepted root.
    pub residual_norm: T,
    /// Largest point speed after the step, m/s.
    pub max_velocity: T,
    pub accepted: bool,
    pub h_used: T,
}

/// A mechanical system advanced by [`step`].
pub trait Dynamics<T: Real> {
    fn dof(&self) -> usize;
    fn positions(&self) -> Vec<T>;
    fn velocities(&self) -> Vec<T>;
    /// Diagonal generalized mass.
    fn mass(&self) -> Vec<T>;
    /// Net generalized force at configuration `x`.
    fn net_force(&self, x: &[T]) -> Result<Vec<T>>;
    /// Structural pattern of `∂F/∂x` at `x`.
    fn sparsity(&self, x: &[T]) -> SparsityPattern;
    /// Project `x` back onto the admissible set (unit quaternions).
    fn normalize(&self, x: &mut [T]);
    fn commit(&mut self, x: &[T], v: &[T]);
    /// Largest translational speed in `v`.
    fn max_point_speed(&self, v: &[T]) -> T;
    fn tip(&self) -> Vec3<T>;
}

/// Step residual `f = x_now + ξ·h·ẋ_now + h²·M⁻¹·F(x_next) − x_next`.
pub fn residual<T: Real>(
    x_next: &[T],
    x_now: &[T],
    xdot_now: &[T],
    mass: &[T],
    force_fn: impl Fn(&[T]) -> Result<Vec<T>>,
    config: &IntegratorConfig<T>,
) -> Result<Vec<T>> {
    let n = x_next.len();
    if x_now.len() != n || xdot_now.len() != n || mass.len() != n {
        return Err(Error::Domain("residual: dimension mismatch".into()));
    }
    let h = config.timestep;
    let force = force_fn(x_next)?;
    Ok((0..n)
        .map(|i| {
            x_now[i] + config.damping * h * xdot_now[i] + h * h * force[i] / mass[i] - x_next[i]
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct NewtonOptions<T: Real> {
    pub tol: T,
    pub max_iters: usize,
    /// Row weights applied to the residual before measuring convergence.
    pub weights: Option<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome<T: Real> {
    pub x: Vec<T>,
    pub iterations: usize,
    /// Weighted `‖f‖∞ / (1 + ‖x‖∞)` at `x`.
    pub residual_norm: T,
}

fn fd_step<T: Real>(x: T) -> T {
    // Power of two so that `x + h − x` is exact.
    let raw = T::epsilon().sqrt() * x.abs().max(T::one());
    T::lit(2.0).powi(raw.log2().floor().to_i32().unwrap_or(0))
}

/// Forward-difference Jacobian entries on `pattern`, one residual
/// evaluation per structurally orthogonal column group. Returns
/// `(row, col, value)` triplets.
pub fn fd_jacobian<T: Real>(
    residual_fn: &mut impl FnMut(&[T]) -> Result<Vec<T>>,
    x: &[T],
    f0: &[T],
    pattern: &SparsityPattern,
) -> Result<Vec<(usize, usize, T)>> {
    let cols = pattern.columns();
    let mut out = Vec::with_capacity(pattern.nnz());
    let mut xp = x.to_vec();
    for group in pattern.column_groups() {
        for &j in &group {
            xp[j] = x[j] + fd_step(x[j]);
        }
        let fp = residual_fn(&xp)?;
        for &j in &group {
            let h = xp[j] - x[j];
            for &i in &cols[j] {
                out.push((i, j, (fp[i] - f0[i]) / h));
            }
            xp[j] = x[j];
        }
    }
    Ok(out)
}

fn solve_sparse<T: Real>(
    pattern: &SparsityPattern,
    entries: &[(usize, usize, T)],
    rhs: &[T],
) -> Result<Vec<T>> {
    let n = pattern.dim();
    let perm = pattern.banded_ordering();
    let (perm, inverse) = match perm {
        Some(p) => {
            let mut inv = vec![0; n];
            for (new, &old) in p.iter().enumerate() {
                inv[old] = new;
            }
            (p, inv)
        }
        None => ((0..n).collect(), (0..n).collect()),
    };
    let (kl, ku) = entries.iter().fold((0, 0), |(kl, ku), &(i, j, _)| {
        let (i, j) = (inverse[i], inverse[j]);
        if i > j {
            (kl.max(i - j), ku)
        } else {
            (kl, ku.max(j - i))
        }
    });
    let mut band = BandMatrix::zeros(n, kl, ku);
    for &(i, j, v) in entries {
        band.set(inverse[i], inverse[j], v);
    }
    let lu = band.factor()?;
    let mut b: Vec<T> = perm.iter().map(|&old| rhs[old]).collect();
    lu.solve(&mut b);
    let mut out = vec![T::zero(); n];
    for (new, &old) in perm.iter().enumerate() {
        out[old] = b[new];
    }
    Ok(out)
}

/// Newton iteration for `residual_fn(x) = 0`. Converges when the weighted
/// residual, or the last correction, falls below `tol·(1 + ‖x‖∞)`.
pub fn newton_solve<T: Real>(
    mut residual_fn: impl FnMut(&[T]) -> Result<Vec<T>>,
    guess: Vec<T>,
    mut pattern_fn: impl FnMut(&[T]) -> SparsityPattern,
    options: &NewtonOptions<T>,
) -> Result<NewtonOutcome<T>> {
    let measure = |g: &[T], x: &[T]| {
        let scaled = match &options.weights {
            Some(w) => g.iter().zip(w).map(|(a, b)| (*a * *b).abs()).fold(T::zero(), T::max),
            None => max_abs(g),
        };
        scaled / (T::one() + max_abs(x))
    };
    let mut x = guess;
    let mut g = residual_fn(&x)?;
    let mut norm = measure(&g, &x);
    for iter in 0..options.max_iters {
        if !norm.is_finite() {
            break;
        }
        if norm <= options.tol {
            return Ok(NewtonOutcome {
                x,
                iterations: iter,
                residual_norm: norm,
            });
        }
        let pattern = pattern_fn(&x);
        let jac = fd_jacobian(&mut residual_fn, &x, &g, &pattern)?;
        let dx = solve_sparse(&pattern, &jac, &g)?;
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi -= *d;
        }
        if x.iter().any(|v| !v.is_finite()) {
            break;
        }
        g = residual_fn(&x)?;
        norm = measure(&g, &x);
        let correction = max_abs(&dx) / (T::one() + max_abs(&x));
        if norm <= options.tol || correction <= options.tol {
            return Ok(NewtonOutcome {
                x,
                iterations: iter + 1,
                residual_norm: norm,
            });
        }
    }
    Err(Error::NewtonFailed {
        iterations: options.max_iters,
        residual: norm.to_f64_lossy(),
    })
}

fn retryable(e: &Error) -> bool {
    matches!(
        e,
        Error::NewtonFailed { .. } | Error::Domain(_) | Error::DegenerateGeometry(_)
    )
}

fn attempt<T: Real, D: Dynamics<T>>(
    sys: &D,
    x0: &[T],
    v0: &[T],
    mass: &[T],
    h: T,
    config: &IntegratorConfig<T>,
) -> Result<(Vec<T>, NewtonOutcome<T>)> {
    let x_pred: Vec<T> = x0
        .iter()
        .zip(v0)
        .map(|(x, v)| *x + config.damping * h * *v)
        .collect();
    let h2 = h * h;
    // Mass-scaled residual M·f: same root, far better conditioned when the
    // generalized masses span many decades.
    let scaled = |x: &[T]| -> Result<Vec<T>> {
        let f = sys.net_force(x)?;
        Ok((0..x.len())
            .map(|i| mass[i] * (x_pred[i] - x[i]) + h2 * f[i])
            .collect())
    };
    let options = NewtonOptions {
        tol: config.residual_tol,
        max_iters: config.max_newton_iters,
        weights: Some(mass.iter().map(|m| T::one() / *m).collect()),
    };
    let outcome = newton_solve(scaled, x_pred.clone(), |x| sys.sparsity(x), &options)?;
    Ok((outcome.x.clone(), outcome))
}

/// Advance `sys` by one step of `config.timestep`, halving on Newton
/// failure up to `config.max_halvings` times.
pub fn step<T: Real, D: Dynamics<T>>(sys: &mut D, config: &IntegratorConfig<T>) -> Result<StepReport<T>> {
    let x0 = sys.positions();
    let v0 = sys.velocities();
    let mass = sys.mass();
    let mut h = config.timestep;
    let mut last_err = None;
    for halvings in 0..=config.max_halvings {
        match attempt(sys, &x0, &v0, &mass, h, config) {
            Ok((mut x, outcome)) => {
                sys.normalize(&mut x);
                let v: Vec<T> = x.iter().zip(&x0).map(|(a, b)| (*a - *b) / h).collect();
                let max_velocity = sys.max_point_speed(&v);
                sys.commit(&x, &v);
                if halvings > 0 {
                    log::debug!("step accepted after {halvings} halvings at h = {h}");
                }
                return Ok(StepReport {
                    newton_iterations: outcome.iterations,
                    residual_norm: outcome.residual_norm,
                    max_velocity,
                    accepted: true,
                    h_used: h,
                });
            }
            Err(e) if retryable(&e) => {
                log::debug!("step at h = {h} failed: {e}");
                last_err = Some(e);
                h = h / T::lit(2.0);
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::StepFailed {
        halvings: config.max_halvings,
        h: (h * T::lit(2.0)).to_f64_lossy(),
        source: Box::new(last_err.expect("at least one attempt")),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow<T: Real> {
    pub step: usize,
    pub time: T,
    pub tip: [T; 3],
    pub max_velocity: T,
    pub newton_iterations: usize,
    pub residual_norm: T,
    pub h_used: T,
}

#[derive(Debug)]
pub enum RunStatus {
    Converged,
    MaxStepsReached,
    StepFailed(Error),
}

#[derive(Debug)]
pub struct EquilibriumRun<T: Real> {
    pub status: RunStatus,
    pub steps: usize,
    pub time: T,
    pub trace: Vec<TraceRow<T>>,
}

impl<T: Real> EquilibriumRun<T> {
    pub fn converged(&self) -> bool {
        matches!(self.status, RunStatus::Converged)
    }

    pub fn total_newton_iterations(&self) -> usize {
        self.trace.iter().map(|r| r.newton_iterations).sum()
    }
}

/// Step until the largest point speed stays below the tolerance for
/// `settle_steps` consecutive steps, or `max_steps` is reached. `observe`
/// runs after each accepted step.
pub fn run_to_equilibrium_with<T: Real, D: Dynamics<T>>(
    sys: &mut D,
    config: &IntegratorConfig<T>,
    mut observe: impl FnMut(&D, &StepReport<T>),
) -> Result<EquilibriumRun<T>> {
    config.validate()?;
    let mut trace = Vec::new();
    let mut time = T::zero();
    let mut quiet = 0;
    for n in 1..=config.max_steps {
        let report = match step(sys, config) {
            Ok(r) => r,
            Err(e) => {
                return Ok(EquilibriumRun {
                    status: RunStatus::StepFailed(e),
                    steps: n - 1,
                    time,
                    trace,
                })
            }
        };
        time += report.h_used;
        let tip = sys.tip();
        trace.push(TraceRow {
            step: n,
            time,
            tip: [tip.x, tip.y, tip.z],
            max_velocity: report.max_velocity,
            newton_iterations: report.newton_iterations,
            residual_norm: report.residual_norm,
            h_used: report.h_used,
        });
        observe(sys, &report);
        quiet = if report.max_velocity < config.convergence_velocity_tol {
            quiet + 1
        } else {
            0
        };
        if quiet >= config.settle_steps {
            return Ok(EquilibriumRun {
                status: RunStatus::Converged,
                steps: n,
                time,
                trace,
            });
        }
    }
    Ok(EquilibriumRun {
        status: RunStatus::MaxStepsReached,
        steps: config.max_steps,
        time,
        trace,
    })
}

pub fn run_to_equilibrium<T: Real, D: Dynamics<T>>(
    sys: &mut D,
    config: &IntegratorConfig<T>,
) -> Result<EquilibriumRun<T>> {
    run_to_equilibrium_with(sys, config, |_, _| {})
}

/// A single rod with its boundary conditions, exposing only the free
/// coordinates to the stepper.
#[derive(Debug, Clone)]
pub struct RodSystem<T: Real> {
    pub params: RodParameters<T>,
    pub bc: BoundaryConditions<T>,
    state: RodState<T>,
    free: Vec<usize>,
    mass: Vec<T>,
    pattern: SparsityPattern,
}

impl<T: Real> RodSystem<T> {
    pub fn new(params: RodParameters<T>, bc: BoundaryConditions<T>, mut state: RodState<T>) -> Result<Self> {
        params.validate()?;
        state.validate()?;
        if state.num_points() != params.num_points {
            return Err(Error::Config(format!(
                "state has {} points, parameters say {}",
                state.num_points(),
                params.num_points
            )));
        }
        bc.validate(params.num_points)?;
        if let Some(c) = &bc.clamp {
            state.points[0] = c.position;
            state.point_velocities[0] = Vec3::zeros();
        }
        let total = params.num_coordinates();
        let first = if bc.clamped_base() { 3 } else { 0 };
        let free: Vec<usize> = (first..total).collect();
        let full_mass = mass_matrix(&params).flatten();
        let mass = free.iter().map(|&i| full_mass[i]).collect();
        let pattern = single_rod_sparsity(params.num_points).restrict(&free);
        Ok(Self {
            params,
            bc,
            state,
            free,
            mass,
            pattern,
        })
    }

    pub fn state(&self) -> &RodState<T> {
        &self.state
    }

    /// Free coordinates occupy the tail of the interleaved layout.
    fn offset(&self) -> usize {
        self.free[0]
    }

    pub fn state_at(&self, x: &[T]) -> RodState<T> {
        let mut full = self.state.coordinates();
        full[self.offset()..].copy_from_slice(x);
        let mut s = self.state.clone();
        let v = self.state.velocities();
        s.set_coordinates(&full, &v);
        s
    }

    pub fn energy(&self) -> Result<T> {
        total_energy(&self.state, &self.params, &self.bc)
    }

    pub fn set_loads(&mut self, bc: BoundaryConditions<T>) -> Result<()> {
        bc.validate(self.params.num_points)?;
        if bc.clamped_base() != self.bc.clamped_base() {
            return Err(Error::Config("cannot change the clamp of a running system".into()));
        }
        self.bc = bc;
        Ok(())
    }
}

impl<T: Real> Dynamics<T> for RodSystem<T> {
    fn dof(&self) -> usize {
        self.free.len()
    }

    fn positions(&self) -> Vec<T> {
        self.state.coordinates()[self.offset()..].to_vec()
    }

    fn velocities(&self) -> Vec<T> {
        self.state.velocities()[self.offset()..].to_vec()
    }

    fn mass(&self) -> Vec<T> {
        self.mass.clone()
    }

    fn net_force(&self, x: &[T]) -> Result<Vec<T>> {
        let s = self.state_at(x);
        let f = assemble_forces(&s, &self.params, &self.bc)?;
        Ok(f[self.offset()..].to_vec())
    }

    fn sparsity(&self, _x: &[T]) -> SparsityPattern {
        self.pattern.clone()
    }

    fn normalize(&self, x: &mut [T]) {
        normalize_rod_quaternions(x, self.params.num_points, self.offset());
    }

    fn commit(&mut self, x: &[T], v: &[T]) {
        let off = self.offset();
        let mut full_x = self.state.coordinates();
        let mut full_v = vec![T::zero(); full_x.len()];
        full_x[off..].copy_from_slice(x);
        full_v[off..].copy_from_slice(v);
        self.state.set_coordinates(&full_x, &full_v);
    }

    fn max_point_speed(&self, v: &[T]) -> T {
        rod_point_speed(v, self.params.num_points, self.offset())
    }

    fn tip(&self) -> Vec3<T> {
        self.state.tip()
    }
}

/// Renormalize the quaternions of an interleaved rod block whose first
/// `offset` coordinates are absent from `x`.
pub(crate) fn normalize_rod_quaternions<T: Real>(x: &mut [T], n: usize, offset: usize) {
    for j in 0..n - 1 {
        let start = 7 * j + 3 - offset;
        let q = &mut x[start..start + 4];
        let norm = q.iter().map(|c| *c * *c).sum::<T>().sqrt();
        if norm > T::zero() {
            for c in q.iter_mut() {
                *c /= norm;
            }
        }
    }
}

pub(crate) fn rod_point_speed<T: Real>(v: &[T], n: usize, offset: usize) -> T {
    (0..n)
        .filter(|&i| 7 * i >= offset)
        .map(|i| {
            let s = 7 * i - offset;
            norm3(&Vec3::new(v[s], v[s + 1], v[s + 2]))
        })
        .fold(T::zero(), T::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Quaternion;
    use crate::rod::{make_rod, BasePose};
    use nalgebra::DMatrix;

    fn cfg() -> IntegratorConfig<f64> {
        IntegratorConfig::default()
    }

    fn cantilever(n: usize, load: f64) -> RodSystem<f64> {
        let mut params = RodParameters::new(5.9e6, 11040.0, 0.006, 0.12, n);
        params.quaternion_mass = Some(0.1);
        let base = BasePose::new(Vec3::zeros(), Quaternion::new(0.5, 0.5, 0.5, 0.5));
        let state = make_rod(&params, &base).unwrap();
        let bc = BoundaryConditions::clamped(base).with_load(n - 1, Vec3::new(0.0, -load, 0.0));
        RodSystem::new(params, bc, state).unwrap()
    }

    #[test]
    fn residual_rest_fixed_point() {
        let x = vec![1.0, 2.0, 3.0];
        let f = residual(&x, &x, &[0.0; 3], &[1.0; 3], |_| Ok(vec![0.0; 3]), &cfg()).unwrap();
        assert!(f.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn residual_is_affine_in_current_position() {
        let force = |x: &[f64]| Ok(x.iter().map(|v| -v * v).collect());
        let xn = [0.3, -0.2];
        let v = [0.1, 0.5];
        let m = [2.0, 3.0];
        let f = |a: &[f64]| residual(&xn, a, &v, &m, force, &cfg()).unwrap();
        let (a, b) = ([0.0, 1.0], [2.0, -1.0]);
        let mid = [1.0, 0.0];
        let (fa, fb, fm) = (f(&a), f(&b), f(&mid));
        for i in 0..2 {
            assert!((fm[i] - 0.5 * (fa[i] + fb[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn free_mass_under_constant_force() {
        let c = IntegratorConfig {
            timestep: 0.1,
            damping: 0.5,
            ..cfg()
        };
        let (x0, v0, m, force) = (1.0, 2.0, 4.0, 8.0);
        let root = x0 + 0.5 * 0.1 * v0 + 0.01 * force / m;
        let f = residual(&[root], &[x0], &[v0], &[m], |_| Ok(vec![force]), &c).unwrap();
        assert!(f[0].abs() < 1e-15);
    }

    #[test]
    fn newton_on_banded_linear_system_takes_one_iteration() {
        let n = 10;
        let pattern = SparsityPattern::from_pairs(
            n,
            (0..n).flat_map(|i| [(i, i), (i, (i + 1).min(n - 1)), (i, i.saturating_sub(1))]),
        );
        let f = |x: &[f64]| {
            Ok((0..n)
                .map(|i| {
                    let left = if i > 0 { x[i - 1] } else { 0.0 };
                    let right = if i + 1 < n { x[i + 1] } else { 0.0 };
                    4.0 * x[i] - left - right - (i as f64 + 1.0)
                })
                .collect::<Vec<f64>>())
        };
        let opts = NewtonOptions { tol: 1e-10, max_iters: 50, weights: None };
        let out = newton_solve(f, vec![0.0; n], |_| pattern.clone(), &opts).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.residual_norm <= 1e-10);
    }

    #[test]
    fn newton_scalar_square_root() {
        let opts = NewtonOptions { tol: 1e-14, max_iters: 50, weights: None };
        let out = newton_solve(
            |x: &[f64]| Ok(vec![x[0] * x[0] - 4.0]),
            vec![3.0],
            |_| SparsityPattern::dense(1),
            &opts,
        )
        .unwrap();
        assert!((out.x[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn newton_reports_failure() {
        let opts = NewtonOptions { tol: 1e-12, max_iters: 5, weights: None };
        let r = newton_solve(
            |x: &[f64]| Ok(vec![x[0] * x[0] + 1.0]),
            vec![3.0],
            |_| SparsityPattern::dense(1),
            &opts,
        );
        assert!(matches!(r, Err(Error::NewtonFailed { .. }) | Err(Error::Domain(_))));
    }

    #[test]
    fn compressed_jacobian_matches_dense() {
        for n in 3..=6 {
            let sys = cantilever(n, 0.3);
            let mut x = sys.positions();
            for (k, v) in x.iter_mut().enumerate() {
                *v += 1e-3 * ((k * 7919) % 13) as f64 / 13.0;
            }
            let mut force = |x: &[f64]| sys.net_force(x);
            let f0 = force(&x).unwrap();
            let sparse = fd_jacobian(&mut force, &x, &f0, &sys.sparsity(&x)).unwrap();
            let dense_pattern = SparsityPattern::dense(x.len());
            let dense_entries = fd_jacobian(&mut force, &x, &f0, &dense_pattern).unwrap();
            let mut dense = DMatrix::zeros(x.len(), x.len());
            for (i, j, v) in dense_entries {
                dense[(i, j)] = v;
            }
            let scale = dense.amax();
            for (i, j, v) in sparse {
                let d = dense[(i, j)];
                assert!((v - d).abs() <= 1e-6 * scale.max(d.abs()), "({i},{j}) {v} vs {d}");
            }
            // Every structurally excluded entry really is zero.
            let pattern = sys.sparsity(&x);
            for i in 0..x.len() {
                for j in 0..x.len() {
                    if !pattern.contains(i, j) {
                        assert_eq!(dense[(i, j)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn rest_rod_does_not_move() {
        let mut sys = cantilever(10, 0.0);
        let before = sys.state().clone();
        let report = step(&mut sys, &cfg()).unwrap();
        assert!(report.newton_iterations <= 1);
        let moved = before
            .points
            .iter()
            .zip(&sys.state().points)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(moved < 1e-12);
        let run = run_to_equilibrium(&mut sys, &cfg()).unwrap();
        assert!(run.converged() && run.steps <= 3);
    }

    #[test]
    fn energy_decays_after_release() {
        let mut sys = cantilever(12, 0.3);
        let c = cfg();
        for _ in 0..3 {
            step(&mut sys, &c).unwrap();
        }
        let mut unloaded = sys.bc.clone();
        unloaded.point_loads.clear();
        sys.set_loads(unloaded).unwrap();
        let mass = mass_matrix(&sys.params);
        let mechanical = |s: &RodSystem<f64>| s.energy().unwrap() + s.state().kinetic_energy(&mass);
        let mut last = mechanical(&sys);
        let mut ke = f64::INFINITY;
        for _ in 0..2000 {
            step(&mut sys, &c).unwrap();
            let e = mechanical(&sys);
            assert!(e <= last + 1e-15, "{e} > {last}");
            last = e;
            ke = sys.state().kinetic_energy(&mass);
            if ke < 1e-13 {
                break;
            }
        }
        assert!(ke < 1e-12, "final kinetic energy {ke}");
    }

    #[test]
    fn small_steps_approach_explicit_euler() {
        let deviation = |h: f64| {
            let mut sys = cantilever(6, 0.2);
            let c = IntegratorConfig { timestep: h, ..cfg() };
            let x0 = sys.positions();
            let m = sys.mass();
            let f0 = sys.net_force(&x0).unwrap();
            let explicit: Vec<f64> = (0..x0.len()).map(|i| x0[i] + h * h * f0[i] / m[i]).collect();
            step(&mut sys, &c).unwrap();
            let x1 = sys.positions();
            // Compare translational coordinates; quaternions are renormalized.
            (0..x1.len())
                .filter(|k| (k + 3) % 7 < 3)
                .map(|k| (x1[k] - explicit[k]).abs())
                .fold(0.0, f64::max)
        };
        let (a, b) = (deviation(2e-4), deviation(1e-4));
        assert!(a > 0.0 && a / b > 3.5, "{a} {b}");
    }

    #[test]
    fn runs_are_bitwise_deterministic() {
        let run = || {
            let mut sys = cantilever(10, 0.2);
            let c = IntegratorConfig { max_steps: 20, ..cfg() };
            run_to_equilibrium(&mut sys, &c).unwrap();
            sys.positions()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn invalid_config_rejected() {
        let c = IntegratorConfig { damping: 1.5, ..cfg() };
        assert!(c.validate().is_err());
        let c = IntegratorConfig { timestep: 0.0, ..cfg() };
        assert!(c.validate().is_err());
    }
}
