//! Declarative scenarios: TOML configuration, runs to equilibrium, parameter
//! sweeps and the files they produce.
//!
//! A scenario file describes either one clamped rod (`[rod]` plus `[load]`)
//! or a catheter with a tendon in its lumen (`[catheter]`, `[tendon]` and
//! `[coupling]`). All quantities are SI.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cantilever::{self, CantileverProblem};
use crate::coupling::{offset_direction, simulate_coupled, CoupledSystem, CouplingConfig, LumenConstraint, ReactionMode};
use crate::error::{Error, Result};
use crate::frame::{directors_from_quaternion, Quaternion};
use crate::implicit::{run_to_equilibrium, EquilibriumRun, IntegratorConfig, RodSystem, RunStatus, TraceRow};
use crate::metrics::{self, Centerline2D, LengthUnit};
use crate::plot::render_svg;
use crate::rod::{make_rod, BasePose, BoundaryConditions, RodParameters, StiffnessVariant};
use crate::scalar::{norm3, Vec3};

/// m/s², used to turn hanging masses into endpoint forces.
pub const STANDARD_GRAVITY: f64 = 9.80665;

/// A tip within this fraction of the rod length of its final position has
/// reached its plateau.
pub const PLATEAU_BAND: f64 = 1e-3;

const DEFAULT_QUATERNION_MASS: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub rod: Option<RodSpec>,
    pub catheter: Option<RodSpec>,
    pub tendon: Option<RodSpec>,
    pub coupling: Option<CouplingSpec>,
    #[serde(default)]
    pub base: BaseSpec,
    pub load: Option<LoadSpec>,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub outputs: OutputSpec,
    pub sweep: Option<SweepSpec>,
}

/// Quaternion generalized mass: a value in kg·m², or `"polar"` for the
/// cross-section polar-inertia lumping.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum QuaternionMass {
    Value(f64),
    Model(MassModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MassModel {
    Polar,
}

impl Default for QuaternionMass {
    fn default() -> Self {
        QuaternionMass::Value(DEFAULT_QUATERNION_MASS)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RodSpec {
    pub youngs_bend: f64,
    /// Defaults to `youngs_bend`.
    pub youngs_stretch: Option<f64>,
    pub shear_modulus: Option<f64>,
    pub density: f64,
    pub radius: f64,
    pub length: f64,
    pub num_points: usize,
    #[serde(default = "default_penalty")]
    pub penalty: f64,
    #[serde(default)]
    pub stiffness_variant: StiffnessVariant,
    #[serde(default)]
    pub quaternion_mass: QuaternionMass,
    #[serde(default)]
    pub intrinsic_curvature: [f64; 3],
}

fn default_penalty() -> f64 {
    1e4
}

impl RodSpec {
    pub fn build(&self) -> Result<RodParameters<f64>> {
        let mut p = RodParameters::new(self.youngs_bend, self.density, self.radius, self.length, self.num_points);
        p.youngs_stretch = self.youngs_stretch.unwrap_or(self.youngs_bend);
        p.shear_modulus = self.shear_modulus;
        p.penalty = self.penalty;
        p.stiffness_variant = self.stiffness_variant;
        p.intrinsic_curvature = Vec3::from(self.intrinsic_curvature);
        p.quaternion_mass = match self.quaternion_mass {
            QuaternionMass::Value(j) => Some(j),
            QuaternionMass::Model(MassModel::Polar) => None,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseSpec {
    #[serde(default)]
    pub position: [f64; 3],
    /// Scalar-last quaternion. The default points the rod along +x with
    /// `d1 = +y`.
    #[serde(default = "default_orientation")]
    pub orientation: [f64; 4],
}

fn default_orientation() -> [f64; 4] {
    [0.5; 4]
}

impl Default for BaseSpec {
    fn default() -> Self {
        Self {
            position: [0.0; 3],
            orientation: default_orientation(),
        }
    }
}

impl BaseSpec {
    pub fn build(&self) -> Result<BasePose<f64>> {
        let [a, b, c, d] = self.orientation;
        let q = Quaternion::new(a, b, c, d)
            .normalized()
            .map_err(|e| Error::Config(format!("base orientation: {e}")))?;
        if self.position.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("base position must be finite".into()));
        }
        Ok(BasePose::new(Vec3::from(self.position), q))
    }
}

/// Constant endpoint load on a single rod.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    /// kg, converted with standard gravity.
    pub hanging_mass: Option<f64>,
    /// N, applied as given. Excludes `hanging_mass`.
    pub force: Option<[f64; 3]>,
    #[serde(default = "default_direction")]
    pub direction: [f64; 3],
    /// Also apply gravity to the rod body along `direction`.
    #[serde(default)]
    pub gravity: bool,
}

fn default_direction() -> [f64; 3] {
    [0.0, -1.0, 0.0]
}

impl LoadSpec {
    fn unit_direction(&self) -> Result<Vec3<f64>> {
        let d = Vec3::from(self.direction);
        let n = norm3(&d);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Config("load direction must be a non-zero vector".into()));
        }
        Ok(d / n)
    }

    /// Endpoint force vector.
    pub fn force(&self) -> Result<Vec3<f64>> {
        match (self.hanging_mass, self.force) {
            (Some(_), Some(_)) => Err(Error::Config("give either load.hanging_mass or load.force, not both".into())),
            (Some(m), None) => {
                if !(m >= 0.0) || !m.is_finite() {
                    return Err(Error::Config(format!("hanging_mass must be non-negative, got {m}")));
                }
                Ok(self.unit_direction()? * (m * STANDARD_GRAVITY))
            }
            (None, Some(f)) => {
                if f.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config("load.force must be finite".into()));
                }
                Ok(Vec3::from(f))
            }
            (None, None) => Ok(Vec3::zeros()),
        }
    }
}

/// Optional overrides of the integrator defaults.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    pub timestep: Option<f64>,
    pub damping: Option<f64>,
    pub residual_tol: Option<f64>,
    pub max_newton_iters: Option<usize>,
    pub max_steps: Option<usize>,
    pub convergence_velocity_tol: Option<f64>,
    pub settle_steps: Option<usize>,
    pub max_halvings: Option<usize>,
}

impl IntegratorSpec {
    pub fn build(&self) -> Result<IntegratorConfig<f64>> {
        let d = IntegratorConfig::default();
        let c = IntegratorConfig {
            timestep: self.timestep.unwrap_or(d.timestep),
            damping: self.damping.unwrap_or(d.damping),
            residual_tol: self.residual_tol.unwrap_or(d.residual_tol),
            max_newton_iters: self.max_newton_iters.unwrap_or(d.max_newton_iters),
            max_steps: self.max_steps.unwrap_or(d.max_steps),
            convergence_velocity_tol: self.convergence_velocity_tol.unwrap_or(d.convergence_velocity_tol),
            settle_steps: self.settle_steps.unwrap_or(d.settle_steps),
            max_halvings: self.max_halvings.unwrap_or(d.max_halvings),
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    /// Compare a single rod against the large-deflection cantilever solution.
    #[serde(default)]
    pub oracle: bool,
    /// Reference centerline CSV, relative to the scenario file.
    pub curve: Option<PathBuf>,
    /// `m` or `mm`, for `curve`.
    pub units: Option<String>,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    400
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        Self {
            oracle: false,
            curve: None,
            units: None,
            samples: default_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "yes")]
    pub trace: bool,
    #[serde(default = "yes")]
    pub plot: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            trace: true,
            plot: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    /// `r_L`, m.
    pub lumen_offset: f64,
    #[serde(default = "default_weights")]
    pub direction_weights: [f64; 2],
    pub lumen_constant: f64,
    pub endpoint_compliance_constant: f64,
    pub endpoint_coupling_constant: f64,
    #[serde(default)]
    pub reaction_mode: ReactionMode,
    #[serde(default)]
    pub lumen_constraint: LumenConstraint,
    /// Pull on the proximal tendon node, N.
    pub actuation_force: f64,
}

fn default_weights() -> [f64; 2] {
    [1.0, 0.0]
}

impl CouplingSpec {
    pub fn build(&self) -> Result<CouplingConfig<f64>> {
        let mut c = CouplingConfig::new(
            self.lumen_offset,
            self.lumen_constant,
            self.endpoint_compliance_constant,
            self.endpoint_coupling_constant,
        );
        c.direction_weights = (self.direction_weights[0], self.direction_weights[1]);
        c.reaction_mode = self.reaction_mode;
        c.lumen_constraint = self.lumen_constraint;
        c.validate()?;
        if !(self.actuation_force >= 0.0) || !self.actuation_force.is_finite() {
            return Err(Error::Config(format!(
                "actuation_force must be non-negative, got {}",
                self.actuation_force
            )));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: String,
    pub values: Vec<f64>,
}

/// Scenario quantity a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepParameter {
    /// `K_p`, on the single rod or the catheter.
    Penalty,
    /// `N`: the single rod, or both catheter and tendon at a 1:1 ratio.
    Points,
    /// `ξ`
    Damping,
    /// `K_L`
    Lumen,
    /// `K_E`
    EndpointCompliance,
    /// `K_C`
    EndpointCoupling,
    /// `N_T`
    TendonPoints,
    /// `N_C`
    CatheterPoints,
}

impl SweepParameter {
    pub const ALL: [SweepParameter; 8] = [
        Self::Penalty,
        Self::Points,
        Self::Damping,
        Self::Lumen,
        Self::EndpointCompliance,
        Self::EndpointCoupling,
        Self::TendonPoints,
        Self::CatheterPoints,
    ];

    /// Canonical short name, also used in file names.
    pub fn key(self) -> &'static str {
        match self {
            Self::Penalty => "K_p",
            Self::Points => "N",
            Self::Damping => "xi",
            Self::Lumen => "K_L",
            Self::EndpointCompliance => "K_E",
            Self::EndpointCoupling => "K_C",
            Self::TendonPoints => "N_T",
            Self::CatheterPoints => "N_C",
        }
    }

    fn is_count(self) -> bool {
        matches!(self, Self::Points | Self::TendonPoints | Self::CatheterPoints)
    }
}

impl FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let p = match s {
            "K_p" | "penalty" => Self::Penalty,
            "N" | "num_points" => Self::Points,
            "xi" | "ξ" | "damping" => Self::Damping,
            "K_L" | "lumen_constant" => Self::Lumen,
            "K_E" | "endpoint_compliance_constant" => Self::EndpointCompliance,
            "K_C" | "endpoint_coupling_constant" => Self::EndpointCoupling,
            "N_T" | "tendon_points" => Self::TendonPoints,
            "N_C" | "catheter_points" => Self::CatheterPoints,
            other => {
                let known: Vec<&str> = Self::ALL.iter().map(|p| p.key()).collect();
                return Err(Error::Config(format!(
                    "unknown sweep parameter `{other}` (expected one of {})",
                    known.join(", ")
                )));
            }
        };
        Ok(p)
    }
}

impl std::fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}

/// In-plane coordinates used for every 2D metric and plot: `u` along the
/// undeformed axis, `v` along the load (or lumen side), origin at the base.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Plane {
    origin: Vec3<f64>,
    u: Vec3<f64>,
    v: Vec3<f64>,
}

impl Plane {
    fn new(origin: Vec3<f64>, axis: Vec3<f64>, toward: Vec3<f64>, fallback: Vec3<f64>) -> Self {
        let mut v = toward - axis * axis.dot(&toward);
        if norm3(&v) < 1e-9 {
            v = fallback - axis * axis.dot(&fallback);
        }
        let n = norm3(&v);
        Self {
            origin,
            u: axis,
            v: v / n,
        }
    }

    fn project(&self, p: &Vec3<f64>) -> [f64; 2] {
        let d = p - self.origin;
        [d.dot(&self.u), d.dot(&self.v)]
    }

    fn lift(&self, q: [f64; 2]) -> [f64; 3] {
        let p = self.origin + self.u * q[0] + self.v * q[1];
        [p.x, p.y, p.z]
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ReferenceFrame {
    /// Curve given in the rod's own deformation plane.
    InPlane,
    /// Curve read from a file in simulation x-y coordinates.
    SimulationXy,
}

#[derive(Debug, Clone, PartialEq)]
struct Reference {
    curve: Centerline2D,
    frame: ReferenceFrame,
    points_3d: Vec<[f64; 3]>,
}

impl Reference {
    fn project(&self, plane: &Plane, p: &Vec3<f64>) -> [f64; 2] {
        match self.frame {
            ReferenceFrame::InPlane => plane.project(p),
            ReferenceFrame::SimulationXy => [p.x, p.y],
        }
    }
}

#[derive(Debug, Clone)]
enum Plan {
    Single {
        params: RodParameters<f64>,
        bc: BoundaryConditions<f64>,
        base: BasePose<f64>,
    },
    Coupled {
        catheter: RodParameters<f64>,
        tendon: RodParameters<f64>,
        coupling: CouplingConfig<f64>,
        actuation: f64,
        base: BasePose<f64>,
    },
}

/// A parsed scenario, ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    /// Directory that relative reference paths resolve against.
    pub base_dir: PathBuf,
    /// Unit for reference curves that do not name one.
    pub default_units: LengthUnit,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base_dir)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(&e))))
    }

    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let s = Self {
            config,
            base_dir: base_dir.into(),
            default_units: LengthUnit::Meters,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn name(&self) -> &str {
        self.config.name.as_deref().unwrap_or("scenario")
    }

    pub fn is_coupled(&self) -> bool {
        self.config.catheter.is_some()
    }

    /// Check everything a run needs without running it.
    pub fn validate(&self) -> Result<()> {
        self.plan()?;
        self.config.integrator.build()?;
        if let Some(sweep) = &self.config.sweep {
            self.sweep_variants(sweep)?;
        }
        Ok(())
    }

    fn plan(&self) -> Result<Plan> {
        let c = &self.config;
        let base = c.base.build()?;
        match (&c.rod, &c.catheter, &c.tendon, &c.coupling) {
            (Some(rod), None, None, None) => {
                let params = rod.build()?;
                let load = c.load.clone().unwrap_or(LoadSpec {
                    hanging_mass: None,
                    force: None,
                    direction: default_direction(),
                    gravity: false,
                });
                let force = load.force()?;
                let mut bc = BoundaryConditions::clamped(base);
                if norm3(&force) > 0.0 {
                    bc = bc.with_load(params.num_points - 1, force);
                }
                if load.gravity {
                    bc.gravity = Some(load.unit_direction()? * STANDARD_GRAVITY);
                }
                bc.validate(params.num_points)?;
                if c.reference.oracle {
                    self.check_oracle_applicable(&params, &base, &load, &force)?;
                }
                Ok(Plan::Single { params, bc, base })
            }
            (None, Some(cat), Some(ten), Some(coupling)) => {
                if c.load.is_some() {
                    return Err(Error::Config("[load] applies to single-rod scenarios only".into()));
                }
                if c.reference.oracle {
                    return Err(Error::Config("the cantilever oracle applies to single-rod scenarios only".into()));
                }
                Ok(Plan::Coupled {
                    catheter: cat.build().map_err(|e| context("catheter", e))?,
                    tendon: ten.build().map_err(|e| context("tendon", e))?,
                    coupling: coupling.build()?,
                    actuation: coupling.actuation_force,
                    base,
                })
            }
            (None, None, None, None) => Err(Error::Config(
                "no topology: give [rod] for a single rod, or [catheter], [tendon] and [coupling]".into(),
            )),
            (Some(_), ..) => Err(Error::Config(
                "exactly one topology allowed: [rod] cannot be combined with [catheter], [tendon] or [coupling]".into(),
            )),
            _ => Err(Error::Config(
                "a coupled scenario needs all of [catheter], [tendon] and [coupling]".into(),
            )),
        }
    }

    fn check_oracle_applicable(
        &self,
        params: &RodParameters<f64>,
        base: &BasePose<f64>,
        load: &LoadSpec,
        force: &Vec3<f64>,
    ) -> Result<()> {
        let axis = directors_from_quaternion(&base.orientation)?.d3;
        let f = norm3(force);
        if !(f > 0.0) {
            return Err(Error::Config("the cantilever oracle needs a non-zero endpoint load".into()));
        }
        if load.gravity {
            return Err(Error::Config("the cantilever oracle assumes no body gravity".into()));
        }
        if (axis.dot(force) / f).abs() > 1e-9 {
            return Err(Error::Config("the cantilever oracle needs a load perpendicular to the rod axis".into()));
        }
        if params.intrinsic_curvature.iter().any(|&k| k != 0.0) {
            return Err(Error::Config("the cantilever oracle needs a straight rest shape".into()));
        }
        CantileverProblem::circular(f, params.length, params.youngs_bend, params.radius)
            .and_then(|p| cantilever::AlphaTable::shared().phi0(p.load_parameter()))
            .map(|_| ())
            .map_err(|e| Error::Config(format!("reference oracle: {e}")))
    }

    /// A copy with one parameter replaced.
    pub fn with_parameter(&self, parameter: SweepParameter, value: f64) -> Result<Scenario> {
        if !value.is_finite() {
            return Err(Error::Config(format!("sweep value {value} is not finite")));
        }
        let count = || -> Result<usize> {
            if value < 0.0 || value.fract() != 0.0 || value > u32::MAX as f64 {
                Err(Error::Config(format!("{parameter} takes whole numbers, got {value}")))
            } else {
                Ok(value as usize)
            }
        };
        let mut s = self.clone();
        s.config.sweep = None;
        let coupled = s.is_coupled();
        let needs_coupled = || Error::Config(format!("sweep parameter {parameter} needs a coupled scenario"));
        let c = &mut s.config;
        match parameter {
            SweepParameter::Penalty => primary_rod(c)?.penalty = value,
            SweepParameter::Points => {
                let n = count()?;
                primary_rod(c)?.num_points = n;
                if let Some(t) = c.tendon.as_mut() {
                    t.num_points = n;
                }
            }
            SweepParameter::CatheterPoints if coupled => primary_rod(c)?.num_points = count()?,
            SweepParameter::TendonPoints if coupled => c.tendon.as_mut().expect("coupled").num_points = count()?,
            SweepParameter::Damping => c.integrator.damping = Some(value),
            SweepParameter::Lumen if coupled => c.coupling.as_mut().expect("coupled").lumen_constant = value,
            SweepParameter::EndpointCompliance if coupled => {
                c.coupling.as_mut().expect("coupled").endpoint_compliance_constant = value
            }
            SweepParameter::EndpointCoupling if coupled => {
                c.coupling.as_mut().expect("coupled").endpoint_coupling_constant = value
            }
            _ => return Err(needs_coupled()),
        }
        s.validate()
            .map_err(|e| Error::Config(format!("{parameter} = {value}: {}", strip_prefix(&e))))?;
        Ok(s)
    }

    fn sweep_variants(&self, sweep: &SweepSpec) -> Result<(SweepParameter, Vec<Scenario>)> {
        let parameter: SweepParameter = sweep.parameter.parse()?;
        if sweep.values.is_empty() {
            return Err(Error::Config("sweep.values must not be empty".into()));
        }
        if parameter.is_count() && sweep.values.iter().any(|v| v.fract() != 0.0) {
            return Err(Error::Config(format!("{parameter} takes whole numbers")));
        }
        let variants = sweep
            .values
            .iter()
            .map(|&v| self.with_parameter(parameter, v))
            .collect::<Result<Vec<_>>>()?;
        Ok((parameter, variants))
    }

    fn reference(&self, plane: &Plane, plan: &Plan) -> Result<Option<Reference>> {
        let r = &self.config.reference;
        if r.oracle && r.curve.is_some() {
            return Err(Error::Config("give either reference.oracle or reference.curve, not both".into()));
        }
        if r.oracle {
            let Plan::Single { params, bc, .. } = plan else {
                unreachable!("oracle checked in plan");
            };
            let force = norm3(&bc.point_loads[0].force);
            let problem = CantileverProblem::circular(force, params.length, params.youngs_bend, params.radius)?;
            let curve = cantilever::solve(&problem, r.samples)?;
            let points = curve.points();
            let points_3d = points.iter().map(|&q| plane.lift(q)).collect();
            return Ok(Some(Reference {
                curve: Centerline2D::new("oracle", points)?,
                frame: ReferenceFrame::InPlane,
                points_3d,
            }));
        }
        if let Some(path) = &r.curve {
            let unit = match &r.units {
                Some(u) => u.parse()?,
                None => self.default_units,
            };
            let full = if path.is_absolute() {
                path.clone()
            } else {
                self.base_dir.join(path)
            };
            let loaded = metrics::read_centerline(&full, unit)?;
            for w in &loaded.warnings {
                log::warn!("{}: {w}", full.display());
            }
            let mut curve = loaded.curve;
            curve.label = "reference".into();
            let points_3d = curve.points.iter().map(|p| [p[0], p[1], 0.0]).collect();
            return Ok(Some(Reference {
                curve,
                frame: ReferenceFrame::SimulationXy,
                points_3d,
            }));
        }
        Ok(None)
    }

    /// Run to equilibrium. Non-convergence is reported in the result, not as
    /// an error; errors are configuration or input problems.
    pub fn run(&self) -> Result<RunOutcome> {
        let plan = self.plan()?;
        let integrator = self.config.integrator.build()?;
        let started = Instant::now();
        let (run, curves, plane, length, constraints) = match &plan {
            Plan::Single { params, bc, base } => {
                let frame = directors_from_quaternion(&base.orientation)?;
                let toward = bc
                    .point_loads
                    .first()
                    .map(|l| l.force)
                    .or(bc.gravity)
                    .unwrap_or(frame.d1);
                let plane = Plane::new(base.position, frame.d3, toward, frame.d1);
                let state = make_rod(params, base)?;
                let mut sys = RodSystem::new(params.clone(), bc.clone(), state)?;
                let run = run_to_equilibrium(&mut sys, &integrator)?;
                let state = sys.state();
                let constraints = ConstraintResiduals {
                    max_director_defect: state.max_director_defect(),
                    ..Default::default()
                };
                (run, vec![("rod".to_string(), points_of(&state.points))], plane, params.length, constraints)
            }
            Plan::Coupled {
                catheter,
                tendon,
                coupling,
                actuation,
                base,
            } => {
                let frame = directors_from_quaternion(&base.orientation)?;
                let side = offset_direction(&base.orientation, coupling);
                let plane = Plane::new(base.position, frame.d3, side, frame.d1);
                let mut sys = CoupledSystem::new(catheter.clone(), tendon.clone(), coupling.clone(), *actuation, *base)?;
                let run = simulate_coupled(&mut sys, &integrator, |_, _| {})?;
                let loads = sys.loads()?;
                let defect = sys
                    .catheter
                    .state()
                    .max_director_defect()
                    .max(sys.tendon.state().max_director_defect());
                let constraints = ConstraintResiduals {
                    max_director_defect: defect,
                    max_lumen_compliance: Some(loads.registration.max_compliance()),
                    endpoint_compliance: Some(loads.endpoint.compliance_measure),
                    endpoint_coupling: Some(loads.endpoint.coupling_measure),
                    max_net_coupling_force: Some(sys.max_net_coupling_force()),
                };
                let curves = vec![
                    ("catheter".to_string(), points_of(&sys.catheter.state().points)),
                    ("tendon".to_string(), points_of(&sys.tendon.state().points)),
                ];
                (run, curves, plane, catheter.length, constraints)
            }
        };
        let wall_time = started.elapsed().as_secs_f64();
        let reference = self.reference(&plane, &plan)?;
        Ok(self.assemble(run, curves, plane, length, constraints, reference, wall_time))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        &self,
        run: EquilibriumRun<f64>,
        curves: Vec<(String, Vec<[f64; 3]>)>,
        plane: Plane,
        length: f64,
        constraints: ConstraintResiduals,
        reference: Option<Reference>,
        wall_time: f64,
    ) -> RunOutcome {
        let primary = &curves[0].1;
        let tip_arr = *primary.last().expect("rod has points");
        let tip = Vec3::from(tip_arr);
        let tip_in_plane = plane.project(&tip);

        let mut plot_curves: Vec<Centerline2D> = curves
            .iter()
            .filter_map(|(label, pts)| {
                let p2: Vec<[f64; 2]> = pts.iter().map(|p| plane.project(&Vec3::from(*p))).collect();
                Centerline2D::new(label.clone(), p2).ok()
            })
            .collect();

        let mut metrics = None;
        let mut trace_errors = None;
        if let Some(r) = &reference {
            let sim: Vec<[f64; 2]> = primary.iter().map(|p| r.project(&plane, &Vec3::from(*p))).collect();
            let sim = Centerline2D::new(curves[0].0.clone(), sim).expect("finite centerline");
            let tip_error_fraction = metrics::tip_error(&sim, &r.curve, length).unwrap_or(f64::NAN);
            let area_error = metrics::area_error(&sim, &r.curve, length).unwrap_or(f64::NAN);
            metrics = Some(ReferenceMetrics {
                reference: r.curve.label.clone(),
                tip_error_fraction,
                area_error,
                rod_length: length,
            });
            let target = r.curve.last();
            trace_errors = Some(
                run.trace
                    .iter()
                    .map(|row| {
                        let q = r.project(&plane, &Vec3::from(row.tip));
                        (q[0] - target[0]).hypot(q[1] - target[1]) / length
                    })
                    .collect(),
            );
            if r.frame == ReferenceFrame::InPlane {
                plot_curves.push(r.curve.clone());
            }
        }

        let (status, failure) = match &run.status {
            RunStatus::Converged => ("converged", None),
            RunStatus::MaxStepsReached => ("max-steps", None),
            RunStatus::StepFailed(e) => ("step-failed", Some(e.to_string())),
        };
        let result = RunResult {
            name: self.name().to_string(),
            topology: if self.is_coupled() { "coupled" } else { "single-rod" }.to_string(),
            converged: run.converged(),
            status: status.to_string(),
            failure,
            steps: run.steps,
            newton_iterations: run.total_newton_iterations(),
            simulated_time: run.time,
            wall_time,
            tip: tip_arr,
            tip_in_plane,
            deflection_fraction: tip_in_plane[1] / length,
            settling: settling(&run.trace, length),
            metrics,
            constraints,
            centerlines: curves
                .into_iter()
                .map(|(label, points)| CenterlineRecord { label, points })
                .collect(),
        };
        RunOutcome {
            result,
            trace: run.trace,
            trace_errors,
            plot_curves,
            reference: reference.map(|r| ("reference".to_string(), r.points_3d)),
            outputs: self.config.outputs.clone(),
        }
    }
}

fn primary_rod(c: &mut ScenarioConfig) -> Result<&mut RodSpec> {
    c.rod
        .as_mut()
        .or(c.catheter.as_mut())
        .ok_or_else(|| Error::Config("scenario has no rod".into()))
}

fn context(what: &str, e: Error) -> Error {
    Error::Config(format!("{what}: {}", strip_prefix(&e)))
}

/// Message of a configuration error without its category prefix.
fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

fn points_of(points: &[Vec3<f64>]) -> Vec<[f64; 3]> {
    points.iter().map(|p| [p.x, p.y, p.z]).collect()
}

/// How the tip trajectory settles, measured against its final position with
/// a band of [`PLATEAU_BAND`]·L.
fn settling(trace: &[TraceRow<f64>], length: f64) -> Option<Settling> {
    let last = Vec3::from(trace.last()?.tip);
    let dev: Vec<f64> = trace
        .iter()
        .map(|r| norm3(&(Vec3::from(r.tip) - last)) / length)
        .collect();
    let first = dev.iter().position(|&d| d <= PLATEAU_BAND)?;
    let settled = dev.iter().rposition(|&d| d > PLATEAU_BAND).map_or(0, |k| k + 1);
    Some(Settling {
        first_entry_step: trace[first].step,
        plateau_step: trace[settled].step,
        overshoot_after_entry: dev[first..].iter().cloned().fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Settling {
    /// First step inside the band.
    pub first_entry_step: usize,
    /// First step after which the tip never leaves the band.
    pub plateau_step: usize,
    /// Largest tip distance from its final position from the first entry
    /// on, as a fraction of the rod length.
    pub overshoot_after_entry: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ConstraintResiduals {
    /// Largest `‖t̂ − d3‖` over all elements.
    pub max_director_defect: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_lumen_compliance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint_compliance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint_coupling: Option<f64>,
    /// Largest norm of the summed coupling forces seen during the run, N.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_net_coupling_force: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceMetrics {
    pub reference: String,
    pub tip_error_fraction: f64,
    pub area_error: f64,
    pub rod_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CenterlineRecord {
    pub label: String,
    pub points: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub name: String,
    pub topology: String,
    pub converged: bool,
    /// `converged`, `max-steps` or `step-failed`.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub steps: usize,
    pub newton_iterations: usize,
    /// s
    pub simulated_time: f64,
    /// s
    pub wall_time: f64,
    /// Tip of the single rod or catheter, m.
    pub tip: [f64; 3],
    /// Tip along the undeformed axis and toward the load or lumen side, m.
    pub tip_in_plane: [f64; 2],
    /// Signed sideways tip deflection over rod length.
    pub deflection_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub settling: Option<Settling>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<ReferenceMetrics>,
    pub constraints: ConstraintResiduals,
    pub centerlines: Vec<CenterlineRecord>,
}

/// A finished run with everything needed to write its files.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub result: RunResult,
    pub trace: Vec<TraceRow<f64>>,
    /// Tip error against the reference after every step.
    pub trace_errors: Option<Vec<f64>>,
    plot_curves: Vec<Centerline2D>,
    reference: Option<(String, Vec<[f64; 3]>)>,
    outputs: OutputSpec,
}

impl RunOutcome {
    /// Write `result.json`, `centerline_*.csv` and, when enabled, `trace.csv`
    /// and `plot.svg` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(&self.result).map_err(|e| Error::Serialize(e.to_string()))?;
        write_file(&dir.join("result.json"), json + "\n")?;
        for c in &self.result.centerlines {
            metrics::write_centerline_3d(&c.points, &dir.join(format!("centerline_{}.csv", c.label)))?;
        }
        if let Some((label, pts)) = &self.reference {
            metrics::write_centerline_3d(pts, &dir.join(format!("centerline_{label}.csv")))?;
        }
        if self.outputs.trace {
            self.write_trace(&dir.join("trace.csv"))?;
        }
        if self.outputs.plot {
            write_file(&dir.join("plot.svg"), render_svg(&self.result.name, &self.plot_curves))?;
        }
        Ok(())
    }

    fn write_trace(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header = vec![
            "step",
            "time",
            "tip_x",
            "tip_y",
            "tip_z",
            "max_velocity",
            "newton_iterations",
            "residual_norm",
            "h_used",
        ];
        if self.trace_errors.is_some() {
            header.push("tip_error_fraction");
        }
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for (i, r) in self.trace.iter().enumerate() {
            let mut rec = vec![
                r.step.to_string(),
                r.time.to_string(),
                r.tip[0].to_string(),
                r.tip[1].to_string(),
                r.tip[2].to_string(),
                r.max_velocity.to_string(),
                r.newton_iterations.to_string(),
                r.residual_norm.to_string(),
                r.h_used.to_string(),
            ];
            if let Some(errs) = &self.trace_errors {
                rec.push(errs[i].to_string());
            }
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn write_file(path: &Path, contents: String) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Serialize(format!("{}: {other:?}", path.display())),
    }
}

/// Results of a parameter sweep, in the order the values were given.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub runs: Vec<RunOutcome>,
}

/// Run every sweep value on a pool of `threads` workers (0 picks the number
/// of cores).
pub fn run_sweep(scenario: &Scenario, threads: usize) -> Result<SweepOutcome> {
    let sweep = scenario
        .config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("scenario has no [sweep] block".into()))?;
    let (parameter, variants) = scenario.sweep_variants(sweep)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let runs = pool.install(|| variants.par_iter().map(Scenario::run).collect::<Result<Vec<_>>>())?;
    Ok(SweepOutcome {
        parameter,
        values: sweep.values.clone(),
        runs,
    })
}

impl SweepOutcome {
    pub fn all_converged(&self) -> bool {
        self.runs.iter().all(|r| r.result.converged)
    }

    /// Per-value run directories plus `summary.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, (run, value)) in self.runs.iter().zip(&self.values).enumerate() {
            run.write(&dir.join(format!("{i:02}_{}_{value}", self.parameter.key())))?;
        }
        let path = dir.join("summary.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        w.write_record([
            "parameter",
            "value",
            "converged",
            "steps",
            "newton_iterations",
            "plateau_step",
            "tip_x",
            "tip_y",
            "tip_z",
            "deflection_fraction",
            "tip_error_fraction",
            "area_error",
            "max_director_defect",
            "max_lumen_compliance",
            "wall_time",
        ])
        .map_err(|e| csv_err(&path, e))?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for (run, value) in self.runs.iter().zip(&self.values) {
            let r = &run.result;
            w.write_record([
                self.parameter.key().to_string(),
                value.to_string(),
                r.converged.to_string(),
                r.steps.to_string(),
                r.newton_iterations.to_string(),
                r.settling.map(|s| s.plateau_step.to_string()).unwrap_or_default(),
                r.tip[0].to_string(),
                r.tip[1].to_string(),
                r.tip[2].to_string(),
                r.deflection_fraction.to_string(),
                opt(r.metrics.as_ref().map(|m| m.tip_error_fraction)),
                opt(r.metrics.as_ref().map(|m| m.area_error)),
                r.constraints.max_director_defect.to_string(),
                opt(r.constraints.max_lumen_compliance),
                r.wall_time.to_string(),
            ])
            .map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }
}

/// Analytical cantilever curve in the default simulation frame: the rod
/// along +x, the load along −y.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCurve {
    pub load_parameter: f64,
    pub tip_angle: f64,
    pub curve: Centerline2D,
    pub arc_length: f64,
    /// Tip deflection over the small-load value `F·L³/(3·E·I)`.
    pub linear_ratio: f64,
}

pub fn oracle_curve(force: f64, length: f64, youngs: f64, radius: f64, samples: usize) -> Result<OracleCurve> {
    let problem = CantileverProblem::circular(force, length, youngs, radius)?;
    let curve = cantilever::solve(&problem, samples)?;
    let linear = force * length.powi(3) / (3.0 * youngs * problem.area_moment);
    let points = curve.points().into_iter().map(|[x, y]| [x, -y]).collect();
    Ok(OracleCurve {
        load_parameter: problem.load_parameter(),
        tip_angle: curve.phi0,
        arc_length: curve.arc_length(),
        linear_ratio: curve.tip().y / linear,
        curve: Centerline2D::new("oracle", points)?,
    })
}
