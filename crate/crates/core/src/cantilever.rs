//! Large-deflection cantilever under a tip load, used as the reference
//! solution for the single-rod simulation.
//!
//! With `φ` the slope angle along the beam (0 at the clamp, `φ0` at the
//! tip) and `k = sin φ0`, the substitution `sin φ = k·sin²θ` maps
//! `φ ∈ [0, φ0]` to `θ ∈ [0, π/2]` and removes the inverse square-root
//! singularity at the tip:
//!
//! ```text
//! ∫₀^φ0 dφ / √(sin φ0 − sin φ) = ∫₀^{π/2} 2√k sin θ / √(1 − k² sin⁴θ) dθ = 2√α
//! x(θ) = √(2EI/F) · √k · (1 − cos θ)
//! y(θ) = √(EI/2F) · ∫₀^θ 2 k^{3/2} sin³θ′ / √(1 − k² sin⁴θ′) dθ′
//! ```
//!
//! The oracle works in `f64`; it is a reference, not part of the stepper.

use std::f64::consts::FRAC_PI_2;
use std::sync::OnceLock;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CantileverProblem {
    /// N
    pub load: f64,
    /// m
    pub length: f64,
    /// Pa
    pub youngs: f64,
    /// m⁴
    pub area_moment: f64,
}

impl CantileverProblem {
    pub fn new(load: f64, length: f64, youngs: f64, area_moment: f64) -> Result<Self> {
        for (name, v) in [
            ("load", load),
            ("length", length),
            ("youngs", youngs),
            ("area_moment", area_moment),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("cantilever {name} must be positive, got {v}")));
            }
        }
        Ok(Self {
            load,
            length,
            youngs,
            area_moment,
        })
    }

    /// Solid circular section of radius `r`, `I = π·r⁴/4`.
    pub fn circular(load: f64, length: f64, youngs: f64, radius: f64) -> Result<Self> {
        Self::new(load, length, youngs, std::f64::consts::PI * radius.powi(4) / 4.0)
    }

    /// `α = F·L² / (2·E·I)`.
    pub fn load_parameter(&self) -> f64 {
        self.load * self.length * self.length / (2.0 * self.youngs * self.area_moment)
    }

    fn flexural(&self) -> f64 {
        self.youngs * self.area_moment
    }
}

/// 15-point Kronrod extension of the 7-point Gauss rule on `[-1, 1]`.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut gauss = fc * WG[3];
    let mut kron = fc * WGK[7];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Globally adaptive Gauss–Kronrod quadrature: the interval with the
/// largest error estimate is bisected until the summed estimate drops below
/// `tol` (absolute) or round-off, capped at 2000 intervals.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (v, e) = kronrod(&f, a, b);
    let mut parts = vec![(a, b, v, e)];
    let (mut total, mut err) = (v, e);
    while parts.len() < 2000 && err > tol.max(64.0 * f64::EPSILON * total.abs()) {
        let worst = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .expect("non-empty");
        let (lo, hi, v, e) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        let (v1, e1) = kronrod(&f, lo, mid);
        let (v2, e2) = kronrod(&f, mid, hi);
        total += v1 + v2 - v;
        err += e1 + e2 - e;
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
    // Re-sum to shed the drift of the running total.
    parts.iter().map(|p| p.2).sum()
}

fn slope_integrand(k: f64) -> impl Fn(f64) -> f64 {
    move |t: f64| {
        let s = t.sin();
        2.0 * k.sqrt() * s / (1.0 - k * k * s.powi(4)).sqrt()
    }
}

fn y_integrand(k: f64) -> impl Fn(f64) -> f64 {
    move |t: f64| {
        let s = t.sin();
        2.0 * k.powf(1.5) * s.powi(3) / (1.0 - k * k * s.powi(4)).sqrt()
    }
}

/// `∫₀^φ0 dφ / √(sin φ0 − sin φ)`.
pub fn slope_integral(phi0: f64) -> f64 {
    integrate(slope_integrand(phi0.sin()), 0.0, FRAC_PI_2, 1e-13)
}

/// Residual of the tip-angle equation, `∫ … − 2√α`.
pub fn tip_angle_residual(phi0: f64, alpha: f64) -> f64 {
    slope_integral(phi0) - 2.0 * alpha.sqrt()
}

/// Tabulated `α(φ0)` on a uniform grid over the open interval `(0, π/2)`.
#[derive(Debug, Clone)]
pub struct AlphaTable {
    phi0: Vec<f64>,
    alpha: Vec<f64>,
}

impl AlphaTable {
    pub const DEFAULT_GRID: usize = 20_001;

    pub fn build(grid_size: usize) -> Result<Self> {
        if grid_size < 2 {
            return Err(Error::Domain(format!("grid_size must be at least 2, got {grid_size}")));
        }
        let step = FRAC_PI_2 / (grid_size + 1) as f64;
        let phi0: Vec<f64> = (1..=grid_size).map(|i| i as f64 * step).collect();
        let alpha = phi0
            .iter()
            .map(|&p| {
                let half = slope_integral(p) / 2.0;
                half * half
            })
            .collect();
        Ok(Self { phi0, alpha })
    }

    /// Process-wide table on the default grid.
    pub fn shared() -> &'static AlphaTable {
        static TABLE: OnceLock<AlphaTable> = OnceLock::new();
        TABLE.get_or_init(|| AlphaTable::build(Self::DEFAULT_GRID).expect("default grid is valid"))
    }

    pub fn range(&self) -> (f64, f64) {
        (self.alpha[0], *self.alpha.last().expect("non-empty table"))
    }

    pub fn grid(&self) -> (&[f64], &[f64]) {
        (&self.phi0, &self.alpha)
    }

    /// Inverse lookup with linear interpolation, refined by a few secant
    /// steps on the exact integral.
    pub fn phi0(&self, alpha: f64) -> Result<f64> {
        let (min, max) = self.range();
        if !(alpha >= min && alpha <= max) {
            return Err(Error::OracleRange { alpha, min, max });
        }
        let hi = self.alpha.partition_point(|a| *a < alpha).clamp(1, self.alpha.len() - 1);
        let lo = hi - 1;
        let t = (alpha - self.alpha[lo]) / (self.alpha[hi] - self.alpha[lo]);
        let guess = self.phi0[lo] + t * (self.phi0[hi] - self.phi0[lo]);

        let (mut a, mut b) = (self.phi0[lo], self.phi0[hi]);
        let (mut ra, mut rb) = (tip_angle_residual(a, alpha), tip_angle_residual(b, alpha));
        let mut x = guess;
        for _ in 0..60 {
            let r = tip_angle_residual(x, alpha);
            if r.abs() < 1e-13 {
                break;
            }
            if (r < 0.0) == (ra < 0.0) {
                a = x;
                ra = r;
            } else {
                b = x;
                rb = r;
            }
            let secant = a - ra * (b - a) / (rb - ra);
            x = if secant > a.min(b) && secant < a.max(b) {
                secant
            } else {
                0.5 * (a + b)
            };
        }
        Ok(x)
    }
}

/// Tip angle for load parameter `α` from a table of `grid_size` points.
pub fn phi0_from_alpha(alpha: f64, grid_size: usize) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("load parameter must be positive, got {alpha}")));
    }
    if grid_size == AlphaTable::DEFAULT_GRID {
        AlphaTable::shared().phi0(alpha)
    } else {
        AlphaTable::build(grid_size)?.phi0(alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveSample {
    /// Slope angle, rad.
    pub phi: f64,
    /// Along the undeformed axis, m.
    pub x: f64,
    /// Along the load, m.
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeflectionCurve {
    pub samples: Vec<CurveSample>,
    pub phi0: f64,
}

impl DeflectionCurve {
    pub fn tip(&self) -> CurveSample {
        *self.samples.last().expect("curve has samples")
    }

    pub fn arc_length(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
            .sum()
    }

    /// `(x, y)` pairs from clamp to tip.
    pub fn points(&self) -> Vec<[f64; 2]> {
        self.samples.iter().map(|s| [s.x, s.y]).collect()
    }
}

/// Sample the deflected shape at `samples` points uniform in the
/// substitution angle, clamp first.
pub fn deflection_curve(problem: &CantileverProblem, phi0: f64, samples: usize) -> Result<DeflectionCurve> {
    if !(phi0 > 0.0 && phi0 < FRAC_PI_2) {
        return Err(Error::Domain(format!("tip angle must lie in (0, π/2), got {phi0}")));
    }
    if samples < 2 {
        return Err(Error::Domain("a curve needs at least 2 samples".into()));
    }
    let k = phi0.sin();
    let ei = problem.flexural();
    let f = problem.load;
    let x_scale = (2.0 * ei / f).sqrt() * k.sqrt();
    let y_scale = (ei / (2.0 * f)).sqrt();
    let integrand = y_integrand(k);
    let dtheta = FRAC_PI_2 / (samples - 1) as f64;
    let mut out = Vec::with_capacity(samples);
    let mut y_acc = 0.0;
    for i in 0..samples {
        let theta = i as f64 * dtheta;
        if i > 0 {
            y_acc += integrate(&integrand, theta - dtheta, theta, 1e-14);
        }
        let sin_phi = (k * theta.sin().powi(2)).min(1.0);
        out.push(CurveSample {
            phi: sin_phi.asin(),
            x: x_scale * (1.0 - theta.cos()),
            y: y_scale * y_acc,
        });
    }
    Ok(DeflectionCurve { samples: out, phi0 })
}

/// Full oracle: load parameter, tip angle and sampled curve.
pub fn solve(problem: &CantileverProblem, samples: usize) -> Result<DeflectionCurve> {
    let phi0 = phi0_from_alpha(problem.load_parameter(), AlphaTable::DEFAULT_GRID)?;
    deflection_curve(problem, phi0, samples)
}
