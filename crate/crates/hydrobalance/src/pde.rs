//! Finite-difference solver for the hydrodynamic tail equation
//!
//! ```text
//! v_t = (f(v))_x + a v_xx,   f(z) = c1 z - b z^ell,
//! v(0, t) = 1,               v(x, 0) = initial tail,
//! ```
//!
//! posed on a truncated domain `[0, x_max]` with `v(x_max) = 0`. The
//! advection term uses first-order upwinding, nodewise on the sign of the
//! characteristic speed `f'(v) = c1 - b ell v^(ell-1)` (the flux is not
//! monotone: the speed changes sign across the profile when `b > 0`).
//! Diffusion is backward Euler, so the step size is limited only by the
//! advective CFL condition. The solution stays in `[0, 1]` and
//! nonincreasing in `x`; both are enforced as runtime checks every step.
//!
//! The density `u = -v_x` is recovered by differencing, and the stationary
//! profile
//!
//! ```text
//! v_stat(x) = w(x)^(-1/(ell-1)),  w(x) = (1-alpha) e^((c1/a)(ell-1) x) + alpha,
//! alpha = b / c1,
//! ```
//!
//! is available in closed form together with an independent ODE
//! integration of `v' = -f(v)/a` that cross-checks it.

use thiserror::Error;

use crate::init::InitLaw;
use crate::measure::TailCurve;
use crate::params::{DerivedConstants, ModelParams};

/// Coefficients of the tail equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeCoeffs {
    /// Viscosity `a = sigma^2 / 2 > 0`.
    pub a: f64,
    /// Advection coefficient `c1 = -lambda rho + b`.
    pub c1: f64,
    /// Selection-drift coefficient `b >= 0`.
    pub b: f64,
    /// Selection sample size.
    pub ell: u32,
}

impl PdeCoeffs {
    pub fn new(params: &ModelParams, derived: &DerivedConstants) -> Self {
        Self {
            a: derived.a,
            c1: derived.c1,
            b: params.b,
            ell: params.ell,
        }
    }

    /// `f(z) = c1 z - b z^ell`.
    #[inline]
    pub fn flux(&self, z: f64) -> f64 {
        self.c1 * z - self.b * z.powi(self.ell as i32)
    }

    /// `f'(z) = c1 - b ell z^(ell-1)`.
    #[inline]
    pub fn flux_prime(&self, z: f64) -> f64 {
        self.c1 - self.b * f64::from(self.ell) * z.powi(self.ell as i32 - 1)
    }

    fn validate(&self) -> Result<(), PdeError> {
        if !(self.a.is_finite() && self.a > 0.0) || !self.c1.is_finite() || !self.b.is_finite() {
            return Err(PdeError::BadCoefficients);
        }
        if self.ell < 2 {
            return Err(PdeError::BadCoefficients);
        }
        Ok(())
    }
}

/// Spatial discretization: `cells` intervals of width `x_max / cells`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_max: f64,
    pub cells: usize,
}

impl GridSpec {
    pub fn new(x_max: f64, cells: usize) -> Result<Self, PdeError> {
        if !(x_max.is_finite() && x_max > 0.0) || cells < 4 {
            return Err(PdeError::BadGrid);
        }
        Ok(Self { x_max, cells })
    }

    /// A domain wide enough for the given coefficients and initial support:
    /// six stationary decay lengths past the support.
    pub fn default_x_max(coeffs: &PdeCoeffs, support_max: f64) -> f64 {
        let decay = if coeffs.c1 > 0.0 {
            coeffs.a / (coeffs.c1 * f64::from(coeffs.ell - 1))
        } else {
            // No restoring advection; fall back to a diffusive scale.
            coeffs.a.sqrt().max(1.0)
        };
        6.0 * (decay + support_max.max(1.0))
    }
}

/// Discretized tail function and its solver state.
#[derive(Debug, Clone)]
pub struct TailGrid {
    coeffs: PdeCoeffs,
    x_max: f64,
    cells: usize,
    dx: f64,
    v: Vec<f64>,
    t: f64,
    /// CFL number for the advective step; at most 1/2 to preserve
    /// monotonicity of the nodewise upwind update.
    pub cfl: f64,
    /// Hard cap on the time step (accuracy control when advection is weak).
    pub dt_max: f64,
    scratch: Vec<f64>,
    diag: Vec<f64>,
}

/// Recorded evolution: time slices of `v`, including the initial one.
#[derive(Debug, Clone, Default)]
pub struct TailHistory {
    pub times: Vec<f64>,
    pub slices: Vec<Vec<f64>>,
}

impl TailHistory {
    fn push(&mut self, t: f64, v: &[f64]) {
        self.times.push(t);
        self.slices.push(v.to_vec());
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }
}

/// Density recovered from a tail grid.
#[derive(Debug, Clone)]
pub struct DensityProfile {
    /// `u = -v_x` at the nodes.
    pub u: Vec<f64>,
    /// Mass inside the domain, `v(0) - v(x_max)`.
    pub mass: f64,
    /// Defect of the zero-flux boundary identity
    /// `(c1 - b ell) u(0) + a u_x(0)`; a discretization diagnostic.
    pub robin_residual: f64,
}

/// Closed-form stationary solution (requires `rho < 0`, i.e. `c1 > b`).
#[derive(Debug, Clone, Copy)]
pub struct StationaryProfile {
    pub coeffs: PdeCoeffs,
    /// `alpha = b / c1` in `[0, 1)`.
    pub alpha: f64,
}

/// Macroscopic mean and spread of the profile, via the tail-moment
/// identities `int x u dx = int v dx` and `int x^2 u dx = 2 int x v dx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroStats {
    pub m_mac: f64,
    pub second: f64,
    pub sigma_mac: f64,
}

#[derive(Debug, Error)]
pub enum PdeError {
    #[error("coefficients must be finite with a > 0 and ell >= 2")]
    BadCoefficients,
    #[error("grid needs finite x_max > 0 and at least 4 cells")]
    BadGrid,
    #[error("initial law puts mass {tail:.3e} beyond x_max = {x_max}")]
    SupportExceedsDomain { x_max: f64, tail: f64 },
    #[error("tail values must start at 1, lie in [0,1] and be nonincreasing")]
    BadTailData,
    #[error("stationary profile requires rho < 0 (c1 > b), got c1 = {c1}, b = {b}")]
    RhoNonNegative { c1: f64, b: f64 },
    #[error("evolve target {t_end} precedes current time {t}")]
    TimeReversed { t: f64, t_end: f64 },
    #[error("range violation at t = {t}, node {node}: v = {value}")]
    RangeViolation { t: f64, node: usize, value: f64 },
    #[error("monotonicity violation at t = {t}, node {node}: increase {increase:.3e}")]
    MonotonicityViolation { t: f64, node: usize, increase: f64 },
    #[error("time step collapsed (dt = {dt}) at t = {t}")]
    StepCollapse { t: f64, dt: f64 },
    #[error("less than {want} of the unit mass lies inside the domain (defect {defect:.3e})")]
    TruncationGuard { want: f64, defect: f64 },
    #[error("history does not cover the requested time {t}")]
    HistoryTooShort { t: f64 },
}

/// Tolerated one-step overshoot before the solver aborts; anything larger
/// signals an unstable scheme rather than rounding.
const RANGE_TOL: f64 = 1e-6;
/// Tolerated nonmonotonicity (the checks compare successive nodes).
const MONO_TOL: f64 = 1e-8;

impl TailGrid {
    /// Discretize the tail of an initial law: `v[j] = law.tail(x_j)`,
    /// exact for analytic laws, the empirical open tail for sample data.
    /// Step data is taken as is.
    ///
    /// The law must be supported inside the domain: exactly for analytic
    /// laws, up to `1e-4` of residual tail mass for curve data (the
    /// remaining truncation is monitored, see [`TailGrid::truncation_defect`]).
    pub fn init_tail(law: &InitLaw, coeffs: PdeCoeffs, spec: GridSpec) -> Result<Self, PdeError> {
        coeffs.validate()?;
        let tol = match law {
            InitLaw::FromTail(_) => 1e-4,
            _ => 0.0,
        };
        if law.tail(spec.x_max) > tol {
            return Err(PdeError::SupportExceedsDomain {
                x_max: spec.x_max,
                tail: law.tail(spec.x_max),
            });
        }
        let dx = spec.x_max / spec.cells as f64;
        let v: Vec<f64> = (0..=spec.cells).map(|j| law.tail(j as f64 * dx)).collect();
        Self::from_tail_values(coeffs, spec, v)
    }

    /// Sample the closed-form stationary profile at the nodes.
    pub fn init_stationary(profile: &StationaryProfile, spec: GridSpec) -> Result<Self, PdeError> {
        let dx = spec.x_max / spec.cells as f64;
        let v: Vec<f64> = (0..=spec.cells).map(|j| profile.v(j as f64 * dx)).collect();
        Self::from_tail_values(profile.coeffs, spec, v)
    }

    /// Build a grid from explicit nodal tail values (`cells + 1` of them,
    /// starting at 1, in `[0, 1]`, nonincreasing).
    pub fn from_tail_values(
        coeffs: PdeCoeffs,
        spec: GridSpec,
        v: Vec<f64>,
    ) -> Result<Self, PdeError> {
        coeffs.validate()?;
        if v.len() != spec.cells + 1 {
            return Err(PdeError::BadGrid);
        }
        let ok = v.iter().all(|y| y.is_finite() && (0.0..=1.0).contains(y))
            && v.windows(2).all(|w| w[1] <= w[0] + MONO_TOL);
        if !ok {
            return Err(PdeError::BadTailData);
        }
        let dx = spec.x_max / spec.cells as f64;
        Ok(Self {
            coeffs,
            x_max: spec.x_max,
            cells: spec.cells,
            dx,
            scratch: vec![0.0; v.len()],
            diag: vec![0.0; v.len()],
            v,
            t: 0.0,
            cfl: 0.5,
            dt_max: dx / 2.0,
        })
    }

    pub fn coeffs(&self) -> &PdeCoeffs {
        &self.coeffs
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn node_x(&self, j: usize) -> f64 {
        j as f64 * self.dx
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..=self.cells).map(|j| self.node_x(j)).collect()
    }

    /// Tail mass still present at the penultimate node; the far boundary
    /// pins `v = 0`, so this is the truncation error indicator.
    pub fn truncation_defect(&self) -> f64 {
        self.v[self.cells - 1]
    }

    /// The current tail as an interpolating curve.
    pub fn tail_curve(&self) -> TailCurve {
        TailCurve::new(self.xs(), self.v.clone()).expect("grid tail is a valid curve")
    }

    /// Advance to `t_end`.
    pub fn evolve(&mut self, t_end: f64) -> Result<(), PdeError> {
        self.evolve_inner(t_end, None)
    }

    /// Advance to `t_end`, recording every accepted step (and the initial
    /// slice if the history is empty).
    pub fn evolve_recording(
        &mut self,
        t_end: f64,
        history: &mut TailHistory,
    ) -> Result<(), PdeError> {
        self.evolve_inner(t_end, Some(history))
    }

    fn evolve_inner(
        &mut self,
        t_end: f64,
        mut history: Option<&mut TailHistory>,
    ) -> Result<(), PdeError> {
        if t_end < self.t {
            return Err(PdeError::TimeReversed { t: self.t, t_end });
        }
        if let Some(h) = history.as_deref_mut() {
            if h.is_empty() {
                h.push(self.t, &self.v);
            }
        }
        let m = self.cells;
        while self.t < t_end - 1e-13 {
            // Advective CFL limit from the current profile.
            let mut s_max: f64 = 0.0;
            for &y in &self.v {
                s_max = s_max.max(self.coeffs.flux_prime(y).abs());
            }
            let mut dt = if s_max > 0.0 {
                (self.cfl * self.dx / s_max).min(self.dt_max)
            } else {
                self.dt_max
            };
            dt = dt.min(t_end - self.t);
            if !(dt.is_finite() && dt > 0.0) {
                return Err(PdeError::StepCollapse { t: self.t, dt });
            }

            // Explicit upwind advection: v += dt f'(v) D v, one-sided
            // toward where the characteristic comes from.
            self.scratch[0] = 1.0;
            self.scratch[m] = 0.0;
            for j in 1..m {
                let s = self.coeffs.flux_prime(self.v[j]);
                let dvdx = if s > 0.0 {
                    (self.v[j + 1] - self.v[j]) / self.dx
                } else {
                    (self.v[j] - self.v[j - 1]) / self.dx
                };
                self.scratch[j] = self.v[j] + dt * s * dvdx;
            }

            // Implicit diffusion: (I - a dt D2) v_new = v*, Dirichlet ends.
            // Thomas forward sweep on the interior nodes.
            let mu = self.coeffs.a * dt / (self.dx * self.dx);
            let lower = -mu;
            let upper = -mu;
            let mid = 1.0 + 2.0 * mu;
            self.scratch[1] += mu * 1.0; // left boundary value
                                         // right boundary value is 0; nothing to add
            self.diag[1] = mid;
            for j in 2..m {
                let w = lower / self.diag[j - 1];
                self.diag[j] = mid - w * upper;
                self.scratch[j] -= w * self.scratch[j - 1];
            }
            self.v[m] = 0.0;
            self.v[0] = 1.0;
            let mut prev = 0.0; // v[m]
            for j in (1..m).rev() {
                let y = (self.scratch[j] - upper * prev) / self.diag[j];
                self.v[j] = y;
                prev = y;
            }

            self.t += dt;

            // Range and monotonicity checks, every step.
            for j in 0..=m {
                let y = self.v[j];
                if !(-RANGE_TOL..=1.0 + RANGE_TOL).contains(&y) {
                    return Err(PdeError::RangeViolation {
                        t: self.t,
                        node: j,
                        value: y,
                    });
                }
                if j > 0 && self.v[j] > self.v[j - 1] + MONO_TOL {
                    return Err(PdeError::MonotonicityViolation {
                        t: self.t,
                        node: j,
                        increase: self.v[j] - self.v[j - 1],
                    });
                }
                self.v[j] = y.clamp(0.0, 1.0);
            }
            if let Some(h) = history.as_deref_mut() {
                h.push(self.t, &self.v);
            }
        }
        self.t = t_end;
        Ok(())
    }

    /// Recover the density `u = -v_x`: centered differences inside,
    /// second-order one-sided at the ends.
    pub fn density(&self) -> DensityProfile {
        let m = self.cells;
        let d2 = 2.0 * self.dx;
        let mut u = vec![0.0; m + 1];
        u[0] = (3.0 * self.v[0] - 4.0 * self.v[1] + self.v[2]) / d2;
        for (j, w) in self.v.windows(3).enumerate() {
            u[j + 1] = (w[0] - w[2]) / d2;
        }
        u[m] = -(3.0 * self.v[m] - 4.0 * self.v[m - 1] + self.v[m - 2]) / d2;
        let ux0 = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / d2;
        let robin_residual = (self.coeffs.c1 - self.coeffs.b * f64::from(self.coeffs.ell)) * u[0]
            + self.coeffs.a * ux0;
        DensityProfile {
            u,
            mass: self.v[0] - self.v[m],
            robin_residual,
        }
    }

    /// Mean and spread of the profile by trapezoid quadrature. Errors if
    /// more than `1e-3` of the mass sits at the far edge of the domain
    /// (the pinned boundary would silently swallow it).
    pub fn macro_stats(&self) -> Result<MacroStats, PdeError> {
        let mass = (self.v[0] - self.truncation_defect()).min(self.v[0] - self.v[self.cells]);
        if mass < 1.0 - 1e-3 {
            return Err(PdeError::TruncationGuard {
                want: 1.0 - 1e-3,
                defect: 1.0 - mass,
            });
        }
        let m_mac = trapezoid(&self.v, self.dx);
        let xv: Vec<f64> = self
            .v
            .iter()
            .enumerate()
            .map(|(j, &y)| self.node_x(j) * y)
            .collect();
        let second = 2.0 * trapezoid(&xv, self.dx);
        let spread2 = second - m_mac * m_mac;
        // Negative only through quadrature error, which is O(dx^2) for
        // step data; anything worse means the grid is not a tail.
        if spread2 < -(1e-10 + self.dx * self.dx * second.abs()) {
            return Err(PdeError::BadTailData);
        }
        Ok(MacroStats {
            m_mac,
            second,
            sigma_mac: spread2.max(0.0).sqrt(),
        })
    }
}

fn trapezoid(values: &[f64], dx: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    dx * (0.5 * values[0] + inner + 0.5 * values[values.len() - 1])
}

/// Closed-form stationary profile for `rho < 0`.
pub fn stationary(coeffs: PdeCoeffs) -> Result<StationaryProfile, PdeError> {
    coeffs.validate()?;
    if coeffs.b < 0.0 || coeffs.c1 <= coeffs.b || coeffs.c1 <= 0.0 {
        return Err(PdeError::RhoNonNegative {
            c1: coeffs.c1,
            b: coeffs.b,
        });
    }
    Ok(StationaryProfile {
        coeffs,
        alpha: coeffs.b / coeffs.c1,
    })
}

impl StationaryProfile {
    fn beta(&self) -> f64 {
        self.coeffs.c1 / self.coeffs.a * f64::from(self.coeffs.ell - 1)
    }

    /// `ln w(x)`, evaluated in log form so large `x` cannot overflow.
    fn ln_w(&self, x: f64) -> f64 {
        let bx = self.beta() * x;
        let one_minus_alpha = 1.0 - self.alpha;
        if bx > 500.0 {
            bx + (one_minus_alpha + self.alpha * (-bx).exp()).ln()
        } else {
            (one_minus_alpha * bx.exp() + self.alpha).ln()
        }
    }

    pub fn w(&self, x: f64) -> f64 {
        self.ln_w(x).exp()
    }

    /// Stationary tail `v_stat(x) = w(x)^(-1/(ell-1))`.
    pub fn v(&self, x: f64) -> f64 {
        (-self.ln_w(x) / f64::from(self.coeffs.ell - 1)).exp()
    }

    /// Stationary density `u_stat = -v_stat'`.
    pub fn u(&self, x: f64) -> f64 {
        let ell = f64::from(self.coeffs.ell);
        let pre = self.coeffs.c1 / self.coeffs.a * (1.0 - self.alpha);
        pre * (self.beta() * x - ell / (ell - 1.0) * self.ln_w(x)).exp()
    }

    /// Analytic derivative of the density (used by boundary diagnostics).
    pub fn u_prime(&self, x: f64) -> f64 {
        let ell = f64::from(self.coeffs.ell);
        let beta = self.beta();
        // d/dx ln u = beta - ell/(ell-1) * w'/w,  w'/w = beta(1-alpha)e^{beta x}/w
        let bx = beta * x;
        let wp_over_w = if bx > 500.0 {
            beta * (1.0 - self.alpha) / ((1.0 - self.alpha) + self.alpha * (-bx).exp())
        } else {
            beta * (1.0 - self.alpha) * bx.exp() / ((1.0 - self.alpha) * bx.exp() + self.alpha)
        };
        self.u(x) * (beta - ell / (ell - 1.0) * wp_over_w)
    }

    /// Tail curve sampled on a uniform grid.
    pub fn tail_curve(&self, x_max: f64, cells: usize) -> TailCurve {
        TailCurve::from_fn(|x| self.v(x), x_max, cells).expect("stationary tail is monotone")
    }

    /// Macroscopic mean `int v_stat dx`, by fine trapezoid plus the exact
    /// integral of the asymptotic exponential tail beyond the cutoff.
    pub fn m_mac(&self) -> f64 {
        let rate = self.coeffs.c1 / self.coeffs.a;
        // Integrate to where the profile is negligible.
        let x_cut = (50.0 / rate).min(1e6);
        let cells = 200_000;
        let dx = x_cut / cells as f64;
        let vs: Vec<f64> = (0..=cells).map(|j| self.v(j as f64 * dx)).collect();
        let inner = trapezoid(&vs, dx);
        // Beyond x_cut, v ~ const * e^{-rate x}.
        inner + self.v(x_cut) / rate
    }
}

/// Integrate `v' = -f(v)/a`, `v(0) = 1`, with adaptive Cash-Karp RK45 and
/// report the values at the requested nodes. Independent of the closed
/// form above.
pub fn stationary_ode_oracle(coeffs: PdeCoeffs, xs: &[f64], tol: f64) -> Vec<f64> {
    let rhs = |v: f64| -coeffs.flux(v) / coeffs.a;
    let mut out = Vec::with_capacity(xs.len());
    let mut x = 0.0;
    let mut v = 1.0;
    let mut h = (xs.iter().copied().fold(f64::INFINITY, f64::min) / 4.0).clamp(1e-8, 0.1);
    for &target in xs {
        debug_assert!(target >= x);
        while x < target {
            let step = h.min(target - x);
            let (v_next, err) = cash_karp_step(&rhs, v, step);
            let scale = tol * v.abs().max(1.0);
            if err <= scale || step < 1e-12 {
                x += step;
                v = v_next;
                // Grow cautiously.
                if err > 0.0 {
                    h = (step * 0.9 * (scale / err).powf(0.2))
                        .min(4.0 * step)
                        .max(1e-12);
                } else {
                    h = 4.0 * step;
                }
            } else {
                h = (step * 0.9 * (scale / err).powf(0.25)).max(1e-12);
            }
        }
        out.push(v);
    }
    out
}

/// One Cash-Karp 4(5) step for a scalar autonomous ODE; returns the
/// fifth-order value and an error estimate.
fn cash_karp_step(rhs: &impl Fn(f64) -> f64, v: f64, h: f64) -> (f64, f64) {
    let k1 = rhs(v);
    let k2 = rhs(v + h * (k1 / 5.0));
    let k3 = rhs(v + h * (3.0 / 40.0 * k1 + 9.0 / 40.0 * k2));
    let k4 = rhs(v + h * (3.0 / 10.0 * k1 - 9.0 / 10.0 * k2 + 6.0 / 5.0 * k3));
    let k5 =
        rhs(v + h * (-11.0 / 54.0 * k1 + 5.0 / 2.0 * k2 - 70.0 / 27.0 * k3 + 35.0 / 27.0 * k4));
    let k6 = rhs(v + h
        * (1631.0 / 55296.0 * k1
            + 175.0 / 512.0 * k2
            + 575.0 / 13824.0 * k3
            + 44275.0 / 110592.0 * k4
            + 253.0 / 4096.0 * k5));
    let v5 =
        v + h * (37.0 / 378.0 * k1 + 250.0 / 621.0 * k3 + 125.0 / 594.0 * k4 + 512.0 / 1771.0 * k6);
    let v4 = v + h
        * (2825.0 / 27648.0 * k1
            + 18575.0 / 48384.0 * k3
            + 13525.0 / 55296.0 * k4
            + 277.0 / 14336.0 * k5
            + 1.0 / 4.0 * k6);
    (v5, (v5 - v4).abs())
}

/// A smooth test function `x^p exp(-((x-c)/w)^2)` with analytic
/// derivatives; vanishes at 0 and decays to exact floating-point zero well
/// inside any practical domain.
#[derive(Debug, Clone, Copy)]
pub struct TestFunction {
    pub poly_pow: u32,
    pub center: f64,
    pub width: f64,
}

impl TestFunction {
    pub fn value(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.width;
        x.powi(self.poly_pow as i32) * (-z * z).exp()
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let p = f64::from(self.poly_pow);
        let z = (x - self.center) / self.width;
        let g = (-z * z).exp();
        let gp = -2.0 * z / self.width * g;
        let xp1 = if self.poly_pow >= 1 {
            x.powi(self.poly_pow as i32 - 1)
        } else {
            0.0
        };
        p * xp1 * g + x.powi(self.poly_pow as i32) * gp
    }

    pub fn deriv2(&self, x: f64) -> f64 {
        let p = f64::from(self.poly_pow);
        let z = (x - self.center) / self.width;
        let g = (-z * z).exp();
        let w2 = self.width * self.width;
        let gp = -2.0 * z / self.width * g;
        let gpp = (4.0 * z * z / w2 - 2.0 / w2) * g;
        let mut acc = x.powi(self.poly_pow as i32) * gpp;
        if self.poly_pow >= 1 {
            acc += 2.0 * p * x.powi(self.poly_pow as i32 - 1) * gp;
        }
        if self.poly_pow >= 2 {
            acc += p * (p - 1.0) * x.powi(self.poly_pow as i32 - 2) * g;
        }
        acc
    }
}

/// Defect of the time-integrated weak identity
///
/// ```text
/// <v(t), phi> - <v(0), phi>
///   = -int_0^t <f(v), phi'> ds + a int_0^t <v, phi''> ds + a phi'(0) t
/// ```
///
/// for a recorded evolution, by trapezoid quadrature in space and time.
/// A solver-independent consistency functional: it vanishes (to quadrature
/// accuracy) exactly when the recorded slices solve the equation weakly.
pub fn weak_residual(
    history: &TailHistory,
    coeffs: &PdeCoeffs,
    dx: f64,
    phi: &TestFunction,
) -> Result<f64, PdeError> {
    if history.len() < 2 {
        return Err(PdeError::HistoryTooShort { t: 0.0 });
    }
    debug_assert!(phi.value(0.0).abs() < 1e-14);
    let nodes = history.slices[0].len();
    let phis: Vec<f64> = (0..nodes).map(|j| phi.value(j as f64 * dx)).collect();
    let dphis: Vec<f64> = (0..nodes).map(|j| phi.deriv(j as f64 * dx)).collect();
    let ddphis: Vec<f64> = (0..nodes).map(|j| phi.deriv2(j as f64 * dx)).collect();

    let inner = |slice: &[f64], weights: &[f64]| -> f64 {
        let prods: Vec<f64> = slice.iter().zip(weights).map(|(a, b)| a * b).collect();
        trapezoid(&prods, dx)
    };

    let first = history.slices.first().unwrap();
    let last = history.slices.last().unwrap();
    let lhs = inner(last, &phis) - inner(first, &phis);

    // Time integrals over the recorded (non-uniform) step times.
    let mut flux_term = 0.0;
    let mut diff_term = 0.0;
    let mut prev_f = 0.0;
    let mut prev_d = 0.0;
    for (k, slice) in history.slices.iter().enumerate() {
        let fv: Vec<f64> = slice.iter().map(|&y| coeffs.flux(y)).collect();
        let f_now = inner(&fv, &dphis);
        let d_now = inner(slice, &ddphis);
        if k > 0 {
            let dt = history.times[k] - history.times[k - 1];
            flux_term += 0.5 * (prev_f + f_now) * dt;
            diff_term += 0.5 * (prev_d + d_now) * dt;
        }
        prev_f = f_now;
        prev_d = d_now;
    }
    let span = history.t_end() - history.times[0];
    let rhs = -flux_term + coeffs.a * diff_term + coeffs.a * phi.deriv(0.0) * span;
    Ok((lhs - rhs).abs())
}
