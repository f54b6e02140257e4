//! Integrand classes and ODE systems, each paired with a high-accuracy
//! reference: a fine composite Simpson rule for integrals and an event-aware
//! Dormand-Prince run at tight tolerance for trajectories.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ode::{self, ButcherTableau, Dynamics, FixedModeRhs, FlowOracle, Mode};
use crate::quad;
use crate::{Error, Result, Rng};

/// Number of subintervals of the reference composite Simpson rule.
pub const REFERENCE_SUBINTERVALS: u32 = 1 << 16;

const MAX_BREAK_REDRAWS: usize = 10_000;

/// Function families an integrand can be drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum FunctionClass {
    /// `sum_{i=1..5} c_i sin(w_i x + p_i)`, `c ~ U[0,1]`, `w, p ~ U[0, 2pi]`.
    SuperposedSines5,
    /// One term of [`FunctionClass::SuperposedSines5`].
    SingleSine,
    /// Degree-5 polynomial with `U[-1,1]` coefficients, zeroed right of the
    /// first point where its derivative equals one.
    BrokenPoly5,
    /// Polynomial of the given degree with i.i.d. standard normal coefficients.
    PolyDeg { degree: usize },
    /// Velocity `v(t)` of a damped oscillator with `A, D ~ U[0,1]`, `w, p ~ U[0, 2pi]`.
    DampedOscillatorVelocity,
}

impl FunctionClass {
    pub fn default_domain(&self) -> (f64, f64) {
        match self {
            Self::SuperposedSines5 | Self::SingleSine => (0.0, 20.0),
            Self::BrokenPoly5 => (-1.0, 1.0),
            Self::PolyDeg { .. } | Self::DampedOscillatorVelocity => (0.0, 1.0),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        Ok(match lower.as_str() {
            "superposed_sines5" | "superposedsines5" | "sines5" => Self::SuperposedSines5,
            "single_sine" | "singlesine" | "sine" => Self::SingleSine,
            "broken_poly5" | "brokenpoly5" => Self::BrokenPoly5,
            "damped_oscillator_velocity" | "damped_oscillator" | "oscillator" => {
                Self::DampedOscillatorVelocity
            }
            other => {
                let degree = other
                    .strip_prefix("poly_deg")
                    .or_else(|| other.strip_prefix("poly"))
                    .and_then(|d| d.trim_start_matches('_').parse().ok())
                    .ok_or_else(|| Error::Config(format!("unknown function class {name:?}")))?;
                Self::PolyDeg { degree }
            }
        })
    }
}

/// A function class restricted to an integration domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionClassSpec {
    #[serde(flatten)]
    pub class: FunctionClass,
    pub domain: (f64, f64),
}

impl FunctionClassSpec {
    pub fn new(class: FunctionClass) -> Self {
        Self { class, domain: class.default_domain() }
    }

    pub fn with_domain(mut self, a: f64, b: f64) -> Self {
        self.domain = (a, b);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.domain;
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Config(format!("invalid domain [{a}, {b}]")));
        }
        if let FunctionClass::PolyDeg { degree } = self.class {
            if degree > 30 {
                return Err(Error::Config(format!("polynomial degree {degree} is unsupported")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineTerm {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl SineTerm {
    fn eval(&self, x: f64) -> f64 {
        self.amplitude * (self.frequency * x + self.phase).sin()
    }

    /// Exact integral, written so that small frequencies stay well conditioned.
    fn integral(&self, a: f64, b: f64) -> f64 {
        let half = 0.5 * self.frequency * (b - a);
        let sinc = if half.abs() < 1e-8 { 1.0 - half * half / 6.0 } else { half.sin() / half };
        self.amplitude * (b - a) * sinc * (0.5 * self.frequency * (a + b) + self.phase).sin()
    }
}

/// One integrand drawn from a [`FunctionClass`]. Serializes to a JSON record
/// holding every drawn parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampledFunction {
    Sines { terms: Vec<SineTerm> },
    /// Coefficients in increasing power order.
    Poly { coeffs: Vec<f64> },
    BrokenPoly { coeffs: Vec<f64>, break_point: f64 },
    DampedVelocity { amplitude: f64, frequency: f64, phase: f64, damping: f64 },
}

impl SampledFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Sines { terms } => terms.iter().map(|t| t.eval(x)).sum(),
            Self::Poly { coeffs } => horner(coeffs, x),
            Self::BrokenPoly { coeffs, break_point } => {
                if x > *break_point {
                    0.0
                } else {
                    horner(coeffs, x)
                }
            }
            Self::DampedVelocity { amplitude, frequency, phase, damping } => {
                let arg = frequency * x + phase;
                -amplitude * (-damping * x).exp() * (damping * arg.sin() - frequency * arg.cos())
            }
        }
    }

    pub fn break_point(&self) -> Option<f64> {
        match self {
            Self::BrokenPoly { break_point, .. } => Some(*break_point),
            _ => None,
        }
    }

    /// The drawn coefficients as a flat tuple.
    pub fn parameters(&self) -> Vec<f64> {
        match self {
            Self::Sines { terms } => {
                terms.iter().flat_map(|t| [t.amplitude, t.frequency, t.phase]).collect()
            }
            Self::Poly { coeffs } => coeffs.clone(),
            Self::BrokenPoly { coeffs, break_point } => {
                let mut p = coeffs.clone();
                p.push(*break_point);
                p
            }
            Self::DampedVelocity { amplitude, frequency, phase, damping } => {
                vec![*amplitude, *frequency, *phase, *damping]
            }
        }
    }

    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("sampled functions always serialize")
    }

    pub fn from_record(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("bad function record: {e}")))
    }

    /// Closed-form integral over `[a, b]`.
    pub fn exact_integral(&self, a: f64, b: f64) -> f64 {
        match self {
            Self::Sines { terms } => terms.iter().map(|t| t.integral(a, b)).sum(),
            Self::Poly { coeffs } => poly_integral(coeffs, a, b),
            Self::BrokenPoly { coeffs, break_point } => {
                let hi = b.min(*break_point);
                if hi <= a {
                    0.0
                } else {
                    poly_integral(coeffs, a, hi)
                }
            }
            Self::DampedVelocity { amplitude, frequency, phase, damping } => {
                let s = |t: f64| amplitude * (frequency * t + phase).sin() * (-damping * t).exp();
                s(b) - s(a)
            }
        }
    }

    /// Fine composite Simpson integral; see [`reference_integral`].
    pub fn reference_integral(&self, a: f64, b: f64) -> f64 {
        reference_integral(&|x| self.eval(x), a, b)
    }
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn poly_integral(coeffs: &[f64], a: f64, b: f64) -> f64 {
    let anti = |x: f64| {
        coeffs
            .iter()
            .enumerate()
            .rev()
            .fold(0.0, |acc, (k, c)| acc * x + c / (k as f64 + 1.0))
            * x
    };
    anti(b) - anti(a)
}

fn derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect()
}

/// Draws one integrand from `spec`.
pub fn sample_function(spec: &FunctionClassSpec, rng: &mut Rng) -> Result<SampledFunction> {
    spec.validate()?;
    let sine = |rng: &mut Rng| SineTerm {
        amplitude: rng.random::<f64>(),
        frequency: 2.0 * PI * rng.random::<f64>(),
        phase: 2.0 * PI * rng.random::<f64>(),
    };
    Ok(match spec.class {
        FunctionClass::SuperposedSines5 => {
            SampledFunction::Sines { terms: (0..5).map(|_| sine(rng)).collect() }
        }
        FunctionClass::SingleSine => SampledFunction::Sines { terms: vec![sine(rng)] },
        FunctionClass::PolyDeg { degree } => SampledFunction::Poly {
            coeffs: (0..=degree).map(|_| StandardNormal.sample(rng)).collect(),
        },
        FunctionClass::DampedOscillatorVelocity => SampledFunction::DampedVelocity {
            amplitude: rng.random::<f64>(),
            frequency: 2.0 * PI * rng.random::<f64>(),
            phase: 2.0 * PI * rng.random::<f64>(),
            damping: rng.random::<f64>(),
        },
        FunctionClass::BrokenPoly5 => {
            let (a, b) = spec.domain;
            for _ in 0..MAX_BREAK_REDRAWS {
                let coeffs: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..=1.0)).collect();
                if let Some(break_point) = locate_break(&coeffs, a, b) {
                    return Ok(SampledFunction::BrokenPoly { coeffs, break_point });
                }
            }
            return Err(Error::Numeric(format!(
                "no broken polynomial with a break in [{a}, {b}] after {MAX_BREAK_REDRAWS} draws"
            )));
        }
    })
}

/// Smallest `x` in `[a, b]` where the polynomial's derivative equals one.
pub fn locate_break(coeffs: &[f64], a: f64, b: f64) -> Option<f64> {
    const GRID: usize = 4096;
    let dp = derivative(coeffs);
    let g = |x: f64| horner(&dp, x) - 1.0;
    let mut x_prev = a;
    let mut g_prev = g(a);
    if g_prev == 0.0 {
        return Some(a);
    }
    for i in 1..=GRID {
        let x = if i == GRID { b } else { a + (b - a) * i as f64 / GRID as f64 };
        let gx = g(x);
        if gx == 0.0 {
            return Some(x);
        }
        if (gx > 0.0) != (g_prev > 0.0) {
            return Some(bisect(&g, x_prev, x, g_prev));
        }
        x_prev = x;
        g_prev = gx;
    }
    None
}

fn bisect(g: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, g_lo: f64) -> f64 {
    let lo_positive = g_lo > 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if (gm > 0.0) == lo_positive {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Composite Simpson with step `(b - a) / 2^16`; the error oracle for integrals.
pub fn reference_integral(f: &(impl Fn(f64) -> f64 + ?Sized), a: f64, b: f64) -> f64 {
    let h = (b - a) / REFERENCE_SUBINTERVALS as f64;
    quad::composite_simpson(f, a, b, h).0
}

/// ODE systems with their standard parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "snake_case")]
pub enum OdeSystem {
    Lorenz { sigma: f64, beta: f64, rho: f64 },
    /// Damped linear oscillator `x' = [[b, a], [-a, b]] x` (mode 0) that switches
    /// to `x' = (0, c (t - t1) + d)` (mode 1) when `|x| < c1`, and back once `|x| > c2`.
    HybridPendulum { a: f64, b: f64, c: f64, d: f64, c1: f64, c2: f64 },
}

impl OdeSystem {
    pub fn lorenz() -> Self {
        Self::Lorenz { sigma: 10.0, beta: 8.0 / 3.0, rho: 28.0 }
    }

    pub fn hybrid_pendulum() -> Self {
        Self::HybridPendulum { a: 2.0, b: -0.2, c: 5.0, d: 1.0, c1: 0.05, c2: 3.3 }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "lorenz" => Ok(Self::lorenz()),
            "hybrid_pendulum" | "pendulum" => Ok(Self::hybrid_pendulum()),
            other => Err(Error::Config(format!("unknown ODE system {other:?}"))),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Self::Lorenz { .. } => 3,
            Self::HybridPendulum { .. } => 2,
        }
    }

    pub fn initial_condition(&self) -> Vec<f64> {
        match self {
            Self::Lorenz { .. } => vec![10.0, 10.0, 10.0],
            Self::HybridPendulum { .. } => vec![1.0, 1.0],
        }
    }

    pub fn mode_count(&self) -> usize {
        match self {
            Self::Lorenz { .. } => 1,
            Self::HybridPendulum { .. } => 2,
        }
    }

    /// `dx/dt` under `mode`; checks the state dimension and the mode index.
    pub fn eval_rhs(&self, t: f64, x: &[f64], mode: Mode) -> Result<Vec<f64>> {
        if x.len() != self.state_dim() {
            return Err(Error::Contract(format!(
                "state has dimension {}, system expects {}",
                x.len(),
                self.state_dim()
            )));
        }
        if mode.index >= self.mode_count() {
            return Err(Error::Contract(format!("mode {} does not exist", mode.index)));
        }
        let mut dx = vec![0.0; x.len()];
        Dynamics::eval(self, t, x, mode, &mut dx);
        Ok(dx)
    }

    /// Closed-form solution of the pendulum's damped mode started at `(t0, x0)`.
    pub fn damped_mode_solution(&self, t0: f64, x0: &[f64], t: f64) -> Option<Vec<f64>> {
        match *self {
            Self::HybridPendulum { a, b, .. } => {
                let tau = t - t0;
                let (s, c) = (a * tau).sin_cos();
                let g = (b * tau).exp();
                Some(vec![g * (c * x0[0] + s * x0[1]), g * (-s * x0[0] + c * x0[1])])
            }
            _ => None,
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl Dynamics for OdeSystem {
    fn dim(&self) -> usize {
        self.state_dim()
    }

    fn eval(&self, t: f64, x: &[f64], mode: Mode, dx: &mut [f64]) {
        match *self {
            Self::Lorenz { sigma, beta, rho } => {
                dx[0] = sigma * (x[1] - x[0]);
                dx[1] = x[0] * (rho - x[2]) - x[1];
                dx[2] = x[0] * x[1] - beta * x[2];
            }
            Self::HybridPendulum { a, b, c, d, .. } => {
                if mode.index == 0 {
                    dx[0] = b * x[0] + a * x[1];
                    dx[1] = -a * x[0] + b * x[1];
                } else {
                    dx[0] = 0.0;
                    dx[1] = c * (t - mode.since) + d;
                }
            }
        }
    }

    fn stage_mode(&self, start: Mode, t: f64, x: &[f64]) -> Mode {
        match *self {
            Self::HybridPendulum { c1, c2, .. } => {
                let r = norm(x);
                match start.index {
                    0 if r < c1 => Mode::new(1, t),
                    1 if r > c2 => Mode::new(0, t),
                    _ => start,
                }
            }
            _ => start,
        }
    }

    fn commit_mode(&self, start: Mode, t0: f64, x0: &[f64], t1: f64, x1: &[f64]) -> Mode {
        match *self {
            Self::HybridPendulum { c1, c2, .. } => {
                let (r0, r1) = (norm(x0), norm(x1));
                let crossing = |level: f64| {
                    let w = if r1 != r0 { ((r0 - level) / (r0 - r1)).clamp(0.0, 1.0) } else { 1.0 };
                    t0 + w * (t1 - t0)
                };
                match start.index {
                    0 if r1 < c1 => Mode::new(1, crossing(c1)),
                    1 if r1 > c2 => Mode::new(0, crossing(c2)),
                    _ => start,
                }
            }
            _ => start,
        }
    }

    fn switch_function(&self, mode: Mode, x: &[f64]) -> Option<f64> {
        match *self {
            Self::HybridPendulum { c1, c2, .. } => Some(if mode.index == 0 {
                norm(x) - c1
            } else {
                c2 - norm(x)
            }),
            _ => None,
        }
    }

    fn next_mode(&self, mode: Mode, t: f64) -> Mode {
        match self {
            Self::HybridPendulum { .. } => Mode::new(1 - mode.index, t),
            _ => mode,
        }
    }
}

/// Cubic Hermite piece of a dense solution.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteSegment {
    pub t0: f64,
    pub t1: f64,
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub f0: Vec<f64>,
    pub f1: Vec<f64>,
    pub mode: Mode,
}

impl HermiteSegment {
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let h = self.t1 - self.t0;
        if h == 0.0 {
            return self.x0.clone();
        }
        let s = (t - self.t0) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        (0..self.x0.len())
            .map(|i| {
                h00 * self.x0[i] + h10 * h * self.f0[i] + h01 * self.x1[i] + h11 * h * self.f1[i]
            })
            .collect()
    }
}

/// Dense reference solution with the resolved switching events.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTrajectory {
    pub segments: Vec<HermiteSegment>,
    /// `(time, mode entered)` for every switch, in order.
    pub switches: Vec<(f64, Mode)>,
    pub initial_mode: Mode,
}

impl DenseTrajectory {
    pub fn t_span(&self) -> (f64, f64) {
        (self.segments[0].t0, self.segments.last().unwrap().t1)
    }

    fn segment(&self, t: f64) -> Result<&HermiteSegment> {
        let (t0, t1) = self.t_span();
        if t < t0 || t > t1 {
            return Err(Error::Contract(format!("t = {t} lies outside the oracle span [{t0}, {t1}]")));
        }
        let idx = self.segments.partition_point(|s| s.t1 < t).min(self.segments.len() - 1);
        Ok(&self.segments[idx])
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        Ok(self.segment(t)?.eval(t))
    }

    pub fn mode_at(&self, t: f64) -> Result<Mode> {
        Ok(self.segment(t)?.mode)
    }

    pub fn switch_times(&self) -> Vec<f64> {
        self.switches.iter().map(|(t, _)| *t).collect()
    }
}

/// Tolerance of the reference trajectory integrator.
pub const REFERENCE_TOL: f64 = 1e-10;
/// Time resolution of switching-event bisection.
pub const EVENT_TIME_TOL: f64 = 1e-10;

struct ExactRun {
    x: Vec<f64>,
    mode: Mode,
    segments: Vec<HermiteSegment>,
    switches: Vec<(f64, Mode)>,
}

/// Event-aware adaptive integration with the true (exactly switched) dynamics.
fn integrate_exact(
    sys: &(impl Dynamics + ?Sized),
    t0: f64,
    x0: &[f64],
    mode0: Mode,
    t_end: f64,
    tol: f64,
    record: bool,
) -> Result<ExactRun> {
    let tab = ButcherTableau::dormand_prince();
    let exponent = -1.0 / (tab.embedded_order as f64 + 1.0);
    let mut t = t0;
    let mut x = x0.to_vec();
    let mut mode = mode0;
    let mut segments = Vec::new();
    let mut switches = Vec::new();
    let mut h = t_end - t0;
    let mut steps = 0usize;

    if let Some(g) = sys.switch_function(mode, &x) {
        if g <= 0.0 {
            mode = sys.next_mode(mode, t);
            switches.push((t, mode));
        }
    }
    while t < t_end {
        steps += 1;
        if steps > 50_000_000 {
            return Err(Error::Numeric("reference integration did not finish".into()));
        }
        let rhs = FixedModeRhs { sys, mode };
        let last = t + h >= t_end;
        let h_try = if last { t_end - t } else { h };
        if h_try < 1e-14 * (1.0 + t.abs()) && !last {
            return Err(Error::StepUnderflow { t, h: h_try });
        }
        let step = ode::rk_step(&tab, &rhs, t, &x, h_try, None)?;
        let err = step
            .error_vector()
            .iter()
            .zip(x.iter().zip(&step.x_next))
            .map(|(e, (a, b))| {
                let sc = tol + tol * a.abs().max(b.abs());
                (e / sc).powi(2)
            })
            .sum::<f64>()
            / x.len() as f64;
        let err = err.sqrt();
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(exponent)).clamp(0.2, 5.0) };
        if err > 1.0 {
            h = h_try * factor.min(1.0);
            continue;
        }
        let crossed = sys.switch_function(mode, &step.x_next).is_some_and(|g| g <= 0.0);
        if crossed {
            // Shrink the step onto the switching surface.
            let g_at = |tau: f64| -> Result<f64> {
                let s = ode::rk_step(&tab, &rhs, t, &x, tau, None)?;
                Ok(sys.switch_function(mode, &s.x_next).unwrap())
            };
            let (mut lo, mut hi) = (0.0, h_try);
            while hi - lo > EVENT_TIME_TOL {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if g_at(mid)? <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let s = ode::rk_step(&tab, &rhs, t, &x, hi, None)?;
            let t_switch = t + hi;
            if record {
                segments.push(HermiteSegment {
                    t0: t,
                    t1: t_switch,
                    x0: x.clone(),
                    x1: s.x_next.clone(),
                    f0: s.stages[0].clone(),
                    f1: s.stages.last().unwrap().clone(),
                    mode,
                });
            }
            t = t_switch;
            x = s.x_next;
            mode = sys.next_mode(mode, t);
            switches.push((t, mode));
            h = h_try;
            continue;
        }
        let t_next = if last { t_end } else { t + h_try };
        if record {
            segments.push(HermiteSegment {
                t0: t,
                t1: t_next,
                x0: x.clone(),
                x1: step.x_next.clone(),
                f0: step.stages[0].clone(),
                f1: step.stages.last().unwrap().clone(),
                mode,
            });
        }
        t = t_next;
        x = step.x_next;
        h = h_try * factor;
    }
    Ok(ExactRun { x, mode, segments, switches })
}

/// Dense high-accuracy solution over `t_span` from the system's initial condition.
pub fn reference_trajectory(
    sys: &OdeSystem,
    t_span: (f64, f64),
    dense_tol: f64,
) -> Result<DenseTrajectory> {
    reference_trajectory_from(sys, t_span, &sys.initial_condition(), dense_tol)
}

/// As [`reference_trajectory`] from an explicit initial state.
pub fn reference_trajectory_from(
    sys: &(impl Dynamics + ?Sized),
    t_span: (f64, f64),
    x0: &[f64],
    dense_tol: f64,
) -> Result<DenseTrajectory> {
    let (t0, t1) = t_span;
    if !(t1 > t0) {
        return Err(Error::Contract(format!("empty time span [{t0}, {t1}]")));
    }
    let initial_mode = sys.initial_mode(t0, x0);
    let run = integrate_exact(sys, t0, x0, initial_mode, t1, dense_tol, true)?;
    Ok(DenseTrajectory { segments: run.segments, switches: run.switches, initial_mode })
}

/// Restartable exact flow used to measure local errors.
#[derive(Debug, Clone)]
pub struct ReferenceOracle<D> {
    pub sys: D,
    pub tol: f64,
}

impl<D: Dynamics> ReferenceOracle<D> {
    pub fn new(sys: D) -> Self {
        Self { sys, tol: REFERENCE_TOL }
    }

    /// State and mode after `h`, with any switches crossed on the way.
    pub fn flow_with_mode(&self, t: f64, x: &[f64], mode: Mode, h: f64) -> Result<(Vec<f64>, Mode)> {
        let run = integrate_exact(&self.sys, t, x, mode, t + h, self.tol, false)?;
        Ok((run.x, run.mode))
    }
}

impl<D: Dynamics> FlowOracle for ReferenceOracle<D> {
    fn flow(&self, t: f64, x: &[f64], mode: Mode, h: f64) -> Result<Vec<f64>> {
        Ok(self.flow_with_mode(t, x, mode, h)?.0)
    }
}
