//! Explicit Runge-Kutta machinery: Butcher tableaus, single steps that expose
//! their stage values, and the embedded-pair step-size controller used as the
//! RK45 baseline.
//!
//! Systems are described through [`Dynamics`]. Smooth systems only implement
//! [`Dynamics::eval`]; hybrid systems additionally carry a discrete [`Mode`]
//! that integrators update at step boundaries and that stage evaluations may
//! override when a stage state crosses a switching surface.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Right-hand side `dx/dt = f(t, x)` of a smooth system.
pub trait Rhs {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]);
}

/// Closure-backed [`Rhs`] (and [`Dynamics`]) for ad-hoc systems.
pub struct FnRhs<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64])> FnRhs<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(f64, &[f64], &mut [f64])> Rhs for FnRhs<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        (self.f)(t, x, dx)
    }
}

impl<F: Fn(f64, &[f64], &mut [f64]) + Send + Sync> Dynamics for FnRhs<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, x: &[f64], _mode: Mode, dx: &mut [f64]) {
        (self.f)(t, x, dx)
    }
}

/// Discrete state of a hybrid system: the active vector field and the time it
/// became active. Smooth systems stay in mode 0 forever.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub index: usize,
    pub since: f64,
}

impl Mode {
    pub const fn new(index: usize, since: f64) -> Self {
        Self { index, since }
    }
}

impl Default for Mode {
    fn default() -> Self {
        Self::new(0, 0.0)
    }
}

/// A possibly hybrid ODE system.
pub trait Dynamics: Send + Sync {
    fn dim(&self) -> usize;

    /// `dx/dt` under an explicit mode. Pure.
    fn eval(&self, t: f64, x: &[f64], mode: Mode, dx: &mut [f64]);

    fn initial_mode(&self, t0: f64, _x0: &[f64]) -> Mode {
        Mode::new(0, t0)
    }

    /// Mode used for a stage evaluated at `(t, x)` inside a step that began in `start`.
    fn stage_mode(&self, start: Mode, _t: f64, _x: &[f64]) -> Mode {
        start
    }

    /// Mode after accepting a step from `(t0, x0)` to `(t1, x1)`.
    fn commit_mode(&self, start: Mode, _t0: f64, _x0: &[f64], _t1: f64, _x1: &[f64]) -> Mode {
        start
    }

    /// Switching function of the active mode. The mode switches when it
    /// becomes non-positive; `None` means the mode never switches.
    fn switch_function(&self, _mode: Mode, _x: &[f64]) -> Option<f64> {
        None
    }

    /// Mode entered when the switching function of `mode` reaches zero at `t`.
    fn next_mode(&self, mode: Mode, _t: f64) -> Mode {
        mode
    }
}

/// Adapts a [`Dynamics`] to an [`Rhs`] for one step that started in `start`.
pub struct StageRhs<'a, D: ?Sized> {
    pub sys: &'a D,
    pub start: Mode,
}

impl<D: Dynamics + ?Sized> Rhs for StageRhs<'_, D> {
    fn dim(&self) -> usize {
        self.sys.dim()
    }

    fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        let mode = self.sys.stage_mode(self.start, t, x);
        self.sys.eval(t, x, mode, dx)
    }
}

/// Adapts a [`Dynamics`] with a frozen mode to an [`Rhs`].
pub struct FixedModeRhs<'a, D: ?Sized> {
    pub sys: &'a D,
    pub mode: Mode,
}

impl<D: Dynamics + ?Sized> Rhs for FixedModeRhs<'_, D> {
    fn dim(&self) -> usize {
        self.sys.dim()
    }

    fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        self.sys.eval(t, x, self.mode, dx)
    }
}

/// Explicit embedded Runge-Kutta pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau {
    /// Row `i` holds `a[i][0..i]`.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub b_hat: Vec<f64>,
    pub c: Vec<f64>,
    /// Order of the propagated solution (`b`).
    pub order: u32,
    /// Order of the embedded solution (`b_hat`).
    pub embedded_order: u32,
}

impl ButcherTableau {
    /// Dormand-Prince 5(4).
    pub fn dormand_prince() -> Self {
        Self {
            a: vec![
                vec![],
                vec![1.0 / 5.0],
                vec![3.0 / 40.0, 9.0 / 40.0],
                vec![44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
                vec![19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
                vec![
                    9017.0 / 3168.0,
                    -355.0 / 33.0,
                    46732.0 / 5247.0,
                    49.0 / 176.0,
                    -5103.0 / 18656.0,
                ],
                vec![
                    35.0 / 384.0,
                    0.0,
                    500.0 / 1113.0,
                    125.0 / 192.0,
                    -2187.0 / 6784.0,
                    11.0 / 84.0,
                ],
            ],
            b: vec![
                35.0 / 384.0,
                0.0,
                500.0 / 1113.0,
                125.0 / 192.0,
                -2187.0 / 6784.0,
                11.0 / 84.0,
                0.0,
            ],
            b_hat: vec![
                5179.0 / 57600.0,
                0.0,
                7571.0 / 16695.0,
                393.0 / 640.0,
                -92097.0 / 339200.0,
                187.0 / 2100.0,
                1.0 / 40.0,
            ],
            c: vec![0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0],
            order: 5,
            embedded_order: 4,
        }
    }

    pub fn stage_count(&self) -> usize {
        self.c.len()
    }

    /// The last stage is `f(t + h, x_next)`, so it can seed the next step.
    pub fn is_fsal(&self) -> bool {
        let s = self.stage_count();
        self.c[s - 1] == 1.0
            && self.a[s - 1].len() == s - 1
            && self.a[s - 1].iter().zip(&self.b).all(|(x, y)| x == y)
            && self.b[s - 1] == 0.0
    }

    /// Checks explicitness, row sums and weight sums to `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let s = self.stage_count();
        if self.a.len() != s || self.b.len() != s || self.b_hat.len() != s {
            return Err(Error::Contract("tableau arrays disagree on the stage count".into()));
        }
        for (i, row) in self.a.iter().enumerate() {
            if row.len() > i {
                return Err(Error::Contract(format!("row {i} is not strictly lower triangular")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - self.c[i]).abs() > tol {
                return Err(Error::Contract(format!(
                    "row {i} sums to {sum}, expected c = {}",
                    self.c[i]
                )));
            }
        }
        for (name, w) in [("b", &self.b), ("b_hat", &self.b_hat)] {
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(Error::Contract(format!("{name} sums to {sum}")));
            }
        }
        Ok(())
    }
}

/// One explicit step with all stage values.
#[derive(Debug, Clone, PartialEq)]
pub struct RkStepResult {
    pub t: f64,
    pub h: f64,
    pub x: Vec<f64>,
    pub x_next: Vec<f64>,
    pub x_next_embedded: Vec<f64>,
    /// `k_1 .. k_s`, each of length `dim`.
    pub stages: Vec<Vec<f64>>,
    /// Right-hand side evaluations spent (stage count, minus one if `k_1` was supplied).
    pub evaluations: usize,
}

impl RkStepResult {
    /// `x_next - x_next_embedded`.
    pub fn error_vector(&self) -> Vec<f64> {
        self.x_next.iter().zip(&self.x_next_embedded).map(|(p, q)| p - q).collect()
    }
}

/// Takes one step of size `h` from `(t, x)`.
///
/// `first_stage`, when given, is reused as `k_1` (FSAL continuation).
pub fn rk_step(
    tab: &ButcherTableau,
    rhs: &(impl Rhs + ?Sized),
    t: f64,
    x: &[f64],
    h: f64,
    first_stage: Option<&[f64]>,
) -> Result<RkStepResult> {
    if !(h > 0.0) {
        return Err(Error::Contract(format!("step size must be positive, got {h}")));
    }
    let n = x.len();
    if n != rhs.dim() {
        return Err(Error::Contract(format!(
            "state has dimension {n}, system expects {}",
            rhs.dim()
        )));
    }
    let s = tab.stage_count();
    let mut stages: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut evaluations = 0;
    let mut x_stage = vec![0.0; n];
    for i in 0..s {
        let mut k = vec![0.0; n];
        if i == 0 {
            match first_stage {
                Some(k1) => k.copy_from_slice(k1),
                None => {
                    rhs.eval(t, x, &mut k);
                    evaluations += 1;
                }
            }
        } else {
            x_stage.copy_from_slice(x);
            for (aij, kj) in tab.a[i].iter().zip(&stages) {
                if *aij != 0.0 {
                    for (xs, kv) in x_stage.iter_mut().zip(kj) {
                        *xs += h * aij * kv;
                    }
                }
            }
            rhs.eval(t + tab.c[i] * h, &x_stage, &mut k);
            evaluations += 1;
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "stage {} is not finite at t = {t}, h = {h}",
                i + 1
            )));
        }
        stages.push(k);
    }
    let combine = |w: &[f64]| -> Vec<f64> {
        let mut out = x.to_vec();
        for (wi, k) in w.iter().zip(&stages) {
            if *wi != 0.0 {
                for (o, kv) in out.iter_mut().zip(k) {
                    *o += h * wi * kv;
                }
            }
        }
        out
    };
    let x_next = combine(&tab.b);
    let x_next_embedded = combine(&tab.b_hat);
    Ok(RkStepResult { t, h, x: x.to_vec(), x_next, x_next_embedded, stages, evaluations })
}

/// One step of a (possibly hybrid) system, returning the committed mode.
pub fn step_dynamics(
    tab: &ButcherTableau,
    sys: &(impl Dynamics + ?Sized),
    t: f64,
    x: &[f64],
    mode: Mode,
    h: f64,
    first_stage: Option<&[f64]>,
) -> Result<(RkStepResult, Mode)> {
    let rhs = StageRhs { sys, start: mode };
    let step = rk_step(tab, &rhs, t, x, h, first_stage)?;
    let next = sys.commit_mode(mode, t, x, t + h, &step.x_next);
    Ok((step, next))
}

/// Exact-flow oracle: `x(t + h)` restarted from `(t, x)` in `mode`.
pub trait FlowOracle {
    fn flow(&self, t: f64, x: &[f64], mode: Mode, h: f64) -> Result<Vec<f64>>;
}

impl<F: Fn(f64, &[f64], Mode, f64) -> Vec<f64>> FlowOracle for F {
    fn flow(&self, t: f64, x: &[f64], mode: Mode, h: f64) -> Result<Vec<f64>> {
        Ok(self(t, x, mode, h))
    }
}

/// Root-mean-square deviation between the step's propagated solution and the
/// exact flow restarted from the step's initial point.
pub fn local_error(step: &RkStepResult, mode: Mode, oracle: &(impl FlowOracle + ?Sized)) -> Result<f64> {
    let exact = oracle.flow(step.t, &step.x, mode, step.h)?;
    if exact.len() != step.x_next.len() {
        return Err(Error::Contract("oracle returned a state of the wrong dimension".into()));
    }
    Ok(rms_distance(&step.x_next, &exact))
}

/// `|p - q|_2 / sqrt(n)`: the componentwise RMS deviation.
pub fn rms_distance(p: &[f64], q: &[f64]) -> f64 {
    euclidean_distance(p, q) / (p.len().max(1) as f64).sqrt()
}

pub fn euclidean_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Controller settings for [`rk45_adaptive`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Rk45Options {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; chosen by the standard starting-step heuristic when `None`.
    pub h0: Option<f64>,
    pub h_max: f64,
    pub h_min: f64,
    pub safety: f64,
    pub fac_min: f64,
    pub fac_max: f64,
    pub fsal: bool,
    pub max_steps: usize,
}

impl Default for Rk45Options {
    fn default() -> Self {
        Self {
            rtol: 1e-3,
            atol: 1e-6,
            h0: None,
            h_max: f64::INFINITY,
            h_min: 1e-14,
            safety: 0.9,
            fac_min: 0.2,
            fac_max: 10.0,
            fsal: true,
            max_steps: 10_000_000,
        }
    }
}

impl Rk45Options {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self { rtol, atol, ..Self::default() }
    }
}

/// One attempted step of the adaptive controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub h: f64,
    pub accepted: bool,
    pub error_estimate: f64,
    /// Evaluations spent by this attempt.
    pub evaluations: usize,
    pub cumulative_evals: usize,
}

/// Output of [`rk45_adaptive`].
#[derive(Debug, Clone, PartialEq)]
pub struct Rk45Run {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Mode in force at the start of each accepted step (and at the final time).
    pub modes: Vec<Mode>,
    pub log: Vec<StepRecord>,
    /// Evaluations including any spent choosing the initial step.
    pub evaluations: usize,
}

impl Rk45Run {
    pub fn accepted(&self) -> usize {
        self.log.iter().filter(|r| r.accepted).count()
    }

    pub fn rejected(&self) -> usize {
        self.log.iter().filter(|r| !r.accepted).count()
    }

    /// Writes the step log as CSV: `t,h,accepted,error_estimate,cumulative_evals`.
    pub fn write_log_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "t,h,accepted,error_estimate,cumulative_evals")?;
        for r in &self.log {
            writeln!(
                w,
                "{:?},{:?},{},{:?},{}",
                r.t, r.h, r.accepted as u8, r.error_estimate, r.cumulative_evals
            )?;
        }
        Ok(())
    }
}

fn scaled_rms(err: &[f64], x: &[f64], x_next: &[f64], rtol: f64, atol: f64) -> f64 {
    let n = err.len() as f64;
    let sum: f64 = err
        .iter()
        .zip(x.iter().zip(x_next))
        .map(|(e, (a, b))| {
            let sc = atol + rtol * a.abs().max(b.abs());
            (e / sc) * (e / sc)
        })
        .sum();
    (sum / n).sqrt()
}

/// Starting-step heuristic for an order-`order` error estimator. Costs one
/// extra evaluation beyond `f0`.
fn initial_step(
    rhs: &impl Rhs,
    t0: f64,
    x0: &[f64],
    f0: &[f64],
    order: u32,
    rtol: f64,
    atol: f64,
) -> f64 {
    let n = x0.len() as f64;
    let rms = |v: &mut dyn Iterator<Item = f64>| (v.map(|e| e * e).sum::<f64>() / n).sqrt();
    let scale: Vec<f64> = x0.iter().map(|x| atol + x.abs() * rtol).collect();
    let d0 = rms(&mut x0.iter().zip(&scale).map(|(x, s)| x / s));
    let d1 = rms(&mut f0.iter().zip(&scale).map(|(f, s)| f / s));
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let x1: Vec<f64> = x0.iter().zip(f0).map(|(x, f)| x + h0 * f).collect();
    let mut f1 = vec![0.0; x0.len()];
    rhs.eval(t0 + h0, &x1, &mut f1);
    let d2 = rms(&mut f1.iter().zip(f0).zip(&scale).map(|((a, b), s)| (a - b) / s)) / h0;
    let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / (order as f64 + 1.0))
    };
    (100.0 * h0).min(h1)
}

/// Classical embedded-pair integration over `t_span`.
///
/// Accepts when the scaled RMS of `x5 - x4` is at most one and rescales the
/// step by `min(fac_max, max(fac_min, safety * e^(-1/5)))`. Every attempt is
/// logged.
pub fn rk45_adaptive(
    tab: &ButcherTableau,
    sys: &(impl Dynamics + ?Sized),
    t_span: (f64, f64),
    x0: &[f64],
    opts: &Rk45Options,
) -> Result<Rk45Run> {
    let (t0, t_end) = t_span;
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::Config("rtol and atol must be positive".into()));
    }
    if !(t_end > t0) {
        return Err(Error::Contract(format!("empty time span [{t0}, {t_end}]")));
    }
    if x0.len() != sys.dim() {
        return Err(Error::Contract(format!(
            "initial state has dimension {}, system expects {}",
            x0.len(),
            sys.dim()
        )));
    }
    let exponent = -1.0 / (tab.embedded_order as f64 + 1.0);
    let h_max = opts.h_max.min(t_end - t0);
    let mut t = t0;
    let mut x = x0.to_vec();
    let mut mode = sys.initial_mode(t0, x0);
    let mut evaluations = 0;
    let mut log = Vec::new();
    let mut times = vec![t0];
    let mut states = vec![x.clone()];
    let mut modes = vec![mode];

    let mut k1 = vec![0.0; x.len()];
    StageRhs { sys, start: mode }.eval(t, &x, &mut k1);
    evaluations += 1;
    // Evaluations already spent on the current k1 but not yet charged to an attempt.
    let mut pending = 1;

    let mut h = match opts.h0 {
        Some(h0) => h0,
        None => {
            evaluations += 1;
            initial_step(&StageRhs { sys, start: mode }, t0, &x, &k1, tab.embedded_order, opts.rtol, opts.atol)
        }
    }
    .min(h_max);

    while t < t_end {
        if log.len() >= opts.max_steps {
            return Err(Error::Numeric(format!("step limit {} reached at t = {t}", opts.max_steps)));
        }
        if h < opts.h_min {
            return Err(Error::StepUnderflow { t, h });
        }
        if !opts.fsal && !log.is_empty() && pending == 0 {
            StageRhs { sys, start: mode }.eval(t, &x, &mut k1);
            evaluations += 1;
            pending = 1;
        }
        let last = t + h >= t_end;
        let h_try = if last { t_end - t } else { h };
        let (step, next_mode) = step_dynamics(tab, sys, t, &x, mode, h_try, Some(&k1))?;
        evaluations += step.evaluations;
        let attempt_evals = pending + step.evaluations;
        pending = 0;

        let err = scaled_rms(&step.error_vector(), &x, &step.x_next, opts.rtol, opts.atol);
        let accepted = err <= 1.0;
        log.push(StepRecord {
            t,
            h: h_try,
            accepted,
            error_estimate: err,
            evaluations: attempt_evals,
            cumulative_evals: evaluations,
        });
        let factor = if err == 0.0 {
            opts.fac_max
        } else {
            (opts.safety * err.powf(exponent)).clamp(opts.fac_min, opts.fac_max)
        };
        if accepted {
            t = if last { t_end } else { t + h_try };
            x = step.x_next;
            let mode_changed = next_mode != mode;
            mode = next_mode;
            if opts.fsal {
                if !mode_changed && tab.is_fsal() {
                    k1.copy_from_slice(step.stages.last().unwrap());
                } else {
                    StageRhs { sys, start: mode }.eval(t, &x, &mut k1);
                    evaluations += 1;
                    pending = 1;
                }
            }
            times.push(t);
            states.push(x.clone());
            modes.push(mode);
            h = (h_try * factor).min(h_max);
        } else {
            h = h_try * factor.min(1.0);
        }
    }
    Ok(Rk45Run { times, states, modes, log, evaluations })
}
