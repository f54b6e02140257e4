use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{EncoderConfig, MemoryBuffer, ProblemKind, StepState, encode_ode, encode_quadrature};
use crate::ode::{self, ButcherTableau, Dynamics, Mode};
use crate::problems::{FunctionClassSpec, ReferenceOracle, SampledFunction, sample_function};
use crate::quad::simpson_from_values;
use crate::{Error, Result, Rng};

/// Outcome of one executed step.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    /// State observed after the step.
    pub state: StepState,
    /// Where the step started.
    pub position: f64,
    /// Executed step size (after clamping).
    pub h: f64,
    /// Local error against the reference.
    pub error: f64,
    pub evaluations: usize,
    /// The step was shortened to land on the end of the domain.
    pub clamped: bool,
    /// Non-finite values ended the episode.
    pub failed: bool,
    /// Function value at the right end (quadrature) or the new state (ODE).
    pub values: Vec<f64>,
    /// Active mode after the step (always 0 for smooth problems).
    pub mode: usize,
}

/// An integration task the controller steps through.
pub trait StepEnv {
    fn encoder(&self) -> EncoderConfig;

    /// Integration domain or time span.
    fn span(&self) -> (f64, f64);

    /// Starts an episode with the warm-up step, which uses the smallest action.
    fn reset(&mut self, rng: &mut Rng) -> Result<EnvStep>;

    /// Executes a step of nominal size `h`.
    fn step(&mut self, h: f64) -> Result<EnvStep>;

    fn is_done(&self) -> bool;
}

fn lands_on_end(pos: f64, advance: f64, end: f64) -> bool {
    pos + advance >= end - 1e-12 * (1.0 + end.abs())
}

/// Composite Simpson quadrature driven step by step. Each step of size `h`
/// covers `[x, x + 2h]` with two new evaluations.
#[derive(Debug, Clone)]
pub struct QuadEnv {
    spec: FunctionClassSpec,
    fixed: Option<SampledFunction>,
    f: Option<SampledFunction>,
    warmup_h: f64,
    memory: MemoryBuffer,
    encoder: EncoderConfig,
    x: f64,
    f_x: f64,
    integral: f64,
}

impl QuadEnv {
    /// Samples a fresh function from `spec` at every reset.
    pub fn new(spec: FunctionClassSpec, warmup_h: f64, memory: usize) -> Result<Self> {
        spec.validate()?;
        if !(warmup_h > 0.0) {
            return Err(Error::Config("warm-up step must be positive".into()));
        }
        let encoder = EncoderConfig { kind: ProblemKind::Quadrature, memory };
        Ok(Self {
            spec,
            fixed: None,
            f: None,
            warmup_h,
            memory: MemoryBuffer::new(memory, encoder.feature_len()),
            encoder,
            x: spec.domain.0,
            f_x: 0.0,
            integral: 0.0,
        })
    }

    /// Integrates the same function in every episode.
    pub fn with_function(spec: FunctionClassSpec, f: SampledFunction, warmup_h: f64, memory: usize) -> Result<Self> {
        let mut env = Self::new(spec, warmup_h, memory)?;
        env.fixed = Some(f);
        Ok(env)
    }

    pub fn function(&self) -> Option<&SampledFunction> {
        self.f.as_ref()
    }

    /// Running Simpson sum of the episode.
    pub fn integral(&self) -> f64 {
        self.integral
    }

    fn advance(&mut self, h: f64, f_left: f64) -> Result<EnvStep> {
        let f = self.f.as_ref().ok_or_else(|| Error::Contract("environment was not reset".into()))?;
        let b = self.spec.domain.1;
        let x0 = self.x;
        let (h, clamped) = if lands_on_end(x0, 2.0 * h, b) {
            let h_end = 0.5 * (b - x0);
            (h_end, h_end != h)
        } else {
            (h, false)
        };
        let x_right = if clamped || lands_on_end(x0, 2.0 * h, b) { b } else { x0 + 2.0 * h };
        let x_mid = 0.5 * (x0 + x_right);
        let fm = f.eval(x_mid);
        let fr = f.eval(x_right);
        let piece = simpson_from_values(f_left, fm, fr, x0, x_right);
        let failed = !(fm.is_finite() && fr.is_finite());
        let error = if failed { f64::INFINITY } else { (piece - f.exact_integral(x0, x_right)).abs() };
        self.integral += piece;
        self.x = x_right;
        self.f_x = fr;
        let state = encode_quadrature(h, [f_left, fm, fr], &mut self.memory);
        Ok(EnvStep {
            state,
            position: x0,
            h,
            error,
            evaluations: 2,
            clamped,
            failed,
            values: vec![fr],
            mode: 0,
        })
    }
}

impl StepEnv for QuadEnv {
    fn encoder(&self) -> EncoderConfig {
        self.encoder
    }

    fn span(&self) -> (f64, f64) {
        self.spec.domain
    }

    fn reset(&mut self, rng: &mut Rng) -> Result<EnvStep> {
        let f = match &self.fixed {
            Some(f) => f.clone(),
            None => sample_function(&self.spec, rng)?,
        };
        let a = self.spec.domain.0;
        let fa = f.eval(a);
        self.f = Some(f);
        self.memory.clear();
        self.x = a;
        self.integral = 0.0;
        let mut first = self.advance(self.warmup_h, fa)?;
        first.evaluations = 3;
        first.failed |= !fa.is_finite();
        Ok(first)
    }

    fn step(&mut self, h: f64) -> Result<EnvStep> {
        if self.is_done() {
            return Err(Error::Contract("step requested after the end of the domain".into()));
        }
        self.advance(h, self.f_x)
    }

    fn is_done(&self) -> bool {
        self.x >= self.spec.domain.1
    }
}

/// Where ODE episodes start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    Fixed { x0: Vec<f64> },
    /// Independent uniform draws per component.
    UniformBox { lo: f64, hi: f64 },
}

/// Dormand-Prince stepping with externally chosen step sizes. Local errors
/// come from restarting the reference oracle at the current point.
#[derive(Debug, Clone)]
pub struct OdeEnv<D: Dynamics + Clone> {
    tab: ButcherTableau,
    oracle: ReferenceOracle<D>,
    t_span: (f64, f64),
    initial: InitialCondition,
    warmup_h: f64,
    fsal: bool,
    memory: MemoryBuffer,
    encoder: EncoderConfig,
    t: f64,
    x: Vec<f64>,
    mode: Mode,
    last_stage: Option<Vec<f64>>,
}

impl<D: Dynamics + Clone> OdeEnv<D> {
    pub fn new(sys: D, t_span: (f64, f64), initial: InitialCondition, warmup_h: f64, memory: usize) -> Result<Self> {
        let tab = ButcherTableau::dormand_prince();
        if !(t_span.1 > t_span.0) {
            return Err(Error::Config(format!("empty time span {t_span:?}")));
        }
        if let InitialCondition::Fixed { x0 } = &initial {
            if x0.len() != sys.dim() {
                return Err(Error::Config(format!("initial state needs {} components", sys.dim())));
            }
        }
        if !(warmup_h > 0.0) {
            return Err(Error::Config("warm-up step must be positive".into()));
        }
        let encoder = EncoderConfig {
            kind: ProblemKind::Ode { state_dim: sys.dim(), stages: tab.stage_count() },
            memory,
        };
        Ok(Self {
            memory: MemoryBuffer::new(memory, encoder.feature_len()),
            encoder,
            tab,
            oracle: ReferenceOracle::new(sys),
            t_span,
            initial,
            warmup_h,
            fsal: true,
            t: t_span.0,
            x: Vec::new(),
            mode: Mode::default(),
            last_stage: None,
        })
    }

    /// Disables first-same-as-last reuse so every step costs all stages.
    pub fn without_fsal(mut self) -> Self {
        self.fsal = false;
        self
    }

    pub fn system(&self) -> &D {
        &self.oracle.sys
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    fn advance(&mut self, h: f64) -> Result<EnvStep> {
        let t_end = self.t_span.1;
        let t0 = self.t;
        let (h, clamped) = if lands_on_end(t0, h, t_end) {
            let h_end = t_end - t0;
            (h_end, h_end != h)
        } else {
            (h, false)
        };
        let first = if self.fsal { self.last_stage.as_deref() } else { None };
        let sys = &self.oracle.sys;
        let (step, new_mode) = match ode::step_dynamics(&self.tab, sys, t0, &self.x, self.mode, h, first) {
            Ok(r) => r,
            Err(Error::Numeric(_)) => return Ok(self.failure(t0, h)),
            Err(e) => return Err(e),
        };
        if step.x_next.iter().any(|v| !v.is_finite()) {
            return Ok(self.failure(t0, h));
        }
        let exact = self.oracle.flow_with_mode(t0, &self.x, self.mode, h)?.0;
        let error = ode::rms_distance(&step.x_next, &exact);
        let state = encode_ode(h, &step.stages, &self.encoder, &mut self.memory)?;
        self.last_stage = (new_mode == self.mode).then(|| step.stages.last().unwrap().clone());
        self.t = if clamped || lands_on_end(t0, h, t_end) { t_end } else { t0 + h };
        self.mode = new_mode;
        self.x = step.x_next;
        Ok(EnvStep {
            state,
            position: t0,
            h,
            error,
            evaluations: step.evaluations,
            clamped,
            failed: false,
            values: self.x.clone(),
            mode: self.mode.index,
        })
    }

    fn failure(&mut self, t0: f64, h: f64) -> EnvStep {
        self.t = self.t_span.1;
        let feature_len = self.encoder.feature_len();
        EnvStep {
            state: self.memory.encode(h, vec![0.0; feature_len]),
            position: t0,
            h,
            error: f64::INFINITY,
            evaluations: self.tab.stage_count(),
            clamped: false,
            failed: true,
            values: self.x.clone(),
            mode: self.mode.index,
        }
    }
}

impl<D: Dynamics + Clone> StepEnv for OdeEnv<D> {
    fn encoder(&self) -> EncoderConfig {
        self.encoder
    }

    fn span(&self) -> (f64, f64) {
        self.t_span
    }

    fn reset(&mut self, rng: &mut Rng) -> Result<EnvStep> {
        let dim = self.oracle.sys.dim();
        self.x = match &self.initial {
            InitialCondition::Fixed { x0 } => x0.clone(),
            InitialCondition::UniformBox { lo, hi } => (0..dim).map(|_| rng.random_range(*lo..=*hi)).collect(),
        };
        self.t = self.t_span.0;
        self.mode = self.oracle.sys.initial_mode(self.t, &self.x);
        self.last_stage = None;
        self.memory.clear();
        self.advance(self.warmup_h)
    }

    fn step(&mut self, h: f64) -> Result<EnvStep> {
        if self.is_done() {
            return Err(Error::Contract("step requested after the end of the time span".into()));
        }
        self.advance(h)
    }

    fn is_done(&self) -> bool {
        self.t >= self.t_span.1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{FunctionClass, OdeSystem};
    use crate::seeded_rng;

    fn zero_function() -> SampledFunction {
        SampledFunction::Poly { coeffs: vec![0.0] }
    }

    #[test]
    fn constant_step_count_over_sine_domain() {
        let spec = FunctionClassSpec::new(FunctionClass::SingleSine);
        let mut env = QuadEnv::new(spec, 0.05, 0).unwrap();
        let mut rng = seeded_rng(0);
        let first = env.reset(&mut rng).unwrap();
        assert_eq!(first.evaluations, 3);
        let mut steps = 0;
        let mut last = None;
        while !env.is_done() {
            last = Some(env.step(0.2).unwrap());
            steps += 1;
        }
        assert_eq!(steps, 50);
        assert!(last.unwrap().clamped);
        let f = env.function().unwrap().clone();
        let exact = f.exact_integral(0.0, 20.0);
        assert!((env.integral() - exact).abs() < 1e-2);
    }

    #[test]
    fn exact_landing_is_not_clamped() {
        let spec = FunctionClassSpec::new(FunctionClass::PolyDeg { degree: 2 });
        let mut env = QuadEnv::with_function(spec, zero_function(), 0.25, 0).unwrap();
        env.reset(&mut seeded_rng(0)).unwrap();
        let s = env.step(0.25).unwrap();
        assert!(!s.clamped);
        assert!(env.is_done());
    }

    #[test]
    fn lorenz_steps_use_fsal() {
        let sys = OdeSystem::lorenz();
        let ic = InitialCondition::Fixed { x0: sys.initial_condition() };
        let mut env = OdeEnv::new(sys, (0.0, 0.1), ic, 0.025, 0).unwrap();
        let first = env.reset(&mut seeded_rng(0)).unwrap();
        assert_eq!(first.evaluations, 7);
        assert_eq!(first.state.to_input().len(), 22);
        let s = env.step(0.025).unwrap();
        assert_eq!(s.evaluations, 6);
        assert!(s.error > 0.0 && s.error < 1e-3);
    }

    #[test]
    fn random_initial_conditions_stay_in_box() {
        let sys = OdeSystem::lorenz();
        let ic = InitialCondition::UniformBox { lo: -10.0, hi: 10.0 };
        let mut env = OdeEnv::new(sys, (0.0, 0.05), ic, 0.025, 0).unwrap();
        let mut rng = seeded_rng(4);
        for _ in 0..5 {
            env.reset(&mut rng).unwrap();
            assert!(env.time() > 0.0);
        }
    }
}
