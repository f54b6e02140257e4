use std::io::Write;

use super::env::{EnvStep, StepEnv};
use super::train::BaseLearner;
use super::StepState;
use crate::{Error, Result, Rng};

/// One step of a rollout. `action` is `None` for the warm-up step.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub position: f64,
    pub h: f64,
    pub error: f64,
    pub evaluations: usize,
    pub action: Option<usize>,
    pub clamped: bool,
    pub values: Vec<f64>,
    pub mode: usize,
}

impl RolloutStep {
    fn from_env(step: &EnvStep, action: Option<usize>) -> Self {
        Self {
            position: step.position,
            h: step.h,
            error: step.error,
            evaluations: step.evaluations,
            action,
            clamped: step.clamped,
            values: step.values.clone(),
            mode: step.mode,
        }
    }
}

/// Trace and metrics of a single integration run.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub steps: Vec<RolloutStep>,
    pub span: (f64, f64),
    pub failed: bool,
}

impl Rollout {
    pub fn evaluations(&self) -> usize {
        self.steps.iter().map(|s| s.evaluations).sum()
    }

    pub fn evals_per_unit(&self) -> f64 {
        self.evaluations() as f64 / (self.span.1 - self.span.0)
    }

    /// Mean local error per step, warm-up included.
    pub fn avg_error(&self) -> f64 {
        self.steps.iter().map(|s| s.error).sum::<f64>() / self.steps.len() as f64
    }

    pub fn max_error(&self) -> f64 {
        self.steps.iter().map(|s| s.error).fold(0.0, f64::max)
    }

    pub fn step_sizes(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.h).collect()
    }

    pub fn violations(&self, tol: f64) -> usize {
        self.steps.iter().filter(|s| s.error >= tol).count()
    }

    /// Per-step trace: position, step, error, tolerance flag, values.
    pub fn write_trace_csv(&self, mut w: impl Write, tol: f64, position_label: &str) -> std::io::Result<()> {
        let n_values = self.steps.first().map_or(0, |s| s.values.len());
        write!(w, "{position_label},h,action,local_error,tol_violation,mode")?;
        for i in 0..n_values {
            write!(w, ",value_{i}")?;
        }
        writeln!(w)?;
        for s in &self.steps {
            let action = s.action.map_or(String::new(), |a| a.to_string());
            write!(w, "{},{},{},{},{},{}", s.position, s.h, action, s.error, u8::from(s.error >= tol), s.mode)?;
            for v in &s.values {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Runs `env` to the end with the given step chooser.
pub fn rollout(
    env: &mut dyn StepEnv,
    choose: &mut dyn FnMut(&StepState) -> (usize, f64),
    rng: &mut Rng,
) -> Result<Rollout> {
    let first = env.reset(rng)?;
    let mut failed = first.failed;
    let mut state = first.state.clone();
    let mut steps = vec![RolloutStep::from_env(&first, None)];
    while !failed && !env.is_done() {
        let (action, h) = choose(&state);
        let out = env.step(h)?;
        failed = out.failed;
        steps.push(RolloutStep::from_env(&out, Some(action)));
        state = out.state;
    }
    Ok(Rollout { steps, span: env.span(), failed })
}

/// Greedy rollout of a trained learner.
pub fn integrate_with_learner(learner: &BaseLearner, env: &mut dyn StepEnv, rng: &mut Rng) -> Result<Rollout> {
    if learner.encoder != env.encoder() {
        return Err(Error::Contract(format!(
            "learner encoder {:?} does not match the problem's {:?}",
            learner.encoder,
            env.encoder()
        )));
    }
    let mut choose = |s: &StepState| {
        let a = learner.greedy_action(s);
        (a, learner.actions.get(a))
    };
    rollout(env, &mut choose, rng)
}
