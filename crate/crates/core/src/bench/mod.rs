//! Benchmark harness: Pareto points for learners and classical baselines,
//! run configuration, the subcommand implementations and CSV/SVG output.

pub mod commands;
pub mod config;
pub mod svg;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::meta::{MetaLearner, integrate_with_meta};
use crate::ode::{ButcherTableau, Rk45Options, Rk45Run, rk45_adaptive, rms_distance};
use crate::problems::{FunctionClassSpec, OdeSystem, REFERENCE_TOL, ReferenceOracle, SampledFunction};
use crate::quad::{panel_edges, simpson, subdivide};
use crate::rl::{BaseLearner, InitialCondition, OdeEnv, QuadEnv, Rollout, integrate_with_learner};
use crate::{Result, seeded_rng};

pub use config::{Command, RunConfig};

/// One point of an error-versus-cost comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    /// Method family: `learner`, `meta`, `simpson`, `subdivision` or `rk45`.
    pub family: String,
    pub label: String,
    /// Step size, budget or tolerance that produced the point (NaN for learners).
    pub parameter: f64,
    pub avg_error_per_step: f64,
    /// Function evaluations per integral (quadrature) or per unit time (ODE).
    pub avg_evaluations: f64,
    /// Rejected attempts per run (adaptive ODE baseline only).
    pub rejected_steps: Option<f64>,
}

pub fn write_pareto_csv(mut w: impl Write, points: &[ParetoPoint]) -> std::io::Result<()> {
    writeln!(w, "family,label,parameter,avg_error_per_step,avg_evaluations,rejected_steps")?;
    for p in points {
        let rejected = p.rejected_steps.map_or(String::new(), |r| r.to_string());
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.family, p.label, p.parameter, p.avg_error_per_step, p.avg_evaluations, rejected
        )?;
    }
    Ok(())
}

/// Log-log plot of error against cost, one series per family.
pub fn pareto_plot(title: &str, x_label: &str, points: &[ParetoPoint]) -> svg::Plot {
    let mut series: Vec<svg::Series> = Vec::new();
    for p in points {
        let name = if p.family == "learner" || p.family == "meta" { p.label.clone() } else { p.family.clone() };
        match series.iter_mut().find(|s| s.label == name) {
            Some(s) => s.points.push((p.avg_evaluations, p.avg_error_per_step)),
            None => series.push(svg::Series { label: name, points: vec![(p.avg_evaluations, p.avg_error_per_step)] }),
        }
    }
    for s in &mut series {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    svg::Plot {
        title: title.into(),
        x_label: x_label.into(),
        y_label: "average error per step".into(),
        log_x: true,
        log_y: true,
        series,
    }
}

/// Cost of a baseline curve at `error`, by linear interpolation in log-log
/// coordinates between the two bracketing points. `None` outside the curve.
pub fn cost_at_error(curve: &[ParetoPoint], error: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = curve
        .iter()
        .filter(|p| p.avg_error_per_step > 0.0 && p.avg_evaluations > 0.0)
        .map(|p| (p.avg_error_per_step.ln(), p.avg_evaluations.ln()))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let e = error.ln();
    pts.windows(2).find(|w| w[0].0 <= e && e <= w[1].0).map(|w| {
        let (e0, c0) = w[0];
        let (e1, c1) = w[1];
        if e1 == e0 { c0.exp() } else { (c0 + (c1 - c0) * (e - e0) / (e1 - e0)).exp() }
    })
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 { f64::NAN } else { s / n as f64 }
}

/// Greedy learner rollouts over a common function sample.
pub fn learner_quad_rollouts(
    learner: &BaseLearner,
    spec: &FunctionClassSpec,
    functions: &[SampledFunction],
) -> Result<Vec<Rollout>> {
    let warmup = learner.actions.smallest();
    let memory = learner.encoder.memory;
    functions
        .par_iter()
        .map(|f| {
            let mut env = QuadEnv::with_function(*spec, f.clone(), warmup, memory)?;
            integrate_with_learner(learner, &mut env, &mut seeded_rng(0))
        })
        .collect()
}

/// Averages rollouts into a Pareto point; quadrature costs are totals, ODE costs per unit time.
pub fn rollout_point(family: &str, label: &str, rollouts: &[Rollout], per_unit_time: bool) -> ParetoPoint {
    ParetoPoint {
        family: family.into(),
        label: label.into(),
        parameter: f64::NAN,
        avg_error_per_step: mean(rollouts.iter().map(Rollout::avg_error)),
        avg_evaluations: mean(rollouts.iter().map(|r| {
            if per_unit_time { r.evals_per_unit() } else { r.evaluations() as f64 }
        })),
        rejected_steps: None,
    }
}

/// Histogram of chosen action indices (warm-up excluded).
pub fn action_histogram(rollouts: &[Rollout], n_actions: usize) -> Vec<usize> {
    let mut hist = vec![0; n_actions];
    for a in rollouts.iter().flat_map(|r| r.steps.iter().filter_map(|s| s.action)) {
        if a < n_actions {
            hist[a] += 1;
        }
    }
    hist
}

/// Mean per-panel error and evaluation count of equidistant composite Simpson
/// with node spacing `h`, the same notion of step a learner chooses.
fn simpson_stats(f: &SampledFunction, a: f64, b: f64, h: f64) -> (f64, usize) {
    let edges = panel_edges(a, b, h);
    let g = |x: f64| f.eval(x);
    let total: f64 = edges.windows(2).map(|w| (simpson(&g, w[0], w[1]) - f.exact_integral(w[0], w[1])).abs()).sum();
    let panels = edges.len() - 1;
    (total / panels as f64, 2 * panels + 1)
}

pub fn simpson_sweep(spec: &FunctionClassSpec, functions: &[SampledFunction], steps: &[f64]) -> Vec<ParetoPoint> {
    let (a, b) = spec.domain;
    steps
        .iter()
        .map(|&h| {
            let stats: Vec<(f64, usize)> = functions.par_iter().map(|f| simpson_stats(f, a, b, h)).collect();
            ParetoPoint {
                family: "simpson".into(),
                label: format!("simpson h={h}"),
                parameter: h,
                avg_error_per_step: mean(stats.iter().map(|s| s.0)),
                avg_evaluations: mean(stats.iter().map(|s| s.1 as f64)),
                rejected_steps: None,
            }
        })
        .collect()
}

/// Greedy subdivision; a step is one interval of the final partition, whose
/// error is that of its fine estimate.
pub fn subdivision_sweep(
    spec: &FunctionClassSpec,
    functions: &[SampledFunction],
    budgets: &[usize],
) -> Result<Vec<ParetoPoint>> {
    let (a, b) = spec.domain;
    budgets
        .iter()
        .map(|&budget| {
            let stats: Vec<(f64, usize)> = functions
                .par_iter()
                .map(|f| {
                    let g = |x: f64| f.eval(x);
                    let res = subdivide(&g, a, b, budget)?;
                    let err = mean(res.intervals.iter().map(|iv| (iv.fine - f.exact_integral(iv.a, iv.b)).abs()));
                    Ok((err, res.evaluations_used))
                })
                .collect::<Result<_>>()?;
            Ok(ParetoPoint {
                family: "subdivision".into(),
                label: format!("subdivision budget={budget}"),
                parameter: budget as f64,
                avg_error_per_step: mean(stats.iter().map(|s| s.0)),
                avg_evaluations: mean(stats.iter().map(|s| s.1 as f64)),
                rejected_steps: None,
            })
        })
        .collect()
}

/// Initial conditions of an ODE benchmark: the configured one, or `count` uniform draws.
pub fn benchmark_initial_conditions(
    sys: &OdeSystem,
    initial: &InitialCondition,
    count: usize,
    ic_box: [f64; 2],
    seed: u64,
) -> Vec<Vec<f64>> {
    use rand::Rng as _;
    if count == 0 {
        return vec![match initial {
            InitialCondition::Fixed { x0 } => x0.clone(),
            InitialCondition::UniformBox { .. } => sys.initial_condition(),
        }];
    }
    let mut rng = seeded_rng(seed);
    (0..count)
        .map(|_| (0..sys.state_dim()).map(|_| rng.random_range(ic_box[0]..ic_box[1])).collect())
        .collect()
}

pub fn learner_ode_rollouts(
    learner: &BaseLearner,
    sys: &OdeSystem,
    t_span: (f64, f64),
    ics: &[Vec<f64>],
) -> Result<Vec<Rollout>> {
    ics.par_iter()
        .map(|x0| {
            let ic = InitialCondition::Fixed { x0: x0.clone() };
            let mut env = OdeEnv::new(*sys, t_span, ic, learner.actions.smallest(), learner.encoder.memory)?;
            integrate_with_learner(learner, &mut env, &mut seeded_rng(0))
        })
        .collect()
}

/// Smallest step any pool member proposes; used for the warm-up step of meta runs.
pub fn meta_warmup(meta: &MetaLearner) -> f64 {
    meta.pool
        .entries()
        .iter()
        .map(|e| match e {
            crate::meta::PoolEntry::Trained(l) => l.actions.smallest(),
            crate::meta::PoolEntry::Constant(h) => *h,
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn meta_ode_rollouts(
    meta: &MetaLearner,
    sys: &OdeSystem,
    t_span: (f64, f64),
    ics: &[Vec<f64>],
) -> Result<Vec<crate::meta::MetaRollout>> {
    ics.par_iter()
        .map(|x0| {
            let ic = InitialCondition::Fixed { x0: x0.clone() };
            let mut env = OdeEnv::new(*sys, t_span, ic, meta_warmup(meta), meta.encoder.memory)?;
            integrate_with_meta(meta, &mut env, &mut seeded_rng(0))
        })
        .collect()
}

/// Local error of every accepted RK45 step against a restart of the reference oracle.
pub fn rk45_local_errors(sys: &OdeSystem, run: &Rk45Run) -> Result<Vec<f64>> {
    let oracle = ReferenceOracle { sys: *sys, tol: REFERENCE_TOL };
    (0..run.times.len() - 1)
        .map(|i| {
            let h = run.times[i + 1] - run.times[i];
            let (x, _) = oracle.flow_with_mode(run.times[i], &run.states[i], run.modes[i], h)?;
            Ok(rms_distance(&x, &run.states[i + 1]))
        })
        .collect()
}

/// RK45 with `rtol = atol = tol` from each initial condition.
pub fn rk45_runs(sys: &OdeSystem, t_span: (f64, f64), ics: &[Vec<f64>], tol: f64) -> Result<Vec<(Rk45Run, Vec<f64>)>> {
    let tab = ButcherTableau::dormand_prince();
    ics.par_iter()
        .map(|x0| {
            let run = rk45_adaptive(&tab, sys, t_span, x0, &Rk45Options::with_tolerances(tol, tol))?;
            let errors = rk45_local_errors(sys, &run)?;
            Ok((run, errors))
        })
        .collect()
}

pub fn rk45_point(t_span: (f64, f64), tol: f64, runs: &[(Rk45Run, Vec<f64>)]) -> ParetoPoint {
    let duration = t_span.1 - t_span.0;
    ParetoPoint {
        family: "rk45".into(),
        label: format!("rk45 tol={tol:e}"),
        parameter: tol,
        avg_error_per_step: mean(runs.iter().map(|(_, e)| mean(e.iter().copied()))),
        avg_evaluations: mean(runs.iter().map(|(r, _)| r.evaluations as f64 / duration)),
        rejected_steps: Some(mean(runs.iter().map(|(r, _)| r.rejected() as f64))),
    }
}

/// Oracle switch times of a system over `t_span` (empty for smooth systems).
pub fn oracle_switch_times(sys: &OdeSystem, x0: &[f64], t_span: (f64, f64)) -> Result<Vec<f64>> {
    if sys.mode_count() < 2 {
        return Ok(Vec::new());
    }
    let traj = crate::problems::reference_trajectory_from(sys, t_span, x0, REFERENCE_TOL)?;
    Ok(traj.switch_times())
}
