//! Subcommand bodies shared by the command-line tool and the Python bindings.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::config::{Command, RunConfig, TraceKind, WeightsMode};
use super::*;
use crate::meta::{LearnerPool, MetaLearner, PoolEntry, train_meta};
use crate::optweights::{
    BasisEvaluations, OptimalRule, fit_weights, node_grid_search, node_optimize, one_node_analytic,
};
use crate::problems::sample_function;
use crate::rl::{RewardConfig, TrainOutcome, train_base_learner, write_training_log};
use crate::{Error, Rng};

pub const EXIT_SUCCESS: i32 = 0;
/// I/O failures that are neither usage nor numeric problems.
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CAP_HIT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Success,
    /// Training stopped at the episode cap without meeting the convergence test.
    CapHit,
    /// Training hit a non-finite loss; the last good network was saved.
    Diverged(String),
}

#[derive(Debug, Clone)]
pub struct CommandReport {
    pub status: Status,
    pub files: Vec<PathBuf>,
    /// Human-readable summary lines.
    pub notes: Vec<String>,
}

impl CommandReport {
    fn new() -> Self {
        Self { status: Status::Success, files: Vec::new(), notes: Vec::new() }
    }

    fn note(&mut self, line: impl Into<String>) {
        self.notes.push(line.into());
    }

    pub fn exit_code(&self) -> i32 {
        match self.status {
            Status::Success => EXIT_SUCCESS,
            Status::CapHit => EXIT_CAP_HIT,
            Status::Diverged(_) => EXIT_NUMERIC,
        }
    }
}

pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Contract(_) | Error::Checkpoint(_) | Error::MissingFile(_) => EXIT_USAGE,
        Error::Numeric(_) | Error::StepUnderflow { .. } | Error::Singular { .. } | Error::NotPositiveDefinite { .. } => {
            EXIT_NUMERIC
        }
        Error::Io(_) => EXIT_IO,
    }
}

pub fn exit_code(result: &Result<CommandReport>) -> i32 {
    match result {
        Ok(r) => r.exit_code(),
        Err(e) => error_exit_code(e),
    }
}

/// Runs `cmd` writing everything into `out_dir`, starting with the resolved configuration.
pub fn run(cmd: Command, cfg: &RunConfig, out_dir: &Path) -> Result<CommandReport> {
    cfg.validate()?;
    let mut report = CommandReport::new();
    report.files.push(cfg.echo(out_dir)?);
    match cmd {
        Command::TrainQuad => train_quad(cfg, out_dir, &mut report)?,
        Command::TrainOde => train_ode(cfg, out_dir, &mut report)?,
        Command::TrainMeta => train_meta_cmd(cfg, out_dir, &mut report)?,
        Command::BenchQuad => bench_quad(cfg, out_dir, &mut report)?,
        Command::BenchOde => bench_ode(cfg, out_dir, &mut report)?,
        Command::Weights => weights(cfg, out_dir, &mut report)?,
        Command::Trace => trace(cfg, out_dir, &mut report)?,
    }
    Ok(report)
}

fn create(path: &Path, report: &mut CommandReport) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    report.files.push(path.to_path_buf());
    Ok(BufWriter::new(File::create(path)?))
}

fn write_text(path: &Path, text: &str, report: &mut CommandReport) -> Result<()> {
    let mut w = create(path, report)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn load_learner(path: &Path) -> Result<BaseLearner> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    BaseLearner::load(path)
}

fn load_meta(path: &Path) -> Result<MetaLearner> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    MetaLearner::load(path)
}

/// Saves the outcome of a training run and folds its status into `report`.
fn finish_training<L>(
    outcome: &TrainOutcome<L>,
    save: impl Fn(&L, &Path) -> Result<()>,
    checkpoint: &Path,
    log_path: &Path,
    report: &mut CommandReport,
) -> Result<()> {
    save(&outcome.learner, checkpoint)?;
    report.files.push(checkpoint.to_path_buf());
    let mut w = create(log_path, report)?;
    write_training_log(&mut w, &outcome.log)?;
    w.flush()?;
    let last = outcome.log.last();
    report.note(format!(
        "{}: {} episodes, converged = {}{}",
        checkpoint.display(),
        outcome.log.len(),
        outcome.converged,
        last.map_or(String::new(), |l| format!(
            ", last episode mean reward {:.4}, avg error {:.3e}, {:.1} evals per unit",
            l.mean_reward, l.avg_error, l.evals_per_unit
        ))
    ));
    report.status = match (&outcome.diverged, outcome.converged) {
        (Some(msg), _) => Status::Diverged(msg.clone()),
        (None, true) => Status::Success,
        (None, false) => Status::CapHit,
    };
    Ok(())
}

fn cap_without_episodes(report: &mut CommandReport) {
    report.note("max_episodes is 0: nothing trained, no checkpoint written");
    report.status = Status::CapHit;
}

fn train_quad(cfg: &RunConfig, out: &Path, report: &mut CommandReport) -> Result<()> {
    if cfg.training.max_episodes == 0 {
        cap_without_episodes(report);
        return Ok(());
    }
    let spec = cfg.quad.spec()?;
    let actions = cfg.quad.action_set()?;
    let reward = cfg.quad.reward_config()?;
    let mut env = QuadEnv::new(spec, actions.smallest(), cfg.quad.memory)?;
    let mut rng = seeded_rng(cfg.seed);
    let outcome = train_base_learner(&mut env, &actions, &reward, &cfg.training, &mut rng)?;
    finish_training(&outcome, BaseLearner::save, &out.join("learner.json"), &out.join("training_log.csv"), report)
}

fn train_ode(cfg: &RunConfig, out: &Path, report: &mut CommandReport) -> Result<()> {
    if cfg.training.max_episodes == 0 {
        cap_without_episodes(report);
        return Ok(());
    }
    let outcome = train_ode_learner(cfg, &mut seeded_rng(cfg.seed))?;
    finish_training(&outcome, BaseLearner::save, &out.join("learner.json"), &out.join("training_log.csv"), report)
}

fn train_ode_learner(cfg: &RunConfig, rng: &mut Rng) -> Result<TrainOutcome<BaseLearner>> {
    let sys = cfg.ode.system()?;
    let actions = cfg.ode.action_set()?;
    let reward = cfg.ode.reward_config()?;
    let mut env = OdeEnv::new(sys, cfg.ode.train_t_span()?, cfg.ode.initial()?, actions.smallest(), cfg.ode.memory)?;
    train_base_learner(&mut env, &actions, &reward, &cfg.training, rng)
}

fn train_meta_cmd(cfg: &RunConfig, out: &Path, report: &mut CommandReport) -> Result<()> {
    if cfg.meta.training.max_episodes == 0 {
        cap_without_episodes(report);
        return Ok(());
    }
    let mut rng = seeded_rng(cfg.seed);
    let base = match &cfg.meta.base_checkpoint {
        Some(path) => load_learner(path)?,
        None => {
            if cfg.training.max_episodes == 0 {
                return Err(Error::Config(
                    "training.max_episodes: the base learner needs episodes when meta.base_checkpoint is unset".into(),
                ));
            }
            let outcome = train_ode_learner(cfg, &mut rng)?;
            finish_training(
                &outcome,
                BaseLearner::save,
                &out.join("base_learner.json"),
                &out.join("base_training_log.csv"),
                report,
            )?;
            if report.status != Status::CapHit && report.status != Status::Success {
                return Ok(());
            }
            outcome.learner
        }
    };
    let mut entries = vec![PoolEntry::Trained(base)];
    entries.extend(cfg.meta.constants.iter().map(|&h| PoolEntry::Constant(h)));
    let pool = LearnerPool::new(entries)?;
    let sys = cfg.ode.system()?;
    let warmup = pool
        .entries()
        .iter()
        .map(|e| match e {
            PoolEntry::Trained(l) => l.actions.smallest(),
            PoolEntry::Constant(h) => *h,
        })
        .fold(f64::INFINITY, f64::min);
    let mut env = OdeEnv::new(sys, cfg.ode.t_span()?, cfg.ode.initial()?, warmup, cfg.ode.memory)?;
    let reward = RewardConfig::new(cfg.ode.tol(), cfg.meta.reward)?;
    let outcome = train_meta(pool, &mut env, &reward, &cfg.meta.training, &mut rng)?;
    finish_training(&outcome, MetaLearner::save, &out.join("meta_learner.json"), &out.join("training_log.csv"), report)
}

fn checkpoint_label(path: &Path, memory: usize) -> String {
    let stem = path.file_stem().map_or("learner".into(), |s| s.to_string_lossy().into_owned());
    format!("{stem} m={memory}")
}

fn write_pareto_outputs(
    out: &Path,
    title: &str,
    x_label: &str,
    points: &[ParetoPoint],
    report: &mut CommandReport,
) -> Result<()> {
    let mut w = create(&out.join("pareto.csv"), report)?;
    write_pareto_csv(&mut w, points)?;
    w.flush()?;
    write_text(&out.join("pareto.svg"), &pareto_plot(title, x_label, points).render(), report)
}

fn bench_quad(cfg: &RunConfig, out: &Path, report: &mut CommandReport) -> Result<()> {
    if cfg.bench.samples == 0 {
        return Err(Error::Config("bench.samples: the function sample must not be empty".into()));
    }
    let spec = cfg.quad.spec()?;
    let learners = cfg
        .bench
        .checkpoints
        .iter()
        .map(|p| load_learner(p).map(|l| (p.clone(), l)))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = seeded_rng(cfg.seed);
    let functions = (0..cfg.bench.samples)
        .map(|_| sample_function(&spec, &mut rng))
        .collect::<Result<Vec<_>>>()?;

    let simpson_pts = simpson_sweep(&spec, &functions, &cfg.bench.simpson_steps);
    let mut points = Vec::new();
    let mut hist = create(&out.join("step_histogram.csv"), report)?;
    writeln!(hist, "label,h,count,fraction")?;
    for (path, learner) in &learners {
        let label = checkpoint_label(path, learner.encoder.memory);
        let rollouts = learner_quad_rollouts(learner, &spec, &functions)?;
        let p = rollout_point("learner", &label, &rollouts, false);
        let counts = action_histogram(&rollouts, learner.actions.len());
        let total = counts.iter().sum::<usize>().max(1);
        for (a, &c) in counts.iter().enumerate() {
            writeln!(hist, "{label},{},{c},{}", learner.actions.get(a), c as f64 / total as f64)?;
        }
        let modal = (0..counts.len()).max_by_key(|&a| counts[a]).map(|a| learner.actions.get(a));
        let matched = cost_at_error(&simpson_pts, p.avg_error_per_step);
        report.note(format!(
            "{label}: avg error {:.3e}, {:.1} evaluations, Simpson at matched error {}, modal step {}",
            p.avg_error_per_step,
            p.avg_evaluations,
            matched.map_or("out of range".into(), |c| format!("{c:.1}")),
            modal.map_or("none".into(), |h| h.to_string())
        ));
        points.push(p);
    }
    hist.flush()?;
    points.extend(simpson_pts);
    points.extend(subdivision_sweep(&spec, &functions, &cfg.bench.subdivision_budgets)?);
    write_pareto_outputs(out, &format!("{} quadrature", cfg.quad.class), "evaluations per integral", &points, report)
}

fn bench_ode(cfg: &RunConfig, out: &Path, report: &mut CommandReport) -> Result<()> {
    let sys = cfg.ode.system()?;
    let t_span = cfg.ode.t_span()?;
    let tol = cfg.ode.tol();
    let b = &cfg.bench;
    if b.checkpoints.is_empty() && b.meta_checkpoint.is_none() && b.rk45_tols.is_empty() {
        return Err(Error::Config("bench: no checkpoints and no rk45_tols, nothing to compare".into()));
    }
    let learners = b
        .checkpoints
        .iter()
        .map(|p| load_learner(p).map(|l| (p.clone(), l)))
        .collect::<Result<Vec<_>>>()?;
    let meta = b.meta_checkpoint.as_deref().map(load_meta).transpose()?;
    let ics = benchmark_initial_conditions(&sys, &cfg.ode.initial()?, b.random_ics, b.ic_box, cfg.seed);
    let steps_dir = out.join("steps");

    let mut points = Vec::new();
    for (path, learner) in &learners {
        let label = checkpoint_label(path, learner.encoder.memory);
        let rollouts = learner_ode_rollouts(learner, &sys, t_span, &ics)?;
        if b.write_step_logs {
            for (k, r) in rollouts.iter().enumerate() {
                let mut w = create(&steps_dir.join(format!("learner_{k}_{}.csv", sanitize(&label))), report)?;
                r.write_trace_csv(&mut w, tol, "t")?;
                w.flush()?;
            }
        }
        points.push(rollout_point("learner", &label, &rollouts, true));
    }
    if let Some(meta) = &meta {
        let runs = meta_ode_rollouts(meta, &sys, t_span, &ics)?;
        if b.write_step_logs {
            for (k, r) in runs.iter().enumerate() {
                let mut w = create(&steps_dir.join(format!("meta_{k}.csv")), report)?;
                r.rollout.write_trace_csv(&mut w, tol, "t")?;
                w.flush()?;
                let mut w = create(&steps_dir.join(format!("meta_{k}_dispatch.csv")), report)?;
                r.write_dispatch_csv(&mut w)?;
                w.flush()?;
            }
        }
        let rollouts: Vec<Rollout> = runs.into_iter().map(|r| r.rollout).collect();
        let mut p = rollout_point("meta", "meta", &rollouts, true);
        p.rejected_steps = Some(0.0);
        points.push(p);
    }
    let mut rk_points = Vec::new();
    for &rk_tol in &b.rk45_tols {
        let runs = rk45_runs(&sys, t_span, &ics, rk_tol)?;
        if b.write_step_logs {
            for (k, (run, _)) in runs.iter().enumerate() {
                let mut w = create(&steps_dir.join(format!("rk45_{k}_tol{rk_tol:e}.csv")), report)?;
                run.write_log_csv(&mut w)?;
                w.flush()?;
            }
        }
        rk_points.push(rk45_point(t_span, rk_tol, &runs));
    }
    let switches = match ics.first() {
        Some(x0) => oracle_switch_times(&sys, x0, t_span)?,
        None => Vec::new(),
    };
    if !switches.is_empty() {
        report.note(format!("oracle switch times: {switches:?}"));
        for p in &rk_points {
            report.note(format!(
                "{}: {:.1} rejected steps per run, {:.1} per switch",
                p.label,
                p.rejected_steps.unwrap_or(0.0),
                p.rejected_steps.unwrap_or(0.0) / switches.len() as f64
            ));
        }
    }
    for p in &points {
        let matched = cost_at_error(&rk_points, p.avg_error_per_step);
        report.note(format!(
            "{}: avg error {:.3e}, {:.1} evaluations per unit time, RK45 at matched error {}",
            p.label,
            p.avg_error_per_step,
            p.avg_evaluations,
            matched.map_or("out of range".into(), |c| format!("{c:.1}"))
        ));
    }
    points.extend(rk_points);
    write_pareto_outputs(out, &format!("{} integration", cfg.ode.system), "evaluations per unit time", &points, report)
}

fn sanitize(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

fn rule_text(rule: &OptimalRule) -> String {
    let mut s = String::from("# node weight\n");
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        s.push_str(&format!("{x} {w}\n"));
    }
    s
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

fn weights(cfg: &RunConfig, out: &Path, report: &mut CommandReport) -> Result<()> {
    let w = &cfg.weights;
    let spec = w.spec()?;
    let (a, b) = spec.domain;
    let mut rng = seeded_rng(cfg.seed);
    if w.mode == WeightsMode::OneNode {
        let n = w.grid_resolution();
        let curve: Vec<(f64, f64, f64)> = (0..=n)
            .map(|i| {
                let x = i as f64 / n as f64;
                let (wt, eps) = one_node_analytic(x);
                (x, wt, eps)
            })
            .collect();
        let best = curve.iter().copied().min_by(|p, q| p.2.total_cmp(&q.2)).expect("non-empty grid");
        let mut f = create(&out.join("one_node.csv"), report)?;
        writeln!(f, "x1,weight,eps,minimum")?;
        for &(x, wt, eps) in &curve {
            writeln!(f, "{x},{wt},{eps},{}", u8::from(x == best.0))?;
        }
        f.flush()?;
        report.note(format!("one-node minimum at x1 = {:.4}, weight {:.4}, eps {:.5}", best.0, best.1, best.2));
        return Ok(());
    }

    let fitted = match w.mode {
        WeightsMode::Fit => {
            let data = BasisEvaluations::sample(&spec, &w.nodes, w.samples, &mut rng)?;
            fit_weights(&data)?
        }
        WeightsMode::Grid => {
            let surface = node_grid_search(&spec, w.n_nodes, w.grid_resolution(), w.grid_samples, cfg.seed)?;
            let mut f = create(&out.join("error_surface.csv"), report)?;
            surface.write_csv(&mut f)?;
            f.flush()?;
            surface.best
        }
        WeightsMode::Optimize => {
            let search = node_optimize(&spec, &w.nodes, &w.search)?;
            report.note(format!("node search: {} iterations, converged = {}", search.iterations, search.converged));
            search.rule
        }
        WeightsMode::OneNode => unreachable!(),
    };

    // Fresh functions for an unbiased comparison against Simpson.
    let holdout_n = if w.holdout > 0.0 { ((w.samples as f64) * w.holdout).ceil() as usize } else { w.samples };
    let functions = (0..holdout_n)
        .map(|_| sample_function(&spec, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let held = BasisEvaluations::from_functions(&functions, &fitted.nodes, spec.domain)?;
    let fitted = if w.holdout > 0.0 { fitted.with_holdout(&held)? } else { fitted };
    let simpson_nodes = [a, 0.5 * (a + b), b];
    let simpson_weights: Vec<f64> = [1.0, 4.0, 1.0].iter().map(|c| c * (b - a) / 6.0).collect();
    let simpson_data = BasisEvaluations::from_functions(&functions, &simpson_nodes, spec.domain)?;
    let (s_eps, s_abs) = simpson_data.errors(&simpson_weights);
    let (h_eps, h_abs) = held.errors(&fitted.weights);

    let mut f = create(&out.join("weights_report.csv"), report)?;
    writeln!(f, "method,nodes,weights,eps,eps_abs,samples,eval_eps,eval_eps_abs,eval_samples")?;
    writeln!(
        f,
        "fitted,{},{},{},{},{},{h_eps},{h_abs},{}",
        join(&fitted.nodes),
        join(&fitted.weights),
        fitted.eps,
        fitted.eps_abs,
        fitted.sample_count,
        functions.len()
    )?;
    writeln!(
        f,
        "simpson,{},{},,,,{s_eps},{s_abs},{}",
        join(&simpson_nodes),
        join(&simpson_weights),
        functions.len()
    )?;
    f.flush()?;
    write_text(&out.join("rule.txt"), &rule_text(&fitted), report)?;
    report.note(format!(
        "fitted weights {:?} at nodes {:?}: eps {:.5}, eps_abs {:.5}; Simpson eps {:.5}, eps_abs {:.5} ({:.1}% lower absolute error)",
        fitted.weights,
        fitted.nodes,
        h_eps,
        h_abs,
        s_eps,
        s_abs,
        100.0 * (1.0 - h_abs / s_abs)
    ));
    Ok(())
}

fn trace(cfg: &RunConfig, out: &Path, report: &mut CommandReport) -> Result<()> {
    let path = cfg
        .trace
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::Config("trace.checkpoint: a checkpoint is required".into()))?;
    let trace_path = out.join("trace.csv");
    let (rollout, tol) = match cfg.trace.kind {
        TraceKind::Quad => {
            let learner = load_learner(path)?;
            let spec = cfg.quad.spec()?;
            let f = sample_function(&spec, &mut seeded_rng(cfg.trace.function_seed))?;
            report.note(format!("integrand record: {}", f.to_record()));
            let mut env = QuadEnv::with_function(spec, f, learner.actions.smallest(), learner.encoder.memory)?;
            let r = integrate_with_learner(&learner, &mut env, &mut seeded_rng(cfg.seed))?;
            let mut w = create(&trace_path, report)?;
            r.write_trace_csv(&mut w, learner.reward.tol, "x")?;
            w.flush()?;
            (r, learner.reward.tol)
        }
        TraceKind::Ode => {
            let learner = load_learner(path)?;
            let ics = [match cfg.ode.initial()? {
                InitialCondition::Fixed { x0 } => x0,
                InitialCondition::UniformBox { .. } => cfg.ode.system()?.initial_condition(),
            }];
            let r = learner_ode_rollouts(&learner, &cfg.ode.system()?, cfg.ode.t_span()?, &ics)?.remove(0);
            let mut w = create(&trace_path, report)?;
            r.write_trace_csv(&mut w, learner.reward.tol, "t")?;
            w.flush()?;
            (r, learner.reward.tol)
        }
        TraceKind::Meta => {
            let meta = load_meta(path)?;
            let sys = cfg.ode.system()?;
            let x0 = match cfg.ode.initial()? {
                InitialCondition::Fixed { x0 } => x0,
                InitialCondition::UniformBox { .. } => sys.initial_condition(),
            };
            let r = meta_ode_rollouts(&meta, &sys, cfg.ode.t_span()?, &[x0.clone()])?.remove(0);
            let mut buf = Vec::new();
            r.rollout.write_trace_csv(&mut buf, meta.reward.tol, "t")?;
            let text = String::from_utf8(buf).expect("trace is UTF-8");
            // Append the dispatched learner; the warm-up row has none.
            let mut w = create(&trace_path, report)?;
            for (i, line) in text.lines().enumerate() {
                let extra = match i {
                    0 => "learner_index".to_string(),
                    1 => String::new(),
                    _ => r.dispatch.get(i - 2).map_or(String::new(), |d| d.learner_index.to_string()),
                };
                writeln!(w, "{line},{extra}")?;
            }
            w.flush()?;
            let mut w = create(&out.join("dispatch.csv"), report)?;
            r.write_dispatch_csv(&mut w)?;
            w.flush()?;
            for t in oracle_switch_times(&sys, &x0, cfg.ode.t_span()?)? {
                report.note(format!("oracle switch at t = {t:.6}"));
            }
            (r.rollout, meta.reward.tol)
        }
    };
    report.note(format!(
        "{} steps, {} evaluations, avg error {:.3e}, {} tolerance violations",
        rollout.steps.len(),
        rollout.evaluations(),
        rollout.avg_error(),
        rollout.violations(tol)
    ));
    Ok(())
}
