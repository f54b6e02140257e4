//! Python bindings: function classes, classical integrators, trained learners,
//! optimal weights and the benchmark commands.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rlstep::bench::commands;
use rlstep::bench::config::{Command, RunConfig};
use rlstep::meta::integrate_with_meta;
use rlstep::ode::{ButcherTableau, Rk45Options, rk45_adaptive};
use rlstep::optweights::{BasisEvaluations, fit_weights, one_node_analytic};
use rlstep::problems::{FunctionClass, FunctionClassSpec, OdeSystem, SampledFunction, sample_function};
use rlstep::quad::{panel_edges, simpson_from_values};
use rlstep::rl::{InitialCondition, OdeEnv, QuadEnv, Rollout, integrate_with_learner};
use rlstep::{Error, seeded_rng};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::MissingFile(p) => PyFileNotFoundError::new_err(p.display().to_string()),
        Error::Config(_) | Error::Contract(_) | Error::Checkpoint(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn class_spec(class_name: &str, domain: Option<(f64, f64)>) -> PyResult<FunctionClassSpec> {
    let class = FunctionClass::parse(class_name).map_err(to_py)?;
    let spec = match domain {
        Some((a, b)) => FunctionClassSpec::new(class).with_domain(a, b),
        None => FunctionClassSpec::new(class),
    };
    spec.validate().map_err(to_py)?;
    Ok(spec)
}

fn rollout_dict<'py>(py: Python<'py>, r: &Rollout) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("position", r.steps.iter().map(|s| s.position).collect::<Vec<_>>())?;
    d.set_item("h", r.step_sizes())?;
    d.set_item("local_error", r.steps.iter().map(|s| s.error).collect::<Vec<_>>())?;
    d.set_item("action", r.steps.iter().map(|s| s.action).collect::<Vec<_>>())?;
    d.set_item("evaluations", r.evaluations())?;
    d.set_item("avg_error", r.avg_error())?;
    Ok(d)
}

/// A member of a random function class.
#[pyclass(name = "Function", frozen)]
struct PyFunction {
    f: SampledFunction,
    spec: FunctionClassSpec,
}

#[pymethods]
impl PyFunction {
    /// Draws one function of `class_name` with the given seed.
    #[staticmethod]
    #[pyo3(signature = (class_name, seed, domain=None))]
    fn draw(class_name: &str, seed: u64, domain: Option<(f64, f64)>) -> PyResult<Self> {
        let spec = class_spec(class_name, domain)?;
        let f = sample_function(&spec, &mut seeded_rng(seed)).map_err(to_py)?;
        Ok(Self { f, spec })
    }

    fn __call__(&self, x: f64) -> f64 {
        self.f.eval(x)
    }

    fn exact_integral(&self, a: f64, b: f64) -> f64 {
        self.f.exact_integral(a, b)
    }

    #[getter]
    fn domain(&self) -> (f64, f64) {
        self.spec.domain
    }

    #[getter]
    fn record(&self) -> String {
        self.f.to_record()
    }
}

/// Composite Simpson with node spacing `h`, i.e. panels of width `2h` (the last one may be shorter);
/// returns the integral and the number of evaluations of `f`.
#[pyfunction]
fn composite_simpson(f: &Bound<'_, PyAny>, a: f64, b: f64, h: f64) -> PyResult<(f64, usize)> {
    if !(b > a && h > 0.0) {
        return Err(PyValueError::new_err("need a < b and h > 0"));
    }
    let call = |x: f64| -> PyResult<f64> { f.call1((x,))?.extract() };
    let edges = panel_edges(a, b, h);
    let mut fa = call(edges[0])?;
    let mut total = 0.0;
    for w in edges.windows(2) {
        let fm = call(0.5 * (w[0] + w[1]))?;
        let fb = call(w[1])?;
        total += simpson_from_values(fa, fm, fb, w[0], w[1]);
        fa = fb;
    }
    Ok((total, 2 * (edges.len() - 1) + 1))
}

/// Adaptive Dormand-Prince integration of a built-in system.
#[pyfunction]
#[pyo3(signature = (system, t0, t1, rtol, atol, x0=None))]
fn rk45<'py>(
    py: Python<'py>,
    system: &str,
    t0: f64,
    t1: f64,
    rtol: f64,
    atol: f64,
    x0: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let sys = OdeSystem::parse(system).map_err(to_py)?;
    let x0 = x0.unwrap_or_else(|| sys.initial_condition());
    let run = rk45_adaptive(&ButcherTableau::dormand_prince(), &sys, (t0, t1), &x0, &Rk45Options::with_tolerances(rtol, atol))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("t", run.times.clone())?;
    d.set_item("x", run.states.clone())?;
    d.set_item("evaluations", run.evaluations)?;
    d.set_item("accepted", run.accepted())?;
    d.set_item("rejected", run.rejected())?;
    Ok(d)
}

fn fixed_initial(sys: &OdeSystem, x0: Option<Vec<f64>>) -> InitialCondition {
    InitialCondition::Fixed { x0: x0.unwrap_or_else(|| sys.initial_condition()) }
}

/// A trained step-size learner loaded from a checkpoint.
#[pyclass(name = "Learner", frozen)]
struct PyLearner {
    inner: rlstep::rl::BaseLearner,
}

#[pymethods]
impl PyLearner {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: rlstep::rl::BaseLearner::load(&path).map_err(to_py)? })
    }

    #[getter]
    fn actions(&self) -> Vec<f64> {
        self.inner.actions.step_sizes().to_vec()
    }

    #[getter]
    fn memory(&self) -> usize {
        self.inner.encoder.memory
    }

    #[getter]
    fn tol(&self) -> f64 {
        self.inner.reward.tol
    }

    /// Greedy integration of `f` over its domain.
    fn integrate<'py>(&self, py: Python<'py>, f: &PyFunction) -> PyResult<Bound<'py, PyDict>> {
        let l = &self.inner;
        let mut env = QuadEnv::with_function(f.spec, f.f.clone(), l.actions.smallest(), l.encoder.memory).map_err(to_py)?;
        let r = integrate_with_learner(l, &mut env, &mut seeded_rng(0)).map_err(to_py)?;
        rollout_dict(py, &r)
    }

    /// Greedy integration of a built-in ODE system over `[t0, t1]`.
    #[pyo3(signature = (system, t0, t1, x0=None))]
    fn solve<'py>(&self, py: Python<'py>, system: &str, t0: f64, t1: f64, x0: Option<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
        let l = &self.inner;
        let sys = OdeSystem::parse(system).map_err(to_py)?;
        let ic = fixed_initial(&sys, x0);
        let mut env = OdeEnv::new(sys, (t0, t1), ic, l.actions.smallest(), l.encoder.memory).map_err(to_py)?;
        let r = integrate_with_learner(l, &mut env, &mut seeded_rng(0)).map_err(to_py)?;
        rollout_dict(py, &r)
    }
}

/// A trained meta-learner loaded from a checkpoint.
#[pyclass(name = "MetaLearner", frozen)]
struct PyMetaLearner {
    inner: rlstep::meta::MetaLearner,
}

#[pymethods]
impl PyMetaLearner {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: rlstep::meta::MetaLearner::load(&path).map_err(to_py)? })
    }

    #[getter]
    fn pool(&self) -> Vec<String> {
        self.inner.pool.entries().iter().map(|e| e.label()).collect()
    }

    /// Greedy run; the result carries the chosen pool index of every non-warm-up step.
    #[pyo3(signature = (system, t0, t1, x0=None))]
    fn solve<'py>(&self, py: Python<'py>, system: &str, t0: f64, t1: f64, x0: Option<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
        let sys = OdeSystem::parse(system).map_err(to_py)?;
        let ic = fixed_initial(&sys, x0);
        let warmup = rlstep::bench::meta_warmup(&self.inner);
        let mut env = OdeEnv::new(sys, (t0, t1), ic, warmup, self.inner.encoder.memory).map_err(to_py)?;
        let r = integrate_with_meta(&self.inner, &mut env, &mut seeded_rng(0)).map_err(to_py)?;
        let d = rollout_dict(py, &r.rollout)?;
        d.set_item("learner_index", r.dispatch.iter().map(|x| x.learner_index).collect::<Vec<_>>())?;
        Ok(d)
    }
}

/// Least-squares weights at fixed nodes: returns `(weights, eps, eps_abs)`.
#[pyfunction]
#[pyo3(signature = (class_name, nodes, samples, seed=0, domain=None))]
fn optimal_weights(
    class_name: &str,
    nodes: Vec<f64>,
    samples: usize,
    seed: u64,
    domain: Option<(f64, f64)>,
) -> PyResult<(Vec<f64>, f64, f64)> {
    let spec = class_spec(class_name, domain)?;
    let data = BasisEvaluations::sample(&spec, &nodes, samples, &mut seeded_rng(seed)).map_err(to_py)?;
    let rule = fit_weights(&data).map_err(to_py)?;
    Ok((rule.weights, rule.eps, rule.eps_abs))
}

/// Closed-form single-node weight and mean squared error for quadratics on `[0, 1]`.
#[pyfunction]
fn one_node(x1: f64) -> (f64, f64) {
    one_node_analytic(x1)
}

/// Runs a command-line subcommand in-process; returns `(exit_code, summary_lines)`.
#[pyfunction]
#[pyo3(signature = (command, out, overrides=Vec::new(), config=None))]
fn run_command(command: &str, out: PathBuf, overrides: Vec<String>, config: Option<PathBuf>) -> PyResult<(i32, Vec<String>)> {
    let cmd = match command {
        "train-quad" => Command::TrainQuad,
        "train-ode" => Command::TrainOde,
        "train-meta" => Command::TrainMeta,
        "bench-quad" => Command::BenchQuad,
        "bench-ode" => Command::BenchOde,
        "weights" => Command::Weights,
        "trace" => Command::Trace,
        other => return Err(PyValueError::new_err(format!("unknown command {other:?}"))),
    };
    let cfg = RunConfig::load(cmd, config.as_deref(), &overrides).map_err(to_py)?;
    let result = commands::run(cmd, &cfg, Path::new(&out));
    let code = commands::exit_code(&result);
    match result {
        Ok(report) => Ok((code, report.notes)),
        Err(e) => Ok((code, vec![e.to_string()])),
    }
}

#[pymodule]
fn rlstep_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFunction>()?;
    m.add_class::<PyLearner>()?;
    m.add_class::<PyMetaLearner>()?;
    m.add_function(wrap_pyfunction!(composite_simpson, m)?)?;
    m.add_function(wrap_pyfunction!(rk45, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_weights, m)?)?;
    m.add_function(wrap_pyfunction!(one_node, m)?)?;
    m.add_function(wrap_pyfunction!(run_command, m)?)?;
    Ok(())
}
