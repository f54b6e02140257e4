//! Quadrature weights fitted by least squares over a random function class,
//! the Gram-matrix view of the same problem, and searches over node positions.

use std::io::Write;

use argmin::core::{CostFunction, Executor, State, TerminationReason, TerminationStatus};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::problems::{FunctionClassSpec, SampledFunction, sample_function};
use crate::quad::QuadratureRule;
use crate::{Error, Result, Rng, seeded_rng};

/// Design matrix of node values (one row per sampled function) and the exact integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisEvaluations {
    pub nodes: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl BasisEvaluations {
    pub fn new(nodes: Vec<f64>, rows: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || rows.is_empty() {
            return Err(Error::Config("basis evaluations need at least one node and one sample".into()));
        }
        if rows.len() != targets.len() || rows.iter().any(|r| r.len() != nodes.len()) {
            return Err(Error::Config("basis matrix shape does not match nodes and targets".into()));
        }
        if rows.len() < nodes.len() {
            return Err(Error::Config(format!("{} samples cannot determine {} weights", rows.len(), nodes.len())));
        }
        Ok(Self { nodes, rows, targets })
    }

    /// Evaluates already drawn functions at `nodes`; targets are exact integrals over `domain`.
    pub fn from_functions(functions: &[SampledFunction], nodes: &[f64], domain: (f64, f64)) -> Result<Self> {
        let rows = functions.iter().map(|f| nodes.iter().map(|&x| f.eval(x)).collect()).collect();
        let targets = functions.iter().map(|f| f.exact_integral(domain.0, domain.1)).collect();
        Self::new(nodes.to_vec(), rows, targets)
    }

    /// Draws `samples` fresh functions from `spec`.
    pub fn sample(spec: &FunctionClassSpec, nodes: &[f64], samples: usize, rng: &mut Rng) -> Result<Self> {
        let functions = draw(spec, samples, rng)?;
        Self::from_functions(&functions, nodes, spec.domain)
    }

    pub fn sample_count(&self) -> usize {
        self.rows.len()
    }

    fn design(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), self.nodes.len(), |i, j| self.rows[i][j])
    }

    /// Empirical second moments `(E[F F^T], E[F I])`.
    pub fn gram(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = self.rows.len() as f64;
        let k = self.nodes.len();
        let mut a = vec![vec![0.0; k]; k];
        let mut b = vec![0.0; k];
        for (row, t) in self.rows.iter().zip(&self.targets) {
            for i in 0..k {
                b[i] += row[i] * t / n;
                for j in 0..k {
                    a[i][j] += row[i] * row[j] / n;
                }
            }
        }
        (a, b)
    }

    /// Residuals `sum_i w_i F_i(f) - I(f)`.
    pub fn residuals(&self, weights: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.targets)
            .map(|(row, t)| row.iter().zip(weights).map(|(f, w)| f * w).sum::<f64>() - t)
            .collect()
    }

    /// Root-mean-square and mean absolute error of `weights` on this sample.
    pub fn errors(&self, weights: &[f64]) -> (f64, f64) {
        let r = self.residuals(weights);
        let n = r.len() as f64;
        ((r.iter().map(|e| e * e).sum::<f64>() / n).sqrt(), r.iter().map(|e| e.abs()).sum::<f64>() / n)
    }
}

pub(crate) fn draw(spec: &FunctionClassSpec, samples: usize, rng: &mut Rng) -> Result<Vec<SampledFunction>> {
    (0..samples).map(|_| sample_function(spec, rng)).collect()
}

/// Errors of a rule re-estimated on samples not used for fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldoutErrors {
    pub eps: f64,
    pub eps_abs: f64,
    pub sample_count: usize,
}

/// Fitted rule with its Monte-Carlo error estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Root-mean-square error on the fitting sample.
    pub eps: f64,
    /// Mean absolute error on the fitting sample.
    pub eps_abs: f64,
    pub sample_count: usize,
    pub holdout: Option<HoldoutErrors>,
}

impl OptimalRule {
    /// Same rule expressed on the unit interval, in the shared text format of [`QuadratureRule`].
    pub fn to_quadrature_rule(&self, domain: (f64, f64)) -> Result<QuadratureRule> {
        let (a, b) = domain;
        let mut pairs: Vec<(f64, f64)> =
            self.nodes.iter().zip(&self.weights).map(|(x, w)| ((x - a) / (b - a), w / (b - a))).collect();
        pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
        QuadratureRule::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
    }

    pub fn with_holdout(mut self, data: &BasisEvaluations) -> Result<Self> {
        if data.nodes != self.nodes {
            return Err(Error::Contract("holdout sample was evaluated at different nodes".into()));
        }
        let (eps, eps_abs) = data.errors(&self.weights);
        self.holdout = Some(HoldoutErrors { eps, eps_abs, sample_count: data.sample_count() });
        Ok(self)
    }
}

/// Relative size below which a diagonal entry of R marks a dependent column.
const RANK_TOL: f64 = 1e-10;

/// Least-squares weights via Householder QR of the design matrix.
pub fn fit_weights(data: &BasisEvaluations) -> Result<OptimalRule> {
    let a = data.design();
    let scale = (0..a.ncols()).map(|j| a.column(j).norm()).fold(0.0, f64::max);
    let qr = a.qr();
    let r = qr.r();
    let dependent: Vec<f64> = (0..r.ncols())
        .filter(|&j| !(r[(j, j)].abs() > RANK_TOL * scale.max(f64::MIN_POSITIVE)))
        .map(|j| data.nodes[j])
        .collect();
    if !dependent.is_empty() {
        return Err(Error::Singular { nodes: dependent });
    }
    let qtb = qr.q().transpose() * DVector::from_column_slice(&data.targets);
    let w = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Singular { nodes: data.nodes.clone() })?;
    let weights: Vec<f64> = w.iter().copied().collect();
    let (eps, eps_abs) = data.errors(&weights);
    Ok(OptimalRule {
        nodes: data.nodes.clone(),
        weights,
        eps,
        eps_abs,
        sample_count: data.sample_count(),
        holdout: None,
    })
}

/// Solves `A w = b` for symmetric positive definite `A` by Cholesky factorization.
pub fn gram_solve(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    if a.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(Error::Config("Gram system shape mismatch".into()));
    }
    for i in 0..n {
        for j in 0..i {
            let tol = 1e-12 * (a[i][j].abs() + a[j][i].abs()).max(1.0);
            if (a[i][j] - a[j][i]).abs() > tol {
                return Err(Error::Config(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let m = DMatrix::from_fn(n, n, |i, j| a[i][j]);
    match m.clone().cholesky() {
        Some(c) => Ok(c.solve(&DVector::from_column_slice(b)).iter().copied().collect()),
        None => {
            // Report the first leading minor that fails.
            let pivot = (1..=n)
                .find(|&k| m.view((0, 0), (k, k)).clone_owned().cholesky().is_none())
                .unwrap_or(n)
                - 1;
            let value = m.view((0, 0), (pivot + 1, pivot + 1)).determinant();
            Err(Error::NotPositiveDefinite { pivot, value })
        }
    }
}

/// Optimal single weight and its mean squared error for a node `x1` on `[0, 1]`,
/// for quadratics with independent zero-mean unit-variance coefficients.
pub fn one_node_analytic(x1: f64) -> (f64, f64) {
    let num = x1 * x1 / 3.0 + x1 / 2.0 + 1.0;
    let den = x1.powi(4) + x1 * x1 + 1.0;
    (num / den, 49.0 / 36.0 - num * num / den)
}

/// One cell of a node-position error surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub nodes: Vec<f64>,
    pub eps: f64,
    /// Standard error of `eps` from the sample spread.
    pub eps_se: f64,
    /// Coincident nodes; no fit attempted.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSurface {
    pub n_nodes: usize,
    pub points: Vec<SurfacePoint>,
    pub best: OptimalRule,
}

impl ErrorSurface {
    /// Columns `x1[,x2],eps,eps_se,degenerate`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.n_nodes).map(|i| format!("x{i}")).collect();
        writeln!(w, "{},eps,eps_se,degenerate", header.join(","))?;
        for p in &self.points {
            let xs: Vec<String> = p.nodes.iter().map(f64::to_string).collect();
            writeln!(w, "{},{},{},{}", xs.join(","), p.eps, p.eps_se, u8::from(p.degenerate))?;
        }
        Ok(())
    }
}

/// Grid search over node positions. Each cell fits on its own fresh sample,
/// seeded from `seed` and the cell index, so results do not depend on thread count.
pub fn node_grid_search(
    spec: &FunctionClassSpec,
    n_nodes: usize,
    resolution: usize,
    samples: usize,
    seed: u64,
) -> Result<ErrorSurface> {
    spec.validate()?;
    if !(1..=2).contains(&n_nodes) {
        return Err(Error::Config(format!("grid search supports 1 or 2 nodes, not {n_nodes}")));
    }
    if resolution < 2 {
        return Err(Error::Config("grid resolution must be at least 2".into()));
    }
    let (a, b) = spec.domain;
    let axis: Vec<f64> = (0..resolution).map(|i| a + (b - a) * i as f64 / (resolution - 1) as f64).collect();
    let tuples: Vec<Vec<f64>> = if n_nodes == 1 {
        axis.iter().map(|&x| vec![x]).collect()
    } else {
        axis.iter().flat_map(|&x| axis.iter().map(move |&y| vec![x, y])).collect()
    };
    let cells: Vec<(SurfacePoint, Option<OptimalRule>)> = tuples
        .into_par_iter()
        .enumerate()
        .map(|(i, nodes)| {
            if nodes.len() == 2 && nodes[0] == nodes[1] {
                let p = SurfacePoint { nodes, eps: f64::NAN, eps_se: f64::NAN, degenerate: true };
                return Ok((p, None));
            }
            let mut rng = seeded_rng(seed.wrapping_add(i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let data = BasisEvaluations::sample(spec, &nodes, samples, &mut rng)?;
            match fit_weights(&data) {
                Ok(rule) => {
                    let eps_se = rms_standard_error(&data.residuals(&rule.weights));
                    Ok((SurfacePoint { nodes, eps: rule.eps, eps_se, degenerate: false }, Some(rule)))
                }
                Err(Error::Singular { .. }) => {
                    Ok((SurfacePoint { nodes, eps: f64::NAN, eps_se: f64::NAN, degenerate: true }, None))
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let best = cells
        .iter()
        .filter_map(|(_, r)| r.as_ref())
        .min_by(|p, q| p.eps.total_cmp(&q.eps))
        .cloned()
        .ok_or_else(|| Error::Numeric("every grid cell was degenerate".into()))?;
    Ok(ErrorSurface { n_nodes, points: cells.into_iter().map(|(p, _)| p).collect(), best })
}

/// Delta-method standard error of the root-mean-square of `r`.
fn rms_standard_error(r: &[f64]) -> f64 {
    let n = r.len() as f64;
    let sq: Vec<f64> = r.iter().map(|e| e * e).collect();
    let mean = sq.iter().sum::<f64>() / n;
    let var = sq.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (var / n).sqrt() / (2.0 * mean.sqrt()).max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NodeSearchConfig {
    /// Functions drawn once and reused for every objective evaluation.
    pub samples: usize,
    pub max_iters: u64,
    /// Initial simplex edge.
    pub initial_step: f64,
    /// Stop when the simplex costs have this standard deviation.
    pub sd_tolerance: f64,
    pub seed: u64,
}

impl Default for NodeSearchConfig {
    fn default() -> Self {
        Self { samples: 20_000, max_iters: 300, initial_step: 0.1, sd_tolerance: 1e-10, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSearch {
    pub rule: OptimalRule,
    pub iterations: u64,
    /// False when the iteration cap stopped the search; `rule` is then the best point seen.
    pub converged: bool,
}

struct NodeObjective<'a> {
    functions: &'a [SampledFunction],
    domain: (f64, f64),
}

impl NodeObjective<'_> {
    fn fit(&self, nodes: &[f64]) -> Option<OptimalRule> {
        let (a, b) = self.domain;
        if nodes.iter().any(|x| !(a..=b).contains(x)) {
            return None;
        }
        let data = BasisEvaluations::from_functions(self.functions, nodes, self.domain).ok()?;
        fit_weights(&data).ok()
    }
}

impl CostFunction for NodeObjective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, nodes: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.fit(nodes).map_or(f64::INFINITY, |r| r.eps))
    }
}

/// Nelder-Mead over node positions with common random numbers: one function
/// sample, re-evaluated at every candidate node set.
pub fn node_optimize(spec: &FunctionClassSpec, initial: &[f64], cfg: &NodeSearchConfig) -> Result<NodeSearch> {
    spec.validate()?;
    let (a, b) = spec.domain;
    if initial.is_empty() || initial.iter().any(|&x| !(x > a && x < b)) {
        return Err(Error::Config(format!("initial nodes {initial:?} must lie strictly inside ({a}, {b})")));
    }
    let functions = draw(spec, cfg.samples, &mut seeded_rng(cfg.seed))?;
    let objective = NodeObjective { functions: &functions, domain: spec.domain };
    let mut simplex = vec![initial.to_vec()];
    for i in 0..initial.len() {
        let mut v = initial.to_vec();
        // Step towards the interior so every vertex starts feasible.
        v[i] += if v[i] + cfg.initial_step < b { cfg.initial_step } else { -cfg.initial_step };
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(cfg.sd_tolerance)
        .map_err(|e| Error::Config(e.to_string()))?;
    let res = Executor::new(NodeObjective { functions: &functions, domain: spec.domain }, solver)
        .configure(|s| s.max_iters(cfg.max_iters))
        .run()
        .map_err(|e| Error::Numeric(format!("node search failed: {e}")))?;
    let state = res.state();
    let best = state.get_best_param().cloned().unwrap_or_else(|| initial.to_vec());
    let converged = matches!(state.get_termination_status(), TerminationStatus::Terminated(TerminationReason::SolverConverged));
    let rule = objective
        .fit(&best)
        .ok_or_else(|| Error::Numeric(format!("best node set {best:?} is degenerate")))?;
    Ok(NodeSearch { rule, iterations: state.get_iter(), converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::FunctionClass;

    fn poly(degree: usize) -> FunctionClassSpec {
        FunctionClassSpec::new(FunctionClass::PolyDeg { degree })
    }

    #[test]
    fn consistent_single_node_family_recovers_weight() {
        let rows: Vec<Vec<f64>> = (1..50).map(|i| vec![i as f64 * 0.37 - 3.0]).collect();
        let targets = rows.iter().map(|r| 0.731 * r[0]).collect();
        let rule = fit_weights(&BasisEvaluations::new(vec![0.4], rows, targets).unwrap()).unwrap();
        assert!((rule.weights[0] - 0.731).abs() < 1e-10);
        assert!(rule.eps < 1e-10);
    }

    #[test]
    fn duplicate_column_is_reported_singular() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, i as f64, 1.0]).collect();
        let targets = vec![1.0; 20];
        match fit_weights(&BasisEvaluations::new(vec![0.2, 0.2, 0.9], rows, targets).unwrap()) {
            Err(Error::Singular { nodes }) => assert_eq!(nodes, vec![0.2]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn residual_is_orthogonal_to_columns() {
        let data = BasisEvaluations::sample(&poly(4), &[0.0, 0.3, 0.8], 5000, &mut seeded_rng(1)).unwrap();
        let rule = fit_weights(&data).unwrap();
        let r = data.residuals(&rule.weights);
        for j in 0..3 {
            let col_norm = data.rows.iter().map(|row| row[j] * row[j]).sum::<f64>().sqrt();
            let dot: f64 = data.rows.iter().zip(&r).map(|(row, e)| row[j] * e).sum();
            let r_norm = r.iter().map(|e| e * e).sum::<f64>().sqrt();
            assert!(dot.abs() < 1e-8 * col_norm * r_norm, "column {j}: {dot}");
        }
        assert!(rule.eps >= rule.eps_abs);
    }

    #[test]
    fn gram_solve_identity_and_hand_solved() {
        let id = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert_eq!(gram_solve(&id, &[3.0, -1.0, 0.5]).unwrap(), vec![3.0, -1.0, 0.5]);
        // [[4, 2], [2, 3]] w = [2, 5]  =>  w = (-0.5, 2)
        let w = gram_solve(&[vec![4.0, 2.0], vec![2.0, 3.0]], &[2.0, 5.0]).unwrap();
        assert!((w[0] + 0.5).abs() < 1e-14 && (w[1] - 2.0).abs() < 1e-14);
        match gram_solve(&[vec![1.0, 2.0], vec![2.0, 1.0]], &[1.0, 1.0]) {
            Err(Error::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gram_solve_agrees_with_analytic_one_node() {
        let data = BasisEvaluations::sample(&poly(2), &[0.547], 200_000, &mut seeded_rng(2)).unwrap();
        let (a, b) = data.gram();
        let w = gram_solve(&a, &b).unwrap();
        let (omega, _) = one_node_analytic(0.547);
        assert!((w[0] - omega).abs() < 0.01, "{} vs {omega}", w[0]);
        let qr = fit_weights(&data).unwrap();
        assert!((qr.weights[0] - w[0]).abs() < 1e-9);
    }

    #[test]
    fn one_node_closed_forms() {
        let (w0, e0) = one_node_analytic(0.0);
        assert_eq!(w0, 1.0);
        assert!((e0 - (49.0 / 36.0 - 1.0)).abs() < 1e-15);
        let (x, (w, e)) = (0..=10_000)
            .map(|i| i as f64 / 10_000.0)
            .map(|x| (x, one_node_analytic(x)))
            .min_by(|p, q| p.1.1.total_cmp(&q.1.1))
            .unwrap();
        assert!((x - 0.547).abs() < 0.005 && (w - 0.989).abs() < 0.005 && (e - 0.003).abs() < 0.001, "{x} {w} {e}");
    }

    #[test]
    fn one_node_grid_matches_analytic_optimum() {
        let s = node_grid_search(&poly(2), 1, 101, 20_000, 3).unwrap();
        assert!((s.best.nodes[0] - 0.547).abs() <= 0.02, "{:?}", s.best.nodes);
    }

    #[test]
    fn coincident_nodes_are_flagged() {
        let s = node_grid_search(&poly(3), 2, 5, 200, 4).unwrap();
        let flagged: Vec<_> = s.points.iter().filter(|p| p.degenerate).collect();
        assert_eq!(flagged.len(), 5);
        assert!(flagged.iter().all(|p| p.nodes[0] == p.nodes[1] && p.eps.is_nan()));
        let mut csv = Vec::new();
        s.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 26);
    }

    #[test]
    fn node_optimize_finds_one_node_optimum_and_is_deterministic() {
        let cfg = NodeSearchConfig { samples: 50_000, seed: 5, ..NodeSearchConfig::default() };
        let a = node_optimize(&poly(2), &[0.2], &cfg).unwrap();
        let b = node_optimize(&poly(2), &[0.2], &cfg).unwrap();
        assert_eq!(a, b);
        assert!((a.rule.nodes[0] - 0.547).abs() < 0.01, "{:?}", a.rule.nodes);
        assert!(node_optimize(&poly(2), &[0.0], &cfg).is_err());
    }

    #[test]
    fn rule_exports_to_unit_interval_text() {
        let rule = OptimalRule {
            nodes: vec![2.0, 1.0],
            weights: vec![0.5, 1.5],
            eps: 0.1,
            eps_abs: 0.05,
            sample_count: 10,
            holdout: None,
        };
        let q = rule.to_quadrature_rule((1.0, 3.0)).unwrap();
        assert_eq!(q.nodes(), &[0.0, 0.5]);
        assert_eq!(q.weights(), &[0.75, 0.25]);
        assert_eq!(q.to_string().parse::<QuadratureRule>().unwrap(), q);
    }
}
