//! Classical quadrature kernels: the Simpson rule, its composite form, generic
//! weighted rules on `[0, 1]`, and the greedy subdivision baseline.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Nodes in `[0, 1]` with matching weights, applied as
/// `(b - a) * sum_j w_j f(a + c_j (b - a))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Config("quadrature rule needs at least one node".into()));
        }
        if nodes.len() != weights.len() {
            return Err(Error::Config(format!(
                "{} nodes but {} weights",
                nodes.len(),
                weights.len()
            )));
        }
        if nodes.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Config(format!("nodes {nodes:?} leave [0, 1]")));
        }
        if nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("nodes {nodes:?} are not strictly increasing")));
        }
        Ok(Self { nodes, weights })
    }

    /// Simpson's rule: nodes `0, 1/2, 1`, weights `1/6, 2/3, 1/6`.
    pub fn simpson() -> Self {
        Self {
            nodes: vec![0.0, 0.5, 1.0],
            weights: vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
        }
    }

    /// True when nodes and weights are exactly those of [`Self::simpson`].
    pub fn is_simpson(&self) -> bool {
        self.nodes == [0.0, 0.5, 1.0] && self.weights == [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Applies the rule on `[a, b]`.
    pub fn apply<F: Fn(f64) -> f64 + ?Sized>(&self, f: &F, a: f64, b: f64) -> f64 {
        if self.is_simpson() {
            return simpson(f, a, b);
        }
        let width = b - a;
        let sum = self
            .nodes
            .iter()
            .zip(&self.weights)
            .fold(0.0, |acc, (&c, &w)| acc + w * f(node_position(a, b, c)));
        width * sum
    }
}

#[inline]
fn node_position(a: f64, b: f64, c: f64) -> f64 {
    if c == 0.0 {
        a
    } else if c == 1.0 {
        b
    } else if c == 0.5 {
        0.5 * (a + b)
    } else {
        a + c * (b - a)
    }
}

/// Text record: one `nodes` line and one `weights` line, values separated by spaces.
impl fmt::Display for QuadratureRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# quadrature-rule v1")?;
        write!(f, "nodes")?;
        for c in &self.nodes {
            write!(f, " {c:?}")?;
        }
        writeln!(f)?;
        write!(f, "weights")?;
        for w in &self.weights {
            write!(f, " {w:?}")?;
        }
        writeln!(f)
    }
}

impl FromStr for QuadratureRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut nodes = None;
        let mut weights = None;
        for line in s.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let values = parts
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| Error::Config(format!("bad number {v:?} in rule: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            match key {
                "nodes" => nodes = Some(values),
                "weights" => weights = Some(values),
                other => return Err(Error::Config(format!("unknown rule field {other:?}"))),
            }
        }
        match (nodes, weights) {
            (Some(n), Some(w)) => Self::new(n, w),
            _ => Err(Error::Config("rule record needs `nodes` and `weights` lines".into())),
        }
    }
}

/// `(b - a)/6 * (f(a) + 4 f((a+b)/2) + f(b))`, evaluated through [`QuadratureRule::simpson`].
pub fn simpson<F: Fn(f64) -> f64 + ?Sized>(f: &F, a: f64, b: f64) -> f64 {
    simpson_from_values(f(a), f(0.5 * (a + b)), f(b), a, b)
}

/// Simpson on `[a, b]` from already available endpoint and midpoint values.
#[inline]
pub fn simpson_from_values(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) * (fa + 4.0 * fm + fb) / 6.0
}

/// Equidistant composite Simpson with panels of width `2h`.
///
/// The last panel is shortened to land on `b`. Returns the integral and the
/// number of distinct function evaluations (`2 * panels + 1`).
pub fn composite_simpson<F: Fn(f64) -> f64 + ?Sized>(f: &F, a: f64, b: f64, h: f64) -> (f64, usize) {
    let edges = panel_edges(a, b, h);
    let mut total = 0.0;
    let mut f_left = f(edges[0]);
    let mut evals = 1;
    for pair in edges.windows(2) {
        let (l, r) = (pair[0], pair[1]);
        let f_mid = f(0.5 * (l + r));
        let f_right = f(r);
        evals += 2;
        total += simpson_from_values(f_left, f_mid, f_right, l, r);
        f_left = f_right;
    }
    (total, evals)
}

/// Panel boundaries used by [`composite_simpson`]: `a, a+2h, ..., b`.
pub fn panel_edges(a: f64, b: f64, h: f64) -> Vec<f64> {
    assert!(h > 0.0, "composite Simpson needs h > 0");
    let width = 2.0 * h;
    if h >= b - a {
        return vec![a, b];
    }
    let full = ((b - a) / width * (1.0 + 1e-12)).floor() as usize;
    let mut edges: Vec<f64> = (0..=full).map(|i| a + i as f64 * width).collect();
    let last = *edges.last().unwrap();
    if b - last > 1e-12 * (b - a) {
        edges.push(b);
    } else {
        *edges.last_mut().unwrap() = b;
    }
    edges
}

/// Evaluation count of [`composite_simpson`] without running it.
pub fn composite_simpson_evaluations(a: f64, b: f64, h: f64) -> usize {
    2 * (panel_edges(a, b, h).len() - 1) + 1
}

/// One interval of the subdivision partition with its two Simpson estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub a: f64,
    pub b: f64,
    pub rough: f64,
    pub fine: f64,
}

impl IntervalEstimate {
    pub fn error_estimate(&self) -> f64 {
        (self.rough - self.fine).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubdivisionResult {
    pub integral: f64,
    pub evaluations_used: usize,
    /// Partition of `[a, b]`, ordered left to right.
    pub intervals: Vec<IntervalEstimate>,
}

/// Memoizes evaluations so shared points are counted once.
struct CountingEval<'f, F: ?Sized> {
    f: &'f F,
    cache: HashMap<u64, f64>,
}

impl<'f, F: Fn(f64) -> f64 + ?Sized> CountingEval<'f, F> {
    fn new(f: &'f F) -> Self {
        Self { f, cache: HashMap::new() }
    }

    fn at(&mut self, x: f64) -> f64 {
        let f = self.f;
        *self.cache.entry(x.to_bits()).or_insert_with(|| f(x))
    }

    fn count(&self) -> usize {
        self.cache.len()
    }

    fn estimate(&mut self, a: f64, b: f64) -> IntervalEstimate {
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (self.at(a), self.at(m), self.at(b));
        let fl = self.at(0.5 * (a + m));
        let fr = self.at(0.5 * (m + b));
        IntervalEstimate {
            a,
            b,
            rough: simpson_from_values(fa, fm, fb, a, b),
            fine: simpson_from_values(fa, fl, fm, a, m) + simpson_from_values(fm, fr, fb, m, b),
        }
    }
}

/// Greedy subdivision driven by `|I_rough - I_fine|`.
///
/// Splits the interval with the largest estimate (leftmost on ties) at its
/// midpoint while the split fits in `max_evals`; stops early once every
/// estimate is exactly zero. The reported integral is the sum of the fine
/// estimates.
pub fn subdivide<F: Fn(f64) -> f64 + ?Sized>(
    f: &F,
    a: f64,
    b: f64,
    max_evals: usize,
) -> Result<SubdivisionResult> {
    const INITIAL_EVALS: usize = 5;
    const EVALS_PER_SPLIT: usize = 4;
    if max_evals < INITIAL_EVALS {
        return Err(Error::Config(format!(
            "subdivision needs a budget of at least {INITIAL_EVALS} evaluations, got {max_evals}"
        )));
    }
    if !(a < b) {
        return Err(Error::Contract(format!("subdivision interval [{a}, {b}] is empty")));
    }
    let mut eval = CountingEval::new(f);
    let mut intervals = vec![eval.estimate(a, b)];
    while eval.count() + EVALS_PER_SPLIT <= max_evals {
        let (idx, worst) = intervals
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, be), (i, iv)| {
                let e = iv.error_estimate();
                if e > be {
                    (i, e)
                } else {
                    (bi, be)
                }
            });
        if worst == 0.0 {
            break;
        }
        let iv = intervals[idx];
        let m = 0.5 * (iv.a + iv.b);
        let left = eval.estimate(iv.a, m);
        let right = eval.estimate(m, iv.b);
        intervals.splice(idx..=idx, [left, right]);
    }
    let integral = intervals.iter().map(|iv| iv.fine).sum();
    Ok(SubdivisionResult { integral, evaluations_used: eval.count(), intervals })
}
