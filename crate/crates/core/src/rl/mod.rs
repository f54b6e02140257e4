//! Q-learning step-size control: state encoding, rewards, exploration,
//! environments, the episodic training loop and greedy rollouts.

mod env;
mod rollout;
mod train;

pub use env::{EnvStep, InitialCondition, OdeEnv, QuadEnv, StepEnv};
pub use rollout::{Rollout, RolloutStep, integrate_with_learner, rollout};
pub use train::{
    BaseLearner, Episode, EpisodeLog, TrainConfig, TrainOutcome, batch_from_episode, converged,
    run_episode, train_base_learner, write_training_log,
};
pub(crate) use train::{QLoop, fit_scaler, random_episodes};

use std::collections::VecDeque;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Rng};

/// Candidate step sizes, strictly increasing. The largest one normalizes
/// positive rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ActionSet {
    step_sizes: Vec<f64>,
}

impl ActionSet {
    pub fn new(step_sizes: Vec<f64>) -> Result<Self> {
        if step_sizes.is_empty() {
            return Err(Error::Config("action set is empty".into()));
        }
        if step_sizes.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::Config(format!("step sizes must be positive: {step_sizes:?}")));
        }
        if step_sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!("step sizes must be strictly increasing: {step_sizes:?}")));
        }
        Ok(Self { step_sizes })
    }

    pub fn len(&self) -> usize {
        self.step_sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, index: usize) -> f64 {
        self.step_sizes[index]
    }

    pub fn step_sizes(&self) -> &[f64] {
        &self.step_sizes
    }

    pub fn smallest(&self) -> f64 {
        self.step_sizes[0]
    }

    pub fn largest(&self) -> f64 {
        *self.step_sizes.last().unwrap()
    }
}

impl TryFrom<Vec<f64>> for ActionSet {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ActionSet> for Vec<f64> {
    fn from(a: ActionSet) -> Self {
        a.step_sizes
    }
}

/// What the controller observes before choosing the next step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepState {
    /// Size of the step that produced `features`.
    pub h: f64,
    pub features: Vec<f64>,
    /// The `m` previous `(h, features)` records, most recent first.
    pub memory: Vec<(f64, Vec<f64>)>,
    /// Set while some memory slots are zero padding.
    pub padded: bool,
}

impl StepState {
    /// Flat network input: `h, features`, then each memory record in order.
    pub fn to_input(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity((1 + self.features.len()) * (1 + self.memory.len()));
        v.push(self.h);
        v.extend_from_slice(&self.features);
        for (h, f) in &self.memory {
            v.push(*h);
            v.extend_from_slice(f);
        }
        v
    }
}

/// Problem family an encoder serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemKind {
    Quadrature,
    Ode { state_dim: usize, stages: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: ProblemKind,
    pub memory: usize,
}

impl EncoderConfig {
    pub fn feature_len(&self) -> usize {
        match self.kind {
            ProblemKind::Quadrature => 2,
            ProblemKind::Ode { state_dim, stages } => state_dim * stages,
        }
    }

    pub fn input_dim(&self) -> usize {
        (1 + self.feature_len()) * (1 + self.memory)
    }
}

/// Rolling store of the last `m` encoded records.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBuffer {
    capacity: usize,
    feature_len: usize,
    records: VecDeque<(f64, Vec<f64>)>,
}

impl MemoryBuffer {
    pub fn new(capacity: usize, feature_len: usize) -> Self {
        Self { capacity, feature_len, records: VecDeque::with_capacity(capacity + 1) }
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    /// State for `(h, features)` with the current memory, then remembers it.
    fn encode(&mut self, h: f64, features: Vec<f64>) -> StepState {
        let mut memory: Vec<(f64, Vec<f64>)> = self.records.iter().cloned().collect();
        let padded = memory.len() < self.capacity;
        while memory.len() < self.capacity {
            memory.push((0.0, vec![0.0; self.feature_len]));
        }
        if self.capacity > 0 {
            self.records.push_front((h, features.clone()));
            self.records.truncate(self.capacity);
        }
        StepState { h, features, memory, padded }
    }
}

/// Centered quadrature state from values at `x, x + h, x + 2h`.
pub fn encode_quadrature(h: f64, f_vals: [f64; 3], memory: &mut MemoryBuffer) -> StepState {
    memory.encode(h, vec![f_vals[1] - f_vals[0], f_vals[2] - f_vals[0]])
}

/// ODE state: `h` plus all stage vectors flattened stage by stage.
pub fn encode_ode(
    h: f64,
    stages: &[Vec<f64>],
    config: &EncoderConfig,
    memory: &mut MemoryBuffer,
) -> Result<StepState> {
    let ProblemKind::Ode { state_dim, stages: count } = config.kind else {
        return Err(Error::Contract("ODE encoding requested from a quadrature encoder".into()));
    };
    if stages.len() != count || stages.iter().any(|k| k.len() != state_dim) {
        return Err(Error::Contract(format!(
            "expected {count} stages of dimension {state_dim}, got {} stages",
            stages.len()
        )));
    }
    Ok(memory.encode(h, stages.concat()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardVariant {
    Piecewise,
    Continuous,
    Log,
}

impl std::str::FromStr for RewardVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "piecewise" => Ok(Self::Piecewise),
            "continuous" => Ok(Self::Continuous),
            "log" => Ok(Self::Log),
            other => Err(Error::Config(format!("unknown reward variant {other:?}"))),
        }
    }
}

/// Reward shape. `a` and `b` are calibrated from `l` so that the exponential
/// branch is 0 at `tol` and -1 at `2 tol`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub tol: f64,
    pub variant: RewardVariant,
    pub a: f64,
    pub b: f64,
    pub l: f64,
}

impl RewardConfig {
    pub fn new(tol: f64, variant: RewardVariant) -> Result<Self> {
        Self::with_asymptote(tol, variant, 3.0)
    }

    pub fn with_asymptote(tol: f64, variant: RewardVariant, l: f64) -> Result<Self> {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
        }
        if !(l > 1.0) {
            return Err(Error::Config(format!("reward asymptote L must exceed 1, got {l}")));
        }
        // a e^{-b tol} = L and a e^{-2 b tol} = L - 1
        let b = (l / (l - 1.0)).ln() / tol;
        let a = l * l / (l - 1.0);
        Ok(Self { tol, variant, a, b, l })
    }

    pub fn validate(&self) -> Result<()> {
        Self::with_asymptote(self.tol, self.variant, self.l).map(|_| ())
    }
}

/// Largest local error that still enters the reward; failed steps use it.
const ERROR_CAP_FACTOR: f64 = 1e10;

/// Reward for a step of size `h` with local error `eps`.
pub fn reward(cfg: &RewardConfig, eps: f64, h: f64, h_max: f64) -> f64 {
    let eps = if eps.is_nan() { f64::INFINITY } else { eps }.min(ERROR_CAP_FACTOR * cfg.tol);
    let gain = h / h_max;
    let decay = || cfg.a * (-cfg.b * eps).exp() - cfg.l;
    match cfg.variant {
        RewardVariant::Piecewise => {
            if eps < cfg.tol {
                gain
            } else {
                decay()
            }
        }
        RewardVariant::Continuous => gain * decay(),
        RewardVariant::Log => {
            if eps < cfg.tol {
                gain
            } else {
                (cfg.tol / eps).log10()
            }
        }
    }
}

/// Index of the largest value, first on ties.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate() {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

fn second_best(q: &[f64], best: usize) -> usize {
    let mut second: Option<usize> = None;
    for (i, v) in q.iter().enumerate() {
        if i != best && second.is_none_or(|s| *v > q[s]) {
            second = Some(i);
        }
    }
    second.unwrap_or(best)
}

/// Greedy choice, or with `explore` the best action with probability `alpha`
/// and the runner-up otherwise.
pub fn select_action(q: &[f64], explore: bool, alpha: f64, rng: &mut Rng) -> usize {
    let best = argmax(q);
    if !explore || alpha >= 1.0 || q.len() < 2 {
        return best;
    }
    if rng.random::<f64>() < alpha { best } else { second_best(q, best) }
}

/// `r + gamma * max_a Q(next, a)`; `None` marks a terminal transition.
pub fn q_target(reward: f64, next_q: Option<&[f64]>, gamma: f64) -> f64 {
    match next_q {
        Some(q) if gamma != 0.0 => reward + gamma * q.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        _ => reward,
    }
}

/// One executed step as seen by the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StepState,
    pub action: usize,
    pub reward: f64,
    pub next_state: StepState,
    pub terminal: bool,
    /// Shortened final step; kept out of training batches.
    pub excluded: bool,
    pub h: f64,
    pub error: f64,
    pub position: f64,
    pub evaluations: usize,
}

/// Per-component standardization of network inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    /// Mean and standard deviation per component; near-constant components keep unit scale.
    pub fn fit(inputs: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = inputs.first() else {
            return Err(Error::Contract("cannot fit a scaler on no data".into()));
        };
        let dim = first.len();
        let n = inputs.len() as f64;
        let mut mean = vec![0.0; dim];
        for x in inputs {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for x in inputs {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let scale = var
            .iter()
            .zip(&mean)
            .map(|(v, m)| {
                let sd = v.sqrt();
                if sd > 1e-12 * (1.0 + m.abs()) { sd } else { 1.0 }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.mean.iter().zip(&self.scale)).map(|(v, (m, s))| (v - m) / s).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    #[test]
    fn action_set_validation() {
        assert!(ActionSet::new(vec![]).is_err());
        assert!(ActionSet::new(vec![0.1, 0.1]).is_err());
        assert!(ActionSet::new(vec![-0.1, 0.1]).is_err());
        let a = ActionSet::new(vec![0.05, 0.1, 0.75]).unwrap();
        assert_eq!(a.largest(), 0.75);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<ActionSet>(&json).unwrap(), a);
        assert!(serde_json::from_str::<ActionSet>("[0.2, 0.1]").is_err());
    }

    #[test]
    fn quadrature_encoding_examples() {
        let mut mem = MemoryBuffer::new(0, 2);
        let s = encode_quadrature(0.3, [2.0, 2.0, 2.0], &mut mem);
        assert_eq!(s.features, vec![0.0, 0.0]);
        let s = encode_quadrature(0.1, [0.0, 0.1, 0.2], &mut mem);
        assert_eq!(s.h, 0.1);
        assert!((s.features[0] - 0.1).abs() < 1e-15 && (s.features[1] - 0.2).abs() < 1e-15);
        assert_eq!(s.to_input().len(), 3);
    }

    #[test]
    fn memory_is_padded_then_filled() {
        let mut mem = MemoryBuffer::new(2, 2);
        let s0 = encode_quadrature(0.1, [0.0, 1.0, 2.0], &mut mem);
        assert!(s0.padded);
        assert_eq!(s0.memory, vec![(0.0, vec![0.0, 0.0]); 2]);
        let s1 = encode_quadrature(0.2, [0.0, 3.0, 4.0], &mut mem);
        assert!(s1.padded);
        assert_eq!(s1.memory[0], (0.1, vec![1.0, 2.0]));
        let s2 = encode_quadrature(0.3, [0.0, 5.0, 6.0], &mut mem);
        assert!(!s2.padded);
        assert_eq!(s2.memory, vec![(0.2, vec![3.0, 4.0]), (0.1, vec![1.0, 2.0])]);
        assert_eq!(s2.to_input(), vec![0.3, 5.0, 6.0, 0.2, 3.0, 4.0, 0.1, 1.0, 2.0]);
    }

    #[test]
    fn ode_encoding_checks_shape() {
        let cfg = EncoderConfig { kind: ProblemKind::Ode { state_dim: 3, stages: 7 }, memory: 0 };
        let mut mem = MemoryBuffer::new(0, cfg.feature_len());
        let stages = vec![vec![0.0; 3]; 7];
        let s = encode_ode(0.025, &stages, &cfg, &mut mem).unwrap();
        assert_eq!(s.to_input().len(), 22);
        assert_eq!(cfg.input_dim(), 22);
        assert!(s.features.iter().all(|v| *v == 0.0));
        assert!(matches!(encode_ode(0.025, &stages[..6], &cfg, &mut mem), Err(Error::Contract(_))));
    }

    #[test]
    fn reward_examples() {
        let tol = 5e-4;
        let pw = RewardConfig::new(tol, RewardVariant::Piecewise).unwrap();
        assert_eq!(pw.a, 4.5);
        assert!((pw.b - 1.5f64.ln() / tol).abs() < 1e-9);
        assert!(reward(&pw, tol, 0.2, 0.75).abs() < 1e-12);
        assert!((reward(&pw, 2.0 * tol, 0.2, 0.75) + 1.0).abs() < 1e-12);
        assert!((reward(&pw, 0.0, 0.2, 0.75) - 0.2667).abs() < 1e-4);
        let lg = RewardConfig::new(tol, RewardVariant::Log).unwrap();
        assert!((reward(&lg, 100.0 * tol, 0.2, 0.75) + 2.0).abs() < 1e-12);
        assert!(RewardConfig::new(0.0, RewardVariant::Log).is_err());
    }

    #[test]
    fn selection_and_targets() {
        let mut rng = seeded_rng(1);
        let q = [0.1, 0.7, 0.3];
        assert_eq!(select_action(&q, false, 0.7, &mut rng), 1);
        assert_eq!(select_action(&q, true, 1.0, &mut rng), 1);
        for _ in 0..100 {
            assert!(matches!(select_action(&q, true, 0.6, &mut rng), 1 | 2));
        }
        assert_eq!(q_target(0.25, Some(&[4.0, 5.0]), 0.0), 0.25);
        assert!((q_target(0.1, Some(&[0.2, 0.5]), 1.0) - 0.6).abs() < 1e-15);
        assert_eq!(q_target(0.1, None, 0.9), 0.1);
    }

    #[test]
    fn scaler_standardizes() {
        let xs = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        let s = Scaler::fit(&xs).unwrap();
        assert_eq!(s.apply(&[1.0, 5.0]), vec![-1.0, 0.0]);
        assert_eq!(s.apply(&[3.0, 6.0]), vec![1.0, 1.0]);
    }
}
