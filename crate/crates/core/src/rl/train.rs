use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::{Value, json};

use super::env::{EnvStep, StepEnv};
use super::{
    ActionSet, EncoderConfig, RewardConfig, Scaler, StepState, Transition, argmax, q_target, reward,
    select_action,
};
use crate::neural::{AdamConfig, Mlp, MlpSpec, TrainBatch};
use crate::{Error, Result, Rng};

const MAX_EPISODE_STEPS: usize = 10_000_000;

/// Settings of the episodic Q-learning loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_episodes: usize,
    pub min_episodes: usize,
    pub gamma: f64,
    /// Probability of taking the best action while exploring.
    pub alpha: f64,
    pub adam: AdamConfig,
    /// Transitions per Adam step; 0 trains on the whole episode at once.
    pub minibatch: usize,
    /// Passes over each episode's batch.
    pub epochs: usize,
    /// Episodes with uniformly random actions used to fit the input scaler
    /// (and, when `train_on_scaler_episodes` is set, as first training data).
    pub scaler_episodes: usize,
    pub train_on_scaler_episodes: bool,
    /// Moving-average window of the convergence test.
    pub window: usize,
    /// Lag between the compared moving averages.
    pub span: usize,
    /// Relative change below which training counts as converged.
    pub rel_change: f64,
    /// Hidden layers and width; zero width selects five times the input size.
    pub hidden_layers: usize,
    pub hidden_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_episodes: 2000,
            min_episodes: 150,
            gamma: 0.0,
            alpha: 0.8,
            adam: AdamConfig::default(),
            minibatch: 0,
            epochs: 1,
            scaler_episodes: 5,
            train_on_scaler_episodes: true,
            window: 50,
            span: 100,
            rel_change: 0.01,
            hidden_layers: 4,
            hidden_width: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(0.5..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0.5, 1], got {}", self.alpha)));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.window == 0 || self.span == 0 {
            return Err(Error::Config("convergence window and span must be positive".into()));
        }
        if !(self.rel_change > 0.0) {
            return Err(Error::Config("rel_change must be positive".into()));
        }
        Ok(())
    }

    pub fn mlp_spec(&self, input_dim: usize, output_dim: usize) -> MlpSpec {
        let width = if self.hidden_width == 0 { 5 * input_dim } else { self.hidden_width };
        MlpSpec { input_dim, hidden_layers: self.hidden_layers, hidden_width: width, output_dim }
    }
}

/// Trained step-size policy: a Q-network over a fixed action set.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseLearner {
    pub net: Mlp,
    pub actions: ActionSet,
    pub encoder: EncoderConfig,
    pub scaler: Scaler,
    /// Reward used in training; kept as metadata.
    pub reward: RewardConfig,
    pub gamma: f64,
}

impl BaseLearner {
    pub fn new(net: Mlp, actions: ActionSet, encoder: EncoderConfig, scaler: Scaler, reward: RewardConfig, gamma: f64) -> Result<Self> {
        if net.spec.output_dim != actions.len() {
            return Err(Error::Contract(format!(
                "network has {} outputs for {} actions",
                net.spec.output_dim,
                actions.len()
            )));
        }
        if net.spec.input_dim != encoder.input_dim() || scaler.mean.len() != encoder.input_dim() {
            return Err(Error::Contract("network input does not match the encoder".into()));
        }
        Ok(Self { net, actions, encoder, scaler, reward, gamma })
    }

    pub fn network_input(&self, state: &StepState) -> Vec<f64> {
        self.scaler.apply(&state.to_input())
    }

    pub fn q_values(&self, state: &StepState) -> Vec<f64> {
        self.net.forward_unchecked(&self.network_input(state))
    }

    pub fn greedy_action(&self, state: &StepState) -> usize {
        argmax(&self.q_values(state))
    }

    /// Step size the greedy policy picks in `state`.
    pub fn propose_step(&self, state: &StepState) -> f64 {
        self.actions.get(self.greedy_action(state))
    }

    pub fn metadata(&self) -> Value {
        json!({
            "role": "base_learner",
            "actions": self.actions,
            "encoder": self.encoder,
            "scaler": self.scaler,
            "reward": self.reward,
            "gamma": self.gamma,
        })
    }

    pub fn from_parts(net: Mlp, meta: &Value) -> Result<Self> {
        let field = |name: &str| {
            meta.get(name).cloned().ok_or_else(|| Error::Checkpoint(format!("checkpoint metadata lacks {name:?}")))
        };
        let parse = |e: serde_json::Error| Error::Checkpoint(format!("bad learner metadata: {e}"));
        let actions: ActionSet = serde_json::from_value(field("actions")?).map_err(parse)?;
        let encoder: EncoderConfig = serde_json::from_value(field("encoder")?).map_err(parse)?;
        let scaler: Scaler = serde_json::from_value(field("scaler")?).map_err(parse)?;
        let reward: RewardConfig = serde_json::from_value(field("reward")?).map_err(parse)?;
        let gamma = field("gamma")?.as_f64().unwrap_or(0.0);
        Self::new(net, actions, encoder, scaler, reward, gamma).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.net.save(path, &self.metadata())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (net, meta) = Mlp::load(path)?;
        Self::from_parts(net, &meta)
    }

    pub fn frozen(&self) -> Self {
        Self { net: self.net.frozen(), ..self.clone() }
    }
}

/// One episode: the warm-up step followed by the learner's transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub warmup: EnvStep,
    pub transitions: Vec<Transition>,
}

impl Episode {
    pub fn mean_reward(&self) -> f64 {
        if self.transitions.is_empty() {
            return 0.0;
        }
        self.transitions.iter().map(|t| t.reward).sum::<f64>() / self.transitions.len() as f64
    }

    pub fn evaluations(&self) -> usize {
        self.warmup.evaluations + self.transitions.iter().map(|t| t.evaluations).sum::<usize>()
    }

    /// Mean local error over all executed steps, warm-up included.
    pub fn avg_error(&self) -> f64 {
        let total = self.warmup.error + self.transitions.iter().map(|t| t.error).sum::<f64>();
        total / (1 + self.transitions.len()) as f64
    }
}

/// Plays one episode. `choose` maps a state to `(action index, step size)`;
/// rewards are normalized by `h_norm`.
pub fn run_episode(
    env: &mut dyn StepEnv,
    choose: &mut dyn FnMut(&StepState, &mut Rng) -> (usize, f64),
    reward_cfg: &RewardConfig,
    h_norm: f64,
    rng: &mut Rng,
) -> Result<Episode> {
    let warmup = env.reset(rng)?;
    let mut transitions = Vec::new();
    let mut state = warmup.state.clone();
    let mut done = warmup.failed || env.is_done();
    while !done {
        if transitions.len() >= MAX_EPISODE_STEPS {
            return Err(Error::Numeric("episode exceeded the step limit".into()));
        }
        let (action, h) = choose(&state, rng);
        let out = env.step(h)?;
        done = out.failed || env.is_done();
        transitions.push(Transition {
            state,
            action,
            reward: reward(reward_cfg, out.error, out.h, h_norm),
            next_state: out.state.clone(),
            terminal: done,
            excluded: out.clamped,
            h: out.h,
            error: out.error,
            position: out.position,
            evaluations: out.evaluations,
        });
        state = out.state;
    }
    Ok(Episode { warmup, transitions })
}

/// Q-learning batch for the non-excluded transitions of `episode`.
pub fn batch_from_episode(
    episode: &Episode,
    input: &dyn Fn(&StepState) -> Vec<f64>,
    net: &Mlp,
    gamma: f64,
) -> TrainBatch {
    let mut batch = TrainBatch::default();
    for t in episode.transitions.iter().filter(|t| !t.excluded) {
        let next_q = (!t.terminal && gamma != 0.0).then(|| net.forward_unchecked(&input(&t.next_state)));
        batch.push(input(&t.state), t.action, q_target(t.reward, next_q.as_deref(), gamma));
    }
    batch
}

/// Per-episode training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub mean_reward: f64,
    pub loss: f64,
    pub evals_per_unit: f64,
    pub avg_error: f64,
}

impl EpisodeLog {
    pub fn from_episode(index: usize, ep: &Episode, loss: f64, span: (f64, f64)) -> Self {
        Self {
            episode: index,
            mean_reward: ep.mean_reward(),
            loss,
            evals_per_unit: ep.evaluations() as f64 / (span.1 - span.0),
            avg_error: ep.avg_error(),
        }
    }
}

pub fn write_training_log(mut w: impl Write, log: &[EpisodeLog]) -> std::io::Result<()> {
    writeln!(w, "episode,mean_reward,loss,evals_per_unit,avg_error")?;
    for r in log {
        writeln!(w, "{},{},{},{},{}", r.episode, r.mean_reward, r.loss, r.evals_per_unit, r.avg_error)?;
    }
    Ok(())
}

/// True once the `window`-episode moving average of `rewards` moved by less
/// than `rel` (relative) over the last `span` episodes.
pub fn converged(rewards: &[f64], window: usize, span: usize, rel: f64) -> bool {
    let n = rewards.len();
    if window == 0 || n < window + span {
        return false;
    }
    let ma = |end: usize| rewards[end + 1 - window..=end].iter().sum::<f64>() / window as f64;
    let now = ma(n - 1);
    let then = ma(n - 1 - span);
    (now - then).abs() <= rel * then.abs().max(1e-12)
}

/// Result of a training run. On divergence `learner` holds the last good state.
#[derive(Debug, Clone)]
pub struct TrainOutcome<L> {
    pub learner: L,
    pub log: Vec<EpisodeLog>,
    pub converged: bool,
    pub diverged: Option<String>,
}

/// Episodes with uniformly random actions, used to fit the input scaler.
pub(crate) fn random_episodes(
    env: &mut dyn StepEnv,
    n_actions: usize,
    step_of: &dyn Fn(usize, &StepState) -> f64,
    reward_cfg: &RewardConfig,
    h_norm: f64,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<Episode>> {
    (0..count)
        .map(|_| {
            let mut choose = |s: &StepState, rng: &mut Rng| {
                let a = rng.random_range(0..n_actions);
                (a, step_of(a, s))
            };
            run_episode(env, &mut choose, reward_cfg, h_norm, rng)
        })
        .collect()
}

pub(crate) fn fit_scaler(episodes: &[Episode], input_dim: usize) -> Result<Scaler> {
    let inputs: Vec<Vec<f64>> = episodes
        .iter()
        .flat_map(|ep| {
            std::iter::once(ep.warmup.state.to_input()).chain(ep.transitions.iter().map(|t| t.next_state.to_input()))
        })
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .collect();
    if inputs.is_empty() { Ok(Scaler::identity(input_dim)) } else { Scaler::fit(&inputs) }
}

/// Shared Q-learning loop for base and meta learners.
pub(crate) struct QLoop<'a> {
    pub cfg: &'a TrainConfig,
    pub reward: &'a RewardConfig,
    pub h_norm: f64,
}

impl QLoop<'_> {
    /// Trains `net` (with inputs scaled by `scaler`) until convergence or the cap.
    pub fn run(
        &self,
        env: &mut dyn StepEnv,
        net: &mut Mlp,
        scaler: &Scaler,
        step_of: &dyn Fn(usize, &StepState) -> f64,
        warm_episodes: &[Episode],
        rng: &mut Rng,
    ) -> Result<(Vec<EpisodeLog>, bool, Option<String>)> {
        let cfg = self.cfg;
        let input = |s: &StepState| scaler.apply(&s.to_input());
        let span = env.span();
        let mut log = Vec::new();
        let mut rewards = Vec::new();
        let train_on = |net: &mut Mlp, ep: &Episode, rng: &mut Rng| -> Result<Option<f64>> {
            let batch = batch_from_episode(ep, &input, net, cfg.gamma);
            if batch.is_empty() {
                return Ok(Some(0.0));
            }
            let snapshot = net.clone();
            match net.fit(&batch, &cfg.adam, cfg.minibatch, cfg.epochs, rng) {
                Ok(loss) => Ok(Some(loss)),
                Err(Error::Numeric(_)) => {
                    *net = snapshot;
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        };
        if cfg.train_on_scaler_episodes {
            for ep in warm_episodes {
                if train_on(net, ep, rng)?.is_none() {
                    return Ok((log, false, Some("non-finite loss on warm-up data".into())));
                }
            }
        }
        for index in 0..cfg.max_episodes {
            let frozen: &Mlp = net;
            let frozen = frozen.clone();
            let mut choose = |s: &StepState, rng: &mut Rng| {
                let q = frozen.forward_unchecked(&input(s));
                let a = select_action(&q, true, cfg.alpha, rng);
                (a, step_of(a, s))
            };
            let ep = run_episode(env, &mut choose, self.reward, self.h_norm, rng)?;
            let Some(loss) = train_on(net, &ep, rng)? else {
                return Ok((log, false, Some(format!("non-finite loss in episode {index}"))));
            };
            rewards.push(ep.mean_reward());
            log.push(EpisodeLog::from_episode(index, &ep, loss, span));
            if index + 1 >= cfg.min_episodes && converged(&rewards, cfg.window, cfg.span, cfg.rel_change) {
                return Ok((log, true, None));
            }
        }
        Ok((log, false, None))
    }
}

/// Q-learning of a step-size policy on `env`.
pub fn train_base_learner(
    env: &mut dyn StepEnv,
    actions: &ActionSet,
    reward_cfg: &RewardConfig,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainOutcome<BaseLearner>> {
    cfg.validate()?;
    reward_cfg.validate()?;
    let encoder = env.encoder();
    let mut net = Mlp::init(cfg.mlp_spec(encoder.input_dim(), actions.len()), rng)?;
    let h_norm = actions.largest();
    let step_of = |a: usize, _: &StepState| actions.get(a);
    let warm = random_episodes(env, actions.len(), &step_of, reward_cfg, h_norm, cfg.scaler_episodes, rng)?;
    let scaler = fit_scaler(&warm, encoder.input_dim())?;
    let lp = QLoop { cfg, reward: reward_cfg, h_norm };
    let (log, converged, diverged) = lp.run(env, &mut net, &scaler, &step_of, &warm, rng)?;
    let learner = BaseLearner::new(net, actions.clone(), encoder, scaler, *reward_cfg, cfg.gamma)?;
    Ok(TrainOutcome { learner, log, converged, diverged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{FunctionClass, FunctionClassSpec, SampledFunction};
    use crate::rl::{QuadEnv, RewardVariant};
    use crate::seeded_rng;

    fn zero_env(domain: (f64, f64)) -> QuadEnv {
        let spec = FunctionClassSpec::new(FunctionClass::PolyDeg { degree: 1 }).with_domain(domain.0, domain.1);
        QuadEnv::with_function(spec, SampledFunction::Poly { coeffs: vec![0.0] }, 0.3, 0).unwrap()
    }

    #[test]
    fn zero_function_episode_rewards_and_chaining() {
        let mut env = zero_env((0.0, 20.0));
        let cfg = RewardConfig::new(5e-4, RewardVariant::Piecewise).unwrap();
        let mut rng = seeded_rng(0);
        let mut choose = |_: &StepState, rng: &mut Rng| if rng.random::<bool>() { (0, 0.3) } else { (1, 1.0) };
        let ep = run_episode(&mut env, &mut choose, &cfg, 1.0, &mut rng).unwrap();
        for t in &ep.transitions {
            assert_eq!(t.error, 0.0);
            assert_eq!(t.reward, t.h / 1.0);
        }
        for w in ep.transitions.windows(2) {
            assert_eq!(w[0].next_state, w[1].state);
        }
        assert_eq!(ep.transitions[0].state, ep.warmup.state);
        assert!(ep.transitions.last().unwrap().terminal);
    }

    #[test]
    fn gamma_zero_batch_equals_rewards() {
        let mut env = zero_env((0.0, 5.0));
        let cfg = RewardConfig::new(1e-3, RewardVariant::Log).unwrap();
        let mut rng = seeded_rng(1);
        let mut choose = |_: &StepState, _: &mut Rng| (0, 0.3);
        let ep = run_episode(&mut env, &mut choose, &cfg, 1.0, &mut rng).unwrap();
        let net = Mlp::init(MlpSpec::standard(3, 2), &mut rng).unwrap();
        let batch = batch_from_episode(&ep, &|s| s.to_input(), &net, 0.0);
        let rewards: Vec<f64> = ep.transitions.iter().filter(|t| !t.excluded).map(|t| t.reward).collect();
        let targets: Vec<f64> = batch.targets.iter().map(|t| t.1).collect();
        assert_eq!(targets, rewards);
    }

    #[test]
    fn collapsed_target_fixed_point() {
        // Zero error everywhere: action 0 always earns 0.3, action 1 earns 1.
        let mut env = zero_env((0.0, 30.0));
        let actions = ActionSet::new(vec![0.3, 1.0]).unwrap();
        let reward_cfg = RewardConfig::new(1e-3, RewardVariant::Piecewise).unwrap();
        let cfg = TrainConfig {
            max_episodes: 300,
            min_episodes: 300,
            alpha: 0.5,
            hidden_layers: 1,
            hidden_width: 8,
            adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
            epochs: 2,
            ..TrainConfig::default()
        };
        let out = train_base_learner(&mut env, &actions, &reward_cfg, &cfg, &mut seeded_rng(2)).unwrap();
        let mut rng = seeded_rng(3);
        let mut choose = |_: &StepState, rng: &mut Rng| {
            let a = rng.random_range(0..2);
            (a, actions.get(a))
        };
        let ep = run_episode(&mut env, &mut choose, &reward_cfg, 1.0, &mut rng).unwrap();
        for t in ep.transitions.iter().filter(|t| !t.excluded) {
            let q = out.learner.q_values(&t.state);
            assert!((q[0] - 0.3).abs() < 0.01, "{q:?}");
            assert!((q[1] - 1.0).abs() < 0.01, "{q:?}");
        }
    }

    #[test]
    fn convergence_rule() {
        let flat = vec![1.0; 150];
        assert!(converged(&flat, 50, 100, 0.01));
        assert!(!converged(&flat[..149], 50, 100, 0.01));
        let rising: Vec<f64> = (0..150).map(|i| i as f64).collect();
        assert!(!converged(&rising, 50, 100, 0.01));
    }

    #[test]
    fn learner_checkpoint_round_trip() {
        let mut env = zero_env((0.0, 3.0));
        let actions = ActionSet::new(vec![0.3, 1.0]).unwrap();
        let reward_cfg = RewardConfig::new(1e-3, RewardVariant::Piecewise).unwrap();
        let cfg = TrainConfig { max_episodes: 3, min_episodes: 3, ..TrainConfig::default() };
        let out = train_base_learner(&mut env, &actions, &reward_cfg, &cfg, &mut seeded_rng(5)).unwrap();
        assert!(!out.converged);
        assert_eq!(out.log.len(), 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("learner.json");
        out.learner.save(&path).unwrap();
        let back = BaseLearner::load(&path).unwrap();
        assert_eq!(back, out.learner);
        assert!(matches!(BaseLearner::load(&dir.path().join("none.json")), Err(Error::MissingFile(_))));
    }
}
