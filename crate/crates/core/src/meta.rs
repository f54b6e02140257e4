//! Meta-learning over a pool of step-size policies: a second Q-network picks,
//! at every step, which pool member proposes the step.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Value, json};

use crate::neural::Mlp;
use crate::rl::{
    BaseLearner, EncoderConfig, RewardConfig, RolloutStep, Rollout, Scaler, StepEnv, StepState, TrainConfig,
    TrainOutcome, Transition, argmax, reward, rollout, select_action,
};
use crate::rl::{QLoop, fit_scaler, random_episodes};
use crate::{Error, Result, Rng};

/// A member of the pool.
#[derive(Debug, Clone, PartialEq)]
pub enum PoolEntry {
    Trained(BaseLearner),
    /// Always proposes the same step size.
    Constant(f64),
}

impl PoolEntry {
    pub fn propose(&self, state: &StepState) -> f64 {
        match self {
            Self::Trained(l) => l.propose_step(state),
            Self::Constant(h) => *h,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Trained(_) => "trained",
            Self::Constant(_) => "constant",
        }
    }

    pub fn largest_step(&self) -> f64 {
        match self {
            Self::Trained(l) => l.actions.largest(),
            Self::Constant(h) => *h,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Trained(_) => "trained".into(),
            Self::Constant(h) => format!("constant({h})"),
        }
    }
}

/// Ordered pool; meta action `i` delegates to entry `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerPool {
    entries: Vec<PoolEntry>,
}

impl LearnerPool {
    pub fn new(entries: Vec<PoolEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("learner pool is empty".into()));
        }
        for e in &entries {
            if let PoolEntry::Constant(h) = e {
                if !(h.is_finite() && *h > 0.0) {
                    return Err(Error::Config(format!("constant step {h} must be positive")));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> &PoolEntry {
        &self.entries[index]
    }

    /// Normalizer of positive meta rewards: the largest step any member proposes.
    pub fn h_norm(&self) -> f64 {
        self.entries.iter().map(PoolEntry::largest_step).fold(0.0, f64::max)
    }

    /// Checks that every trained member reads the given encoding.
    pub fn check_encoder(&self, encoder: &EncoderConfig) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            if let PoolEntry::Trained(l) = e {
                if &l.encoder != encoder {
                    return Err(Error::Contract(format!("pool member {i} uses a different state encoding")));
                }
            }
        }
        Ok(())
    }

    fn to_value(&self) -> Value {
        Value::Array(
            self.entries
                .iter()
                .map(|e| match e {
                    PoolEntry::Constant(h) => json!({"kind": "constant", "h": h}),
                    PoolEntry::Trained(l) => {
                        json!({"kind": "trained", "checkpoint": l.net.to_checkpoint(&l.metadata())})
                    }
                })
                .collect(),
        )
    }

    fn from_value(v: &Value) -> Result<Self> {
        let bad = || Error::Checkpoint("malformed learner pool record".into());
        let items = v.as_array().ok_or_else(bad)?;
        let entries = items
            .iter()
            .map(|item| match item.get("kind").and_then(Value::as_str) {
                Some("constant") => Ok(PoolEntry::Constant(item.get("h").and_then(Value::as_f64).ok_or_else(bad)?)),
                Some("trained") => {
                    let text = item.get("checkpoint").and_then(Value::as_str).ok_or_else(bad)?;
                    let (net, meta) = Mlp::from_checkpoint(text)?;
                    Ok(PoolEntry::Trained(BaseLearner::from_parts(net, &meta)?))
                }
                _ => Err(bad()),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

/// Q-network over pool indices.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaLearner {
    pub net: Mlp,
    pub pool: LearnerPool,
    pub encoder: EncoderConfig,
    pub scaler: Scaler,
    pub reward: RewardConfig,
    pub gamma: f64,
}

impl MetaLearner {
    pub fn new(
        net: Mlp,
        pool: LearnerPool,
        encoder: EncoderConfig,
        scaler: Scaler,
        reward: RewardConfig,
        gamma: f64,
    ) -> Result<Self> {
        if net.spec.output_dim != pool.len() {
            return Err(Error::Contract(format!(
                "meta network has {} outputs for a pool of {}",
                net.spec.output_dim,
                pool.len()
            )));
        }
        if net.spec.input_dim != encoder.input_dim() || scaler.mean.len() != encoder.input_dim() {
            return Err(Error::Contract("meta network input does not match the encoder".into()));
        }
        pool.check_encoder(&encoder)?;
        Ok(Self { net, pool, encoder, scaler, reward, gamma })
    }

    pub fn q_values(&self, state: &StepState) -> Vec<f64> {
        self.net.forward_unchecked(&self.scaler.apply(&state.to_input()))
    }

    /// Step size the greedy dispatch executes in `state`, with the chosen member.
    pub fn propose(&self, state: &StepState) -> (usize, f64) {
        let i = meta_select(self, state, false, 1.0, None);
        (i, self.pool.get(i).propose(state))
    }

    pub fn metadata(&self) -> Value {
        json!({
            "role": "meta_learner",
            "encoder": self.encoder,
            "scaler": self.scaler,
            "reward": self.reward,
            "gamma": self.gamma,
            "pool": self.pool.to_value(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.net.save(path, &self.metadata())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (net, meta) = Mlp::load(path)?;
        if meta.get("role").and_then(Value::as_str) != Some("meta_learner") {
            return Err(Error::Checkpoint(format!("{} is not a meta-learner checkpoint", path.display())));
        }
        let parse = |e: serde_json::Error| Error::Checkpoint(format!("bad meta-learner metadata: {e}"));
        let field = |name: &str| {
            meta.get(name).cloned().ok_or_else(|| Error::Checkpoint(format!("checkpoint metadata lacks {name:?}")))
        };
        let encoder = serde_json::from_value(field("encoder")?).map_err(parse)?;
        let scaler = serde_json::from_value(field("scaler")?).map_err(parse)?;
        let reward = serde_json::from_value(field("reward")?).map_err(parse)?;
        let gamma = field("gamma")?.as_f64().unwrap_or(0.0);
        let pool = LearnerPool::from_value(&field("pool")?)?;
        Self::new(net, pool, encoder, scaler, reward, gamma).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

/// Pool index for `state`: greedy, or best/runner-up with probability
/// `alpha`/`1 - alpha` when `rng` is given.
pub fn meta_select(meta: &MetaLearner, state: &StepState, explore: bool, alpha: f64, rng: Option<&mut Rng>) -> usize {
    if meta.pool.len() == 1 {
        return 0;
    }
    let q = meta.q_values(state);
    match rng {
        Some(rng) if explore => select_action(&q, true, alpha, rng),
        _ => argmax(&q),
    }
}

/// Executes the step proposed by pool member `choice`; the meta reward is the
/// reward of that step.
pub fn meta_step(meta: &MetaLearner, env: &mut dyn StepEnv, state: &StepState, choice: usize) -> Result<Transition> {
    let h = meta.pool.get(choice).propose(state);
    let out = env.step(h)?;
    let terminal = out.failed || env.is_done();
    Ok(Transition {
        state: state.clone(),
        action: choice,
        reward: reward(&meta.reward, out.error, out.h, meta.pool.h_norm()),
        next_state: out.state,
        terminal,
        excluded: out.clamped,
        h: out.h,
        error: out.error,
        position: out.position,
        evaluations: out.evaluations,
    })
}

/// Q-learning of the dispatch policy with frozen pool members.
pub fn train_meta(
    pool: LearnerPool,
    env: &mut dyn StepEnv,
    reward_cfg: &RewardConfig,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainOutcome<MetaLearner>> {
    cfg.validate()?;
    reward_cfg.validate()?;
    let encoder = env.encoder();
    pool.check_encoder(&encoder)?;
    let pool = LearnerPool::new(
        pool.entries
            .into_iter()
            .map(|e| match e {
                PoolEntry::Trained(l) => PoolEntry::Trained(l.frozen()),
                c => c,
            })
            .collect(),
    )?;
    let mut net = Mlp::init(cfg.mlp_spec(encoder.input_dim(), pool.len()), rng)?;
    let h_norm = pool.h_norm();
    let step_of = |a: usize, s: &StepState| pool.get(a).propose(s);
    let warm = random_episodes(env, pool.len(), &step_of, reward_cfg, h_norm, cfg.scaler_episodes, rng)?;
    let scaler = fit_scaler(&warm, encoder.input_dim())?;
    let lp = QLoop { cfg, reward: reward_cfg, h_norm };
    let (log, converged, diverged) = lp.run(env, &mut net, &scaler, &step_of, &warm, rng)?;
    let learner = MetaLearner::new(net, pool, encoder, scaler, *reward_cfg, cfg.gamma)?;
    Ok(TrainOutcome { learner, log, converged, diverged })
}

/// One dispatched step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchRecord {
    pub t: f64,
    pub learner_index: usize,
    pub learner_kind: String,
    pub h: f64,
    pub local_error: f64,
    pub reward: f64,
}

/// Greedy meta rollout with its dispatch log. The warm-up step has no dispatch record.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaRollout {
    pub rollout: Rollout,
    pub dispatch: Vec<DispatchRecord>,
}

impl MetaRollout {
    pub fn write_dispatch_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "t,learner_index,learner_kind,h,local_error,reward")?;
        for d in &self.dispatch {
            writeln!(w, "{},{},{},{},{},{}", d.t, d.learner_index, d.learner_kind, d.h, d.local_error, d.reward)?;
        }
        Ok(())
    }
}

pub fn integrate_with_meta(meta: &MetaLearner, env: &mut dyn StepEnv, rng: &mut Rng) -> Result<MetaRollout> {
    if meta.encoder != env.encoder() {
        return Err(Error::Contract("meta-learner encoder does not match the problem".into()));
    }
    let mut choose = |s: &StepState| meta.propose(s);
    let rollout = rollout(env, &mut choose, rng)?;
    let h_norm = meta.pool.h_norm();
    let dispatch = rollout
        .steps
        .iter()
        .filter_map(|s: &RolloutStep| {
            s.action.map(|a| DispatchRecord {
                t: s.position,
                learner_index: a,
                learner_kind: meta.pool.get(a).label(),
                h: s.h,
                local_error: s.error,
                reward: reward(&meta.reward, s.error, s.h, h_norm),
            })
        })
        .collect();
    Ok(MetaRollout { rollout, dispatch })
}
