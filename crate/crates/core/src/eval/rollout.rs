use std::collections::VecDeque;

use crate::envs::world::clamp_action;
use crate::envs::{goal_frames, random_goal_pair, EnvKind, Environment, EpisodeResult, FourGoalWorld, TraceStep};
use crate::error::{Error, Result};
use crate::numerics::SeededRng;
use crate::policy::{sample_action, PolicyNet};
use crate::rvq::ResidualQuantizer;

/// How many actions of each predicted chunk are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    /// First action only; one prediction per step.
    ClosedLoop,
    /// First `j` actions, then predict again.
    Receding(usize),
}

impl ExecMode {
    pub fn actions_per_prediction(self) -> usize {
        match self {
            ExecMode::ClosedLoop => 1,
            ExecMode::Receding(j) => j,
        }
    }

    pub fn label(self) -> String {
        match self {
            ExecMode::ClosedLoop => "closed_loop".into(),
            ExecMode::Receding(j) => format!("receding({j})"),
        }
    }

    /// Parses `closed_loop` or `receding(J)` / `receding:J`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "closed_loop" {
            return Ok(ExecMode::ClosedLoop);
        }
        let inner = s
            .strip_prefix("receding(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("receding:"))
            .ok_or_else(|| Error::Config(format!("unknown execution mode {s:?}")))?;
        let j: usize = inner.trim().parse().map_err(|_| Error::Config(format!("bad receding horizon {inner:?}")))?;
        Ok(ExecMode::Receding(j))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutConfig {
    pub episodes: usize,
    pub mode: ExecMode,
    pub seed: u64,
    /// Command a random ordered goal pair per episode (FourGoalWorld only).
    pub conditional: bool,
    pub temperature: f64,
    /// Keep per-step traces in the results.
    pub record_traces: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig { episodes: 100, mode: ExecMode::ClosedLoop, seed: 0, conditional: false, temperature: 1.0, record_traces: true }
    }
}

/// Frozen tokenizer and policy.
#[derive(Debug, Clone)]
pub struct PolicyBundle {
    pub net: PolicyNet,
    pub tokenizer: ResidualQuantizer,
}

impl PolicyBundle {
    pub fn new(net: PolicyNet, tokenizer: ResidualQuantizer) -> Result<Self> {
        let c = net.config();
        if tokenizer.codebook_sizes() != c.codebook_sizes || tokenizer.config().act_dim != c.act_dim || tokenizer.config().chunk_len != c.chunk_len {
            return Err(Error::Invalid("tokenizer and policy disagree on codebooks or action shape".into()));
        }
        if tokenizer.stats().is_none() {
            return Err(Error::Invalid("tokenizer has no normalization stats".into()));
        }
        Ok(PolicyBundle { net, tokenizer })
    }
}

/// Totals from one rollout call.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOutput {
    pub episodes: Vec<EpisodeResult>,
    pub trunk_forwards: u64,
    pub env_steps: u64,
}

fn rounded(obs: &[f64]) -> Vec<f64> {
    obs.iter().map(|&v| v as f32 as f64).collect()
}

/// Runs `cfg.episodes` episodes. Episode `i` draws from its own stream,
/// `SeededRng::new(seed).split(i)`, so results do not depend on order.
pub fn rollout(bundle: &PolicyBundle, kind: EnvKind, cfg: &RolloutConfig) -> Result<RolloutOutput> {
    let pc = bundle.net.config();
    if pc.obs_dim != kind.obs_dim() || pc.act_dim != kind.act_dim() {
        return Err(Error::Invalid(format!("policy dims ({}, {}) do not match {}", pc.obs_dim, pc.act_dim, kind.name())));
    }
    let j = cfg.mode.actions_per_prediction();
    if j == 0 || j > pc.chunk_len {
        return Err(Error::Config(format!("receding horizon {j} must lie in 1..={}", pc.chunk_len)));
    }
    if cfg.conditional && (kind != EnvKind::FourGoal || pc.goal_window == 0) {
        return Err(Error::Config("conditional rollouts need FourGoalWorld and a goal-conditioned policy".into()));
    }
    if !cfg.conditional && pc.goal_window > 0 {
        return Err(Error::Config("a goal-conditioned policy needs conditional rollouts".into()));
    }
    let start = bundle.net.forward_count();
    let root = SeededRng::new(cfg.seed);
    let mut out = RolloutOutput { episodes: Vec::with_capacity(cfg.episodes), trunk_forwards: 0, env_steps: 0 };
    for ep in 0..cfg.episodes {
        let r = run_episode(bundle, kind, cfg, root.split(ep as u64))?;
        out.env_steps += r.steps as u64;
        out.episodes.push(r);
    }
    out.trunk_forwards = bundle.net.forward_count() - start;
    Ok(out)
}

fn run_episode(bundle: &PolicyBundle, kind: EnvKind, cfg: &RolloutConfig, ep_rng: SeededRng) -> Result<EpisodeResult> {
    let pc = bundle.net.config();
    let h = pc.obs_window;
    let mut sample_rng = ep_rng.split(0);
    let (mut env, goal): (Box<dyn Environment>, Option<Vec<f64>>) = if cfg.conditional {
        let mut task_rng = ep_rng.split(1);
        let command = random_goal_pair(&mut task_rng);
        let frames = goal_frames(&command, pc.goal_window, &mut ep_rng.split(2))?;
        (Box::new(FourGoalWorld::with_command(command.to_vec())?), Some(frames))
    } else {
        (crate::envs::make_env(kind), None)
    };
    let first = rounded(&env.observation());
    let mut window: VecDeque<Vec<f64>> = std::iter::repeat_n(first, h).collect();
    let mut queue: VecDeque<([f64; 2], Vec<usize>)> = VecDeque::new();
    let mut trace = Vec::new();
    while !env.is_done() {
        if queue.is_empty() {
            let obs: Vec<f64> = window.iter().flatten().copied().collect();
            let s = sample_action(&bundle.net, &bundle.tokenizer, &obs, goal.as_deref(), cfg.temperature, &mut sample_rng)?;
            for k in 0..cfg.mode.actions_per_prediction() {
                queue.push_back(([s.chunk[k * 2], s.chunk[k * 2 + 1]], s.codes.0.clone()));
            }
        }
        let (action, codes) = queue.pop_front().expect("queue refilled above");
        let action = clamp_action(action)?;
        let obs = env.observation();
        env.step(action)?;
        if cfg.record_traces {
            trace.push(TraceStep { obs, action, codes: Some(codes) });
        }
        window.pop_front();
        window.push_back(rounded(&env.observation()));
    }
    let mut result = env.result();
    result.trace = trace;
    Ok(result)
}
