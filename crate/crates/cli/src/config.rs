//! Flat `key=value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use vqbet::data::GoalMode;
use vqbet::envs::EnvKind;
use vqbet::eval::{ExecMode, RolloutConfig};
use vqbet::policy::{PolicyConfig, PolicyTrainConfig};
use vqbet::rvq::{RvqConfig, RvqTrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Text,
    Path,
    Uint,
    Float,
    OptFloat,
    Bool,
    Sizes,
    OptSizes,
    Env,
    GoalMode,
    ExecMode,
}

struct Key {
    name: &'static str,
    default: &'static str,
    kind: Kind,
}

const fn key(name: &'static str, default: &'static str, kind: Kind) -> Key {
    Key { name, default, kind }
}

/// Every recognized key with its default. Empty path keys resolve to a file
/// inside the output directory.
const KEYS: &[Key] = &[
    key("name", "run", Kind::Text),
    key("out", "runs/run", Kind::Path),
    key("seed", "0", Kind::Uint),
    key("env", "four_goal", Kind::Env),
    key("count", "2400", Kind::Uint),
    key("goal_pairs", "false", Kind::Bool),
    key("dataset_path", "", Kind::Path),
    key("tokenizer_path", "", Kind::Path),
    key("policy_path", "", Kind::Path),
    key("episodes_path", "", Kind::Path),
    key("traces_path", "", Kind::Path),
    key("log_every", "10", Kind::Uint),
    key("chunk_len", "1", Kind::Uint),
    key("goal_mode", "trajectory_end", Kind::GoalMode),
    key("rvq.latent_dim", "32", Kind::Uint),
    key("rvq.hidden", "128", Kind::Uint),
    key("rvq.depth", "2", Kind::Uint),
    key("rvq.codebook_sizes", "8,8", Kind::Sizes),
    key("rvq.lambda_commit", "1", Kind::Float),
    key("rvq.ema_decay", "0.99", Kind::Float),
    key("rvq.ema_eps", "0.00001", Kind::Float),
    key("rvq_train.steps", "1000", Kind::Uint),
    key("rvq_train.batch_size", "256", Kind::Uint),
    key("rvq_train.lr", "0.001", Kind::Float),
    key("rvq_train.weight_decay", "0.0001", Kind::Float),
    key("rvq_train.warmup", "50", Kind::Uint),
    key("rvq_train.kmeans_iters", "25", Kind::Uint),
    key("rvq_train.dead_code_reset", "true", Kind::Bool),
    key("rvq_train.dead_code_threshold", "1", Kind::Float),
    key("rvq_train.reset_interval", "100", Kind::Uint),
    key("policy.obs_window", "3", Kind::Uint),
    key("policy.goal_window", "0", Kind::Uint),
    key("policy.layers", "2", Kind::Uint),
    key("policy.heads", "2", Kind::Uint),
    key("policy.embed_dim", "32", Kind::Uint),
    key("policy.head_hidden", "64", Kind::Uint),
    key("policy.beta", "0.1", Kind::Float),
    key("policy.gamma", "2", Kind::Float),
    key("policy.offset_weight", "1", Kind::Float),
    key("policy.autoregressive_codes", "false", Kind::Bool),
    key("policy.offset_uses_codes", "true", Kind::Bool),
    key("policy.temperature", "1", Kind::Float),
    key("policy.deadcode_mask", "false", Kind::Bool),
    key("policy_train.steps", "3000", Kind::Uint),
    key("policy_train.batch_size", "128", Kind::Uint),
    key("policy_train.lr", "0.001", Kind::Float),
    key("policy_train.weight_decay", "0.01", Kind::Float),
    key("policy_train.warmup", "100", Kind::Uint),
    key("policy_train.min_lr_frac", "0.05", Kind::Float),
    key("rollout.episodes", "100", Kind::Uint),
    key("rollout.mode", "closed_loop", Kind::ExecMode),
    key("rollout.temperature", "", Kind::OptFloat),
    key("rollout.record_traces", "true", Kind::Bool),
    key("timing.repeats", "0", Kind::Uint),
    key("timing.chunk_lens", "", Kind::OptSizes),
];

fn spec(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

fn parse_sizes(v: &str) -> Option<Vec<usize>> {
    v.split(',').map(|s| s.trim().parse().ok().filter(|&k: &usize| k > 0)).collect()
}

fn parse_goal_mode(v: &str) -> Option<GoalMode> {
    match v {
        "trajectory_end" => Some(GoalMode::TrajectoryEnd),
        _ => v.strip_prefix("future:").and_then(|k| k.parse().ok()).map(GoalMode::FutureOffset),
    }
}

fn check(kind: Kind, v: &str) -> bool {
    match kind {
        Kind::Text => !v.contains('\n'),
        Kind::Path => !v.contains('\n'),
        Kind::Uint => v.parse::<u64>().is_ok(),
        Kind::Float => v.parse::<f64>().is_ok_and(f64::is_finite),
        Kind::OptFloat => v.is_empty() || v.parse::<f64>().is_ok_and(f64::is_finite),
        Kind::Bool => v == "true" || v == "false",
        Kind::Sizes => parse_sizes(v).is_some(),
        Kind::OptSizes => v.is_empty() || parse_sizes(v).is_some(),
        Kind::Env => EnvKind::parse(v).is_ok(),
        Kind::GoalMode => parse_goal_mode(v).is_some(),
        Kind::ExecMode => ExecMode::parse(v).is_ok(),
    }
}

/// Resolved run configuration: defaults overlaid with file contents and
/// command-line overrides. Values are validated as they are set.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { values: KEYS.iter().map(|k| (k.name, k.default.to_string())).collect() }
    }
}

impl RunConfig {
    /// Defaults overlaid with `text`.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies `key=value` lines; `#` starts a comment. A key may appear at
    /// most once per text.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CliError::config(format!("line {}: expected key=value", i + 1)))?;
            let k = k.trim();
            if seen.contains(&k) {
                return Err(CliError::config(format!("line {}: duplicate key {k}", i + 1)));
            }
            seen.push(k);
            self.set(k, v.trim()).map_err(|e| CliError::config(format!("line {}: {}", i + 1, e.message)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let s = spec(key).ok_or_else(|| CliError::config(format!("unknown key {key}")))?;
        if !check(s.kind, value) {
            return Err(CliError::config(format!("bad value {value:?} for {key}")));
        }
        self.values.insert(s.name, value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override given on the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair.split_once('=').ok_or_else(|| CliError::config(format!("expected key=value, got {pair:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    /// Every key in registry order, as a config file that reproduces this run.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{}={}\n", k.name, self.get(k.name))).collect()
    }

    fn uint(&self, key: &str) -> usize {
        self.get(key).parse().expect("validated on set")
    }

    fn float(&self, key: &str) -> f64 {
        self.get(key).parse().expect("validated on set")
    }

    fn flag(&self, key: &str) -> bool {
        self.get(key) == "true"
    }

    pub fn seed(&self) -> u64 {
        self.get("seed").parse().expect("validated on set")
    }

    pub fn env(&self) -> EnvKind {
        EnvKind::parse(self.get("env")).expect("validated on set")
    }

    pub fn count(&self) -> usize {
        self.uint("count")
    }

    pub fn goal_pairs(&self) -> bool {
        self.flag("goal_pairs")
    }

    pub fn log_every(&self) -> usize {
        self.uint("log_every").max(1)
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out"))
    }

    /// The path under `key`, or `default_name` inside the output directory.
    pub fn path(&self, key: &str, default_name: &str) -> PathBuf {
        match self.get(key) {
            "" => self.out_dir().join(default_name),
            p => PathBuf::from(p),
        }
    }

    pub fn goal_mode(&self) -> GoalMode {
        parse_goal_mode(self.get("goal_mode")).expect("validated on set")
    }

    pub fn rvq(&self, act_dim: usize) -> RvqConfig {
        RvqConfig {
            act_dim,
            chunk_len: self.uint("chunk_len"),
            latent_dim: self.uint("rvq.latent_dim"),
            hidden: self.uint("rvq.hidden"),
            depth: self.uint("rvq.depth"),
            codebook_sizes: parse_sizes(self.get("rvq.codebook_sizes")).expect("validated on set"),
            lambda_commit: self.float("rvq.lambda_commit"),
            ema_decay: self.float("rvq.ema_decay"),
            ema_eps: self.float("rvq.ema_eps"),
        }
    }

    pub fn rvq_train(&self) -> RvqTrainConfig {
        RvqTrainConfig {
            steps: self.uint("rvq_train.steps"),
            batch_size: self.uint("rvq_train.batch_size"),
            lr: self.float("rvq_train.lr"),
            weight_decay: self.float("rvq_train.weight_decay"),
            warmup: self.uint("rvq_train.warmup"),
            kmeans_iters: self.uint("rvq_train.kmeans_iters"),
            dead_code_reset: self.flag("rvq_train.dead_code_reset"),
            dead_code_threshold: self.float("rvq_train.dead_code_threshold"),
            reset_interval: self.uint("rvq_train.reset_interval"),
        }
    }

    /// Policy settings; shapes not covered by keys come from the dataset and
    /// the tokenizer.
    pub fn policy(&self, obs_dim: usize, tokenizer: &RvqConfig) -> PolicyConfig {
        PolicyConfig {
            obs_dim,
            act_dim: tokenizer.act_dim,
            obs_window: self.uint("policy.obs_window"),
            goal_window: self.uint("policy.goal_window"),
            chunk_len: tokenizer.chunk_len,
            layers: self.uint("policy.layers"),
            heads: self.uint("policy.heads"),
            embed_dim: self.uint("policy.embed_dim"),
            head_hidden: self.uint("policy.head_hidden"),
            codebook_sizes: tokenizer.codebook_sizes.clone(),
            beta: self.float("policy.beta"),
            gamma: self.float("policy.gamma"),
            offset_weight: self.float("policy.offset_weight"),
            autoregressive_codes: self.flag("policy.autoregressive_codes"),
            offset_uses_codes: self.flag("policy.offset_uses_codes"),
            temperature: self.float("policy.temperature"),
            deadcode_mask: self.flag("policy.deadcode_mask"),
        }
    }

    pub fn policy_train(&self) -> PolicyTrainConfig {
        PolicyTrainConfig {
            steps: self.uint("policy_train.steps"),
            batch_size: self.uint("policy_train.batch_size"),
            lr: self.float("policy_train.lr"),
            weight_decay: self.float("policy_train.weight_decay"),
            warmup: self.uint("policy_train.warmup"),
            min_lr_frac: self.float("policy_train.min_lr_frac"),
        }
    }

    /// Rollout settings for `policy`; the temperature falls back to the one
    /// stored with the policy and conditioning follows its goal window.
    pub fn rollout(&self, policy: &PolicyConfig) -> RolloutConfig {
        RolloutConfig {
            episodes: self.uint("rollout.episodes"),
            mode: ExecMode::parse(self.get("rollout.mode")).expect("validated on set"),
            seed: self.seed(),
            conditional: policy.goal_window > 0,
            temperature: match self.get("rollout.temperature") {
                "" => policy.temperature,
                t => t.parse().expect("validated on set"),
            },
            record_traces: self.flag("rollout.record_traces"),
        }
    }

    pub fn timing_repeats(&self) -> usize {
        self.uint("timing.repeats")
    }

    pub fn timing_chunk_lens(&self) -> Vec<usize> {
        parse_sizes(self.get("timing.chunk_lens")).unwrap_or_default()
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_text()).map_err(|e| CliError::data(format!("writing {}: {e}", path.display())))
    }
}
