use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::envs::{completion_order_entropy, success_metrics, EnvKind, EpisodeResult, SuccessMetrics};
use crate::error::{Error, Result};
use crate::eval::rollout::{RolloutConfig, RolloutOutput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub repeats: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

/// How the episodes were produced; absent when only results are evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutInfo {
    pub mode: String,
    pub seed: u64,
    pub conditional: bool,
    pub temperature: f64,
    pub trunk_forwards: u64,
    pub env_steps: u64,
    pub forwards_per_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub env: EnvKind,
    pub metrics: SuccessMetrics,
    /// Completion-order entropies in bits; entry `k-1` uses `k`-prefixes of
    /// episodes that completed at least `k` tasks, `None` when none did.
    pub entropy: Vec<Option<f64>>,
    pub entropy_convention: String,
    pub demo_entropy: Option<Vec<Option<f64>>>,
    /// Policy over demonstrator entropy for full completion orders
    /// (FourGoalWorld) or route labels (DetourWorld).
    pub entropy_ratio: Option<f64>,
    /// Episodes per full completion order or route label.
    pub mode_counts: BTreeMap<String, usize>,
    pub rollout: Option<RolloutInfo>,
    pub latency: Option<LatencyStats>,
}

fn entropies(results: &[EpisodeResult], max_tasks: usize) -> Vec<Option<f64>> {
    (1..=max_tasks).map(|k| completion_order_entropy(results, k).ok()).collect()
}

fn mode_key(r: &EpisodeResult) -> String {
    match (r.kind, r.route) {
        (EnvKind::Detour, Some(route)) => route.name().to_string(),
        _ if r.order.is_empty() => "none".to_string(),
        _ => r.order.iter().map(|g| g.to_string()).collect::<Vec<_>>().join("-"),
    }
}

/// Aggregates episodes. Every field depends only on the multiset of
/// results, not their order. `demos` adds demonstrator-relative entropy.
pub fn evaluate(results: &[EpisodeResult], kind: EnvKind, demos: Option<&[EpisodeResult]>) -> Result<EvalReport> {
    if results.iter().any(|r| r.kind != kind) {
        return Err(Error::Invalid(format!("results from another environment than {}", kind.name())));
    }
    let max_tasks = match results.first().and_then(|r| r.command.as_ref()) {
        Some(c) => c.len(),
        None => kind.max_tasks(),
    };
    let metrics = success_metrics(results, max_tasks)?;
    let entropy = entropies(results, max_tasks);
    let mut mode_counts = BTreeMap::new();
    for r in results {
        *mode_counts.entry(mode_key(r)).or_insert(0) += 1;
    }
    let (demo_entropy, entropy_ratio) = match demos {
        Some(d) if !d.is_empty() => {
            let de = entropies(d, max_tasks);
            let ratio = match kind {
                EnvKind::FourGoal => match (entropy[max_tasks - 1], de[max_tasks - 1]) {
                    (Some(p), Some(q)) if q > 0.0 => Some(p / q),
                    _ => None,
                },
                EnvKind::Detour => {
                    let demo_routes = success_metrics(d, 1)?.routes;
                    match (&metrics.routes, demo_routes) {
                        (Some(p), Some(q)) if q.entropy > 0.0 => Some(p.entropy / q.entropy),
                        _ => None,
                    }
                }
            };
            (Some(de), ratio)
        }
        _ => (None, None),
    };
    Ok(EvalReport {
        env: kind,
        metrics,
        entropy,
        entropy_convention: "at_least_k".into(),
        demo_entropy,
        entropy_ratio,
        mode_counts,
        rollout: None,
        latency: None,
    })
}

impl EvalReport {
    pub fn with_rollout(mut self, out: &RolloutOutput, cfg: &RolloutConfig) -> Self {
        self.rollout = Some(RolloutInfo {
            mode: cfg.mode.label(),
            seed: cfg.seed,
            conditional: cfg.conditional,
            temperature: cfg.temperature,
            trunk_forwards: out.trunk_forwards,
            env_steps: out.env_steps,
            forwards_per_step: if out.env_steps == 0 { 0.0 } else { out.trunk_forwards as f64 / out.env_steps as f64 },
        });
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
