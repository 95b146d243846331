//! Two-stage training from a demonstration dataset to a frozen bundle.

use log::info;

use crate::data::{GoalMode, TrajectoryDataset};
use crate::error::Result;
use crate::eval::PolicyBundle;
use crate::numerics::SeededRng;
use crate::policy::{train_policy, PolicyConfig, PolicyData, PolicyNet, PolicyStepLog, PolicyTrainConfig};
use crate::rvq::{action_chunks, train_rvq, ResidualQuantizer, RvqConfig, RvqStepLog, RvqTrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub rvq: RvqConfig,
    pub rvq_train: RvqTrainConfig,
    pub policy: PolicyConfig,
    pub policy_train: PolicyTrainConfig,
    pub goal_mode: GoalMode,
}

/// Stage 1: fits the tokenizer on normalized action chunks.
pub fn fit_tokenizer(
    ds: &TrajectoryDataset,
    cfg: &RvqConfig,
    train: &RvqTrainConfig,
    rng: &mut SeededRng,
    log: impl FnMut(&RvqStepLog),
) -> Result<ResidualQuantizer> {
    let (chunks, stats) = action_chunks(ds, cfg.chunk_len)?;
    let mut q = ResidualQuantizer::new(cfg.clone(), &mut rng.split(1))?;
    q.set_stats(stats)?;
    let summary = train_rvq(&mut q, &chunks, train, &mut rng.split(2), log)?;
    info!("tokenizer trained: {} steps, final recon {:.5}", summary.steps, summary.final_recon);
    Ok(q)
}

/// Stage 2: fits the policy against a frozen tokenizer.
pub fn fit_policy(
    ds: &TrajectoryDataset,
    q: &ResidualQuantizer,
    cfg: &PolicyConfig,
    train: &PolicyTrainConfig,
    goal_mode: GoalMode,
    rng: &mut SeededRng,
    log: impl FnMut(&PolicyStepLog),
) -> Result<PolicyNet> {
    let data = PolicyData::prepare(ds, q, cfg, goal_mode)?;
    let mut net = PolicyNet::new(cfg.clone(), &mut rng.split(3))?;
    let summary = train_policy(&mut net, &data, train, &mut rng.split(4), log)?;
    info!("policy trained: {} steps, final loss {:.4}, accuracy {:?}", summary.steps, summary.final_loss, summary.final_accuracy);
    Ok(net)
}

/// Both stages with one seed.
pub fn train_bundle(ds: &TrajectoryDataset, cfg: &PipelineConfig, seed: u64) -> Result<PolicyBundle> {
    let mut rng = SeededRng::new(seed);
    let q = fit_tokenizer(ds, &cfg.rvq, &cfg.rvq_train, &mut rng, |_| {})?;
    let net = fit_policy(ds, &q, &cfg.policy, &cfg.policy_train, cfg.goal_mode, &mut rng, |_| {})?;
    PolicyBundle::new(net, q)
}
