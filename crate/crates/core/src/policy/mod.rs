//! Stage-2 behavior policy: causal transformer trunk, hierarchical code
//! heads and an offset head.

pub mod config;
pub mod loss;
pub mod net;
pub mod sample;
pub mod train;

pub use config::PolicyConfig;
pub use loss::{code_loss, decode_action, focal_loss, offset_loss, policy_loss, PolicyBatch, PolicyData, PolicyLoss};
pub use net::PolicyNet;
pub use sample::{argmax, build_deadcode_mask, sample_action, sample_codes, tempered_probs, DeadcodeMask, SampledAction};
pub use train::{train_policy, PolicyStepLog, PolicyTrainConfig, PolicyTrainSummary};
