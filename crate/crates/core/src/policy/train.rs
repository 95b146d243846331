use log::info;

use crate::error::{Error, Result};
use crate::numerics::optim::cosine_lr;
use crate::numerics::{AdamW, AdamWConfig, SeededRng, Tape};
use crate::policy::loss::{policy_loss, PolicyData};
use crate::policy::net::PolicyNet;
use crate::policy::sample::build_deadcode_mask;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup: usize,
    /// Final learning rate as a fraction of `lr`.
    pub min_lr_frac: f64,
}

impl Default for PolicyTrainConfig {
    fn default() -> Self {
        PolicyTrainConfig { steps: 3000, batch_size: 128, lr: 1e-3, weight_decay: 0.01, warmup: 100, min_lr_frac: 0.05 }
    }
}

impl PolicyTrainConfig {
    /// Optimizer setting for the full-scale trunk and long runs.
    pub fn full_scale() -> Self {
        PolicyTrainConfig { lr: 5.5e-5, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStepLog {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub code: f64,
    pub offset: f64,
    pub focal: Vec<f64>,
    pub accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTrainSummary {
    pub steps: usize,
    pub final_loss: f64,
    pub final_accuracy: Vec<f64>,
}

/// Stage-2 training. Builds and stores the deadcode mask from the
/// training labels when the config enables masking.
pub fn train_policy(
    net: &mut PolicyNet,
    data: &PolicyData,
    cfg: &PolicyTrainConfig,
    rng: &mut SeededRng,
    mut log: impl FnMut(&PolicyStepLog),
) -> Result<PolicyTrainSummary> {
    if data.is_empty() {
        return Err(Error::Invalid("no training windows".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut pos = order.len();
    let mut shuffle_rng = rng.split(1);
    let mut opt = AdamW::new(AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamWConfig::default() }, net.params());
    let mut summary = PolicyTrainSummary { steps: 0, final_loss: f64::NAN, final_accuracy: Vec::new() };
    for step in 0..cfg.steps {
        let mut rows = Vec::with_capacity(cfg.batch_size);
        while rows.len() < cfg.batch_size.min(data.len()) {
            if pos == order.len() {
                shuffle_rng.shuffle(&mut order);
                pos = 0;
            }
            rows.push(order[pos]);
            pos += 1;
        }
        let batch = data.batch(&rows);
        let mut tape = Tape::new();
        let bind = net.params().bind(&mut tape, true);
        let loss = policy_loss(net, &mut tape, &bind, &batch)?;
        tape.backward(loss.total)?;
        let grads = net.params().grads(&tape, &bind);
        let lr = cosine_lr(cfg.lr, step, cfg.steps, cfg.warmup, cfg.min_lr_frac);
        opt.step_with_lr(net.params_mut(), &grads, lr)?;
        if step % 500 == 0 {
            info!("policy step {step}: loss {:.4} code {:.4} offset {:.4} acc {:?}", loss.total_value, loss.code, loss.offset, loss.accuracy);
        }
        summary.steps = step + 1;
        summary.final_loss = loss.total_value;
        summary.final_accuracy.clone_from(&loss.accuracy);
        log(&PolicyStepLog { step, lr, total: loss.total_value, code: loss.code, offset: loss.offset, focal: loss.focal, accuracy: loss.accuracy });
    }
    if net.config().deadcode_mask {
        let sizes = net.config().codebook_sizes.clone();
        net.set_mask(Some(build_deadcode_mask(&sizes, &data.labels)?))?;
    }
    net.reset_forward_count();
    Ok(summary)
}
