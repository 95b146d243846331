use log::{debug, info};

use crate::data::{window_indices, ActionStats, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::numerics::optim::cosine_lr;
use crate::numerics::{AdamW, AdamWConfig, SeededRng, Tape, Tensor};
use crate::rvq::kmeans::kmeans_fit;
use crate::rvq::quantizer::ResidualQuantizer;

#[derive(Debug, Clone, PartialEq)]
pub struct RvqTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup: usize,
    pub kmeans_iters: usize,
    pub dead_code_reset: bool,
    pub dead_code_threshold: f64,
    /// Minimum steps between resets; never more often than once per epoch.
    pub reset_interval: usize,
}

impl Default for RvqTrainConfig {
    fn default() -> Self {
        RvqTrainConfig {
            steps: 2000,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 1e-4,
            warmup: 50,
            kmeans_iters: 25,
            dead_code_reset: true,
            dead_code_threshold: 1.0,
            reset_interval: 100,
        }
    }
}

/// Per-step training record.
#[derive(Debug, Clone, PartialEq)]
pub struct RvqStepLog {
    pub step: usize,
    pub lr: f64,
    pub recon: f64,
    pub embed: f64,
    pub commit: f64,
    pub total: f64,
    pub resets: usize,
    /// Per-layer fraction of codes chosen during the epoch that this step
    /// completes; `None` on other steps.
    pub epoch_utilization: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RvqTrainSummary {
    pub steps: usize,
    pub final_recon: f64,
    pub total_resets: usize,
}

/// Every length-`n` action chunk of the dataset, normalized and flattened
/// row by row, plus the stats used.
pub fn action_chunks(ds: &TrajectoryDataset, chunk_len: usize) -> Result<(Vec<f64>, ActionStats)> {
    let stats = ds.action_stats();
    let mut out = Vec::new();
    for idx in window_indices(ds, chunk_len)? {
        let start = out.len();
        for t in idx.t..idx.t + chunk_len {
            out.extend(ds.action(idx.traj, t).iter().map(|&v| v as f64));
        }
        stats.normalize(&mut out[start..]);
    }
    Ok((out, stats))
}

/// Endless stream of shuffled epochs over `n` row indices.
struct Batches {
    order: Vec<usize>,
    pos: usize,
    epoch: usize,
}

impl Batches {
    fn new(n: usize) -> Self {
        Batches { order: (0..n).collect(), pos: n, epoch: 0 }
    }

    fn next(&mut self, size: usize, rng: &mut SeededRng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                rng.shuffle(&mut self.order);
                self.pos = 0;
                self.epoch += 1;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn gather(chunks: &[f64], width: usize, rows: &[usize]) -> Vec<f64> {
    rows.iter().flat_map(|&r| chunks[r * width..(r + 1) * width].iter().copied()).collect()
}

/// Seeds every codebook layer by k-means on the batch's encoder outputs
/// (layer 1) and on the running residuals (later layers).
pub fn init_codebooks(q: &mut ResidualQuantizer, batch: &[f64], iters: usize, rng: &mut SeededRng) -> Result<()> {
    let d = q.latent_dim();
    let mut residual = q.encode(batch)?;
    for i in 0..q.num_layers() {
        let k = q.layers()[i].k();
        let km = kmeans_fit(&residual, d, k, iters, rng)?;
        q.layers_mut()[i].seed(&km.centroids, &km.counts)?;
        for row in residual.chunks_exact_mut(d) {
            let c = q.layers()[i].nearest(row);
            for (v, e) in row.iter_mut().zip(q.layers()[i].embedding(c)) {
                *v -= e;
            }
        }
    }
    q.mark_initialized();
    Ok(())
}

/// Stage-1 training on normalized flattened chunks. `log` sees every step.
pub fn train_rvq(
    q: &mut ResidualQuantizer,
    chunks: &[f64],
    cfg: &RvqTrainConfig,
    rng: &mut SeededRng,
    mut log: impl FnMut(&RvqStepLog),
) -> Result<RvqTrainSummary> {
    let width = q.config().input_dim();
    if chunks.is_empty() || !chunks.len().is_multiple_of(width) {
        return Err(Error::shape("train_rvq", format!("chunk buffer of {} values for width {width}", chunks.len())));
    }
    let max_k = q.codebook_sizes().into_iter().max().unwrap_or(1);
    if cfg.batch_size < max_k {
        return Err(Error::Config(format!("batch_size {} is smaller than the largest codebook ({max_k})", cfg.batch_size)));
    }
    let n = chunks.len() / width;
    let steps_per_epoch = n.div_ceil(cfg.batch_size).max(1);
    let reset_every = cfg.reset_interval.max(steps_per_epoch).max(1);
    let mut shuffle_rng = rng.split(1);
    let mut reset_rng = rng.split(2);
    let mut init_rng = rng.split(3);
    let mut batches = Batches::new(n);
    let mut opt = AdamW::new(AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamWConfig::default() }, q.params());
    let mut summary = RvqTrainSummary { steps: 0, final_recon: f64::NAN, total_resets: 0 };
    let mut used: Vec<Vec<bool>> = q.codebook_sizes().iter().map(|&k| vec![false; k]).collect();

    for step in 0..cfg.steps {
        let rows = batches.next(cfg.batch_size, &mut shuffle_rng);
        let batch = gather(chunks, width, &rows);
        if !q.is_initialized() {
            init_codebooks(q, &batch, cfg.kmeans_iters, &mut init_rng)?;
        }
        let a = Tensor::new(&[rows.len(), width], batch)?;
        let mut tape = Tape::new();
        let bind = q.params().bind(&mut tape, true);
        let loss = q.loss(&mut tape, &bind, &a, None)?;
        tape.backward(loss.total)?;
        let grads = q.params().grads(&tape, &bind);
        let lr = cosine_lr(cfg.lr, step, cfg.steps, cfg.warmup, 0.1);
        opt.step_with_lr(q.params_mut(), &grads, lr)?;

        for i in 0..q.num_layers() {
            let codes: Vec<usize> = loss.assignment.codes.iter().map(|c| c.0[i]).collect();
            q.layers_mut()[i].ema_update(&loss.layer_inputs[i], &codes)?;
        }
        let mut resets = 0;
        if cfg.dead_code_reset && (step + 1) % reset_every == 0 {
            for i in 0..q.num_layers() {
                let dead = q.layers_mut()[i].reset_dead_codes(&loss.layer_inputs[i], cfg.dead_code_threshold, &mut reset_rng)?;
                if !dead.is_empty() {
                    debug!("step {step}: reset {} dead codes in layer {i}", dead.len());
                }
                resets += dead.len();
            }
        }
        for codes in &loss.assignment.codes {
            for (layer, &c) in codes.0.iter().enumerate() {
                used[layer][c] = true;
            }
        }
        let epoch_utilization = ((step + 1) % steps_per_epoch == 0 || step + 1 == cfg.steps).then(|| {
            used.iter_mut()
                .map(|u| {
                    let frac = u.iter().filter(|&&b| b).count() as f64 / u.len() as f64;
                    u.fill(false);
                    frac
                })
                .collect()
        });
        summary.total_resets += resets;
        summary.steps = step + 1;
        summary.final_recon = loss.recon;
        log(&RvqStepLog { step, lr, recon: loss.recon, embed: loss.embed, commit: loss.commit, total: loss.total_value, resets, epoch_utilization });
        if step % 500 == 0 {
            info!("rvq step {step}: recon {:.5} commit {:.5}", loss.recon, loss.commit);
        }
    }
    Ok(summary)
}

/// Fraction of each layer's codes chosen by at least one chunk.
pub fn codebook_utilization(q: &ResidualQuantizer, chunks: &[f64]) -> Result<Vec<f64>> {
    let mut used: Vec<Vec<bool>> = q.codebook_sizes().iter().map(|&k| vec![false; k]).collect();
    for codes in q.tokenize(chunks)? {
        for (layer, &c) in codes.0.iter().enumerate() {
            used[layer][c] = true;
        }
    }
    Ok(used.iter().map(|u| u.iter().filter(|&&b| b).count() as f64 / u.len() as f64).collect())
}

/// Mean L1 reconstruction error of the tokenizer over all chunks.
pub fn reconstruction_error(q: &ResidualQuantizer, chunks: &[f64]) -> Result<f64> {
    let rec = q.reconstruct(chunks)?;
    Ok(rec.iter().zip(chunks).map(|(a, b)| (a - b).abs()).sum::<f64>() / chunks.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rvq::quantizer::RvqConfig;

    #[test]
    fn batches_cover_each_epoch() {
        let mut b = Batches::new(5);
        let mut rng = SeededRng::new(0);
        let mut first: Vec<usize> = b.next(5, &mut rng);
        first.sort();
        assert_eq!(first, vec![0, 1, 2, 3, 4]);
        assert_eq!(b.next(12, &mut rng).len(), 12);
    }

    #[test]
    fn single_chunk_is_memorized() {
        let cfg = RvqConfig { latent_dim: 8, hidden: 32, codebook_sizes: vec![4, 4], ..RvqConfig::desk(2, 2) };
        let mut rng = SeededRng::new(11);
        let mut q = ResidualQuantizer::new(cfg, &mut rng).unwrap();
        let chunk = vec![0.4, -0.7, 0.1, 0.9];
        let tc = RvqTrainConfig { steps: 2000, batch_size: 8, ..RvqTrainConfig::default() };
        let mut curve = Vec::new();
        train_rvq(&mut q, &chunk, &tc, &mut rng, |l| curve.push(l.recon)).unwrap();
        let err = reconstruction_error(&q, &chunk).unwrap();
        assert!(err <= 1e-2, "L1 {err}; curve tail {:?}", &curve[curve.len() - 5..]);
    }

    #[test]
    fn too_small_batch_is_a_config_error() {
        let mut rng = SeededRng::new(0);
        let mut q = ResidualQuantizer::new(RvqConfig::desk(1, 1), &mut rng).unwrap();
        let tc = RvqTrainConfig { batch_size: 2, ..RvqTrainConfig::default() };
        assert!(matches!(train_rvq(&mut q, &[0.5; 4], &tc, &mut rng, |_| {}), Err(Error::Config(_))));
    }
}
