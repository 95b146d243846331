use std::collections::HashMap;

use crate::data::{make_sample, window_indices, GoalMode, TrajectoryDataset, WindowSpec};
use crate::error::{Error, Result};
use crate::numerics::{Binding, Tape, Tensor, Var};
use crate::policy::net::PolicyNet;
use crate::policy::sample::argmax;
use crate::rvq::{CodeTuple, ResidualQuantizer};

/// Focal loss of one logit row: `-(1 - p_t)^gamma * ln p_t`.
pub fn focal_loss(logits: &[f64], target: usize, gamma: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::new(&[1, logits.len()], logits.to_vec())?);
    let l = tape.focal_loss(z, &[target], gamma)?;
    Ok(tape.value(l).item())
}

/// Primary focal term plus `beta` times the secondary focal terms.
/// Returns the loss node and each layer's focal value.
pub fn code_loss(tape: &mut Tape, logits: &[Var], labels: &[CodeTuple], beta: f64, gamma: f64) -> Result<(Var, Vec<f64>)> {
    if logits.is_empty() || labels.iter().any(|l| l.len() != logits.len()) {
        return Err(Error::Invalid(format!("code labels do not have {} layers", logits.len())));
    }
    let mut terms = Vec::with_capacity(logits.len());
    for (i, &z) in logits.iter().enumerate() {
        let targets: Vec<usize> = labels.iter().map(|l| l.0[i]).collect();
        terms.push(tape.focal_loss(z, &targets, gamma)?);
    }
    let values = terms.iter().map(|&t| tape.value(t).item()).collect();
    let mut total = terms[0];
    if terms.len() > 1 {
        let mut secondary = terms[1];
        for &t in &terms[2..] {
            secondary = tape.add(secondary, t)?;
        }
        let weighted = tape.scale(secondary, beta)?;
        total = tape.add(total, weighted)?;
    }
    Ok((total, values))
}

/// Mean absolute error between `a` and `centers + offset`.
pub fn offset_loss(tape: &mut Tape, a: Var, centers: Var, offset: Var) -> Result<Var> {
    let pred = tape.add(centers, offset)?;
    tape.l1(pred, a)
}

/// Decoded chunk for a code tuple; the discrete center the offset refines.
pub fn decode_action(codes: &CodeTuple, q: &ResidualQuantizer) -> Result<Vec<f64>> {
    q.decode_codes(codes)
}

/// Training windows with tokenizer labels, all precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyData {
    pub obs: Vec<f64>,
    pub goals: Option<Vec<f64>>,
    /// Normalized action chunks.
    pub actions: Vec<f64>,
    pub labels: Vec<CodeTuple>,
    /// Chunk decoded from each label, normalized units.
    pub centers: Vec<f64>,
    obs_width: usize,
    goal_width: usize,
    chunk_width: usize,
}

/// A slice of [`PolicyData`] rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyBatch {
    pub size: usize,
    pub obs: Vec<f64>,
    pub goals: Option<Vec<f64>>,
    pub actions: Vec<f64>,
    pub labels: Vec<CodeTuple>,
    pub centers: Vec<f64>,
}

impl PolicyData {
    /// Windows every trajectory, normalizes action chunks with the
    /// tokenizer's stats and labels them with the frozen tokenizer.
    pub fn prepare(ds: &TrajectoryDataset, q: &ResidualQuantizer, net_cfg: &crate::policy::PolicyConfig, goal_mode: GoalMode) -> Result<Self> {
        if ds.obs_dim() != net_cfg.obs_dim || ds.act_dim() != net_cfg.act_dim {
            return Err(Error::Invalid("dataset dimensions do not match the policy config".into()));
        }
        if q.config().act_dim != net_cfg.act_dim || q.config().chunk_len != net_cfg.chunk_len || q.codebook_sizes() != net_cfg.codebook_sizes {
            return Err(Error::Invalid("tokenizer does not match the policy config".into()));
        }
        let stats = q.stats().ok_or_else(|| Error::Invalid("tokenizer has no normalization stats".into()))?;
        let spec = WindowSpec { obs_window: net_cfg.obs_window, chunk_len: net_cfg.chunk_len, goal_window: net_cfg.goal_window, goal_mode };
        spec.validate()?;
        let mut obs = Vec::new();
        let mut goals = (net_cfg.goal_window > 0).then(Vec::new);
        let mut actions = Vec::new();
        for idx in window_indices(ds, net_cfg.chunk_len)? {
            let s = make_sample(ds, &spec, idx);
            obs.extend(s.observations);
            if let (Some(g), Some(sg)) = (goals.as_mut(), s.goal) {
                g.extend(sg);
            }
            let start = actions.len();
            actions.extend(s.actions);
            stats.normalize(&mut actions[start..]);
        }
        let labels = q.tokenize(&actions)?;
        let mut cache: HashMap<CodeTuple, Vec<f64>> = HashMap::new();
        let mut centers = Vec::with_capacity(actions.len());
        for l in &labels {
            if !cache.contains_key(l) {
                cache.insert(l.clone(), decode_action(l, q)?);
            }
            centers.extend_from_slice(&cache[l]);
        }
        Ok(PolicyData {
            obs,
            goals,
            actions,
            labels,
            centers,
            obs_width: net_cfg.obs_window * net_cfg.obs_dim,
            goal_width: net_cfg.goal_window * net_cfg.obs_dim,
            chunk_width: net_cfg.chunk_len * net_cfg.act_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch(&self, rows: &[usize]) -> PolicyBatch {
        let pick = |src: &[f64], w: usize| rows.iter().flat_map(|&r| src[r * w..(r + 1) * w].iter().copied()).collect::<Vec<_>>();
        PolicyBatch {
            size: rows.len(),
            obs: pick(&self.obs, self.obs_width),
            goals: self.goals.as_ref().map(|g| pick(g, self.goal_width)),
            actions: pick(&self.actions, self.chunk_width),
            labels: rows.iter().map(|&r| self.labels[r].clone()).collect(),
            centers: pick(&self.centers, self.chunk_width),
        }
    }
}

/// Loss terms for one batch. `total` is the node to differentiate.
#[derive(Debug, Clone)]
pub struct PolicyLoss {
    pub total: Var,
    pub total_value: f64,
    pub code: f64,
    pub offset: f64,
    pub focal: Vec<f64>,
    /// Fraction of rows whose argmax code equals the label, per layer.
    pub accuracy: Vec<f64>,
}

/// Records `code_loss + offset_weight * offset_loss` for a batch with
/// teacher-forced primary codes and ground-truth centers.
pub fn policy_loss(net: &PolicyNet, tape: &mut Tape, bind: &Binding, batch: &PolicyBatch) -> Result<PolicyLoss> {
    let cfg = net.config();
    let b = batch.size;
    let feat = net.features(tape, bind, &batch.obs, batch.goals.as_deref(), b)?;
    let primary: Vec<usize> = batch.labels.iter().map(|l| l.primary()).collect();
    let logits = net.all_logits(tape, bind, feat, Some(&primary))?;
    let accuracy = logits
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let v = tape.value(z);
            let k = v.shape()[1];
            let hits = (0..b).filter(|&r| argmax(&v.data()[r * k..(r + 1) * k]) == batch.labels[r].0[i]).count();
            hits as f64 / b as f64
        })
        .collect();
    let (code, focal) = code_loss(tape, &logits, &batch.labels, cfg.beta, cfg.gamma)?;
    let width = cfg.chunk_len * cfg.act_dim;
    let a = tape.constant(Tensor::new(&[b, width], batch.actions.clone())?);
    let centers = tape.constant(Tensor::new(&[b, width], batch.centers.clone())?);
    let offset = net.offset(tape, bind, feat, Some(&batch.labels))?;
    let off = offset_loss(tape, a, centers, offset)?;
    let weighted = tape.scale(off, cfg.offset_weight)?;
    let total = tape.add(code, weighted)?;
    let total_value = tape.value(total).item();
    if !total_value.is_finite() {
        return Err(Error::NonFinite("policy loss".into()));
    }
    Ok(PolicyLoss { total, total_value, code: tape.value(code).item(), offset: tape.value(off).item(), focal, accuracy })
}
