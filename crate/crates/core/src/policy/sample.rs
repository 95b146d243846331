use std::collections::BTreeSet;

use log::warn;

use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Tape};
use crate::policy::net::PolicyNet;
use crate::rvq::{CodeTuple, ResidualQuantizer};

const MAX_MASK_ENTRIES: usize = 1 << 24;

/// Which code combinations occurred in the training set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeadcodeMask {
    sizes: Vec<usize>,
    table: Vec<bool>,
}

impl DeadcodeMask {
    pub fn from_table(sizes: Vec<usize>, table: Vec<bool>) -> Result<Self> {
        let total = table_len(&sizes)?;
        if table.len() != total {
            return Err(Error::shape("deadcode_mask", format!("{} entries for sizes {sizes:?}", table.len())));
        }
        if !table.iter().any(|&b| b) {
            return Err(Error::Invalid("deadcode mask allows no combination".into()));
        }
        Ok(DeadcodeMask { sizes, table })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn table(&self) -> &[bool] {
        &self.table
    }

    /// Row-major index of a tuple, last layer fastest.
    pub fn index(&self, codes: &[usize]) -> Option<usize> {
        if codes.len() != self.sizes.len() {
            return None;
        }
        let mut idx = 0;
        for (&c, &k) in codes.iter().zip(&self.sizes) {
            if c >= k {
                return None;
            }
            idx = idx * k + c;
        }
        Some(idx)
    }

    pub fn allows(&self, codes: &[usize]) -> bool {
        self.index(codes).is_some_and(|i| self.table[i])
    }

    pub fn allowed_count(&self) -> usize {
        self.table.iter().filter(|&&b| b).count()
    }

    fn tuple(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.sizes.len()];
        for (slot, &k) in out.iter_mut().zip(&self.sizes).rev() {
            *slot = idx % k;
            idx /= k;
        }
        out
    }
}

fn table_len(sizes: &[usize]) -> Result<usize> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::Invalid("mask needs at least one layer with k >= 1".into()));
    }
    sizes
        .iter()
        .try_fold(1usize, |acc, &k| acc.checked_mul(k))
        .filter(|&n| n <= MAX_MASK_ENTRIES)
        .ok_or_else(|| Error::Invalid(format!("code table {sizes:?} is too large to mask")))
}

/// Mask that is true exactly on the observed tuples.
pub fn build_deadcode_mask(sizes: &[usize], observed: &[CodeTuple]) -> Result<DeadcodeMask> {
    if observed.is_empty() {
        return Err(Error::Invalid("no code tuples to build a mask from".into()));
    }
    let mut table = vec![false; table_len(sizes)?];
    let probe = DeadcodeMask { sizes: sizes.to_vec(), table: Vec::new() };
    for t in observed {
        let i = probe.index(&t.0).ok_or_else(|| Error::Invalid(format!("tuple {:?} does not fit sizes {sizes:?}", t.0)))?;
        table[i] = true;
    }
    DeadcodeMask::from_table(sizes.to_vec(), table)
}

/// `softmax(logits / temperature)`; temperature 0 puts all mass on the
/// first maximal logit.
pub fn tempered_probs(logits: &[f64], temperature: f64) -> Vec<f64> {
    if temperature == 0.0 {
        let best = argmax(logits);
        return (0..logits.len()).map(|i| if i == best { 1.0 } else { 0.0 }).collect();
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|&z| ((z - max) / temperature).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// Index of the first maximal entry.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Draws one code per layer from independent per-layer logits. With a mask,
/// the joint distribution is restricted to allowed combinations and
/// renormalized; if that leaves no mass the mask is ignored with a warning.
pub fn sample_codes(logits: &[Vec<f64>], temperature: f64, mask: Option<&DeadcodeMask>, rng: &mut SeededRng) -> Result<CodeTuple> {
    let Some(mask) = mask else {
        return logits.iter().map(|l| draw(&tempered_probs(l, temperature), temperature, rng)).collect::<Result<Vec<_>>>().map(CodeTuple);
    };
    if mask.sizes.len() != logits.len() || mask.sizes.iter().zip(logits).any(|(&k, l)| k != l.len()) {
        return Err(Error::Invalid("mask does not match the logit layers".into()));
    }
    if temperature == 0.0 {
        // argmax of the joint log-probability over allowed tuples
        let logp: Vec<Vec<f64>> = logits.iter().map(|l| log_softmax(l)).collect();
        let mut best: Option<(f64, usize)> = None;
        for (i, _) in mask.table.iter().enumerate().filter(|(_, &ok)| ok) {
            let score: f64 = mask.tuple(i).iter().zip(&logp).map(|(&c, lp)| lp[c]).sum();
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, i));
            }
        }
        return Ok(CodeTuple(mask.tuple(best.expect("mask allows a tuple").1)));
    }
    let probs: Vec<Vec<f64>> = logits.iter().map(|l| tempered_probs(l, temperature)).collect();
    let joint: Vec<f64> =
        mask.table.iter().enumerate().map(|(i, &ok)| if ok { mask.tuple(i).iter().zip(&probs).map(|(&c, p)| p[c]).product() } else { 0.0 }).collect();
    if joint.iter().sum::<f64>() > 0.0 {
        return Ok(CodeTuple(mask.tuple(rng.weighted(&joint)?)));
    }
    warn!("deadcode mask removed all probability mass; sampling unmasked");
    sample_codes(logits, temperature, None, rng)
}

fn draw(probs: &[f64], temperature: f64, rng: &mut SeededRng) -> Result<usize> {
    if temperature == 0.0 {
        return Ok(argmax(probs));
    }
    rng.weighted(probs)
}

fn log_softmax(l: &[f64]) -> Vec<f64> {
    let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + l.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    l.iter().map(|&z| z - lse).collect()
}

/// One sampled action chunk with the codes behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledAction {
    /// `n * act_dim` values in environment units.
    pub chunk: Vec<f64>,
    pub codes: CodeTuple,
}

/// Tuple-level restriction used in autoregressive mode: the primary code is
/// drawn among codes with at least one allowed completion, the rest among
/// completions allowed for that primary code.
fn autoregressive_codes(
    net: &PolicyNet,
    tape: &mut Tape,
    bind: &crate::numerics::Binding,
    feat: crate::numerics::Var,
    temperature: f64,
    mask: Option<&DeadcodeMask>,
    rng: &mut SeededRng,
) -> Result<CodeTuple> {
    let l0 = net.code_logits(tape, bind, feat, 0, None)?;
    let primary_logits = tape.value(l0).data().to_vec();
    let k0 = primary_logits.len();
    let primary_mask = mask.and_then(|m| {
        let rest = m.table.len() / k0;
        let table: Vec<bool> = (0..k0).map(|c| m.table[c * rest..(c + 1) * rest].iter().any(|&b| b)).collect();
        DeadcodeMask::from_table(vec![k0], table).ok()
    });
    let primary = sample_codes(&[primary_logits], temperature, primary_mask.as_ref(), rng)?.0[0];
    let mut rest_logits = Vec::new();
    for layer in 1..net.config().codebook_sizes.len() {
        let l = net.code_logits(tape, bind, feat, layer, Some(&[primary]))?;
        rest_logits.push(tape.value(l).data().to_vec());
    }
    let rest_mask = mask.and_then(|m| {
        let rest = m.table.len() / k0;
        DeadcodeMask::from_table(m.sizes[1..].to_vec(), m.table[primary * rest..(primary + 1) * rest].to_vec()).ok()
    });
    let rest = if rest_logits.is_empty() { Vec::new() } else { sample_codes(&rest_logits, temperature, rest_mask.as_ref(), rng)?.0 };
    Ok(CodeTuple(std::iter::once(primary).chain(rest).collect()))
}

/// One trunk forward, code sampling, and decoding to an action chunk in
/// environment units. A mask stored on the net always applies; training
/// installs one only when the config enables masking.
pub fn sample_action(
    net: &PolicyNet,
    q: &ResidualQuantizer,
    obs: &[f64],
    goal: Option<&[f64]>,
    temperature: f64,
    rng: &mut SeededRng,
) -> Result<SampledAction> {
    let cfg = net.config();
    if q.codebook_sizes() != cfg.codebook_sizes || q.config().act_dim != cfg.act_dim || q.config().chunk_len != cfg.chunk_len {
        return Err(Error::Invalid("tokenizer and policy disagree on codebooks or action shape".into()));
    }
    let mask = net.mask();
    let mut tape = Tape::new();
    let bind = net.params().bind(&mut tape, false);
    let feat = net.features(&mut tape, &bind, obs, goal, 1)?;
    let codes = if cfg.autoregressive_codes {
        autoregressive_codes(net, &mut tape, &bind, feat, temperature, mask, rng)?
    } else {
        let logits = net.all_logits(&mut tape, &bind, feat, None)?;
        let logits: Vec<Vec<f64>> = logits.iter().map(|&l| tape.value(l).data().to_vec()).collect();
        sample_codes(&logits, temperature, mask, rng)?
    };
    let offset = net.offset(&mut tape, &bind, feat, Some(std::slice::from_ref(&codes)))?;
    let mut chunk = q.decode_codes(&codes)?;
    for (c, o) in chunk.iter_mut().zip(tape.value(offset).data()) {
        *c += o;
    }
    let chunk = crate::data::denormalize(&chunk, q.stats())?;
    if chunk.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sampled action".into()));
    }
    Ok(SampledAction { chunk, codes })
}

/// Distinct tuples in a list, sorted.
pub fn distinct_tuples(codes: &[CodeTuple]) -> BTreeSet<CodeTuple> {
    codes.iter().cloned().collect()
}
