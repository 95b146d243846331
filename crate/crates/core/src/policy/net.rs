use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::checkpoint::{read_envelope, read_params_into, write_envelope, write_params};
use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, FormatError, Result};
use crate::numerics::params::trunc_normal;
use crate::numerics::{Activation, Binding, Init, LayerNorm, Linear, Mlp, ParamId, ParamStore, SeededRng, Tape, Tensor, Var};
use crate::policy::config::PolicyConfig;
use crate::policy::sample::DeadcodeMask;
use crate::rvq::CodeTuple;

pub const POLICY_TAG: [u8; 4] = *b"POLI";

/// Pre-norm transformer block.
#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    proj: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl Block {
    fn new(store: &mut ParamStore, name: &str, c: usize, rng: &mut SeededRng) -> Self {
        Block {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), c),
            q: Linear::new(store, &format!("{name}.attn.q"), c, c, Init::Gpt, rng),
            k: Linear::new(store, &format!("{name}.attn.k"), c, c, Init::Gpt, rng),
            v: Linear::new(store, &format!("{name}.attn.v"), c, c, Init::Gpt, rng),
            proj: Linear::new(store, &format!("{name}.attn.proj"), c, c, Init::Gpt, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), c),
            fc1: Linear::new(store, &format!("{name}.mlp.fc1"), c, 4 * c, Init::Gpt, rng),
            fc2: Linear::new(store, &format!("{name}.mlp.fc2"), 4 * c, c, Init::Gpt, rng),
        }
    }

    fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let h = self.ln1.forward(tape, bind, x)?;
        let q = self.q.forward(tape, bind, h)?;
        let k = self.k.forward(tape, bind, h)?;
        let v = self.v.forward(tape, bind, h)?;
        let a = tape.causal_attention(q, k, v, batch, seq, heads)?;
        let a = self.proj.forward(tape, bind, a)?;
        let x = tape.add(x, a)?;
        let h = self.ln2.forward(tape, bind, x)?;
        let m = self.fc1.forward(tape, bind, h)?;
        let m = tape.gelu(m)?;
        let m = self.fc2.forward(tape, bind, m)?;
        tape.add(x, m)
    }
}

/// Causal transformer over `[goal tokens.., observation tokens..]` with
/// per-layer code heads and a continuous offset head.
#[derive(Debug)]
pub struct PolicyNet {
    config: PolicyConfig,
    params: ParamStore,
    obs_embed: Linear,
    goal_embed: Option<Linear>,
    pos: ParamId,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    code_heads: Vec<Mlp>,
    /// Primary-code embedding fed to the secondary heads in autoregressive mode.
    primary_embed: Option<ParamId>,
    /// Per-layer code embeddings fed to the offset head when enabled.
    offset_code_embeds: Vec<ParamId>,
    offset_head: Mlp,
    mask: Option<DeadcodeMask>,
    forwards: AtomicU64,
}

impl Clone for PolicyNet {
    fn clone(&self) -> Self {
        PolicyNet {
            config: self.config.clone(),
            params: self.params.clone(),
            obs_embed: self.obs_embed,
            goal_embed: self.goal_embed,
            pos: self.pos,
            blocks: self.blocks.clone(),
            ln_f: self.ln_f,
            code_heads: self.code_heads.clone(),
            primary_embed: self.primary_embed,
            offset_code_embeds: self.offset_code_embeds.clone(),
            offset_head: self.offset_head.clone(),
            mask: self.mask.clone(),
            forwards: AtomicU64::new(self.forwards.load(Ordering::Relaxed)),
        }
    }
}

impl PolicyNet {
    pub fn new(config: PolicyConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let c = config.embed_dim;
        let mut p = ParamStore::new();
        let obs_embed = Linear::new(&mut p, "embed.obs", config.obs_dim, c, Init::Gpt, rng);
        let goal_embed = (config.goal_window > 0).then(|| Linear::new(&mut p, "embed.goal", config.obs_dim, c, Init::Gpt, rng));
        let pos = p.add("embed.pos", trunc_normal(&[config.context_len(), c], 0.02, rng), false);
        let blocks = (0..config.layers).map(|i| Block::new(&mut p, &format!("block{i}"), c, rng)).collect();
        let ln_f = LayerNorm::new(&mut p, "ln_f", c);

        let k1 = config.codebook_sizes[0];
        let primary_embed = (config.autoregressive_codes && config.codebook_sizes.len() > 1)
            .then(|| p.add("head.primary_embed", trunc_normal(&[k1, c], 0.5, rng), false));
        let mut code_heads = Vec::with_capacity(config.codebook_sizes.len());
        for (i, &k) in config.codebook_sizes.iter().enumerate() {
            let inp = if i > 0 && primary_embed.is_some() { 2 * c } else { c };
            code_heads.push(Mlp::new(&mut p, &format!("head.code{i}"), &[inp, config.head_hidden, k], Activation::Gelu, Init::Kaiming, rng));
        }
        let offset_code_embeds: Vec<ParamId> = if config.offset_uses_codes {
            config
                .codebook_sizes
                .iter()
                .enumerate()
                .map(|(i, &k)| p.add(format!("head.offset_code{i}"), trunc_normal(&[k, c], 0.5, rng), false))
                .collect()
        } else {
            Vec::new()
        };
        let offset_in = c * (1 + offset_code_embeds.len());
        let out = config.chunk_len * config.act_dim;
        let offset_head = Mlp::new(&mut p, "head.offset", &[offset_in, config.head_hidden, out], Activation::Gelu, Init::Kaiming, rng);
        Ok(PolicyNet {
            config,
            params: p,
            obs_embed,
            goal_embed,
            pos,
            blocks,
            ln_f,
            code_heads,
            primary_embed,
            offset_code_embeds,
            offset_head,
            mask: None,
            forwards: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn mask(&self) -> Option<&DeadcodeMask> {
        self.mask.as_ref()
    }

    pub fn set_mask(&mut self, mask: Option<DeadcodeMask>) -> Result<()> {
        if let Some(m) = &mask {
            if m.sizes() != self.config.codebook_sizes.as_slice() {
                return Err(Error::Invalid("deadcode mask does not match the codebook sizes".into()));
            }
        }
        self.mask = mask;
        Ok(())
    }

    /// Trunk evaluations since construction or the last reset.
    pub fn forward_count(&self) -> u64 {
        self.forwards.load(Ordering::Relaxed)
    }

    pub fn reset_forward_count(&self) {
        self.forwards.store(0, Ordering::Relaxed);
    }

    /// Parameters of the last layer of each code head and the offset head,
    /// so tests and ablations can zero them.
    pub fn head_output_layers(&self) -> Vec<Linear> {
        self.code_heads.iter().chain(std::iter::once(&self.offset_head)).map(|m| *m.last()).collect()
    }

    /// Embeds `obs` (`B * h * obs_dim`) and optional `goal` (`B * g * obs_dim`)
    /// into a `[B * (g + h), C]` token matrix, goals first in each sequence,
    /// with positional embeddings added.
    pub fn tokenize_inputs(&self, tape: &mut Tape, bind: &Binding, obs: &[f64], goal: Option<&[f64]>, batch: usize) -> Result<Var> {
        let (od, h, g) = (self.config.obs_dim, self.config.obs_window, self.config.goal_window);
        if batch == 0 || obs.len() != batch * h * od {
            return Err(Error::shape("tokenize_inputs", format!("{} observation values for batch {batch}, h={h}, dim={od}", obs.len())));
        }
        let goal_len = goal.map_or(0, <[f64]>::len);
        if goal_len != batch * g * od {
            return Err(Error::shape("tokenize_inputs", format!("{goal_len} goal values for batch {batch}, g={g}, dim={od}")));
        }
        let obs_in = tape.constant(Tensor::new(&[batch * h, od], obs.to_vec())?);
        let obs_tok = self.obs_embed.forward(tape, bind, obs_in)?;
        let t = g + h;
        let all = match (goal, self.goal_embed) {
            (Some(goal), Some(embed)) if g > 0 => {
                let goal_in = tape.constant(Tensor::new(&[batch * g, od], goal.to_vec())?);
                let goal_tok = embed.forward(tape, bind, goal_in)?;
                let stacked = tape.concat_rows(&[goal_tok, obs_tok])?;
                let order: Vec<usize> =
                    (0..batch).flat_map(|b| (0..t).map(move |p| if p < g { b * g + p } else { batch * g + b * h + (p - g) })).collect();
                tape.gather_rows(stacked, &order)?
            }
            _ => obs_tok,
        };
        let positions: Vec<usize> = (0..batch).flat_map(|_| 0..t).collect();
        let pos = tape.gather_rows(bind.var(self.pos), &positions)?;
        tape.add(all, pos)
    }

    /// Trunk features at every position, `[B * (g + h), C]`.
    pub fn trunk(&self, tape: &mut Tape, bind: &Binding, obs: &[f64], goal: Option<&[f64]>, batch: usize) -> Result<Var> {
        self.forwards.fetch_add(1, Ordering::Relaxed);
        let mut x = self.tokenize_inputs(tape, bind, obs, goal, batch)?;
        let t = self.config.context_len();
        for b in &self.blocks {
            x = b.forward(tape, bind, x, batch, t, self.config.heads)?;
        }
        self.ln_f.forward(tape, bind, x)
    }

    /// Trunk features at the last observation position, `[B, C]`.
    pub fn features(&self, tape: &mut Tape, bind: &Binding, obs: &[f64], goal: Option<&[f64]>, batch: usize) -> Result<Var> {
        let all = self.trunk(tape, bind, obs, goal, batch)?;
        let t = self.config.context_len();
        let last: Vec<usize> = (0..batch).map(|b| b * t + t - 1).collect();
        tape.gather_rows(all, &last)
    }

    /// Logits `[B, k_layer]`. Secondary layers in autoregressive mode need
    /// the primary code of every row.
    pub fn code_logits(&self, tape: &mut Tape, bind: &Binding, feat: Var, layer: usize, primary: Option<&[usize]>) -> Result<Var> {
        let head = self.code_heads.get(layer).ok_or_else(|| Error::Invalid(format!("no code layer {layer}")))?;
        let input = match (layer, self.primary_embed) {
            (0, _) | (_, None) => feat,
            (_, Some(emb)) => {
                let primary = primary.ok_or_else(|| Error::Invalid("autoregressive secondary head needs primary codes".into()))?;
                let e = tape.gather_rows(bind.var(emb), primary)?;
                tape.concat_cols(&[feat, e])?
            }
        };
        head.forward(tape, bind, input)
    }

    /// Logits for every layer; `primary` is used only in autoregressive mode.
    pub fn all_logits(&self, tape: &mut Tape, bind: &Binding, feat: Var, primary: Option<&[usize]>) -> Result<Vec<Var>> {
        (0..self.code_heads.len()).map(|i| self.code_logits(tape, bind, feat, i, primary)).collect()
    }

    /// Offset `[B, n * act_dim]` in normalized action units.
    pub fn offset(&self, tape: &mut Tape, bind: &Binding, feat: Var, codes: Option<&[CodeTuple]>) -> Result<Var> {
        if self.offset_code_embeds.is_empty() {
            return self.offset_head.forward(tape, bind, feat);
        }
        let codes = codes.ok_or_else(|| Error::Invalid("offset head is configured to read codes".into()))?;
        let mut parts = vec![feat];
        for (i, &emb) in self.offset_code_embeds.iter().enumerate() {
            let idx: Vec<usize> = codes.iter().map(|c| c.0[i]).collect();
            parts.push(tape.gather_rows(bind.var(emb), &idx)?);
        }
        let input = tape.concat_cols(&parts)?;
        self.offset_head.forward(tape, bind, input)
    }

    /// Serializes the policy into a `VQB1` container tagged `POLI`.
    ///
    /// Payload: `config text | params | has_mask u8 [n_q u32, k_i u32.., table u8..]`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.str(&self.config.to_text());
        write_params(&mut w, &self.params);
        match &self.mask {
            Some(m) => {
                w.u8(1);
                w.u32(m.sizes().len() as u32);
                for &k in m.sizes() {
                    w.u32(k as u32);
                }
                w.bytes(&m.table().iter().map(|&b| b as u8).collect::<Vec<_>>());
            }
            None => w.u8(0),
        }
        write_envelope(POLICY_TAG, &w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(Self::decode_checkpoint(bytes)?)
    }

    fn decode_checkpoint(bytes: &[u8]) -> Result<Self, FormatError> {
        let invalid = |m: String| FormatError::Invalid(m);
        let payload = read_envelope(bytes, POLICY_TAG)?;
        let mut r = ByteReader::new(payload);
        let config = PolicyConfig::from_text(&r.str()?).map_err(|e| invalid(e.to_string()))?;
        let floats = param_floats(&config).ok_or_else(|| invalid("size overflow".into()))?;
        if floats.saturating_mul(4) > r.remaining() {
            return Err(FormatError::Truncated { needed: r.position().saturating_add(floats.saturating_mul(4)), available: payload.len() });
        }
        let mut net = PolicyNet::new(config, &mut SeededRng::new(0)).map_err(|e| invalid(e.to_string()))?;
        read_params_into(&mut r, &mut net.params)?;
        let mask = match r.u8()? {
            0 => None,
            1 => {
                let n = r.u32()? as usize;
                if n != net.config.codebook_sizes.len() {
                    return Err(invalid("mask layer count differs from config".into()));
                }
                let mut sizes = Vec::with_capacity(n);
                for _ in 0..n {
                    sizes.push(r.u32()? as usize);
                }
                if sizes != net.config.codebook_sizes {
                    return Err(invalid("mask sizes differ from config".into()));
                }
                let total: usize = sizes.iter().product();
                let table: Vec<bool> = r.take(total)?.iter().map(|&b| b != 0).collect();
                Some(DeadcodeMask::from_table(sizes, table).map_err(|e| invalid(e.to_string()))?)
            }
            f => return Err(invalid(format!("bad mask flag {f}"))),
        };
        if r.remaining() != 0 {
            return Err(invalid(format!("{} unread payload bytes", r.remaining())));
        }
        net.mask = mask;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Exact parameter float count a config implies, computed without
/// allocating, so hostile headers cannot trigger huge allocations.
fn param_floats(c: &PolicyConfig) -> Option<usize> {
    let e = c.embed_dim;
    let lin = |i: usize, o: usize| i.checked_mul(o)?.checked_add(o);
    let mlp = |i: usize, o: usize| lin(i, c.head_hidden)?.checked_add(lin(c.head_hidden, o)?);
    let e4 = e.checked_mul(4)?;
    let block = lin(e, e)?.checked_mul(4)?.checked_add(lin(e, e4)?)?.checked_add(lin(e4, e)?)?.checked_add(e4)?;
    let embeds = if c.goal_window > 0 { 2 } else { 1 };
    let mut total = lin(c.obs_dim, e)?.checked_mul(embeds)?;
    total = total.checked_add(c.context_len().checked_mul(e)?)?;
    total = total.checked_add(block.checked_mul(c.layers)?)?.checked_add(e.checked_mul(2)?)?;
    let chained = c.autoregressive_codes && c.codebook_sizes.len() > 1;
    if chained {
        total = total.checked_add(c.codebook_sizes[0].checked_mul(e)?)?;
    }
    for (i, &k) in c.codebook_sizes.iter().enumerate() {
        let inp = if i > 0 && chained { e.checked_mul(2)? } else { e };
        total = total.checked_add(mlp(inp, k)?)?;
        if c.offset_uses_codes {
            total = total.checked_add(k.checked_mul(e)?)?;
        }
    }
    let offset_in = if c.offset_uses_codes { e.checked_mul(c.codebook_sizes.len() + 1)? } else { e };
    total.checked_add(mlp(offset_in, c.chunk_len.checked_mul(c.act_dim)?)?)
}
