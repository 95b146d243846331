use std::path::Path;

use crate::checkpoint::{expected_floats, read_envelope, read_params_into, write_envelope, write_params};
use crate::codec::{ByteReader, ByteWriter};
use crate::data::ActionStats;
use crate::error::{Error, FormatError, Result};
use crate::numerics::{Activation, Binding, Init, Mlp, ParamStore, SeededRng, Tape, Tensor, Var};
use crate::rvq::codebook::{CodebookLayer, LayerAssignment, DEFAULT_EMA_DECAY, DEFAULT_EMA_EPS};

pub const RVQ_TAG: [u8; 4] = *b"RVQT";

/// Tokenizer hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RvqConfig {
    pub act_dim: usize,
    pub chunk_len: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    /// Hidden layers in each of the encoder and decoder; 0 makes both a
    /// single linear map.
    pub depth: usize,
    /// One entry per quantizer layer; the first is the primary layer.
    pub codebook_sizes: Vec<usize>,
    pub lambda_commit: f64,
    pub ema_decay: f64,
    pub ema_eps: f64,
}

impl RvqConfig {
    /// Desk-scale defaults: two layers of 8 codes, 32-wide latent.
    pub fn desk(act_dim: usize, chunk_len: usize) -> Self {
        RvqConfig {
            act_dim,
            chunk_len,
            latent_dim: 32,
            hidden: 128,
            depth: 2,
            codebook_sizes: vec![8, 8],
            lambda_commit: 1.0,
            ema_decay: DEFAULT_EMA_DECAY,
            ema_eps: DEFAULT_EMA_EPS,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.act_dim * self.chunk_len
    }

    pub fn validate(&self) -> Result<()> {
        if self.act_dim == 0 || self.chunk_len == 0 || self.latent_dim == 0 {
            return Err(Error::Config("act_dim, chunk_len and latent_dim must be positive".into()));
        }
        if self.depth > 0 && self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if self.codebook_sizes.is_empty() || self.codebook_sizes.contains(&0) {
            return Err(Error::Config("need at least one codebook layer, each with k >= 1".into()));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) || self.ema_eps.is_nan() || self.ema_eps <= 0.0 {
            return Err(Error::Config("ema decay must lie in (0,1) and eps must be positive".into()));
        }
        if !self.lambda_commit.is_finite() || self.lambda_commit < 0.0 {
            return Err(Error::Config("lambda_commit must be finite and nonnegative".into()));
        }
        Ok(())
    }

    fn widths(&self, from: usize, to: usize) -> Vec<usize> {
        let mut w = vec![from];
        w.extend(std::iter::repeat_n(self.hidden, self.depth));
        w.push(to);
        w
    }
}

/// Chosen code per quantizer layer; index 0 is the primary code.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CodeTuple(pub Vec<usize>);

impl CodeTuple {
    pub fn primary(&self) -> usize {
        self.0[0]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub codes: CodeTuple,
    pub zq: Vec<f64>,
    pub per_layer: Vec<LayerAssignment>,
}

/// Codes chosen for a batch, held fixed so the loss can be evaluated as a
/// smooth function of the encoder and decoder weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub codes: Vec<CodeTuple>,
    /// `z_q - x` per row, the constant shift the straight-through path adds.
    pub shift: Vec<f64>,
}

/// Loss terms of one tokenizer step. `total` is the only node to
/// differentiate; the scalar fields are copies for logging.
#[derive(Debug, Clone)]
pub struct RvqLoss {
    pub total: Var,
    pub recon: f64,
    pub embed: f64,
    pub commit: f64,
    pub total_value: f64,
    /// Codebook tensors recorded as gradient-tracking leaves.
    pub codebooks: Vec<Var>,
    pub assignment: Assignment,
    /// Encoder output per row (`B * d`).
    pub latents: Vec<f64>,
    /// Input each layer quantized, per layer (`B * d` each).
    pub layer_inputs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ResidualQuantizer {
    config: RvqConfig,
    params: ParamStore,
    encoder: Mlp,
    decoder: Mlp,
    layers: Vec<CodebookLayer>,
    stats: Option<ActionStats>,
    initialized: bool,
}

impl ResidualQuantizer {
    pub fn new(config: RvqConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let (inp, d) = (config.input_dim(), config.latent_dim);
        let encoder = Mlp::new(&mut params, "encoder", &config.widths(inp, d), Activation::Relu, Init::Kaiming, rng);
        let decoder = Mlp::new(&mut params, "decoder", &config.widths(d, inp), Activation::Relu, Init::Kaiming, rng);
        let mut layers = Vec::with_capacity(config.codebook_sizes.len());
        for &k in &config.codebook_sizes {
            let init: Vec<f64> = (0..k * d).map(|_| 0.1 * rng.normal()).collect();
            layers.push(CodebookLayer::from_embeddings(k, d, init, config.ema_decay, config.ema_eps)?);
        }
        Ok(ResidualQuantizer { config, params, encoder, decoder, layers, stats: None, initialized: false })
    }

    pub fn config(&self) -> &RvqConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn layers(&self) -> &[CodebookLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [CodebookLayer] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn codebook_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.k()).collect()
    }

    pub fn stats(&self) -> Option<&ActionStats> {
        self.stats.as_ref()
    }

    pub fn set_stats(&mut self, stats: ActionStats) -> Result<()> {
        if !stats.is_valid() || stats.dim() != self.config.act_dim {
            return Err(Error::Invalid("normalization stats do not match the action dimension".into()));
        }
        self.stats = Some(stats);
        Ok(())
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub(crate) fn mark_initialized(&mut self) {
        self.initialized = true;
    }

    pub fn encode_var(&self, tape: &mut Tape, bind: &Binding, a: Var) -> Result<Var> {
        let width = tape.value(a).shape().last().copied().unwrap_or(0);
        if width != self.config.input_dim() {
            return Err(Error::shape("encode", format!("input width {width}, expected {}", self.config.input_dim())));
        }
        self.encoder.forward(tape, bind, a)
    }

    pub fn decode_var(&self, tape: &mut Tape, bind: &Binding, zq: Var) -> Result<Var> {
        let width = tape.value(zq).shape().last().copied().unwrap_or(0);
        if width != self.config.latent_dim {
            return Err(Error::shape("decode", format!("latent width {width}, expected {}", self.config.latent_dim)));
        }
        self.decoder.forward(tape, bind, zq)
    }

    fn run_frozen(&self, rows: &[f64], width: usize, f: impl FnOnce(&Self, &mut Tape, &Binding, Var) -> Result<Var>) -> Result<Vec<f64>> {
        if rows.is_empty() || !rows.len().is_multiple_of(width) {
            return Err(Error::shape("tokenizer", format!("{} values is not a whole number of {width}-wide rows", rows.len())));
        }
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape, false);
        let x = tape.constant(Tensor::new(&[rows.len() / width, width], rows.to_vec())?);
        let y = f(self, &mut tape, &bind, x)?;
        Ok(tape.value(y).data().to_vec())
    }

    /// Encodes a batch of flattened normalized chunks (`B * n * act_dim`).
    pub fn encode(&self, chunks: &[f64]) -> Result<Vec<f64>> {
        self.run_frozen(chunks, self.config.input_dim(), |q, t, b, x| q.encode_var(t, b, x))
    }

    /// Decodes a batch of latents (`B * d`).
    pub fn decode(&self, zq: &[f64]) -> Result<Vec<f64>> {
        self.run_frozen(zq, self.config.latent_dim, |q, t, b, x| q.decode_var(t, b, x))
    }

    pub fn residual_quantize(&self, x: &[f64]) -> Result<Quantized> {
        if x.len() != self.config.latent_dim {
            return Err(Error::shape("residual_quantize", format!("latent of {} for d={}", x.len(), self.config.latent_dim)));
        }
        let mut residual = x.to_vec();
        let mut zq = vec![0.0; x.len()];
        let mut codes = Vec::with_capacity(self.layers.len());
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let a = layer.quantize(&residual)?;
            for (z, e) in zq.iter_mut().zip(&a.embedding) {
                *z += e;
            }
            codes.push(a.code);
            residual.clone_from(&a.residual);
            per_layer.push(a);
        }
        Ok(Quantized { codes: CodeTuple(codes), zq, per_layer })
    }

    /// Sum of the embeddings a code tuple selects.
    pub fn codes_to_latent(&self, codes: &CodeTuple) -> Result<Vec<f64>> {
        if codes.len() != self.layers.len() {
            return Err(Error::Invalid(format!("code tuple has {} entries for {} layers", codes.len(), self.layers.len())));
        }
        let mut z = vec![0.0; self.config.latent_dim];
        for (layer, &c) in self.layers.iter().zip(&codes.0) {
            if c >= layer.k() {
                return Err(Error::Invalid(format!("code {c} out of range 0..{}", layer.k())));
            }
            for (zi, e) in z.iter_mut().zip(layer.embedding(c)) {
                *zi += e;
            }
        }
        Ok(z)
    }

    /// Normalized chunk decoded from a code tuple.
    pub fn decode_codes(&self, codes: &CodeTuple) -> Result<Vec<f64>> {
        self.decode(&self.codes_to_latent(codes)?)
    }

    /// Code tuple for each row of a batch of normalized chunks.
    pub fn tokenize(&self, chunks: &[f64]) -> Result<Vec<CodeTuple>> {
        let d = self.config.latent_dim;
        self.encode(chunks)?.chunks_exact(d).map(|x| Ok(self.residual_quantize(x)?.codes)).collect()
    }

    /// Full encode, quantize, decode pass on a batch of normalized chunks.
    pub fn reconstruct(&self, chunks: &[f64]) -> Result<Vec<f64>> {
        let d = self.config.latent_dim;
        let mut zq = Vec::with_capacity(chunks.len());
        for x in self.encode(chunks)?.chunks_exact(d) {
            zq.extend(self.residual_quantize(x)?.zq);
        }
        self.decode(&zq)
    }

    /// Codes and straight-through shift for a batch under the current weights.
    pub fn assign(&self, chunks: &[f64]) -> Result<Assignment> {
        let d = self.config.latent_dim;
        let x = self.encode(chunks)?;
        let mut codes = Vec::new();
        let mut shift = Vec::with_capacity(x.len());
        for row in x.chunks_exact(d) {
            let q = self.residual_quantize(row)?;
            shift.extend(q.zq.iter().zip(row).map(|(z, v)| z - v));
            codes.push(q.codes);
        }
        Ok(Assignment { codes, shift })
    }

    /// Records the tokenizer loss for a batch `a: [B, n*act_dim]` on `tape`.
    ///
    /// With `frozen = None` the codes come from quantizing the current
    /// encoder output. Passing an [`Assignment`] keeps codes and the
    /// straight-through shift fixed instead.
    pub fn loss(&self, tape: &mut Tape, bind: &Binding, a: &Tensor, frozen: Option<&Assignment>) -> Result<RvqLoss> {
        let (rows, _) = a.matrix_dims();
        let d = self.config.latent_dim;
        let target = tape.constant(a.clone());
        let x = self.encode_var(tape, bind, target)?;
        let latents = tape.value(x).data().to_vec();

        let assignment = match frozen {
            Some(f) => {
                if f.codes.len() != rows || f.shift.len() != rows * d {
                    return Err(Error::shape("rvq_loss", "frozen assignment does not match the batch"));
                }
                f.clone()
            }
            None => {
                let mut codes = Vec::with_capacity(rows);
                let mut shift = Vec::with_capacity(rows * d);
                for row in latents.chunks_exact(d) {
                    let q = self.residual_quantize(row)?;
                    shift.extend(q.zq.iter().zip(row).map(|(z, v)| z - v));
                    codes.push(q.codes);
                }
                Assignment { codes, shift }
            }
        };

        let mut codebooks = Vec::with_capacity(self.layers.len());
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut prefix = vec![0.0; rows * d];
        let mut commit_terms = Vec::with_capacity(self.layers.len());
        let mut embed = 0.0;
        for (i, layer) in self.layers.iter().enumerate() {
            let cb = tape.leaf(Tensor::new(&[layer.k(), d], layer.embeddings().to_vec())?.tracked());
            codebooks.push(cb);
            let idx: Vec<usize> = assignment.codes.iter().map(|c| c.0[i]).collect();
            let e = tape.gather_rows(cb, &idx)?;
            let e_sg = tape.stop_gradient(e);
            let before = tape.constant(Tensor::new(&[rows, d], prefix.clone())?);
            let r = tape.sub(x, before)?;
            layer_inputs.push(tape.value(r).data().to_vec());
            // The embedding term moves codebooks only through EMA, so both
            // sides are detached and it enters the total as a constant.
            let r_sg = tape.stop_gradient(r);
            let emb = tape.l2sq(r_sg, e_sg)?;
            embed += tape.value(emb).item();
            commit_terms.push(tape.l2sq(r, e_sg)?);
            for (p, v) in prefix.iter_mut().zip(tape.value(e).data()) {
                *p += v;
            }
        }

        let shift = tape.constant(Tensor::new(&[rows, d], assignment.shift.clone())?);
        let zq_st = tape.add(x, shift)?;
        let out = self.decode_var(tape, bind, zq_st)?;
        let recon = tape.l1(out, target)?;

        let mut commit = commit_terms[0];
        for &c in &commit_terms[1..] {
            commit = tape.add(commit, c)?;
        }
        let commit_value = tape.value(commit).item();
        let weighted = tape.scale(commit, self.config.lambda_commit)?;
        let embed_node = tape.constant(Tensor::scalar(embed));
        let partial = tape.add(recon, embed_node)?;
        let total = tape.add(partial, weighted)?;
        let total_value = tape.value(total).item();
        if !total_value.is_finite() {
            return Err(Error::NonFinite("tokenizer loss".into()));
        }
        Ok(RvqLoss { total, recon: tape.value(recon).item(), embed, commit: commit_value, total_value, codebooks, assignment, latents, layer_inputs })
    }

    /// Serializes the tokenizer into a `VQB1` container tagged `RVQT`.
    ///
    /// Payload: `n_q u32 | n_q x (k u32, d u32) | act_dim u32 | chunk_len u32
    /// | hidden u32 | depth u32 | lambda_commit f32 | ema_decay f32 | ema_eps f32
    /// | initialized u8 | has_stats u8 [min f32.., max f32..]
    /// | per layer: embeddings, counts, sums (f32) | params`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut w = ByteWriter::new();
        w.u32(self.layers.len() as u32);
        for l in &self.layers {
            w.u32(l.k() as u32);
            w.u32(l.d() as u32);
        }
        for v in [c.act_dim, c.chunk_len, c.hidden, c.depth] {
            w.u32(v as u32);
        }
        w.f32(c.lambda_commit as f32);
        w.f32(c.ema_decay as f32);
        w.f32(c.ema_eps as f32);
        w.u8(self.initialized as u8);
        match &self.stats {
            Some(s) => {
                w.u8(1);
                w.f32s(s.min.iter().chain(&s.max).map(|&v| v as f32));
            }
            None => w.u8(0),
        }
        for l in &self.layers {
            w.f32s(l.embeddings().iter().map(|&v| v as f32));
            w.f32s(l.ema_counts().iter().map(|&v| v as f32));
            w.f32s(l.ema_sums().iter().map(|&v| v as f32));
        }
        write_params(&mut w, &self.params);
        write_envelope(RVQ_TAG, &w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(Self::decode_checkpoint(bytes)?)
    }

    fn decode_checkpoint(bytes: &[u8]) -> Result<Self, FormatError> {
        let invalid = |m: String| FormatError::Invalid(m);
        let payload = read_envelope(bytes, RVQ_TAG)?;
        let mut r = ByteReader::new(payload);
        let n_q = r.u32()? as usize;
        if n_q == 0 || n_q.saturating_mul(8) > r.remaining() {
            return Err(invalid(format!("bad layer count {n_q}")));
        }
        let mut shapes = Vec::with_capacity(n_q);
        for _ in 0..n_q {
            shapes.push((r.u32()? as usize, r.u32()? as usize));
        }
        let d = shapes[0].1;
        if shapes.iter().any(|&(k, dd)| k == 0 || dd != d) {
            return Err(invalid("codebook layers must share a nonzero latent width".into()));
        }
        let act_dim = r.u32()? as usize;
        let chunk_len = r.u32()? as usize;
        let hidden = r.u32()? as usize;
        let depth = r.u32()? as usize;
        let config = RvqConfig {
            act_dim,
            chunk_len,
            latent_dim: d,
            hidden,
            depth,
            codebook_sizes: shapes.iter().map(|s| s.0).collect(),
            lambda_commit: r.f32()? as f64,
            ema_decay: r.f32()? as f64,
            ema_eps: r.f32()? as f64,
        };
        config.validate().map_err(|e| invalid(e.to_string()))?;
        let inp = act_dim.checked_mul(chunk_len).ok_or_else(|| invalid("dimension overflow".into()))?;
        let initialized = r.u8()? != 0;
        let stats = match r.u8()? {
            0 => None,
            1 => {
                let v: Vec<f64> = r.f32s(act_dim.checked_mul(2).ok_or_else(|| invalid("overflow".into()))?)?.into_iter().map(f64::from).collect();
                Some(ActionStats { min: v[..act_dim].to_vec(), max: v[act_dim..].to_vec() })
            }
            f => return Err(invalid(format!("bad stats flag {f}"))),
        };

        // Refuse to build a model the remaining bytes cannot possibly fill.
        let layer_pairs = |from: usize, to: usize| {
            let w = config.widths(from, to);
            w.windows(2).map(|p| (p[0], p[1])).collect::<Vec<_>>()
        };
        let mut pairs = layer_pairs(inp, d);
        pairs.extend(layer_pairs(d, inp));
        let mlp_floats = expected_floats(&pairs).ok_or_else(|| invalid("size overflow".into()))?;
        let cb_floats = shapes
            .iter()
            .try_fold(0usize, |acc, &(k, dd)| acc.checked_add(k.checked_mul(dd)?.checked_mul(2)?.checked_add(k)?))
            .ok_or_else(|| invalid("size overflow".into()))?;
        let needed = mlp_floats.saturating_add(cb_floats).saturating_mul(4);
        if needed > r.remaining() {
            return Err(FormatError::Truncated { needed: r.position().saturating_add(needed), available: payload.len() });
        }

        let mut layers = Vec::with_capacity(n_q);
        for &(k, dd) in &shapes {
            let emb: Vec<f64> = r.f32s(k * dd)?.into_iter().map(f64::from).collect();
            let counts: Vec<f64> = r.f32s(k)?.into_iter().map(f64::from).collect();
            let sums: Vec<f64> = r.f32s(k * dd)?.into_iter().map(f64::from).collect();
            if emb.iter().chain(&counts).chain(&sums).any(|v| !v.is_finite()) || counts.iter().any(|&c| c < 0.0) {
                return Err(invalid("codebook state is non-finite or negative".into()));
            }
            let layer = CodebookLayer::from_state(k, dd, counts, sums, emb, config.ema_decay, config.ema_eps).map_err(|e| invalid(e.to_string()))?;
            layers.push(layer);
        }
        let mut q = ResidualQuantizer::new(config, &mut SeededRng::new(0)).map_err(|e| invalid(e.to_string()))?;
        read_params_into(&mut r, &mut q.params)?;
        if r.remaining() != 0 {
            return Err(invalid(format!("{} unread payload bytes", r.remaining())));
        }
        if let Some(s) = stats {
            q.set_stats(s).map_err(|e| invalid(e.to_string()))?;
        }
        q.layers = layers;
        q.initialized = initialized;
        Ok(q)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Quantizes `x` against one layer. Free-function form of
/// [`CodebookLayer::quantize`].
pub fn quantize_layer(x: &[f64], layer: &CodebookLayer) -> Result<LayerAssignment> {
    layer.quantize(x)
}
