use log::warn;

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

pub const DEFAULT_EMA_DECAY: f64 = 0.99;
pub const DEFAULT_EMA_EPS: f64 = 1e-5;

/// One quantizer layer: `k` embeddings of width `d` maintained by
/// exponential moving averages of assignment counts and sums.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookLayer {
    k: usize,
    d: usize,
    embeddings: Vec<f64>,
    ema_counts: Vec<f64>,
    ema_sums: Vec<f64>,
    pub decay: f64,
    pub eps: f64,
}

/// Result of quantizing one vector against one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerAssignment {
    pub code: usize,
    pub embedding: Vec<f64>,
    pub residual: Vec<f64>,
}

impl CodebookLayer {
    /// Layer with the given embeddings; EMA state starts at count 1 per code.
    pub fn from_embeddings(k: usize, d: usize, embeddings: Vec<f64>, decay: f64, eps: f64) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(Error::Invalid("codebook must have k >= 1 and d >= 1".into()));
        }
        if embeddings.len() != k * d {
            return Err(Error::shape("codebook", format!("{} values for k={k}, d={d}", embeddings.len())));
        }
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::Invalid(format!("ema decay must lie in (0,1), got {decay}")));
        }
        let ema_sums = embeddings.clone();
        Ok(CodebookLayer { k, d, embeddings, ema_counts: vec![1.0; k], ema_sums, decay, eps })
    }

    pub fn zeros(k: usize, d: usize, decay: f64, eps: f64) -> Result<Self> {
        Self::from_embeddings(k, d, vec![0.0; k * d], decay, eps)
    }

    /// Restores a layer from serialized EMA state.
    pub fn from_state(k: usize, d: usize, counts: Vec<f64>, sums: Vec<f64>, embeddings: Vec<f64>, decay: f64, eps: f64) -> Result<Self> {
        let mut layer = Self::from_embeddings(k, d, embeddings, decay, eps)?;
        if counts.len() != k || sums.len() != k * d {
            return Err(Error::shape("codebook", "ema state size"));
        }
        layer.ema_counts = counts;
        layer.ema_sums = sums;
        Ok(layer)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn embeddings(&self) -> &[f64] {
        &self.embeddings
    }

    pub fn embedding(&self, code: usize) -> &[f64] {
        &self.embeddings[code * self.d..(code + 1) * self.d]
    }

    pub fn ema_counts(&self) -> &[f64] {
        &self.ema_counts
    }

    pub fn ema_sums(&self) -> &[f64] {
        &self.ema_sums
    }

    /// Seeds EMA state from initial centroids and how many batch vectors
    /// each one attracted. Codes that attracted none start at count 1.
    pub fn seed(&mut self, centroids: &[f64], counts: &[usize]) -> Result<()> {
        if centroids.len() != self.k * self.d || counts.len() != self.k {
            return Err(Error::shape("codebook seed", "centroid or count size"));
        }
        for c in 0..self.k {
            let n = counts[c].max(1) as f64;
            self.ema_counts[c] = n;
            for j in 0..self.d {
                self.ema_sums[c * self.d + j] = centroids[c * self.d + j] * n;
            }
        }
        self.refresh_embeddings();
        Ok(())
    }

    fn refresh_embeddings(&mut self) {
        for c in 0..self.k {
            let denom = self.ema_counts[c].max(self.eps);
            for j in 0..self.d {
                self.embeddings[c * self.d + j] = self.ema_sums[c * self.d + j] / denom;
            }
        }
    }

    /// Index of the nearest embedding by squared Euclidean distance; ties go
    /// to the lowest index.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for c in 0..self.k {
            let e = self.embedding(c);
            let dist: f64 = x.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best_d {
                best_d = dist;
                best = c;
            }
        }
        best
    }

    /// Nearest-neighbour lookup returning the code, its embedding and the
    /// residual `x - embedding`.
    pub fn quantize(&self, x: &[f64]) -> Result<LayerAssignment> {
        if x.len() != self.d {
            return Err(Error::shape("quantize_layer", format!("input of {} for d={}", x.len(), self.d)));
        }
        let code = self.nearest(x);
        let embedding = self.embedding(code).to_vec();
        let residual = x.iter().zip(&embedding).map(|(a, b)| a - b).collect();
        Ok(LayerAssignment { code, embedding, residual })
    }

    /// Moving-average update from a batch of row vectors and their codes.
    pub fn ema_update(&mut self, xs: &[f64], codes: &[usize]) -> Result<()> {
        if xs.len() != codes.len() * self.d {
            return Err(Error::shape("ema_update", format!("{} values for {} codes", xs.len(), codes.len())));
        }
        if let Some(&bad) = codes.iter().find(|&&c| c >= self.k) {
            return Err(Error::Invalid(format!("code {bad} out of range 0..{}", self.k)));
        }
        let mut batch_counts = vec![0.0; self.k];
        let mut batch_sums = vec![0.0; self.k * self.d];
        for (row, &c) in codes.iter().enumerate() {
            batch_counts[c] += 1.0;
            for j in 0..self.d {
                batch_sums[c * self.d + j] += xs[row * self.d + j];
            }
        }
        let (a, b) = (self.decay, 1.0 - self.decay);
        for (n, bn) in self.ema_counts.iter_mut().zip(&batch_counts) {
            *n = a * *n + b * bn;
        }
        for (s, bs) in self.ema_sums.iter_mut().zip(&batch_sums) {
            *s = a * *s + b * bs;
        }
        self.refresh_embeddings();
        Ok(())
    }

    /// Reassigns every code whose EMA count fell below `threshold` to a
    /// random batch vector. Returns the reset codes.
    pub fn reset_dead_codes(&mut self, xs: &[f64], threshold: f64, rng: &mut SeededRng) -> Result<Vec<usize>> {
        if xs.is_empty() || !xs.len().is_multiple_of(self.d) {
            return Err(Error::shape("reset_dead_code", "batch is empty or ragged"));
        }
        let dead: Vec<usize> = (0..self.k).filter(|&c| self.ema_counts[c] < threshold).collect();
        if dead.is_empty() {
            return Ok(dead);
        }
        let rows = xs.len() / self.d;
        let mut pool: Vec<usize> = (0..rows).collect();
        rng.shuffle(&mut pool);
        if rows < dead.len() {
            warn!("reset_dead_code: {} dead codes but only {rows} batch vectors; reusing with replacement", dead.len());
        }
        for (i, &c) in dead.iter().enumerate() {
            let row = if i < rows { pool[i] } else { rng.below(rows) };
            let x = &xs[row * self.d..(row + 1) * self.d];
            self.ema_counts[c] = 1.0;
            self.ema_sums[c * self.d..(c + 1) * self.d].copy_from_slice(x);
        }
        self.refresh_embeddings();
        Ok(dead)
    }
}
