use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Architecture and loss settings of the behavior policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub obs_dim: usize,
    pub act_dim: usize,
    /// Observation window `h`.
    pub obs_window: usize,
    /// Goal window `g`; 0 makes the policy unconditional.
    pub goal_window: usize,
    /// Action chunk length `n`.
    pub chunk_len: usize,
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    /// Hidden width of the code and offset heads.
    pub head_hidden: usize,
    /// Codes per quantizer layer; must match the tokenizer.
    pub codebook_sizes: Vec<usize>,
    /// Weight on the secondary-code focal terms.
    pub beta: f64,
    /// Focal exponent.
    pub gamma: f64,
    pub offset_weight: f64,
    pub autoregressive_codes: bool,
    /// Feed the selected code embeddings to the offset head as well.
    pub offset_uses_codes: bool,
    pub temperature: f64,
    pub deadcode_mask: bool,
}

impl PolicyConfig {
    /// Small trunk used for tests and CPU experiments.
    pub fn desk(obs_dim: usize, act_dim: usize) -> Self {
        PolicyConfig {
            obs_dim,
            act_dim,
            obs_window: 3,
            goal_window: 0,
            chunk_len: 1,
            layers: 2,
            heads: 2,
            embed_dim: 32,
            head_hidden: 64,
            codebook_sizes: vec![8, 8],
            beta: 0.1,
            gamma: 2.0,
            offset_weight: 1.0,
            autoregressive_codes: false,
            offset_uses_codes: false,
            temperature: 1.0,
            deadcode_mask: false,
        }
    }

    /// Full-scale trunk: 6 layers, 6 heads, 120-wide embeddings,
    /// 16 codes per layer.
    pub fn full_scale(obs_dim: usize, act_dim: usize) -> Self {
        PolicyConfig { layers: 6, heads: 6, embed_dim: 120, head_hidden: 256, codebook_sizes: vec![16, 16], ..Self::desk(obs_dim, act_dim) }
    }

    pub fn context_len(&self) -> usize {
        self.goal_window + self.obs_window
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.obs_dim == 0 || self.act_dim == 0 {
            return fail("obs_dim and act_dim must be positive");
        }
        if self.obs_window == 0 || self.chunk_len == 0 {
            return fail("obs_window and chunk_len must be at least 1");
        }
        if self.layers == 0 || self.heads == 0 || self.embed_dim == 0 || self.head_hidden == 0 {
            return fail("layers, heads, embed_dim and head_hidden must be positive");
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return fail("embed_dim must be divisible by heads");
        }
        if self.codebook_sizes.is_empty() || self.codebook_sizes.contains(&0) {
            return fail("codebook sizes must be nonempty and positive");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) || !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return fail("beta and gamma must be finite and nonnegative");
        }
        if !(self.offset_weight >= 0.0 && self.offset_weight.is_finite()) {
            return fail("offset_weight must be finite and nonnegative");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return fail("temperature must be finite and nonnegative");
        }
        Ok(())
    }

    /// `key=value` lines, one per field, in a fixed order.
    pub fn to_text(&self) -> String {
        let sizes: Vec<String> = self.codebook_sizes.iter().map(|k| k.to_string()).collect();
        let fields: [(&str, String); 18] = [
            ("obs_dim", self.obs_dim.to_string()),
            ("act_dim", self.act_dim.to_string()),
            ("obs_window", self.obs_window.to_string()),
            ("goal_window", self.goal_window.to_string()),
            ("chunk_len", self.chunk_len.to_string()),
            ("layers", self.layers.to_string()),
            ("heads", self.heads.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("head_hidden", self.head_hidden.to_string()),
            ("codebook_sizes", sizes.join(",")),
            ("beta", self.beta.to_string()),
            ("gamma", self.gamma.to_string()),
            ("offset_weight", self.offset_weight.to_string()),
            ("autoregressive_codes", self.autoregressive_codes.to_string()),
            ("offset_uses_codes", self.offset_uses_codes.to_string()),
            ("temperature", self.temperature.to_string()),
            ("deadcode_mask", self.deadcode_mask.to_string()),
            ("format", "policy-config-1".to_string()),
        ];
        fields.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("malformed line {line:?}")))?;
            if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key {k}")));
            }
        }
        let mut take = |k: &str| map.remove(k).ok_or_else(|| Error::Config(format!("missing key {k}")));
        fn num<T: std::str::FromStr>(k: &str, v: String) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {k}")))
        }
        if take("format")? != "policy-config-1" {
            return Err(Error::Config("unknown policy config format".into()));
        }
        let cfg = PolicyConfig {
            obs_dim: num("obs_dim", take("obs_dim")?)?,
            act_dim: num("act_dim", take("act_dim")?)?,
            obs_window: num("obs_window", take("obs_window")?)?,
            goal_window: num("goal_window", take("goal_window")?)?,
            chunk_len: num("chunk_len", take("chunk_len")?)?,
            layers: num("layers", take("layers")?)?,
            heads: num("heads", take("heads")?)?,
            embed_dim: num("embed_dim", take("embed_dim")?)?,
            head_hidden: num("head_hidden", take("head_hidden")?)?,
            codebook_sizes: take("codebook_sizes")?.split(',').map(|s| num("codebook_sizes", s.trim().to_string())).collect::<Result<_>>()?,
            beta: num("beta", take("beta")?)?,
            gamma: num("gamma", take("gamma")?)?,
            offset_weight: num("offset_weight", take("offset_weight")?)?,
            autoregressive_codes: num("autoregressive_codes", take("autoregressive_codes")?)?,
            offset_uses_codes: num("offset_uses_codes", take("offset_uses_codes")?)?,
            temperature: num("temperature", take("temperature")?)?,
            deadcode_mask: num("deadcode_mask", take("deadcode_mask")?)?,
        };
        if let Some(k) = map.keys().next() {
            return Err(Error::Config(format!("unknown key {k}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = PolicyConfig::full_scale(6, 2);
        c.goal_window = 2;
        c.beta = 0.6;
        c.autoregressive_codes = true;
        assert_eq!(PolicyConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn full_scale_defaults() {
        let c = PolicyConfig::full_scale(6, 2);
        assert_eq!((c.layers, c.heads, c.embed_dim), (6, 6, 120));
        assert_eq!(c.codebook_sizes, vec![16, 16]);
        assert_eq!(c.beta, 0.1);
        assert!(!c.autoregressive_codes);
    }

    #[test]
    fn invalid_configs() {
        let mut c = PolicyConfig::desk(2, 2);
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = PolicyConfig::desk(2, 2);
        c.obs_window = 0;
        assert!(c.validate().is_err());
        let text = PolicyConfig::desk(2, 2).to_text() + "bogus=1\n";
        assert!(PolicyConfig::from_text(&text).is_err());
    }
}
