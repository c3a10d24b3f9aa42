use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder geometry for the 1D vision transformer over multi-lead signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VitConfig {
    /// Lead count C.
    pub leads: usize,
    /// Samples per lead L (10 s at 100 Hz).
    pub signal_len: usize,
    /// Patch length P in samples.
    pub patch_len: usize,
    /// Embedding dimension D.
    pub embed_dim: usize,
    /// Encoder depth (stacked transformer layers).
    pub depth: usize,
    /// Attention heads H; D must be divisible by H.
    pub heads: usize,
    /// FFN hidden width as a multiple of D.
    pub mlp_ratio: usize,
    /// Dropout probability inside encoder blocks (train mode only).
    pub dropout: f64,
}

impl Default for VitConfig {
    fn default() -> Self {
        VitConfig {
            leads: 12,
            signal_len: 1000,
            patch_len: 50,
            embed_dim: 64,
            depth: 12,
            heads: 4,
            mlp_ratio: 4,
            dropout: 0.0,
        }
    }
}

impl VitConfig {
    /// Reduced profile for desk-scale training runs.
    pub fn tiny() -> Self {
        VitConfig {
            embed_dim: 32,
            depth: 4,
            heads: 4,
            ..Default::default()
        }
    }

    /// Patches per lead, N = floor(L / P).
    pub fn num_patches(&self) -> usize {
        self.signal_len / self.patch_len
    }

    /// Tokens per lead including the two SEP slots.
    pub fn tokens_per_lead(&self) -> usize {
        self.num_patches() + 2
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.leads == 0 || self.embed_dim == 0 || self.heads == 0 {
            return Err(Error::Config("leads, embed_dim, heads must be positive".into()));
        }
        if self.patch_len == 0 || self.signal_len < self.patch_len {
            return Err(Error::Config(format!(
                "signal length {} must be at least one patch length {}",
                self.signal_len, self.patch_len
            )));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::Config("mlp_ratio must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0,1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Shared lead-wise decoder geometry for masked pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    /// Decoder embedding dimension D'.
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            dim: 32,
            depth: 4,
            heads: 4,
            mlp_ratio: 4,
        }
    }
}

impl DecoderConfig {
    pub fn tiny() -> Self {
        DecoderConfig {
            dim: 16,
            depth: 2,
            heads: 2,
            mlp_ratio: 4,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("decoder dims must be positive".into()));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "decoder dim {} must be divisible by heads {}",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_has_20_patches_per_lead() {
        let c = VitConfig::default();
        assert_eq!(c.num_patches(), 20);
        assert_eq!(c.tokens_per_lead(), 22);
        c.validate().unwrap();
    }

    #[test]
    fn head_divisibility_enforced() {
        let c = VitConfig {
            embed_dim: 10,
            heads: 4,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
