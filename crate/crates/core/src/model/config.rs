use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmafConfig {
    /// Tokens per modality after downsampling, `(H_d, W_d)`.
    pub token_grid: (usize, usize),
    pub n_layers: usize,
    pub n_heads: usize,
    pub head_dim: usize,
}

impl Default for DmafConfig {
    fn default() -> Self {
        Self {
            token_grid: (8, 8),
            n_layers: 2,
            n_heads: 2,
            head_dim: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub n_modalities: usize,
    pub n_classes: usize,
    pub n_levels: usize,
    pub base_channels: usize,
    pub image_size: (usize, usize),
    pub dmaf: DmafConfig,
    /// Output channels of each decoder level, finest first.
    pub decoder_channels: Vec<usize>,
}

impl NetConfig {
    /// Encoder channels double per level; the decoder mirrors them.
    pub fn new(
        n_modalities: usize,
        n_classes: usize,
        n_levels: usize,
        base_channels: usize,
        image_size: (usize, usize),
    ) -> Self {
        let decoder_channels = (0..n_levels).map(|l| base_channels << l).collect();
        Self {
            n_modalities,
            n_classes,
            n_levels,
            base_channels,
            image_size,
            dmaf: DmafConfig::default(),
            decoder_channels,
        }
    }

    /// Desk-scale default: 64×64, three modalities, three classes, three levels, 8 base channels.
    pub fn desk() -> Self {
        Self::new(3, 3, 3, 8, (64, 64))
    }

    pub fn with_token_grid(mut self, grid: (usize, usize)) -> Self {
        self.dmaf.token_grid = grid;
        self
    }

    /// Encoder channels at level `l` (1-based).
    pub fn channels(&self, l: usize) -> usize {
        self.base_channels << (l - 1)
    }

    /// Spatial size at level `l` (1-based).
    pub fn level_size(&self, l: usize) -> (usize, usize) {
        (self.image_size.0 >> (l - 1), self.image_size.1 >> (l - 1))
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.channels(self.n_levels)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_levels < 2 {
            return err(format!("need at least 2 levels, got {}", self.n_levels));
        }
        if self.n_modalities == 0 || self.n_classes < 2 || self.base_channels == 0 {
            return err("modalities, classes (≥2) and base channels must be positive".into());
        }
        let f = 1usize << (self.n_levels - 1);
        let (h, w) = self.image_size;
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return err(format!(
                "image size {h}×{w} not divisible by {f} for {} levels",
                self.n_levels
            ));
        }
        let (sh, sw) = self.dmaf.token_grid;
        let (bh, bw) = self.level_size(self.n_levels);
        if sh == 0 || sw == 0 || sh > bh || sw > bw {
            return err(format!(
                "token grid {sh}×{sw} exceeds the smallest feature map {bh}×{bw}"
            ));
        }
        if bh % sh != 0 || bw % sw != 0 {
            return err(format!(
                "token grid {sh}×{sw} must divide the smallest feature map {bh}×{bw}"
            ));
        }
        if self.dmaf.n_layers == 0 || self.dmaf.n_heads == 0 || self.dmaf.head_dim == 0 {
            return err("attention layers, heads and head_dim must be positive".into());
        }
        if self.decoder_channels.len() != self.n_levels
            || self.decoder_channels.iter().any(|&c| c == 0)
        {
            return err(format!(
                "decoder_channels needs {} positive entries",
                self.n_levels
            ));
        }
        if self.decoder_channels[self.n_levels - 1] != self.bottleneck_channels() {
            return err("the coarsest decoder level must match the bottleneck width".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_config_is_valid() {
        NetConfig::desk().validate().unwrap();
    }

    #[test]
    fn oversized_token_grid_rejected() {
        let cfg = NetConfig::new(2, 3, 3, 4, (16, 16)).with_token_grid((8, 8));
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn single_level_rejected() {
        assert!(NetConfig::new(2, 3, 1, 4, (16, 16)).validate().is_err());
    }
}
