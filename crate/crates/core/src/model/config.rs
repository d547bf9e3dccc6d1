use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of CYGNSS reflection channels; also the encoder's `d_model` and head count.
pub const CHANNELS: usize = 4;
/// DDM types per channel: brcs, eff_scatter, power_analog.
pub const DDM_TYPES: usize = 3;
/// Auxiliary parameters per channel without wind speed.
pub const BASE_AP_COUNT: usize = 9;

/// Cross-channel information policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Channel independence: no information flows between channels.
    CI,
    /// Channel dependence: channels interact through `W^O`, the FFN, the AP gates and the head.
    CD,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::CI => "CI",
            Strategy::CD => "CD",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CI" => Ok(Strategy::CI),
            "CD" => Ok(Strategy::CD),
            other => Err(Error::Config(format!("unknown strategy {other:?} (expected CI or CD)"))),
        }
    }
}

/// Which encoder tokens feed the task head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInput {
    Full,
    GlobalOnly,
}

impl FromStr for HeadInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(HeadInput::Full),
            "global_only" => Ok(HeadInput::GlobalOnly),
            other => Err(Error::Config(format!("unknown head_input {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Doppler bins (W).
    pub ddm_width: usize,
    /// Delay bins (H).
    pub ddm_height: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub ln_eps: f64,
    pub strategy: Strategy,
    /// Use `LN(x + sublayer(x))` instead of `O + Dropout(LN(O))`.
    pub standard_residual: bool,
    pub use_wind: bool,
    /// Up-projection factor of the spatial AP gate (`K → factor·K → K`).
    pub spatial_expansion: usize,
    /// Hidden width of the channel AP gate (`4 → width → 4`).
    pub channel_hidden: usize,
    pub head_input: HeadInput,
    pub head_layers: usize,
    pub head_min_width: usize,
    pub head_max_width: Option<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            ddm_width: 11,
            ddm_height: 17,
            patch_size: 3,
            embed_dim: 8,
            n_layers: 6,
            d_ff: 2048,
            dropout: 0.1,
            ln_eps: 1e-5,
            strategy: Strategy::CD,
            standard_residual: false,
            use_wind: false,
            spatial_expansion: 4,
            channel_hidden: 16,
            head_input: HeadInput::Full,
            head_layers: 9,
            head_min_width: 32,
            head_max_width: None,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for gradient checks and desk-scale training.
    pub fn toy(strategy: Strategy) -> Self {
        Self {
            ddm_width: 6,
            ddm_height: 6,
            patch_size: 3,
            embed_dim: 2,
            n_layers: 1,
            d_ff: 16,
            strategy,
            head_min_width: 8,
            head_max_width: Some(16),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ddm_width", self.ddm_width),
            ("ddm_height", self.ddm_height),
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("spatial_expansion", self.spatial_expansion),
            ("channel_hidden", self.channel_hidden),
            ("head_layers", self.head_layers),
            ("head_min_width", self.head_min_width),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if self.patch_size > self.ddm_width || self.patch_size > self.ddm_height {
            return Err(Error::Config(format!(
                "patch_size {} exceeds DDM geometry {}×{}",
                self.patch_size, self.ddm_width, self.ddm_height
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.ln_eps.is_nan() || self.ln_eps <= 0.0 {
            return Err(Error::Config("ln_eps must be positive".into()));
        }
        if self.strategy == Strategy::CI && self.d_ff % CHANNELS != 0 {
            return Err(Error::Config(format!(
                "d_ff {} must be divisible by {CHANNELS} for the CI block-diagonal FFN",
                self.d_ff
            )));
        }
        if self.strategy == Strategy::CI && self.channel_hidden % CHANNELS != 0 {
            return Err(Error::Config(format!(
                "channel_hidden {} must be divisible by {CHANNELS} under CI",
                self.channel_hidden
            )));
        }
        if let Some(cap) = self.head_max_width {
            if cap < self.head_min_width {
                return Err(Error::Config("head_max_width below head_min_width".into()));
            }
        }
        Ok(())
    }

    /// Patches per DDM: `ceil(W/P)·ceil(H/P)`.
    pub fn n_patches(&self) -> usize {
        self.ddm_width.div_ceil(self.patch_size) * self.ddm_height.div_ceil(self.patch_size)
    }

    /// Embedding sequence length per channel, global token included.
    pub fn seq_len(&self) -> usize {
        DDM_TYPES * self.n_patches() + 1
    }

    /// Encoder tokens `M = (3N + 1)·D_e`.
    pub fn n_tokens(&self) -> usize {
        self.seq_len() * self.embed_dim
    }

    pub fn ap_count(&self) -> usize {
        BASE_AP_COUNT + usize::from(self.use_wind)
    }

    /// Encoder tokens passed to the head per channel.
    pub fn head_tokens(&self) -> usize {
        match self.head_input {
            HeadInput::Full => self.n_tokens(),
            HeadInput::GlobalOnly => self.embed_dim,
        }
    }

    /// Width of the fused feature vector fed to the head.
    pub fn fused_width(&self) -> usize {
        let per_channel = self.head_tokens() + self.ap_count();
        match self.strategy {
            Strategy::CI => per_channel,
            Strategy::CD => CHANNELS * per_channel,
        }
    }

    pub fn head_outputs(&self) -> usize {
        match self.strategy {
            Strategy::CI => 1,
            Strategy::CD => CHANNELS,
        }
    }

    /// Hidden widths of the task head: a geometric taper from the fused width
    /// down to `head_min_width`, clamped to `[head_min_width, head_max_width]`.
    pub fn head_widths(&self) -> Vec<usize> {
        let input = self.fused_width() as f64;
        let min = self.head_min_width;
        let cap = self.head_max_width.unwrap_or(usize::MAX);
        (1..=self.head_layers)
            .map(|k| {
                let w = input * (min as f64 / input).powf(k as f64 / self.head_layers as f64);
                (w.round() as usize).max(min).min(cap)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_arithmetic() {
        let cfg = ModelConfig::default();
        // 11×17 with P=3 → 4·6 = 24 patches
        assert_eq!(cfg.n_patches(), 24);
        assert_eq!(cfg.n_tokens(), 584);
        let toy = ModelConfig {
            ddm_width: 2,
            ddm_height: 2,
            patch_size: 2,
            embed_dim: 1,
            ..ModelConfig::default()
        };
        assert_eq!(toy.seq_len(), 4);
    }

    #[test]
    fn fused_width_by_strategy() {
        let mut cfg = ModelConfig::toy(Strategy::CI);
        // toy: N = 4, M = 13·2 = 26
        assert_eq!(cfg.fused_width(), 26 + 9);
        cfg.strategy = Strategy::CD;
        assert_eq!(cfg.fused_width(), 4 * 35);
        cfg.use_wind = true;
        assert_eq!(cfg.fused_width(), 4 * 36);
    }

    #[test]
    fn head_widths_taper_and_clamp() {
        let cfg = ModelConfig::default();
        let w = cfg.head_widths();
        assert_eq!(w.len(), 9);
        assert!(w.windows(2).all(|p| p[0] >= p[1]));
        assert_eq!(*w.last().unwrap(), 32);
        let toy = ModelConfig::toy(Strategy::CD);
        assert!(toy.head_widths().iter().all(|&x| (8..=16).contains(&x)));
    }

    #[test]
    fn validation_rules() {
        let mut cfg = ModelConfig::toy(Strategy::CI);
        cfg.d_ff = 18;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.d_ff = 16;
        cfg.validate().unwrap();
        cfg.patch_size = 7;
        assert!(cfg.validate().is_err());
        assert!("XX".parse::<Strategy>().is_err());
        assert_eq!("cd".parse::<Strategy>().unwrap(), Strategy::CD);
    }
}
