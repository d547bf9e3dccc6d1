//! Flat TOML run configuration covering model, training, split, synthesis
//! and evaluation settings. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::split::{SplitSpec, TimeRange};
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_BIN_EDGES;
use crate::model::{HeadInput, ModelConfig, Strategy};
use crate::synth::SynthSpec;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,

    pub ddm_width: usize,
    pub ddm_height: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub ln_eps: f64,
    pub strategy: Strategy,
    pub standard_residual: bool,
    pub use_wind: bool,
    pub spatial_expansion: usize,
    pub channel_hidden: usize,
    pub head_input: HeadInput,
    pub head_layers: usize,
    pub head_min_width: usize,
    pub head_max_width: Option<usize>,

    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub delta: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub micro_batch: usize,
    pub max_steps: Option<usize>,

    pub train_start: String,
    pub train_end: String,
    pub val_start: String,
    pub val_end: String,
    pub test_start: String,
    pub test_end: String,
    pub train_count: Option<usize>,
    pub val_count: Option<usize>,
    pub test_count: Option<usize>,

    pub n_samples: usize,
    pub noise_sd: f64,
    pub swh_lo: f64,
    pub swh_hi: f64,
    pub channel_corr: f64,
    pub planted_signal: bool,

    pub bin_edges: Vec<f64>,
    pub scatter_bin_width: f64,
    pub bias_cell_deg: f64,
    pub sd_quantile: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        let s = SynthSpec::default();
        Self {
            seed: 0,
            ddm_width: m.ddm_width,
            ddm_height: m.ddm_height,
            patch_size: m.patch_size,
            embed_dim: m.embed_dim,
            n_layers: m.n_layers,
            d_ff: m.d_ff,
            dropout: m.dropout,
            ln_eps: m.ln_eps,
            strategy: m.strategy,
            standard_residual: m.standard_residual,
            use_wind: m.use_wind,
            spatial_expansion: m.spatial_expansion,
            channel_hidden: m.channel_hidden,
            head_input: m.head_input,
            head_layers: m.head_layers,
            head_min_width: m.head_min_width,
            head_max_width: m.head_max_width,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            lr: t.lr,
            weight_decay: t.weight_decay,
            delta: t.delta,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            micro_batch: t.micro_batch,
            max_steps: t.max_steps,
            train_start: "2019-08-01T00:00:00Z".into(),
            train_end: "2020-08-01T00:00:00Z".into(),
            val_start: "2020-08-01T00:00:00Z".into(),
            val_end: "2021-08-01T00:00:00Z".into(),
            test_start: "2021-08-01T00:00:00Z".into(),
            test_end: "2022-08-01T00:00:00Z".into(),
            train_count: None,
            val_count: None,
            test_count: None,
            n_samples: s.n_samples,
            noise_sd: s.noise_sd,
            swh_lo: s.swh_range[0],
            swh_hi: s.swh_range[1],
            channel_corr: s.channel_corr,
            planted_signal: s.planted_signal,
            bin_edges: DEFAULT_BIN_EDGES.to_vec(),
            scatter_bin_width: 0.1,
            bias_cell_deg: 1.0,
            sd_quantile: 0.95,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Optional file, then `key=value` overrides. Values parse as TOML and
    /// fall back to plain strings, so `strategy=CI` and `lr=1e-3` both work.
    pub fn with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = match path {
            Some(p) => toml::from_str(&std::fs::read_to_string(p)?).map_err(|e| Error::Config(e.to_string()))?,
            None => toml::Table::new(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not of the form key=value")))?;
            let value = toml::from_str::<toml::Table>(&format!("v = {v}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .filter(|v| !v.is_datetime())
                .unwrap_or_else(|| toml::Value::String(v.to_string()));
            table.insert(k.trim().to_string(), value);
        }
        let text = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.train().validate()?;
        self.split()?.validate()?;
        self.synth().validate()?;
        if !(self.scatter_bin_width > 0.0 && self.bias_cell_deg > 0.0) {
            return Err(Error::Config("scatter_bin_width and bias_cell_deg must be positive".into()));
        }
        if !(self.sd_quantile > 0.0 && self.sd_quantile <= 1.0) {
            return Err(Error::Config("sd_quantile must lie in (0, 1]".into()));
        }
        if self.bin_edges.len() < 2 || self.bin_edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("bin_edges must be strictly increasing".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical))
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            ddm_width: self.ddm_width,
            ddm_height: self.ddm_height,
            patch_size: self.patch_size,
            embed_dim: self.embed_dim,
            n_layers: self.n_layers,
            d_ff: self.d_ff,
            dropout: self.dropout,
            ln_eps: self.ln_eps,
            strategy: self.strategy,
            standard_residual: self.standard_residual,
            use_wind: self.use_wind,
            spatial_expansion: self.spatial_expansion,
            channel_hidden: self.channel_hidden,
            head_input: self.head_input,
            head_layers: self.head_layers,
            head_min_width: self.head_min_width,
            head_max_width: self.head_max_width,
            seed: self.seed,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            lr: self.lr,
            weight_decay: self.weight_decay,
            delta: self.delta,
            seed: self.seed,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            micro_batch: self.micro_batch,
            max_steps: self.max_steps,
        }
    }

    pub fn split(&self) -> Result<SplitSpec> {
        Ok(SplitSpec {
            train: TimeRange::parse(&self.train_start, &self.train_end)?,
            val: TimeRange::parse(&self.val_start, &self.val_end)?,
            test: TimeRange::parse(&self.test_start, &self.test_end)?,
            train_count: self.train_count,
            val_count: self.val_count,
            test_count: self.test_count,
            seed: self.seed,
        })
    }

    pub fn synth(&self) -> SynthSpec {
        SynthSpec {
            n_samples: self.n_samples,
            ddm_width: self.ddm_width,
            ddm_height: self.ddm_height,
            seed: self.seed,
            noise_sd: self.noise_sd,
            swh_range: [self.swh_lo, self.swh_hi],
            channel_corr: self.channel_corr,
            planted_signal: self.planted_signal,
            with_wind: self.use_wind,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_on_top_of_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "lr = 0.5\nstrategy = \"CI\"\n").unwrap();
        let sets = ["strategy=CD".to_string(), "max_steps=7".into(), "train_start=2019-09-01".into()];
        let c = RunConfig::with_overrides(Some(&p), &sets).unwrap();
        assert_eq!((c.lr, c.strategy, c.max_steps), (0.5, Strategy::CD, Some(7)));
        assert_eq!(c.train_start, "2019-09-01");
        let err = RunConfig::with_overrides(None, &["bogus_key=1".into()]).unwrap_err();
        assert!(err.to_string().contains("bogus_key"));
        assert!(RunConfig::with_overrides(None, &["novalue".into()]).is_err());
    }

    #[test]
    fn unknown_key_is_named() {
        let e = RunConfig::from_toml_str("lr = 0.001\nlearning_rat = 3\n").unwrap_err();
        assert!(e.to_string().contains("learning_rat"), "{e}");
    }

    #[test]
    fn defaults_round_trip_and_hash_is_stable() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let d = RunConfig { lr: 1e-3, ..c.clone() };
        assert_ne!(d.hash(), c.hash());
    }

    #[test]
    fn strategy_parses() {
        let c = RunConfig::from_toml_str("strategy = \"CI\"\n").unwrap();
        assert_eq!(c.strategy, Strategy::CI);
    }
}
