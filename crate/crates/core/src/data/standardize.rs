//! Input standardization and conversion of samples to model inputs.

use serde::{Deserialize, Serialize};

use super::record::FourChannelSample;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::config::BASE_AP_COUNT;
use crate::model::{ModelConfig, ModelInput, CHANNELS, DDM_TYPES};

/// Per-column AP and per-type DDM z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Standardizer {
    /// Nine base columns, plus wind speed when every fitted sample carried it.
    pub ap_mean: Vec<f64>,
    pub ap_std: Vec<f64>,
    pub ddm_mean: [f64; DDM_TYPES],
    pub ddm_std: [f64; DDM_TYPES],
}

/// Population mean and standard deviation; a degenerate spread maps to 1.
fn moments(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (mut n, mut sum) = (0usize, 0.0);
    for v in values.clone() {
        n += 1;
        sum += v;
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let sd = var.sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

impl Standardizer {
    pub fn fit(samples: &[FourChannelSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Contract("cannot fit standardization on zero samples".into()));
        }
        let chans = || samples.iter().flat_map(|s| s.channels.iter());
        let with_wind = chans().all(|c| c.wind_speed.is_some());
        let mut ap_mean = Vec::new();
        let mut ap_std = Vec::new();
        for k in 0..BASE_AP_COUNT {
            let (m, s) = moments(chans().map(move |c| c.aps[k]));
            ap_mean.push(m);
            ap_std.push(s);
        }
        if with_wind {
            let (m, s) = moments(chans().map(|c| c.wind_speed.unwrap_or_default()));
            ap_mean.push(m);
            ap_std.push(s);
        }
        let mut ddm_mean = [0.0; DDM_TYPES];
        let mut ddm_std = [1.0; DDM_TYPES];
        for t in 0..DDM_TYPES {
            let (m, s) = moments(chans().flat_map(move |c| {
                let per = c.ddms.len() / DDM_TYPES;
                c.ddms[t * per..(t + 1) * per].iter().copied()
            }));
            ddm_mean[t] = m;
            ddm_std[t] = s;
        }
        Ok(Self {
            ap_mean,
            ap_std,
            ddm_mean,
            ddm_std,
        })
    }

    pub fn has_wind(&self) -> bool {
        self.ap_mean.len() > BASE_AP_COUNT
    }

    /// Standardized `[4,3,W,H]` DDMs and `[4,K]` APs for one sample.
    pub fn apply(&self, sample: &FourChannelSample, cfg: &ModelConfig) -> Result<ModelInput> {
        let per = cfg.ddm_width * cfg.ddm_height;
        sample
            .validate(DDM_TYPES * per)
            .map_err(Error::Config)?;
        if cfg.use_wind && !self.has_wind() {
            return Err(Error::Config("model uses wind speed but standardization has no wind column".into()));
        }
        let k = cfg.ap_count();
        let mut ddm = Vec::with_capacity(CHANNELS * DDM_TYPES * per);
        let mut ap = Vec::with_capacity(CHANNELS * k);
        for ch in &sample.channels {
            for (i, v) in ch.ddms.iter().enumerate() {
                let t = i / per;
                ddm.push((v - self.ddm_mean[t]) / self.ddm_std[t]);
            }
            for (j, v) in ch.aps.iter().enumerate() {
                ap.push((v - self.ap_mean[j]) / self.ap_std[j]);
            }
            if cfg.use_wind {
                let w = ch.wind_speed.ok_or_else(|| {
                    Error::Config(format!(
                        "sample {} channel {} has no wind speed but the model uses it",
                        sample.sample_id, ch.channel
                    ))
                })?;
                ap.push((w - self.ap_mean[BASE_AP_COUNT]) / self.ap_std[BASE_AP_COUNT]);
            }
        }
        ModelInput::from_tensors(
            Tensor::new(vec![CHANNELS, DDM_TYPES, cfg.ddm_width, cfg.ddm_height], ddm)?,
            Tensor::new(vec![CHANNELS, k], ap)?,
        )
    }
}

/// A model-ready sample with its targets and location for reporting.
#[derive(Clone, Debug)]
pub struct Example {
    pub sample_id: u64,
    pub input: ModelInput,
    pub target: [f64; CHANNELS],
    pub lat: [f64; CHANNELS],
    pub lon: [f64; CHANNELS],
}

pub fn prepare(samples: &[FourChannelSample], std: &Standardizer, cfg: &ModelConfig) -> Result<Vec<Example>> {
    samples
        .iter()
        .map(|s| {
            Ok(Example {
                sample_id: s.sample_id,
                input: std.apply(s, cfg)?,
                target: s.swh_refs(),
                lat: std::array::from_fn(|c| s.channels[c].sp_lat),
                lon: std::array::from_fn(|c| s.channels[c].sp_lon),
            })
        })
        .collect()
}
