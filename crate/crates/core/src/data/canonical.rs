//! Canonical sample file: JSON lines, one sample per line, plus a sidecar
//! manifest at `<file>.manifest.json`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::align::AlignTally;
use super::buoy::BuoyTally;
use super::era5::Era5Tally;
use super::qc::QcTally;
use super::record::{ddm_len, FourChannelSample};
use super::split::SplitSpec;
use super::standardize::Standardizer;
use crate::error::{Error, Result};
use crate::model::config::BASE_AP_COUNT;
use crate::synth::SynthSpec;

pub const SAMPLES_FORMAT: &str = "scawave-samples";
pub const SCHEMA_VERSION: u32 = 1;

/// How the samples were produced. Every field is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qc: Option<QcTally>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub align: Option<AlignTally>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub era5: Option<Era5Tally>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buoy: Option<BuoyTally>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capped_out: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub schema_version: u32,
    pub n_samples: usize,
    pub ddm_width: usize,
    pub ddm_height: usize,
    pub ap_count: usize,
    pub has_wind: bool,
    /// Statistics over the whole payload; `None` for an empty file.
    pub standardization: Option<Standardizer>,
    pub provenance: Provenance,
    pub payload_sha256: String,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn encode(samples: &[FourChannelSample]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn write_samples(
    path: &Path,
    samples: &[FourChannelSample],
    ddm_width: usize,
    ddm_height: usize,
    provenance: Provenance,
) -> Result<Manifest> {
    let n = ddm_len(ddm_width, ddm_height);
    for s in samples {
        s.validate(n).map_err(Error::Contract)?;
    }
    let payload = encode(samples)?;
    let standardization = if samples.is_empty() {
        None
    } else {
        Some(Standardizer::fit(samples)?)
    };
    let manifest = Manifest {
        format: SAMPLES_FORMAT.into(),
        schema_version: SCHEMA_VERSION,
        n_samples: samples.len(),
        ddm_width,
        ddm_height,
        ap_count: BASE_AP_COUNT,
        has_wind: !samples.is_empty() && samples.iter().all(|s| s.channels.iter().all(|c| c.wind_speed.is_some())),
        standardization,
        provenance,
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    std::fs::write(path, &payload)?;
    let mut m = serde_json::to_string_pretty(&manifest)?;
    m.push('\n');
    std::fs::write(manifest_path(path), m)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let m: Manifest = serde_json::from_str(&std::fs::read_to_string(manifest_path(path))?)?;
    if m.format != SAMPLES_FORMAT {
        return Err(Error::Format(format!("{}: not a sample manifest", path.display())));
    }
    if m.schema_version != SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "{}: schema version {} is not supported (expected {SCHEMA_VERSION})",
            path.display(),
            m.schema_version
        )));
    }
    Ok(m)
}

pub fn read_samples(path: &Path) -> Result<(Vec<FourChannelSample>, Manifest)> {
    let manifest = read_manifest(path)?;
    let payload = std::fs::read(path)?;
    let digest = hex::encode(Sha256::digest(&payload));
    if digest != manifest.payload_sha256 {
        return Err(Error::Format(format!(
            "{}: payload checksum mismatch (truncated or modified file)",
            path.display()
        )));
    }
    let text = std::str::from_utf8(&payload).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let n = ddm_len(manifest.ddm_width, manifest.ddm_height);
    let mut samples = Vec::with_capacity(manifest.n_samples);
    for (i, line) in text.lines().enumerate() {
        let s: FourChannelSample = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 1)))?;
        s.validate(n)
            .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 1)))?;
        samples.push(s);
    }
    if samples.len() != manifest.n_samples {
        return Err(Error::Format(format!(
            "{}: {} samples, manifest declares {}",
            path.display(),
            samples.len(),
            manifest.n_samples
        )));
    }
    Ok((samples, manifest))
}
