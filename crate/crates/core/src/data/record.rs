use serde::{Deserialize, Serialize};

use crate::model::{CHANNELS, DDM_TYPES};

/// JSON has no NaN/Inf literals: accept `null`, `"NaN"`, `"Inf"`, `"-Inf"` so
/// non-finite upstream values reach quality control instead of failing the parse.
pub(crate) mod lenient {
    use serde::{Deserialize, Deserializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
        Null(()),
    }

    fn convert<E: serde::de::Error>(raw: Raw) -> Result<f64, E> {
        match raw {
            Raw::Num(v) => Ok(v),
            Raw::Null(()) => Ok(f64::NAN),
            Raw::Text(s) => match s.to_ascii_lowercase().as_str() {
                "nan" => Ok(f64::NAN),
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                other => other.parse().map_err(|_| E::custom(format!("not a number: {s:?}"))),
            },
        }
    }

    pub fn f64<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        convert(Raw::deserialize(d)?)
    }

    pub fn vec<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Raw>::deserialize(d)?.into_iter().map(convert).collect()
    }
}

/// Per-channel observables used as auxiliary parameters (before RCG is appended).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observables {
    #[serde(deserialize_with = "lenient::f64")]
    pub ddm_nbrcs: f64,
    #[serde(deserialize_with = "lenient::f64")]
    pub ddm_les: f64,
    #[serde(deserialize_with = "lenient::f64")]
    pub ddm_snr: f64,
    #[serde(deserialize_with = "lenient::f64")]
    pub gps_eirp: f64,
    #[serde(deserialize_with = "lenient::f64")]
    pub sp_rx_gain: f64,
    #[serde(deserialize_with = "lenient::f64")]
    pub sp_inc_angle: f64,
}

/// Transmitter→specular and specular→receiver path lengths in meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    #[serde(deserialize_with = "lenient::f64")]
    pub range_tx_sp: f64,
    #[serde(deserialize_with = "lenient::f64")]
    pub range_sp_rx: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flags {
    /// Bit 1 is the least significant bit.
    pub quality_flags: u32,
    /// 0 means OK.
    pub tracker_attitude_status: i32,
    #[serde(deserialize_with = "lenient::f64")]
    pub roll_deg: f64,
    #[serde(deserialize_with = "lenient::f64")]
    pub yaw_deg: f64,
    #[serde(deserialize_with = "lenient::f64")]
    pub pitch_deg: f64,
    #[serde(deserialize_with = "lenient::f64")]
    pub distance_to_land_km: f64,
    pub solar_contamination: bool,
}

/// One Level-1 observation of one channel, in the JSON-lines interchange format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L1Record {
    /// UTC seconds since the Unix epoch.
    pub timestamp: i64,
    pub channel: u8,
    #[serde(deserialize_with = "lenient::f64")]
    pub sp_lat: f64,
    #[serde(deserialize_with = "lenient::f64")]
    pub sp_lon: f64,
    /// `3 × W × H` row-major: DDM type, Doppler bin, delay bin.
    #[serde(deserialize_with = "lenient::vec")]
    pub ddms: Vec<f64>,
    pub aps: Observables,
    pub geometry: Geometry,
    pub flags: Flags,
}

impl L1Record {
    /// Every floating-point field, for the NaN/Inf and fill-value rules.
    pub fn float_fields(&self) -> impl Iterator<Item = f64> + '_ {
        let a = &self.aps;
        let f = &self.flags;
        [
            self.sp_lat,
            self.sp_lon,
            a.ddm_nbrcs,
            a.ddm_les,
            a.ddm_snr,
            a.gps_eirp,
            a.sp_rx_gain,
            a.sp_inc_angle,
            self.geometry.range_tx_sp,
            self.geometry.range_sp_rx,
            f.roll_deg,
            f.yaw_deg,
            f.pitch_deg,
            f.distance_to_land_km,
        ]
        .into_iter()
        .chain(self.ddms.iter().copied())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Era5,
    Buoy,
}

/// One channel of a collocated sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelObs {
    pub channel: u8,
    pub sp_lat: f64,
    pub sp_lon: f64,
    /// `3 × W × H` row-major, as in [`L1Record::ddms`].
    pub ddms: Vec<f64>,
    /// The nine base auxiliary parameters in model column order, RCG last.
    pub aps: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wind_speed: Option<f64>,
    /// Reference SWH in meters.
    pub swh_ref: f64,
}

/// Four synchronized channels with their reference SWH.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourChannelSample {
    pub sample_id: u64,
    pub timestamp: i64,
    pub source: Source,
    pub channels: Vec<ChannelObs>,
}

impl FourChannelSample {
    pub fn swh_refs(&self) -> [f64; CHANNELS] {
        std::array::from_fn(|c| self.channels[c].swh_ref)
    }

    /// Structural checks shared by readers and writers.
    pub fn validate(&self, ddm_len: usize) -> Result<(), String> {
        if self.channels.len() != CHANNELS {
            return Err(format!("sample {} has {} channels", self.sample_id, self.channels.len()));
        }
        for (i, ch) in self.channels.iter().enumerate() {
            if usize::from(ch.channel) != i + 1 {
                return Err(format!("sample {} channel slot {i} holds channel {}", self.sample_id, ch.channel));
            }
            if ch.ddms.len() != ddm_len {
                return Err(format!(
                    "sample {} channel {} has {} DDM values, expected {ddm_len}",
                    self.sample_id,
                    ch.channel,
                    ch.ddms.len()
                ));
            }
            if ch.aps.len() != crate::model::config::BASE_AP_COUNT {
                return Err(format!("sample {} channel {} has {} APs", self.sample_id, ch.channel, ch.aps.len()));
            }
        }
        Ok(())
    }
}

/// Values per channel in a `W × H` DDM stack.
pub fn ddm_len(width: usize, height: usize) -> usize {
    DDM_TYPES * width * height
}
