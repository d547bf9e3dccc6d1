//! Quality control of Level-1 records.

use serde::{Deserialize, Serialize};

use super::geo::normalize_lon;
use super::record::{ddm_len, L1Record};
use crate::error::{Error, Result};
use crate::model::CHANNELS;

pub const MIN_RCG: f64 = 3.0;
pub const MAX_ROLL_DEG: f64 = 30.0;
pub const MAX_YAW_DEG: f64 = 5.0;
pub const MAX_PITCH_DEG: f64 = 10.0;
pub const MIN_LAND_DISTANCE_KM: f64 = 25.0;
/// Bits 1..=28 of the quality flag word.
pub const QUALITY_MASK: u32 = 0x0FFF_FFFF;
/// Values at or below this are treated as fill (−9999, −99999, ...).
pub const FILL_THRESHOLD: f64 = -9999.0;

pub fn is_fill(v: f64) -> bool {
    v <= FILL_THRESHOLD
}

/// `gain · 10²⁷ / (R_tx² · R_rx²)` with ranges in meters.
pub fn compute_rcg(sp_rx_gain: f64, range_tx_sp: f64, range_sp_rx: f64) -> Result<f64> {
    if !(range_tx_sp > 0.0 && range_sp_rx > 0.0) {
        return Err(Error::Contract(format!(
            "RCG needs positive ranges, got {range_tx_sp} and {range_sp_rx}"
        )));
    }
    let (a, b) = (range_tx_sp * range_tx_sp, range_sp_rx * range_sp_rx);
    Ok(sp_rx_gain * 1e27 / a / b)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rejection {
    Malformed,
    NonFinite,
    FillValue,
    NegativeObservable,
    LowRcg,
    SolarContamination,
    AttitudeStatus,
    AttitudeAngles,
    NearLand,
    QualityFlags,
}

/// Per-rule rejection counts. `input = kept + Σ rejections`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QcTally {
    pub input: usize,
    pub kept: usize,
    pub malformed: usize,
    pub non_finite: usize,
    pub fill_value: usize,
    pub negative_observable: usize,
    pub low_rcg: usize,
    pub solar_contamination: usize,
    pub attitude_status: usize,
    pub attitude_angles: usize,
    pub near_land: usize,
    pub quality_flags: usize,
}

impl QcTally {
    pub fn slot(&mut self, r: Rejection) -> &mut usize {
        match r {
            Rejection::Malformed => &mut self.malformed,
            Rejection::NonFinite => &mut self.non_finite,
            Rejection::FillValue => &mut self.fill_value,
            Rejection::NegativeObservable => &mut self.negative_observable,
            Rejection::LowRcg => &mut self.low_rcg,
            Rejection::SolarContamination => &mut self.solar_contamination,
            Rejection::AttitudeStatus => &mut self.attitude_status,
            Rejection::AttitudeAngles => &mut self.attitude_angles,
            Rejection::NearLand => &mut self.near_land,
            Rejection::QualityFlags => &mut self.quality_flags,
        }
    }

    pub fn rejected(&self) -> usize {
        self.malformed
            + self.non_finite
            + self.fill_value
            + self.negative_observable
            + self.low_rcg
            + self.solar_contamination
            + self.attitude_status
            + self.attitude_angles
            + self.near_land
            + self.quality_flags
    }
}

/// The first rule a record violates, or `Ok` with its RCG.
/// Structural problems are checked before the NaN and fill rules, range
/// problems (latitude, path lengths) after them.
pub fn check_record(r: &L1Record, width: usize, height: usize) -> std::result::Result<f64, Rejection> {
    if !(1..=CHANNELS as u8).contains(&r.channel) || r.ddms.len() != ddm_len(width, height) {
        return Err(Rejection::Malformed);
    }
    if r.float_fields().any(|v| !v.is_finite()) {
        return Err(Rejection::NonFinite);
    }
    if r.float_fields().any(is_fill) {
        return Err(Rejection::FillValue);
    }
    if !(-90.0..=90.0).contains(&r.sp_lat) || r.geometry.range_tx_sp <= 0.0 || r.geometry.range_sp_rx <= 0.0 {
        return Err(Rejection::Malformed);
    }
    let a = &r.aps;
    if a.ddm_nbrcs < 0.0 || a.ddm_les < 0.0 || a.ddm_snr < 0.0 || a.sp_rx_gain < 0.0 {
        return Err(Rejection::NegativeObservable);
    }
    let rcg = compute_rcg(a.sp_rx_gain, r.geometry.range_tx_sp, r.geometry.range_sp_rx)
        .map_err(|_| Rejection::Malformed)?;
    if rcg < MIN_RCG {
        return Err(Rejection::LowRcg);
    }
    let f = &r.flags;
    if f.solar_contamination {
        return Err(Rejection::SolarContamination);
    }
    if f.tracker_attitude_status != 0 {
        return Err(Rejection::AttitudeStatus);
    }
    if f.roll_deg.abs() > MAX_ROLL_DEG || f.yaw_deg.abs() > MAX_YAW_DEG || f.pitch_deg.abs() > MAX_PITCH_DEG {
        return Err(Rejection::AttitudeAngles);
    }
    if f.distance_to_land_km < MIN_LAND_DISTANCE_KM {
        return Err(Rejection::NearLand);
    }
    if f.quality_flags & QUALITY_MASK != 0 {
        return Err(Rejection::QualityFlags);
    }
    Ok(rcg)
}

/// Applies all rules; kept records have their longitude wrapped to `[-180, 180)`.
/// `unparsed` counts input lines that never became records and is tallied as malformed.
pub fn quality_control(records: Vec<L1Record>, unparsed: usize, width: usize, height: usize) -> (Vec<L1Record>, QcTally) {
    let mut tally = QcTally {
        input: records.len() + unparsed,
        malformed: unparsed,
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(records.len());
    for mut r in records {
        match check_record(&r, width, height) {
            Ok(_) => {
                r.sp_lon = normalize_lon(r.sp_lon);
                kept.push(r);
            }
            Err(rule) => *tally.slot(rule) += 1,
        }
    }
    tally.kept = kept.len();
    (kept, tally)
}

/// Reads JSON-lines records; lines that fail to parse are counted, not fatal.
pub fn read_l1_jsonl(path: &std::path::Path) -> Result<(Vec<L1Record>, usize)> {
    use std::io::BufRead;
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    let mut bad = 0;
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<L1Record>(&line) {
            Ok(r) => records.push(r),
            Err(e) => {
                log::debug!("unparseable L1 record: {e}");
                bad += 1;
            }
        }
    }
    Ok((records, bad))
}

pub fn write_l1_jsonl(path: &std::path::Path, records: &[L1Record]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
