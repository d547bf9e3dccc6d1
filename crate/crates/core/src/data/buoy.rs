//! In-situ buoy collocation, matched independently per channel.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::geo::haversine;
use super::record::{FourChannelSample, L1Record, Source};
use super::time::{format_utc, parse_utc};
use crate::error::{Error, Result};
use crate::model::CHANNELS;

pub const MAX_DISTANCE_KM: f64 = 25.0;
pub const MAX_TIME_OFFSET_S: i64 = 1800;

#[derive(Clone, Debug, PartialEq)]
pub struct BuoyRecord {
    pub station_id: String,
    pub lat: f64,
    pub lon: f64,
    pub timestamp: i64,
    pub swh: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct BuoyRow {
    station_id: String,
    lat: f64,
    lon: f64,
    iso_time: String,
    swh_m: f64,
}

/// Reads `station_id,lat,lon,iso_time,swh_m`. Negative or non-finite SWH is a format error.
pub fn read_buoy_csv(path: &Path) -> Result<Vec<BuoyRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<BuoyRow>().enumerate() {
        let row = row?;
        if !(row.swh_m.is_finite() && row.swh_m >= 0.0) {
            return Err(Error::Format(format!("buoy row {}: invalid swh_m {}", i + 1, row.swh_m)));
        }
        out.push(BuoyRecord {
            timestamp: parse_utc(&row.iso_time)?,
            station_id: row.station_id,
            lat: row.lat,
            lon: row.lon,
            swh: row.swh_m,
        });
    }
    Ok(out)
}

pub fn write_buoy_csv(path: &Path, buoys: &[BuoyRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for b in buoys {
        w.serialize(BuoyRow {
            station_id: b.station_id.clone(),
            lat: b.lat,
            lon: b.lon,
            iso_time: format_utc(b.timestamp),
            swh_m: b.swh,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Both thresholds are inclusive.
pub fn within_thresholds(distance_km: f64, dt_s: i64) -> bool {
    distance_km <= MAX_DISTANCE_KM && dt_s.abs() <= MAX_TIME_OFFSET_S
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BuoyPair {
    pub timestamp: i64,
    pub channel: u8,
    pub station_id: String,
    pub distance_km: f64,
    pub dt_s: i64,
    pub swh: f64,
}

/// Nearest buoy in space within both thresholds; ties go to the nearest in
/// time, then to the lexicographically smaller station id.
pub fn match_record(rec: &L1Record, buoys: &[BuoyRecord]) -> Option<BuoyPair> {
    buoys
        .iter()
        .filter_map(|b| {
            let dt = b.timestamp - rec.timestamp;
            if dt.abs() > MAX_TIME_OFFSET_S {
                return None;
            }
            let d = haversine(rec.sp_lat, rec.sp_lon, b.lat, b.lon);
            within_thresholds(d, dt).then_some((d, dt, b))
        })
        .min_by(|x, y| {
            x.0.total_cmp(&y.0)
                .then(x.1.abs().cmp(&y.1.abs()))
                .then_with(|| x.2.station_id.cmp(&y.2.station_id))
        })
        .map(|(d, dt, b)| BuoyPair {
            timestamp: rec.timestamp,
            channel: rec.channel,
            station_id: b.station_id.clone(),
            distance_km: d,
            dt_s: dt,
            swh: b.swh,
        })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuoyTally {
    pub records: usize,
    pub matched_records: usize,
    pub samples: usize,
}

#[derive(Clone, Debug)]
pub struct BuoyOutcome {
    pub pairs: Vec<BuoyPair>,
    pub samples: Vec<FourChannelSample>,
    pub tally: BuoyTally,
}

/// Matches each record on its own, then keeps timestamps where all four
/// channels found a buoy (exactly one record per channel).
pub fn match_buoy(records: &[L1Record], buoys: &[BuoyRecord]) -> Result<BuoyOutcome> {
    let mut pairs = Vec::new();
    let mut by_time: BTreeMap<i64, Vec<(&L1Record, f64)>> = BTreeMap::new();
    for r in records {
        if let Some(p) = match_record(r, buoys) {
            by_time.entry(r.timestamp).or_default().push((r, p.swh));
            pairs.push(p);
        }
    }
    let mut samples = Vec::new();
    for (timestamp, mut group) in by_time {
        group.sort_by_key(|(r, _)| r.channel);
        let complete = group.len() == CHANNELS && group.iter().enumerate().all(|(i, (r, _))| usize::from(r.channel) == i + 1);
        if !complete {
            continue;
        }
        let channels = group
            .iter()
            .map(|(r, swh)| super::channel_obs(r, *swh, None))
            .collect::<Result<Vec<_>>>()?;
        samples.push(FourChannelSample {
            sample_id: samples.len() as u64,
            timestamp,
            source: Source::Buoy,
            channels,
        });
    }
    Ok(BuoyOutcome {
        tally: BuoyTally {
            records: records.len(),
            matched_records: pairs.len(),
            samples: samples.len(),
        },
        pairs,
        samples,
    })
}
