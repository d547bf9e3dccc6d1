//! Synthetic four-channel data for desk-scale runs and pipeline tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::data::buoy::BuoyRecord;
use crate::data::era5::Era5Grid;
use crate::data::record::{Flags, Geometry, L1Record, Observables};
use crate::data::time::parse_utc;
use crate::data::{channel_obs, FourChannelSample, Source};
use crate::error::{Error, Result};
use crate::model::{CHANNELS, DDM_TYPES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub ddm_width: usize,
    pub ddm_height: usize,
    pub seed: u64,
    pub noise_sd: f64,
    pub swh_range: [f64; 2],
    /// 1 gives identical channel references (before noise), 0 independent ones.
    pub channel_corr: f64,
    /// DDM peak and `ddm_nbrcs`/`ddm_les` follow smooth monotone functions of SWH.
    pub planted_signal: bool,
    pub with_wind: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_samples: 256,
            ddm_width: 11,
            ddm_height: 17,
            seed: 0,
            noise_sd: 0.05,
            swh_range: [0.2, 8.0],
            channel_corr: 0.9,
            planted_signal: true,
            with_wind: false,
        }
    }
}

/// Timestamps span three years from here so the default split sees all three ranges.
const SPAN_START: &str = "2019-08-01T00:00:00Z";
const SPAN_SECONDS: i64 = 3 * 365 * 86_400;

/// Log-normal base SWH with roughly 88% of its mass in 1–3 m.
const LN_MU: f64 = 0.5878; // ln 1.8
const LN_SIGMA: f64 = 0.35;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.swh_range;
        if !(lo >= 0.0 && hi <= 8.0 && lo < hi) {
            return Err(Error::Config(format!("swh_range must satisfy 0 ≤ lo < hi ≤ 8, got [{lo}, {hi}]")));
        }
        if !(0.0..=1.0).contains(&self.channel_corr) {
            return Err(Error::Config("channel_corr must lie in [0, 1]".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config("noise_sd must be non-negative".into()));
        }
        if self.n_samples == 0 || self.ddm_width == 0 || self.ddm_height == 0 {
            return Err(Error::Config("n_samples and DDM dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Smooth decreasing map used for the planted `ddm_nbrcs`; inverse is [`planted_swh_from_nbrcs`].
pub fn planted_nbrcs(swh: f64) -> f64 {
    40.0 / (0.5 + swh)
}

pub fn planted_swh_from_nbrcs(nbrcs: f64) -> f64 {
    40.0 / nbrcs - 0.5
}

pub fn planted_les(swh: f64) -> f64 {
    30.0 * (-swh / 3.0).exp()
}

struct Draw<'a> {
    rng: &'a mut ChaCha8Rng,
    unit: Normal<f64>,
}

impl Draw<'_> {
    fn n(&mut self) -> f64 {
        self.unit.sample(self.rng)
    }

    fn u(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.random_range(lo..hi)
    }
}

/// DDMs for one channel: a Gaussian blob whose peak falls and spread grows with SWH.
fn ddms(d: &mut Draw, spec: &SynthSpec, swh: f64) -> Vec<f64> {
    let (w, h) = (spec.ddm_width, spec.ddm_height);
    let mut out = Vec::with_capacity(DDM_TYPES * w * h);
    let (peak, spread) = if spec.planted_signal {
        (planted_nbrcs(swh) / 10.0, 1.0 + 0.4 * swh)
    } else {
        (d.u(0.5, 8.0), d.u(1.0, 4.0))
    };
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 3.0);
    let scale = [1.0, 0.5 + 0.1 * spread, 2.0];
    for s in scale {
        for i in 0..w {
            for j in 0..h {
                let r2 = ((i as f64 - cx).powi(2) + (j as f64 - cy).powi(2)) / (2.0 * spread * spread);
                let v = s * peak * (-r2).exp() * (1.0 + spec.noise_sd * d.n());
                out.push(v.max(0.0));
            }
        }
    }
    out
}

fn record(d: &mut Draw, spec: &SynthSpec, timestamp: i64, channel: u8, swh: f64, lat: f64, lon: f64) -> L1Record {
    let (nbrcs, les) = if spec.planted_signal {
        (
            planted_nbrcs(swh) * (1.0 + spec.noise_sd * d.n()),
            planted_les(swh) * (1.0 + spec.noise_sd * d.n()),
        )
    } else {
        (d.u(5.0, 60.0), d.u(2.0, 30.0))
    };
    L1Record {
        timestamp,
        channel,
        sp_lat: lat,
        sp_lon: lon,
        ddms: ddms(d, spec, swh),
        aps: Observables {
            ddm_nbrcs: nbrcs.max(0.0),
            ddm_les: les.max(0.0),
            ddm_snr: d.u(2.0, 12.0),
            gps_eirp: d.u(500.0, 1500.0),
            sp_rx_gain: d.u(1.0, 15.0),
            sp_inc_angle: d.u(0.0, 60.0),
        },
        geometry: Geometry {
            range_tx_sp: d.u(2.0e7, 2.2e7),
            range_sp_rx: d.u(5.0e5, 8.0e5),
        },
        flags: Flags {
            quality_flags: 0,
            tracker_attitude_status: 0,
            roll_deg: d.u(-5.0, 5.0),
            yaw_deg: d.u(-2.0, 2.0),
            pitch_deg: d.u(-3.0, 3.0),
            distance_to_land_km: d.u(50.0, 2000.0),
            solar_contamination: false,
        },
    }
}

/// Four channel references mixed from a shared base.
fn channel_swh(d: &mut Draw, spec: &SynthSpec, base_dist: &LogNormal<f64>) -> [f64; CHANNELS] {
    let base = base_dist.sample(d.rng);
    let [lo, hi] = spec.swh_range;
    std::array::from_fn(|_| {
        let own = base_dist.sample(d.rng);
        let v = spec.channel_corr * base + (1.0 - spec.channel_corr) * own + spec.noise_sd * d.n();
        v.clamp(lo, hi)
    })
}

/// Canonical samples with references attached directly (no collocation step).
pub fn synth_samples(spec: &SynthSpec) -> Result<Vec<FourChannelSample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base_dist = LogNormal::new(LN_MU, LN_SIGMA).expect("valid log-normal");
    let mut d = Draw {
        rng: &mut rng,
        unit: Normal::new(0.0, 1.0).expect("unit normal"),
    };
    let start = parse_utc(SPAN_START)?;
    let mut out = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let timestamp = start + (i as i64 * SPAN_SECONDS) / spec.n_samples as i64;
        let swh = channel_swh(&mut d, spec, &base_dist);
        let mut channels = Vec::with_capacity(CHANNELS);
        for (c, &s) in swh.iter().enumerate() {
            let lat = d.u(-38.0, 38.0);
            let lon = d.u(-180.0, 180.0);
            let r = record(&mut d, spec, timestamp, c as u8 + 1, s, lat, lon);
            let wind = spec.with_wind.then(|| (3.0 + 2.5 * s + spec.noise_sd * d.n()).max(0.0));
            channels.push(channel_obs(&r, s, wind)?);
        }
        out.push(FourChannelSample {
            sample_id: i as u64,
            timestamp,
            source: Source::Era5,
            channels,
        });
    }
    Ok(out)
}

/// Raw inputs for the collocation pipeline: L1 records, a reanalysis grid
/// covering them, and buoys near some specular points.
#[derive(Clone, Debug)]
pub struct RawBundle {
    pub records: Vec<L1Record>,
    pub grid: Era5Grid,
    pub buoys: Vec<BuoyRecord>,
}

/// Smooth SWH field over the raw-bundle region.
fn field(t_hours: f64, lat: f64, lon: f64) -> f64 {
    2.0 + 0.6 * (0.7 * lat).sin() * (0.5 * lon).cos() + 0.3 * (t_hours / 5.0).sin()
}

const RAW_LAT0: f64 = 10.0;
const RAW_LON0: f64 = -20.0;
const RAW_NODES: usize = 9;

/// Records every 60 s inside a 4° box. Every seventh timestamp has its
/// channel-4 record flagged for solar contamination, so quality control
/// removes it and alignment discards that timestamp.
pub fn synth_raw(spec: &SynthSpec) -> Result<RawBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut d = Draw {
        rng: &mut rng,
        unit: Normal::new(0.0, 1.0).expect("unit normal"),
    };
    let start = parse_utc(SPAN_START)?;
    let span = (RAW_NODES - 1) as f64 * 0.5;
    let mut records = Vec::new();
    let mut buoys = Vec::new();
    for i in 0..spec.n_samples {
        let timestamp = start + 60 * i as i64;
        let th = (timestamp - start) as f64 / 3600.0;
        for c in 1..=CHANNELS as u8 {
            let lat = RAW_LAT0 + 0.1 + d.u(0.0, span - 0.2);
            let lon = RAW_LON0 + 0.1 + d.u(0.0, span - 0.2);
            let swh = field(th, lat, lon);
            let mut r = record(&mut d, spec, timestamp, c, swh, lat, lon);
            if c == 4 && i % 7 == 3 {
                r.flags.solar_contamination = true;
            }
            if i % 5 == 0 {
                buoys.push(BuoyRecord {
                    station_id: format!("B{i:04}{c}"),
                    lat: lat + 0.05,
                    lon: lon - 0.05,
                    timestamp: timestamp + 600,
                    swh,
                });
            }
            records.push(r);
        }
    }
    let hours = (60 * spec.n_samples as i64) / 3600 + 2;
    let times: Vec<i64> = (0..hours).map(|h| start + 3600 * h).collect();
    let lats: Vec<f64> = (0..RAW_NODES).map(|k| RAW_LAT0 + 0.5 * k as f64).collect();
    let lons: Vec<f64> = (0..RAW_NODES).map(|k| RAW_LON0 + 0.5 * k as f64).collect();
    let mut swh = Vec::with_capacity(times.len() * RAW_NODES * RAW_NODES);
    for &t in &times {
        for &la in &lats {
            for &lo in &lons {
                swh.push(field((t - start) as f64 / 3600.0, la, lo));
            }
        }
    }
    Ok(RawBundle {
        records,
        grid: Era5Grid {
            times,
            lats,
            lons,
            swh,
            mask: None,
            wind: None,
        },
        buoys,
    })
}
