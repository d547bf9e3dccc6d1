//! Collocation pipeline: Level-1 records → quality control → channel
//! alignment → ERA5 or buoy matching → capped, split, canonical samples.

pub mod align;
pub mod buoy;
pub mod canonical;
pub mod era5;
pub mod geo;
pub mod qc;
pub mod record;
pub mod split;
pub mod standardize;
pub mod time;

pub use align::{align_channels, AlignedGroup};
pub use canonical::{read_samples, write_samples, Manifest, Provenance};
pub use record::{ChannelObs, FourChannelSample, L1Record, Source};
pub use split::{split_dataset, SplitSpec, Splits};
pub use standardize::{prepare, Example, Standardizer};

use crate::error::Result;

pub const SWH_CAP_M: f64 = 8.0;

/// Model-side view of one record: RCG appended, reference SWH attached.
pub fn channel_obs(r: &L1Record, swh_ref: f64, wind_speed: Option<f64>) -> Result<ChannelObs> {
    let a = &r.aps;
    let rcg = qc::compute_rcg(a.sp_rx_gain, r.geometry.range_tx_sp, r.geometry.range_sp_rx)?;
    Ok(ChannelObs {
        channel: r.channel,
        sp_lat: r.sp_lat,
        sp_lon: r.sp_lon,
        ddms: r.ddms.clone(),
        aps: vec![
            a.ddm_nbrcs,
            a.ddm_les,
            a.ddm_snr,
            a.gps_eirp,
            a.sp_rx_gain,
            a.sp_inc_angle,
            r.sp_lat,
            r.sp_lon,
            rcg,
        ],
        wind_speed,
        swh_ref,
    })
}

/// Drops every sample with any channel reference above 8 m. Returns the kept
/// samples and the number dropped.
pub fn cap_and_filter(samples: Vec<FourChannelSample>) -> (Vec<FourChannelSample>, usize) {
    let before = samples.len();
    let kept: Vec<_> = samples
        .into_iter()
        .filter(|s| s.channels.iter().all(|c| c.swh_ref <= SWH_CAP_M))
        .collect();
    let dropped = before - kept.len();
    (kept, dropped)
}
