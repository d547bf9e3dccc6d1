//! Reanalysis grid collocation: bilinear in space, then linear in time.

use serde::{Deserialize, Serialize};

use super::align::AlignedGroup;
use super::geo::normalize_lon;
use super::record::{lenient, FourChannelSample, Source};
use crate::error::{Error, Result};

pub const GRID_STEP_DEG: f64 = 0.5;
pub const GRID_STEP_S: i64 = 3600;

/// Gridded SWH (and optional wind) on hourly, 0.5° axes.
///
/// Values are row-major over `[time][lat][lon]`. A node is missing when its
/// mask entry is true or its value is `null`/NaN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Era5Grid {
    pub times: Vec<i64>,
    pub lats: Vec<f64>,
    pub lons: Vec<f64>,
    #[serde(deserialize_with = "lenient::vec")]
    pub swh: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wind: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Era5Miss {
    OutsideGrid,
    Masked,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Era5Value {
    pub swh: f64,
    pub wind: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Era5Tally {
    pub groups: usize,
    pub matched: usize,
    pub outside_grid: usize,
    pub masked: usize,
}

fn check_axis(name: &str, axis: &[f64]) -> Result<()> {
    if axis.len() < 2 {
        return Err(Error::Format(format!("{name} axis needs at least 2 nodes")));
    }
    let step = axis[1] - axis[0];
    if (step.abs() - GRID_STEP_DEG).abs() > 1e-9 {
        return Err(Error::Format(format!("{name} spacing {step} is not {GRID_STEP_DEG}°")));
    }
    for w in axis.windows(2) {
        if ((w[1] - w[0]) - step).abs() > 1e-9 {
            return Err(Error::Format(format!("{name} axis is not uniformly spaced at {} → {}", w[0], w[1])));
        }
    }
    Ok(())
}

/// Bracketing index pair and fractional weight on the second node.
fn bracket(start: f64, step: f64, n: usize, x: f64) -> Option<(usize, usize, f64)> {
    let u = (x - start) / step;
    let last = (n - 1) as f64;
    if !(-1e-9..=last + 1e-9).contains(&u) {
        return None;
    }
    let u = u.clamp(0.0, last);
    let i = (u.floor() as usize).min(n - 2);
    Some((i, i + 1, u - i as f64))
}

impl Era5Grid {
    pub fn validate(&self) -> Result<()> {
        if self.times.len() < 2 {
            return Err(Error::Format("time axis needs at least 2 hours".into()));
        }
        for w in self.times.windows(2) {
            if w[1] - w[0] != GRID_STEP_S {
                return Err(Error::Format(format!("time axis not hourly at {} → {}", w[0], w[1])));
            }
        }
        check_axis("lat", &self.lats)?;
        check_axis("lon", &self.lons)?;
        let n = self.times.len() * self.lats.len() * self.lons.len();
        if self.swh.len() != n {
            return Err(Error::Format(format!("grid has {} SWH values, axes need {n}", self.swh.len())));
        }
        if self.mask.as_ref().is_some_and(|m| m.len() != n) {
            return Err(Error::Format("mask length does not match axes".into()));
        }
        if self.wind.as_ref().is_some_and(|w| w.len() != n) {
            return Err(Error::Format("wind length does not match axes".into()));
        }
        Ok(())
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        let grid: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    fn index(&self, t: usize, la: usize, lo: usize) -> usize {
        (t * self.lats.len() + la) * self.lons.len() + lo
    }

    fn is_global_lon(&self) -> bool {
        (self.lons.len() as f64 * GRID_STEP_DEG - 360.0).abs() < 1e-9
    }

    fn lon_bracket(&self, lon: f64) -> Option<(usize, usize, f64)> {
        let n = self.lons.len();
        let step = self.lons[1] - self.lons[0];
        if self.is_global_lon() {
            // Periodic axis: the last cell wraps to node 0.
            let u = ((lon - self.lons[0]) / step).rem_euclid(n as f64);
            let i = (u.floor() as usize).min(n - 1);
            return Some((i, (i + 1) % n, u - i as f64));
        }
        let start = self.lons[0];
        bracket(start, step, n, lon)
            .or_else(|| bracket(start, step, n, lon + 360.0))
            .or_else(|| bracket(start, step, n, lon - 360.0))
    }

    /// Interpolated SWH at `(t, lat, lon)`. All eight surrounding space-time
    /// nodes must be present; otherwise the point is reported as masked.
    pub fn interpolate(&self, t: i64, lat: f64, lon: f64) -> std::result::Result<Era5Value, Era5Miss> {
        let (t0, t1, wt) = bracket(self.times[0] as f64, GRID_STEP_S as f64, self.times.len(), t as f64)
            .ok_or(Era5Miss::OutsideGrid)?;
        let (a0, a1, wa) =
            bracket(self.lats[0], self.lats[1] - self.lats[0], self.lats.len(), lat).ok_or(Era5Miss::OutsideGrid)?;
        let (o0, o1, wo) = self.lon_bracket(normalize_lon(lon)).ok_or(Era5Miss::OutsideGrid)?;
        let nodes = [t0, t1].map(|ti| [(a0, o0), (a0, o1), (a1, o0), (a1, o1)].map(|(a, o)| self.index(ti, a, o)));
        for &i in nodes.iter().flatten() {
            if !self.swh[i].is_finite() || self.mask.as_ref().is_some_and(|m| m[i]) {
                return Err(Era5Miss::Masked);
            }
        }
        let blend = |values: &[f64]| -> f64 {
            let plane = |n: &[usize; 4]| {
                let lo = values[n[0]] * (1.0 - wo) + values[n[1]] * wo;
                let hi = values[n[2]] * (1.0 - wo) + values[n[3]] * wo;
                lo * (1.0 - wa) + hi * wa
            };
            plane(&nodes[0]) * (1.0 - wt) + plane(&nodes[1]) * wt
        };
        Ok(Era5Value {
            swh: blend(&self.swh),
            wind: self.wind.as_deref().map(blend),
        })
    }
}

/// Attaches interpolated reference SWH to every channel of an aligned group.
pub fn match_era5(group: &AlignedGroup, grid: &Era5Grid, sample_id: u64) -> std::result::Result<FourChannelSample, Era5Miss> {
    let mut channels = Vec::with_capacity(group.records.len());
    for r in &group.records {
        let v = grid.interpolate(group.timestamp, r.sp_lat, r.sp_lon)?;
        let obs = super::channel_obs(r, v.swh, v.wind).map_err(|_| Era5Miss::OutsideGrid)?;
        channels.push(obs);
    }
    Ok(FourChannelSample {
        sample_id,
        timestamp: group.timestamp,
        source: Source::Era5,
        channels,
    })
}

/// Matches every group, numbering surviving samples consecutively from 0.
pub fn match_era5_all(groups: &[AlignedGroup], grid: &Era5Grid) -> (Vec<FourChannelSample>, Era5Tally) {
    let mut tally = Era5Tally {
        groups: groups.len(),
        ..Default::default()
    };
    let mut out = Vec::new();
    for g in groups {
        match match_era5(g, grid, out.len() as u64) {
            Ok(s) => out.push(s),
            Err(Era5Miss::OutsideGrid) => tally.outside_grid += 1,
            Err(Era5Miss::Masked) => tally.masked += 1,
        }
    }
    tally.matched = out.len();
    (out, tally)
}
