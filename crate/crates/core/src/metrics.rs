//! Retrieval metrics, per-channel/averaged/binned reports, and plot-data exports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CHANNELS;
use crate::training::PredictionRecord;

/// Pairs with a reference below this are left out of MAPE in reports.
pub const MAPE_MIN_REF: f64 = 0.01;
pub const DEFAULT_BIN_EDGES: [f64; 9] = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];

fn check(pred: &[f64], refs: &[f64]) -> Result<()> {
    if pred.len() != refs.len() || pred.is_empty() {
        return Err(Error::Contract(format!(
            "metrics need equal non-zero lengths, got {} and {}",
            pred.len(),
            refs.len()
        )));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], refs: &[f64]) -> Result<f64> {
    check(pred, refs)?;
    let se: f64 = pred.iter().zip(refs).map(|(p, r)| (p - r) * (p - r)).sum();
    Ok((se / pred.len() as f64).sqrt())
}

pub fn mae(pred: &[f64], refs: &[f64]) -> Result<f64> {
    check(pred, refs)?;
    Ok(pred.iter().zip(refs).map(|(p, r)| (p - r).abs()).sum::<f64>() / pred.len() as f64)
}

/// Signed mean of `ŷ − y`.
pub fn bias(pred: &[f64], refs: &[f64]) -> Result<f64> {
    check(pred, refs)?;
    Ok(pred.iter().zip(refs).map(|(p, r)| p - r).sum::<f64>() / pred.len() as f64)
}

/// Mean absolute percentage error, in percent.
pub fn mape(pred: &[f64], refs: &[f64]) -> Result<f64> {
    check(pred, refs)?;
    if refs.iter().any(|&r| r == 0.0) {
        return Err(Error::Contract("MAPE is undefined with a zero reference".into()));
    }
    Ok(100.0 * pred.iter().zip(refs).map(|(p, r)| ((p - r) / r).abs()).sum::<f64>() / pred.len() as f64)
}

/// Pearson correlation; `None` when either vector is constant.
pub fn cc(pred: &[f64], refs: &[f64]) -> Result<Option<f64>> {
    check(pred, refs)?;
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mr = refs.iter().sum::<f64>() / n;
    let (mut num, mut sp, mut sr) = (0.0, 0.0, 0.0);
    for (p, r) in pred.iter().zip(refs) {
        num += (p - mp) * (r - mr);
        sp += (p - mp) * (p - mp);
        sr += (r - mr) * (r - mr);
    }
    if sp == 0.0 || sr == 0.0 {
        return Ok(None);
    }
    Ok(Some((num / (sp.sqrt() * sr.sqrt())).clamp(-1.0, 1.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
    pub bias: f64,
    /// `None` when every pair was excluded.
    pub mape_percent: Option<f64>,
    pub mape_excluded: usize,
    pub cc: Option<f64>,
}

impl MetricSet {
    pub fn compute(pred: &[f64], refs: &[f64]) -> Result<Self> {
        let (mp, mr): (Vec<f64>, Vec<f64>) = pred
            .iter()
            .zip(refs)
            .filter(|(_, r)| r.abs() >= MAPE_MIN_REF)
            .map(|(p, r)| (*p, *r))
            .unzip();
        Ok(Self {
            n: pred.len(),
            rmse: rmse(pred, refs)?,
            mae: mae(pred, refs)?,
            bias: bias(pred, refs)?,
            mape_percent: if mp.is_empty() { None } else { Some(mape(&mp, &mr)?) },
            mape_excluded: pred.len() - mp.len(),
            cc: cc(pred, refs)?,
        })
    }

    /// Plain mean of each metric; optional metrics average only when all are present.
    pub fn average(sets: &[MetricSet]) -> Self {
        let k = sets.len() as f64;
        let mean = |f: &dyn Fn(&MetricSet) -> f64| sets.iter().map(f).sum::<f64>() / k;
        let opt_mean = |f: &dyn Fn(&MetricSet) -> Option<f64>| {
            sets.iter().map(f).collect::<Option<Vec<f64>>>().map(|v| v.iter().sum::<f64>() / k)
        };
        Self {
            n: sets.iter().map(|s| s.n).sum(),
            rmse: mean(&|s| s.rmse),
            mae: mean(&|s| s.mae),
            bias: mean(&|s| s.bias),
            mape_percent: opt_mean(&|s| s.mape_percent),
            mape_excluded: sets.iter().map(|s| s.mape_excluded).sum(),
            cc: opt_mean(&|s| s.cc),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub channel: u8,
    pub metrics: MetricSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinMetrics {
    pub lo: f64,
    pub hi: f64,
    /// Pooled over all channels.
    pub metrics: MetricSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub channels: Vec<ChannelMetrics>,
    pub average: MetricSet,
    pub edges: Vec<f64>,
    /// Non-empty bins only.
    pub bins: Vec<BinMetrics>,
}

/// Index of the bin holding `v`: left-closed, with the last bin also closed on the right.
pub fn bin_index(edges: &[f64], v: f64) -> Option<usize> {
    let last = edges.len().checked_sub(1)?;
    if last == 0 || !(edges[0]..=edges[last]).contains(&v) {
        return None;
    }
    if v == edges[last] {
        return Some(last - 1);
    }
    edges.windows(2).position(|w| w[0] <= v && v < w[1])
}

/// Metrics per channel, their plain average, and per reference-SWH bin.
/// Empty bins are omitted.
pub fn report(records: &[PredictionRecord], edges: &[f64], config_hash: &str) -> Result<MetricsReport> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("bin edges must be strictly increasing with at least two entries".into()));
    }
    let mut channels = Vec::new();
    for c in 1..=CHANNELS as u8 {
        let (p, r): (Vec<f64>, Vec<f64>) = records
            .iter()
            .filter(|x| x.channel == c)
            .map(|x| (x.y_hat, x.y_ref))
            .unzip();
        if p.is_empty() {
            return Err(Error::Contract(format!("no predictions for channel {c}")));
        }
        channels.push(ChannelMetrics {
            channel: c,
            metrics: MetricSet::compute(&p, &r)?,
        });
    }
    let average = MetricSet::average(&channels.iter().map(|c| c.metrics.clone()).collect::<Vec<_>>());
    let mut binned: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); edges.len() - 1];
    for x in records {
        if let Some(b) = bin_index(edges, x.y_ref) {
            binned[b].0.push(x.y_hat);
            binned[b].1.push(x.y_ref);
        }
    }
    let bins = binned
        .into_iter()
        .enumerate()
        .filter(|(_, (p, _))| !p.is_empty())
        .map(|(b, (p, r))| {
            Ok(BinMetrics {
                lo: edges[b],
                hi: edges[b + 1],
                metrics: MetricSet::compute(&p, &r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        config_hash: config_hash.to_string(),
        channels,
        average,
        edges: edges.to_vec(),
        bins,
    })
}

#[derive(Serialize)]
struct MetricRow<'a> {
    group: String,
    n: usize,
    rmse: f64,
    mae: f64,
    bias: f64,
    mape_percent: Option<f64>,
    cc: Option<f64>,
    config_hash: &'a str,
}

#[derive(Serialize)]
struct EmptyRow<'a> {
    group: String,
    n: usize,
    rmse: Option<f64>,
    mae: Option<f64>,
    bias: Option<f64>,
    mape_percent: Option<f64>,
    cc: Option<f64>,
    config_hash: &'a str,
}

impl<'a> MetricRow<'a> {
    fn new(group: String, m: &MetricSet, config_hash: &'a str) -> Self {
        Self {
            group,
            n: m.n,
            rmse: m.rmse,
            mae: m.mae,
            bias: m.bias,
            mape_percent: m.mape_percent,
            cc: m.cc,
            config_hash,
        }
    }
}

impl MetricsReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Channel rows then the average row.
    pub fn write_channels_csv(&self, path: &Path) -> Result<()> {
        self.write_channels(csv::Writer::from_path(path)?)
    }

    /// One row per bin edge pair; empty bins have `n = 0` and blank metrics.
    pub fn write_bins_csv(&self, path: &Path) -> Result<()> {
        self.write_bins(csv::Writer::from_path(path)?)
    }

    pub fn write_bins<W: std::io::Write>(&self, mut w: csv::Writer<W>) -> Result<()> {
        for e in self.edges.windows(2) {
            let label = format!("[{},{})", e[0], e[1]);
            match self.bins.iter().find(|b| b.lo == e[0] && b.hi == e[1]) {
                Some(b) => w.serialize(MetricRow::new(label, &b.metrics, &self.config_hash))?,
                None => w.serialize(EmptyRow {
                    group: label,
                    n: 0,
                    rmse: None,
                    mae: None,
                    bias: None,
                    mape_percent: None,
                    cc: None,
                    config_hash: &self.config_hash,
                })?,
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_channels<W: std::io::Write>(&self, mut w: csv::Writer<W>) -> Result<()> {
        for c in &self.channels {
            w.serialize(MetricRow::new(format!("ch{}", c.channel), &c.metrics, &self.config_hash))?;
        }
        w.serialize(MetricRow::new("avg".into(), &self.average, &self.config_hash))?;
        w.flush()?;
        Ok(())
    }
}

/// Population standard deviation of each sample's four references, then the
/// `q`-quantile with linear interpolation between order statistics.
pub fn channel_sd_percentile(refs: &[[f64; CHANNELS]], q: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Config(format!("quantile must be in (0, 1], got {q}")));
    }
    if refs.is_empty() {
        return Err(Error::Contract("channel_sd_percentile of zero samples".into()));
    }
    let mut sds: Vec<f64> = refs
        .iter()
        .map(|r| {
            let m = r.iter().sum::<f64>() / CHANNELS as f64;
            (r.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / CHANNELS as f64).sqrt()
        })
        .collect();
    sds.sort_by(f64::total_cmp);
    let h = (sds.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sds.len() - 1);
    Ok(sds[lo] + (h - lo as f64) * (sds[hi] - sds[lo]))
}

/// Least-squares line `pred = slope · ref + intercept`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
}

pub fn fit_line(refs: &[f64], pred: &[f64]) -> Result<Option<LinearFit>> {
    check(pred, refs)?;
    let n = refs.len() as f64;
    let mx = refs.iter().sum::<f64>() / n;
    let my = pred.iter().sum::<f64>() / n;
    let sxx: f64 = refs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Ok(None);
    }
    let sxy: f64 = refs.iter().zip(pred).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok(Some(LinearFit {
        slope,
        intercept: my - slope * mx,
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterSummary {
    pub n: usize,
    pub bin_width: f64,
    pub fit: Option<LinearFit>,
    /// `((ref_bin, pred_bin), count)`, bin `i` covering `[i·w, (i+1)·w)`.
    pub histogram: Vec<((i64, i64), usize)>,
    pub config_hash: String,
}

pub fn scatter_summary(refs: &[f64], pred: &[f64], bin_width: f64, config_hash: &str) -> Result<ScatterSummary> {
    if !(bin_width > 0.0) {
        return Err(Error::Config(format!("bin width must be positive, got {bin_width}")));
    }
    let mut hist: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    for (r, p) in refs.iter().zip(pred) {
        *hist.entry(((r / bin_width).floor() as i64, (p / bin_width).floor() as i64)).or_default() += 1;
    }
    Ok(ScatterSummary {
        n: refs.len(),
        bin_width,
        fit: fit_line(refs, pred)?,
        histogram: hist.into_iter().collect(),
        config_hash: config_hash.to_string(),
    })
}

/// Writes `<stem>_points.csv`, `<stem>_hist.csv` and `<stem>_fit.json` into `dir`.
pub fn export_scatter(dir: &Path, stem: &str, refs: &[f64], pred: &[f64], bin_width: f64, config_hash: &str) -> Result<ScatterSummary> {
    let s = scatter_summary(refs, pred, bin_width, config_hash)?;
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}_points.csv")))?;
    w.write_record(["ref", "pred", "config_hash"])?;
    for (r, p) in refs.iter().zip(pred) {
        w.write_record([r.to_string(), p.to_string(), config_hash.to_string()])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}_hist.csv")))?;
    w.write_record(["ref_lo", "pred_lo", "count", "config_hash"])?;
    for ((i, j), n) in &s.histogram {
        w.write_record([
            (*i as f64 * bin_width).to_string(),
            (*j as f64 * bin_width).to_string(),
            n.to_string(),
            config_hash.to_string(),
        ])?;
    }
    w.flush()?;
    let mut fit = serde_json::to_string_pretty(&serde_json::json!({
        "n": s.n,
        "bin_width": s.bin_width,
        "fit": s.fit,
        "config_hash": config_hash,
    }))?;
    fit.push('\n');
    std::fs::write(dir.join(format!("{stem}_fit.json")), fit)?;
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasCell {
    pub lat_center: f64,
    pub lon_center: f64,
    pub bias: f64,
    pub n: usize,
}

/// Mean `pred − ref` per `cell_deg` lat/lon cell; empty cells are absent.
pub fn bias_grid(records: &[PredictionRecord], cell_deg: f64) -> Result<Vec<BiasCell>> {
    if !(cell_deg > 0.0) {
        return Err(Error::Config(format!("cell size must be positive, got {cell_deg}")));
    }
    let mut acc: BTreeMap<(i64, i64), (f64, usize)> = BTreeMap::new();
    for r in records {
        let key = (
            ((r.lat + 90.0) / cell_deg).floor() as i64,
            ((r.lon + 180.0) / cell_deg).floor() as i64,
        );
        let e = acc.entry(key).or_default();
        e.0 += r.y_hat - r.y_ref;
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|((i, j), (s, n))| BiasCell {
            lat_center: -90.0 + (i as f64 + 0.5) * cell_deg,
            lon_center: -180.0 + (j as f64 + 0.5) * cell_deg,
            bias: s / n as f64,
            n,
        })
        .collect())
}

pub fn export_bias_grid(path: &Path, records: &[PredictionRecord], cell_deg: f64, config_hash: &str) -> Result<Vec<BiasCell>> {
    let cells = bias_grid(records, cell_deg)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lat_center", "lon_center", "bias", "n", "config_hash"])?;
    for c in &cells {
        w.write_record([
            c.lat_center.to_string(),
            c.lon_center.to_string(),
            c.bias.to_string(),
            c.n.to_string(),
            config_hash.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(cells)
}
