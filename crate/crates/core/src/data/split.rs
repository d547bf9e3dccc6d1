//! Temporal train/validation/test assignment with optional seeded subsampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::FourChannelSample;
use super::time::parse_utc;
use crate::error::{Error, Result};

/// Half-open `[start, end)` in UTC seconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeRange {
    pub start: i64,
    pub end: i64,
}

impl TimeRange {
    pub fn contains(&self, t: i64) -> bool {
        self.start <= t && t < self.end
    }

    pub fn overlaps(&self, other: &TimeRange) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn parse(start: &str, end: &str) -> Result<Self> {
        Ok(Self {
            start: parse_utc(start)?,
            end: parse_utc(end)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: TimeRange,
    pub val: TimeRange,
    pub test: TimeRange,
    #[serde(default)]
    pub train_count: Option<usize>,
    #[serde(default)]
    pub val_count: Option<usize>,
    #[serde(default)]
    pub test_count: Option<usize>,
    pub seed: u64,
}

impl Default for SplitSpec {
    /// One year each from 2019-08-01; full-scale counts are 3M / 0.5M / 3M.
    fn default() -> Self {
        let r = |a, b| TimeRange::parse(a, b).expect("static dates");
        Self {
            train: r("2019-08-01", "2020-08-01"),
            val: r("2020-08-01", "2021-08-01"),
            test: r("2021-08-01", "2022-08-01"),
            train_count: None,
            val_count: None,
            test_count: None,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let named = [("train", self.train), ("val", self.val), ("test", self.test)];
        for (n, r) in named {
            if r.start >= r.end {
                return Err(Error::Config(format!("{n} split range is empty")));
            }
        }
        for i in 0..3 {
            for j in i + 1..3 {
                if named[i].1.overlaps(&named[j].1) {
                    return Err(Error::Config(format!(
                        "{} and {} split ranges overlap",
                        named[i].0, named[j].0
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<FourChannelSample>,
    pub val: Vec<FourChannelSample>,
    pub test: Vec<FourChannelSample>,
}

fn subsample(v: Vec<FourChannelSample>, count: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<FourChannelSample> {
    match count {
        Some(k) if k < v.len() => {
            let mut idx = rand::seq::index::sample(rng, v.len(), k).into_vec();
            idx.sort_unstable();
            let mut keep = vec![false; v.len()];
            for i in idx {
                keep[i] = true;
            }
            v.into_iter().zip(keep).filter(|(_, k)| *k).map(|(s, _)| s).collect()
        }
        _ => v,
    }
}

/// Assigns samples by timestamp; samples outside every range are dropped.
/// Subsampling keeps the original order.
pub fn split_dataset(samples: Vec<FourChannelSample>, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let mut s = Splits::default();
    for x in samples {
        if spec.train.contains(x.timestamp) {
            s.train.push(x);
        } else if spec.val.contains(x.timestamp) {
            s.val.push(x);
        } else if spec.test.contains(x.timestamp) {
            s.test.push(x);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(Splits {
        train: subsample(s.train, spec.train_count, &mut rng),
        val: subsample(s.val, spec.val_count, &mut rng),
        test: subsample(s.test, spec.test_count, &mut rng),
    })
}
