//! Grouping of per-channel records into synchronized four-channel observations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::record::L1Record;
use crate::model::CHANNELS;

#[derive(Clone, Debug, PartialEq)]
pub struct AlignedGroup {
    pub timestamp: i64,
    /// Channels 1..=4 in order.
    pub records: Vec<L1Record>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignTally {
    pub timestamps: usize,
    pub complete: usize,
    pub incomplete: usize,
    pub duplicate: usize,
}

/// Groups by exact timestamp. A timestamp survives only with exactly one
/// record for each channel; a repeated channel discards the whole timestamp.
pub fn align_channels(records: Vec<L1Record>) -> (Vec<AlignedGroup>, AlignTally) {
    let mut by_time: BTreeMap<i64, Vec<L1Record>> = BTreeMap::new();
    for r in records {
        by_time.entry(r.timestamp).or_default().push(r);
    }
    let mut tally = AlignTally {
        timestamps: by_time.len(),
        ..Default::default()
    };
    let mut groups = Vec::new();
    for (timestamp, mut recs) in by_time {
        recs.sort_by_key(|r| r.channel);
        let mut seen = [0usize; CHANNELS];
        for r in &recs {
            if let Some(s) = usize::from(r.channel).checked_sub(1).and_then(|i| seen.get_mut(i)) {
                *s += 1;
            }
        }
        if seen.iter().any(|&n| n > 1) {
            tally.duplicate += 1;
        } else if recs.len() != CHANNELS || seen.iter().any(|&n| n != 1) {
            tally.incomplete += 1;
        } else {
            tally.complete += 1;
            groups.push(AlignedGroup { timestamp, records: recs });
        }
    }
    (groups, tally)
}
