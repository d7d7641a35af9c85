use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::features::InstanceKey;
use crate::cohort::ParticipantId;
use crate::seed::hex_digest;

/// Participants with fewer instances than this go entirely to training.
pub const MIN_SPLIT_INSTANCES: usize = 5;

/// Indices into the instance list, per split, each in (participant, time) order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitAssignment {
    /// SHA-256 over the sorted `(split, participant, timestamp)` membership.
    pub fn digest(&self, keys: &[InstanceKey]) -> String {
        let mut s = String::new();
        for (name, idx) in [("train", &self.train), ("validation", &self.validation), ("test", &self.test)] {
            let mut members: Vec<&InstanceKey> = idx.iter().map(|&i| &keys[i]).collect();
            members.sort();
            for k in members {
                s.push_str(&format!("{name} {} {}\n", k.participant_id, k.ema_timestamp.millis()));
            }
        }
        hex_digest(s.as_bytes())
    }
}

/// Per participant, the earliest 60% of instances train, the next 20%
/// validate and the rest test (counts floored).
pub fn temporal_split(keys: &[InstanceKey]) -> SplitAssignment {
    let mut groups: BTreeMap<&ParticipantId, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        groups.entry(&k.participant_id).or_default().push(i);
    }
    let mut out = SplitAssignment {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for idx in groups.values_mut() {
        idx.sort_by_key(|&i| (keys[i].ema_timestamp, i));
        let n = idx.len();
        let (n_train, n_val) = if n < MIN_SPLIT_INSTANCES { (n, 0) } else { (n * 6 / 10, n * 2 / 10) };
        out.train.extend_from_slice(&idx[..n_train]);
        out.validation.extend_from_slice(&idx[n_train..n_train + n_val]);
        out.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::Timestamp;

    fn keys(pid: &str, times: &[i64]) -> Vec<InstanceKey> {
        times
            .iter()
            .map(|&t| InstanceKey {
                participant_id: ParticipantId::new(pid).unwrap(),
                ema_timestamp: Timestamp::from_secs(t),
            })
            .collect()
    }

    #[test]
    fn proportions_and_rounding() {
        let k = keys("a", &(0..10).collect::<Vec<_>>());
        let s = temporal_split(&k);
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (6, 2, 2));
        assert_eq!(s.train, vec![0, 1, 2, 3, 4, 5]);
        let one = temporal_split(&keys("b", &[5]));
        assert_eq!((one.train.len(), one.validation.len(), one.test.len()), (1, 0, 0));
        let seven = temporal_split(&keys("c", &(0..7).collect::<Vec<_>>()));
        assert_eq!((seven.train.len(), seven.validation.len(), seven.test.len()), (4, 1, 2));
    }

    #[test]
    fn shuffled_input_gives_same_membership() {
        let sorted = keys("a", &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]);
        let shuffled = keys("a", &[7, 2, 9, 1, 10, 4, 3, 8, 6, 5]);
        let a = temporal_split(&sorted);
        let b = temporal_split(&shuffled);
        assert_eq!(a.digest(&sorted), b.digest(&shuffled));
        let test_times: Vec<_> = b.test.iter().map(|&i| shuffled[i].ema_timestamp).collect();
        assert_eq!(test_times, vec![Timestamp::from_secs(9), Timestamp::from_secs(10)]);
    }
}
