use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::{Error, Result};

/// Cross-session split: disjoint session sets covering every session present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_sessions: BTreeSet<u32>,
    pub test_sessions: BTreeSet<u32>,
}

impl SplitSpec {
    pub fn new(train: impl IntoIterator<Item = u32>, test: impl IntoIterator<Item = u32>) -> Self {
        Self {
            train_sessions: train.into_iter().collect(),
            test_sessions: test.into_iter().collect(),
        }
    }

    /// The first `n` sessions (ascending id) train, the rest test.
    pub fn first_sessions(dataset: &LabeledDataset, n: usize) -> Self {
        let sessions: Vec<u32> = dataset.sessions().into_iter().collect();
        let n = n.min(sessions.len());
        Self::new(sessions[..n].iter().copied(), sessions[n..].iter().copied())
    }

    fn validate(&self, dataset: &LabeledDataset) -> Result<()> {
        if let Some(s) = self.train_sessions.intersection(&self.test_sessions).next() {
            return Err(Error::invalid(
                "split",
                format!("session {s} is in both train and test"),
            ));
        }
        let present = dataset.sessions();
        for s in self.train_sessions.iter().chain(&self.test_sessions) {
            if !present.contains(s) {
                return Err(Error::invalid("split", format!("unknown session {s}")));
            }
        }
        for s in &present {
            if !self.train_sessions.contains(s) && !self.test_sessions.contains(s) {
                return Err(Error::invalid(
                    "split",
                    format!("session {s} is not assigned"),
                ));
            }
        }
        Ok(())
    }
}

/// Partition trials by session id, preserving input order within each side.
pub fn split_by_session(
    dataset: &LabeledDataset,
    spec: &SplitSpec,
) -> Result<(LabeledDataset, LabeledDataset)> {
    spec.validate(dataset)?;
    let (train, test): (Vec<usize>, Vec<usize>) = (0..dataset.n_trials())
        .partition(|&i| spec.train_sessions.contains(&dataset.session_ids()[i]));
    Ok((dataset.select(&train)?, dataset.select(&test)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::tests::toy;
    use proptest::prelude::*;

    #[test]
    fn train_holds_exactly_session_one() {
        let d = toy(4, 2, 2, 1, 3);
        let (train, test) = split_by_session(&d, &SplitSpec::new([1], [2])).unwrap();
        assert!(train.session_ids().iter().all(|&s| s == 1));
        assert!(test.session_ids().iter().all(|&s| s == 2));
        assert_eq!(train.n_trials() + test.n_trials(), d.n_trials());
        assert_eq!(train.trial(2), d.trial(4));
    }

    #[test]
    fn unknown_or_overlapping_sessions_fail() {
        let d = toy(4, 2, 2, 1, 3);
        assert!(split_by_session(&d, &SplitSpec::new([1], [3])).is_err());
        assert!(split_by_session(&d, &SplitSpec::new([1, 2], [2])).is_err());
        assert!(split_by_session(&d, &SplitSpec::new([1], [])).is_err());
    }

    proptest! {
        #[test]
        fn split_is_an_ordered_partition(sessions in proptest::collection::vec(1u32..4, 12)) {
            let mut parts = toy(6, 2, 2, 1, 2).into_parts();
            parts.session_ids = sessions;
            let d = LabeledDataset::new(parts).unwrap();
            let all: Vec<u32> = d.sessions().into_iter().collect();
            for cut in 0..=all.len() {
                let spec = SplitSpec::new(all[..cut].iter().copied(), all[cut..].iter().copied());
                // Either side may lack a class or user; validation errors are fine then.
                if let Ok((tr, te)) = split_by_session(&d, &spec) {
                    prop_assert_eq!(tr.n_trials() + te.n_trials(), d.n_trials());
                    let expect_tr: Vec<usize> = (0..d.n_trials())
                        .filter(|&i| spec.train_sessions.contains(&d.session_ids()[i]))
                        .collect();
                    for (k, &i) in expect_tr.iter().enumerate() {
                        prop_assert_eq!(tr.trial(k), d.trial(i));
                    }
                }
            }
        }
    }
}
