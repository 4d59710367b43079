//! Cross-validation folds.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::harness::manifest::{DatasetManifest, Protocol};

/// Train and test entry indices of one fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    /// The held-out subject or split id.
    pub id: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn make_folds(manifest: &DatasetManifest) -> Result<Vec<Fold>> {
    let split = |key: &dyn Fn(usize) -> String, keys: BTreeSet<String>| -> Vec<Fold> {
        keys.into_iter()
            .map(|k| {
                let (test, train) = (0..manifest.len()).partition(|&i| key(i) == k);
                Fold { id: k, train, test }
            })
            .collect()
    };
    match manifest.protocol {
        Protocol::LeavePersonOut => {
            let subject = |i: usize| manifest.entries[i].subject.clone();
            let subjects: BTreeSet<String> = (0..manifest.len()).map(subject).collect();
            if subjects.len() < 2 {
                return Err(Error::Manifest(format!(
                    "leave-person-out needs at least 2 subjects, found {}",
                    subjects.len()
                )));
            }
            Ok(split(&subject, subjects))
        }
        Protocol::FixedSplits => {
            let id = |i: usize| {
                manifest.entries[i]
                    .split
                    .map(|s| s.to_string())
                    .expect("validated manifest")
            };
            let ids: BTreeSet<String> = (0..manifest.len()).map(id).collect();
            if ids.len() < 2 {
                return Err(Error::Manifest(format!(
                    "fixed-splits needs at least 2 split ids, found {}",
                    ids.len()
                )));
            }
            Ok(split(&id, ids))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::manifest::ManifestEntry;

    fn manifest(subjects: &[&str], splits: &[u32], protocol: Protocol) -> DatasetManifest {
        let entries = subjects
            .iter()
            .zip(splits)
            .enumerate()
            .map(|(i, (s, &sp))| ManifestEntry {
                path: format!("v{i}").into(),
                label: i % 2,
                subject: s.to_string(),
                split: Some(sp),
            })
            .collect();
        DatasetManifest::new(entries, vec!["a".into(), "b".into()], protocol).unwrap()
    }

    #[test]
    fn one_fold_per_subject() {
        let m = manifest(&["x", "y", "x", "z"], &[0; 4], Protocol::LeavePersonOut);
        let folds = make_folds(&m).unwrap();
        assert_eq!(folds.len(), 3);
        assert_eq!(folds[0], Fold { id: "x".into(), train: vec![1, 3], test: vec![0, 2] });
    }

    #[test]
    fn one_fold_per_split() {
        let m = manifest(&["x", "y", "x", "z", "q", "r"], &[1, 2, 3, 1, 2, 3], Protocol::FixedSplits);
        let folds = make_folds(&m).unwrap();
        assert_eq!(folds.len(), 3);
        assert_eq!(folds[1].test, vec![1, 4]);
    }

    #[test]
    fn single_subject_rejected() {
        let m = manifest(&["x", "x"], &[0, 0], Protocol::LeavePersonOut);
        assert!(make_folds(&m).is_err());
    }
}
