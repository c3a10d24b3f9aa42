//! 10-fold splitting: shuffle record ids by seed, assign round-robin.

use rand::seq::SliceRandom;

use crate::data::record::DatasetManifest;
use crate::error::{Error, Result};
use crate::numcore::rng::{stream, StreamTag};

/// Disjoint folds of record ids covering the dataset exactly.
#[derive(Debug, Clone)]
pub struct FoldSplit {
    pub folds: Vec<Vec<String>>,
}

/// Train/validation/test designation for one experiment: with k folds,
/// fold `test` is held out, the next fold cyclically is validation, the
/// remaining k-2 train.
#[derive(Debug, Clone)]
pub struct FoldDesignation {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

pub fn kfold_split(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<FoldSplit> {
    if manifest.records.len() < k {
        return Err(Error::Input(format!(
            "need at least {} records for {}-fold split, got {}",
            k,
            k,
            manifest.records.len()
        )));
    }
    let mut ids: Vec<String> = manifest.records.iter().map(|r| r.id.clone()).collect();
    let mut rng = stream(seed, StreamTag::Fold, &[k as u64]);
    ids.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (i, id) in ids.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    Ok(FoldSplit { folds })
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn designate(&self, test_fold: usize) -> Result<FoldDesignation> {
        let k = self.folds.len();
        if test_fold >= k {
            return Err(Error::Input(format!(
                "test fold {test_fold} out of range for {k} folds"
            )));
        }
        let val_fold = (test_fold + 1) % k;
        let mut train = Vec::new();
        for (i, fold) in self.folds.iter().enumerate() {
            if i != test_fold && i != val_fold {
                train.extend(fold.iter().cloned());
            }
        }
        Ok(FoldDesignation {
            train,
            validation: self.folds[val_fold].clone(),
            test: self.folds[test_fold].clone(),
        })
    }
}

/// Hard check that no record id appears in two of the designated sets.
pub fn assert_no_leakage(d: &FoldDesignation) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for (set_name, ids) in [
        ("train", &d.train),
        ("validation", &d.validation),
        ("test", &d.test),
    ] {
        for id in ids {
            if !seen.insert(id.clone()) {
                return Err(Error::DataIntegrity(format!(
                    "record {id:?} appears in more than one fold set (found again in {set_name})"
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::record::ManifestRecord;

    fn manifest_with(n: usize) -> DatasetManifest {
        let mut m = DatasetManifest::new("t", vec!["a".into()]);
        for i in 0..n {
            m.records.push(ManifestRecord {
                id: format!("r{i}"),
                file: format!("r{i}.ecg"),
                offset: 0,
                labels: vec![0],
            });
        }
        m
    }

    #[test]
    fn hundred_records_give_ten_folds_of_ten() {
        let split = kfold_split(&manifest_with(100), 10, 3).unwrap();
        assert!(split.folds.iter().all(|f| f.len() == 10));
    }

    #[test]
    fn round_robin_sizes_103() {
        let split = kfold_split(&manifest_with(103), 10, 3).unwrap();
        let sizes: Vec<usize> = split.folds.iter().map(|f| f.len()).collect();
        assert_eq!(sizes.iter().filter(|&&s| s == 11).count(), 3);
        assert_eq!(sizes.iter().filter(|&&s| s == 10).count(), 7);
    }

    #[test]
    fn folds_partition_the_id_set_for_many_seeds() {
        let m = manifest_with(57);
        for seed in 0..20 {
            let split = kfold_split(&m, 10, seed).unwrap();
            let mut all: Vec<String> = split.folds.iter().flatten().cloned().collect();
            all.sort();
            let mut expect: Vec<String> = m.records.iter().map(|r| r.id.clone()).collect();
            expect.sort();
            assert_eq!(all, expect);
        }
    }

    #[test]
    fn too_few_records_is_an_input_error() {
        assert!(kfold_split(&manifest_with(7), 10, 0).is_err());
    }

    #[test]
    fn designation_is_disjoint_and_8_1_1() {
        let split = kfold_split(&manifest_with(100), 10, 5).unwrap();
        for f in 0..10 {
            let d = split.designate(f).unwrap();
            assert_eq!(d.train.len(), 80);
            assert_eq!(d.validation.len(), 10);
            assert_eq!(d.test.len(), 10);
            assert_no_leakage(&d).unwrap();
        }
    }
}
