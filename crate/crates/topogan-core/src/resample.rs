//! Class balancing by resampling and patient-level cross-validation.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::phantom::Dataset;
use crate::rng::SeedStream;

/// Repeat randomly chosen images of each minority class until every
/// class matches the pre-existing maximum count. Never removes images;
/// repeated samples are exact copies (patient id included).
pub fn oversample(dataset: &Dataset, rng: &mut SeedStream) -> Result<Dataset> {
    let counts = dataset.class_counts();
    let max = *counts.iter().max().unwrap_or(&0);
    if max == 0 {
        return Err(CoreError::Empty("oversample on a dataset with no images".into()));
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(CoreError::Empty(format!(
            "class {empty} has no images to repeat"
        )));
    }
    let mut images = dataset.images.clone();
    for (label, &count) in counts.iter().enumerate() {
        let members: Vec<usize> = dataset
            .images
            .iter()
            .enumerate()
            .filter(|(_, im)| im.class_label == label)
            .map(|(i, _)| i)
            .collect();
        for _ in count..max {
            let pick = members[rng.below(members.len())];
            images.push(dataset.images[pick].clone());
        }
    }
    Ok(Dataset::new(images, dataset.num_classes))
}

/// Keep every image of the rarest class and a uniform random subset of
/// equal size from each other class (without replacement).
pub fn undersample(dataset: &Dataset, rng: &mut SeedStream) -> Result<Dataset> {
    let counts = dataset.class_counts();
    let min = *counts.iter().min().unwrap_or(&0);
    if min == 0 {
        return Err(CoreError::Empty(
            "undersample requires every class to be nonempty".into(),
        ));
    }
    let mut keep: Vec<usize> = Vec::new();
    for label in 0..dataset.num_classes {
        let mut members: Vec<usize> = dataset
            .images
            .iter()
            .enumerate()
            .filter(|(_, im)| im.class_label == label)
            .map(|(i, _)| i)
            .collect();
        // Partial Fisher-Yates: the first `min` entries are a uniform
        // draw without replacement.
        for i in 0..min {
            let j = i + rng.below(members.len() - i);
            members.swap(i, j);
        }
        members.truncate(min);
        members.sort_unstable();
        keep.extend(members);
    }
    Ok(dataset.subset(&keep))
}

/// One cross-validation fold: image indices into the source dataset.
#[derive(Clone, Debug)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partition patients into k groups of near-equal size (sizes differ by
/// at most one); each fold tests on one group's images and trains on the
/// rest. No patient ever appears on both sides of a fold.
pub fn kfold_patient_split(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k == 0 {
        return Err(CoreError::InvalidArg("k must be >= 1".into()));
    }
    let index = dataset.patient_index();
    if index.len() < k {
        return Err(CoreError::InvalidArg(format!(
            "{} patients cannot fill {k} folds",
            index.len()
        )));
    }
    let mut patients: Vec<u32> = index.keys().copied().collect();
    let mut rng = SeedStream::new(seed);
    rng.shuffle(&mut patients);

    let mut folds: Vec<FoldSplit> = (0..k)
        .map(|_| FoldSplit {
            train: Vec::new(),
            test: Vec::new(),
        })
        .collect();
    for (i, pid) in patients.iter().enumerate() {
        let group = i % k;
        for (f, fold) in folds.iter_mut().enumerate() {
            let side = if f == group {
                &mut fold.test
            } else {
                &mut fold.train
            };
            side.extend_from_slice(&index[pid]);
        }
    }
    for fold in &mut folds {
        fold.train.sort_unstable();
        fold.test.sort_unstable();
    }
    Ok(folds)
}
