//! Loading materialized datasets into training memory.

use std::path::Path;

use motionseg::datasets::{load_davis_layout, DataError, FrameSample, Split};

use crate::error::CliError;

/// Reads every usable frame of one split, masks included.
pub fn labeled_split(root: &Path, split: Split) -> Result<Vec<FrameSample>, CliError> {
    load_split(root, split, true)
}

/// Reads every usable frame of one split without touching annotations;
/// target-domain data stays unlabeled even when label files exist on disk.
pub fn unlabeled_split(root: &Path, split: Split) -> Result<Vec<FrameSample>, CliError> {
    load_split(root, split, false)
}

fn load_split(root: &Path, split: Split, labeled: bool) -> Result<Vec<FrameSample>, CliError> {
    let handle = load_davis_layout(root, split)?;
    let mut samples = Vec::with_capacity(handle.count_samples());
    for (seq, entry) in handle.sequences.iter().enumerate() {
        for frame in 0..entry.frames.len() {
            let sample = if labeled {
                handle.load_sample(seq, frame)?
            } else {
                handle.load_sample_unlabeled(seq, frame)?
            };
            samples.push(sample);
        }
    }
    if samples.is_empty() {
        return Err(CliError::Data(DataError::LayoutError(format!(
            "usable frames in the {} split of {}",
            split.file_stem(),
            root.display()
        ))));
    }
    Ok(samples)
}
