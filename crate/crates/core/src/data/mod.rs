//! Label tables, image decoding, augmentation, the synthetic corpus and
//! dataset splits.

mod augment;
mod image;
mod labels;
mod split;
mod synth;
mod vocab;

use std::path::Path;

use rayon::prelude::*;

pub use augment::{augment, hflip, rotate, AugmentationConfig};
pub use image::{load_image, read_png, resize_bilinear, save_gray_png, save_rgb_png};
pub use labels::{parse_label_csv, read_labels, write_labels, IMAGE_COLUMN, LABEL_COLUMN};
pub use split::{assign_split, read_manifest, write_manifest, Split, SplitFractions};
pub use synth::{disc_centres, disc_radius, synthesize_dataset, synthesize_with, SynthConfig, DEFAULT_DISEASE_PROFILE};
pub use vocab::{check_exclusive, ClassVocabulary, CLASS_NAMES, NO_FINDING, NUM_CLASSES};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// File name of the label table inside a dataset directory.
pub const LABEL_FILE: &str = "Data_Entry_2017.csv";
/// Sub-directory holding the PNG files.
pub const IMAGE_DIR: &str = "images";

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub image_id: String,
    /// `[3,H,W]` in `[0,1]`.
    pub pixels: Tensor,
    /// Multi-hot over [`CLASS_NAMES`].
    pub labels: Vec<f64>,
}

/// Loads `dir/Data_Entry_2017.csv` and the listed `dir/images/*.png`,
/// resized to `target`. Row order is preserved.
pub fn load_directory(dir: &Path, target: (usize, usize)) -> Result<Vec<LabeledSample>> {
    let rows = parse_label_csv(&dir.join(LABEL_FILE))?;
    if rows.is_empty() {
        return Err(Error::Decode {
            path: dir.join(LABEL_FILE),
            message: "label table has no rows".into(),
        });
    }
    let images = dir.join(IMAGE_DIR);
    rows.into_par_iter()
        .map(|(image_id, labels)| {
            let pixels = load_image(&images.join(&image_id), target)?;
            Ok(LabeledSample {
                image_id,
                pixels,
                labels,
            })
        })
        .collect()
}

/// Writes samples in the layout [`load_directory`] reads: 8-bit grayscale
/// PNGs (channel 0) plus the label table.
pub fn write_directory(dir: &Path, samples: &[LabeledSample]) -> Result<()> {
    let images = dir.join(IMAGE_DIR);
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    samples
        .par_iter()
        .try_for_each(|s| save_gray_png(&images.join(&s.image_id), &s.pixels))?;
    let rows: Vec<_> = samples.iter().map(|s| (s.image_id.clone(), s.labels.clone())).collect();
    write_labels(&dir.join(LABEL_FILE), &rows)
}

/// Partitions samples by [`assign_split`], preserving order within each part.
pub fn split_samples(
    samples: Vec<LabeledSample>,
    fractions: SplitFractions,
) -> (Vec<LabeledSample>, Vec<LabeledSample>, Vec<LabeledSample>) {
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for s in samples {
        match assign_split(&s.image_id, fractions) {
            Split::Train => train.push(s),
            Split::Val => val.push(s),
            Split::Test => test.push(s),
        }
    }
    (train, val, test)
}

/// Stacks the labels of `samples` into `[N, K]`.
pub fn label_matrix(samples: &[&LabeledSample]) -> Result<Tensor> {
    let k = samples.first().map_or(NUM_CLASSES, |s| s.labels.len());
    let data: Vec<f64> = samples.iter().flat_map(|s| s.labels.iter().copied()).collect();
    Tensor::new(vec![samples.len(), k], data)
}
