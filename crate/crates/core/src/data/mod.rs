//! Synthetic semantic segmentation data: colored shapes on a textured,
//! noisy background, with exact per-pixel labels.

mod io;
mod synth;
mod weights;

pub use io::{read_split, write_split};
pub use synth::{generate, Shape, ShapeKind};
pub use weights::{class_frequencies, enet_class_weights, ENET_C};

use crate::error::{Error, Result};
use crate::layers::LabelMap;
use crate::tensor::{Real, Tensor};

pub const IMAGE_CHANNELS: usize = 3;
pub const MAX_CLASSES: usize = 1 + ShapeKind::ALL.len();

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub height: usize,
    pub width: usize,
    /// Background plus up to four shape classes.
    pub classes: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
    /// Number of 2×2 poolings the consuming network applies.
    pub pool_depth: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            height: 64,
            width: 64,
            classes: 5,
            n_train: 512,
            n_val: 128,
            seed: 1,
            pool_depth: 4,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let factor = 1usize
            .checked_shl(self.pool_depth as u32)
            .ok_or_else(|| Error::Config(format!("pool depth {} too large", self.pool_depth)))?;
        if self.height == 0
            || self.width == 0
            || !self.height.is_multiple_of(factor)
            || !self.width.is_multiple_of(factor)
        {
            return Err(Error::Config(format!(
                "image size {}x{} must be a positive multiple of {factor} (2^{})",
                self.height, self.width, self.pool_depth
            )));
        }
        if !(2..=MAX_CLASSES).contains(&self.classes) {
            return Err(Error::Config(format!(
                "classes must be in 2..={MAX_CLASSES}, got {}",
                self.classes
            )));
        }
        Ok(())
    }
}

/// A split held as contiguous arrays: images `[n, 3, h, w]` in `[0, 1]` and
/// labels `[n, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    images: Vec<f32>,
    labels: Vec<u8>,
}

/// One image and its label map.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<'a> {
    pub image: &'a [f32],
    pub labels: &'a [u8],
}

impl Dataset {
    pub fn new(
        height: usize,
        width: usize,
        classes: usize,
        images: Vec<f32>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let px = height * width;
        if px == 0
            || !images.len().is_multiple_of(IMAGE_CHANNELS * px)
            || labels.len() != images.len() / IMAGE_CHANNELS
        {
            return Err(Error::Format(
                "image and label arrays do not match the declared size".into(),
            ));
        }
        if let Some(l) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::Format(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        Ok(Dataset {
            height,
            width,
            classes,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len() / (self.height * self.width)
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &[f32] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        let px = self.height * self.width;
        Sample {
            image: &self.images[i * IMAGE_CHANNELS * px..(i + 1) * IMAGE_CHANNELS * px],
            labels: &self.labels[i * px..(i + 1) * px],
        }
    }

    /// Stacks the given samples into a `[n, 3, h, w]` tensor and label map.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> Result<(Tensor<T>, LabelMap)> {
        let px = self.height * self.width;
        let mut images = Vec::with_capacity(indices.len() * IMAGE_CHANNELS * px);
        let mut labels = Vec::with_capacity(indices.len() * px);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("sample {i} out of range")));
            }
            let s = self.sample(i);
            images.extend(s.image.iter().map(|&x| T::from_f64(x as f64)));
            labels.extend_from_slice(s.labels);
        }
        Ok((
            Tensor::from_vec(
                &[indices.len(), IMAGE_CHANNELS, self.height, self.width],
                images,
            )?,
            LabelMap::new([indices.len(), self.height, self.width], labels)?,
        ))
    }
}
