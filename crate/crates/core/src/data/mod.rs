//! Datasets, normalization, on-disk formats, checkpoints and configuration.

pub mod checkpoint;
pub mod config;
mod formats;
pub mod synthetic;

pub use formats::{load_dataset, save_dataset, Format};

use std::fmt;
use std::str::FromStr;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train = 0,
    Test = 1,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split `{s}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-channel statistics used by zero-mean/unit-variance normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelStats {
    /// Population mean and standard deviation of each channel.
    pub fn of(images: &Tensor) -> Result<Self> {
        let (n, c, plane) = dims(images)?;
        let mut mean = Vec::with_capacity(c);
        let mut std = Vec::with_capacity(c);
        for ch in 0..c {
            let values = (0..n).flat_map(|i| {
                let start = (i * c + ch) * plane;
                images.data()[start..start + plane]
                    .iter()
                    .map(|&v| v as f64)
            });
            let (mut s, mut s2, mut count) = (0.0f64, 0.0f64, 0usize);
            for v in values {
                s += v;
                s2 += v * v;
                count += 1;
            }
            let m = s / count as f64;
            let var = (s2 / count as f64 - m * m).max(0.0);
            if var.sqrt() < 1e-12 {
                return Err(Error::DegenerateChannel { channel: ch });
            }
            mean.push(m as f32);
            std.push(var.sqrt() as f32);
        }
        Ok(Self { mean, std })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Normalization {
    /// Pixels in `[0, 1]`.
    Vanilla01,
    ZeroMeanUnitVar(ChannelStats),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormalizationMode {
    Vanilla01,
    ZeroMeanUnitVar,
}

impl FromStr for NormalizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla_01" | "vanilla" => Ok(NormalizationMode::Vanilla01),
            "zero_mean_unit_var" | "normalized" => Ok(NormalizationMode::ZeroMeanUnitVar),
            _ => Err(Error::TypeMismatch {
                key: "normalization".into(),
                expected: "vanilla_01 or zero_mean_unit_var",
                value: s.into(),
            }),
        }
    }
}

impl NormalizationMode {
    pub fn name(self) -> &'static str {
        match self {
            NormalizationMode::Vanilla01 => "vanilla_01",
            NormalizationMode::ZeroMeanUnitVar => "zero_mean_unit_var",
        }
    }
}

/// Labeled `N × C × H × W` images.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
    normalization: Normalization,
}

impl Dataset {
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        classes: usize,
        split: Split,
        normalization: Normalization,
    ) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::shape(format!(
                "dataset images must be N x C x H x W, got {:?}",
                images.shape()
            )));
        }
        if images.batch() != labels.len() {
            return Err(Error::shape(format!(
                "{} images but {} labels",
                images.batch(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange {
                path: "<memory>".into(),
                label: bad,
                classes,
            });
        }
        Ok(Self {
            images,
            labels,
            classes,
            split,
            normalization,
        })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            images: self.images.gather_batch(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone()
        })
    }
}

fn dims(images: &Tensor) -> Result<(usize, usize, usize)> {
    match images.shape() {
        &[n, c, h, w] => Ok((n, c, h * w)),
        s => Err(Error::shape(format!("expected N x C x H x W, got {s:?}"))),
    }
}

/// Applies `mode` to a vanilla dataset. Statistics come from `train`, which
/// may be `ds` itself.
pub fn normalize(ds: &Dataset, mode: NormalizationMode, train: &Dataset) -> Result<Dataset> {
    if ds.normalization != Normalization::Vanilla01
        || train.normalization != Normalization::Vanilla01
    {
        return Err(Error::contract(
            "data-io",
            "normalize expects vanilla [0, 1] input",
        ));
    }
    match mode {
        NormalizationMode::Vanilla01 => Ok(ds.clone()),
        NormalizationMode::ZeroMeanUnitVar => {
            let stats = ChannelStats::of(&train.images)?;
            let images = apply_stats(&ds.images, &stats, |v, m, s| (v - m) / s)?;
            Ok(Dataset {
                images,
                normalization: Normalization::ZeroMeanUnitVar(stats),
                ..ds.clone()
            })
        }
    }
}

/// Inverse of [`normalize`], back to `[0, 1]` pixels.
pub fn denormalize(ds: &Dataset) -> Result<Dataset> {
    match &ds.normalization {
        Normalization::Vanilla01 => Ok(ds.clone()),
        Normalization::ZeroMeanUnitVar(stats) => {
            let images = denormalize_images(&ds.images, stats)?;
            Ok(Dataset {
                images,
                normalization: Normalization::Vanilla01,
                ..ds.clone()
            })
        }
    }
}

pub fn denormalize_images(images: &Tensor, stats: &ChannelStats) -> Result<Tensor> {
    apply_stats(images, stats, |v, m, s| v * s + m)
}

fn apply_stats(
    images: &Tensor,
    stats: &ChannelStats,
    f: impl Fn(f32, f32, f32) -> f32,
) -> Result<Tensor> {
    let (_, c, plane) = dims(images)?;
    if stats.mean.len() != c {
        return Err(Error::shape(format!(
            "{} channel stats for {c} channels",
            stats.mean.len()
        )));
    }
    let mut out = images.clone();
    for (k, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let ch = k % c;
        for v in chunk {
            *v = f(*v, stats.mean[ch], stats.std[ch]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate, SyntheticConfig};

    #[test]
    fn normalization_round_trips() {
        let train = generate(50, 1, Split::Train, &SyntheticConfig::default()).unwrap();
        let test = generate(20, 1, Split::Test, &SyntheticConfig::default()).unwrap();
        let n = normalize(&test, NormalizationMode::ZeroMeanUnitVar, &train).unwrap();
        let back = denormalize(&n).unwrap();
        assert!(back.images().max_abs_diff(test.images()).unwrap() < 1e-6);
        let tn = normalize(&train, NormalizationMode::ZeroMeanUnitVar, &train).unwrap();
        let stats = ChannelStats::of(tn.images()).unwrap();
        assert!(
            stats.mean.iter().all(|m| m.abs() < 1e-5),
            "{:?}",
            stats.mean
        );
        assert_eq!(
            normalize(&test, NormalizationMode::Vanilla01, &train).unwrap(),
            test
        );
    }

    #[test]
    fn constant_channel_is_degenerate() {
        let ds = Dataset::new(
            Tensor::full(&[2, 1, 2, 2], 0.5),
            vec![0, 0],
            1,
            Split::Train,
            Normalization::Vanilla01,
        )
        .unwrap();
        assert!(matches!(
            normalize(&ds, NormalizationMode::ZeroMeanUnitVar, &ds),
            Err(Error::DegenerateChannel { channel: 0 })
        ));
    }

    #[test]
    fn labels_are_range_checked() {
        let r = Dataset::new(
            Tensor::zeros(&[1, 1, 1, 1]),
            vec![3],
            3,
            Split::Train,
            Normalization::Vanilla01,
        );
        assert!(matches!(
            r,
            Err(Error::LabelOutOfRange {
                label: 3,
                classes: 3,
                ..
            })
        ));
    }
}
