//! CIFAR-10/100 binary ingestion, scoring mini-batches and a synthetic
//! CIFAR-shaped generator.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::Shape;
use crate::snn::SpikeTensor;

pub const IMAGE_BYTES: usize = 3 * 32 * 32;
pub const CIFAR10_RECORD: usize = IMAGE_BYTES + 1;
pub const CIFAR100_RECORD: usize = IMAGE_BYTES + 2;
pub const DATA_DIR_ENV: &str = "SPIKENAS_DATA_DIR";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{len} bytes is not a whole number of {record}-byte records")]
    MalformedRecord { len: usize, record: usize },
    #[error("record {record}: label {label} out of range 0..{classes}")]
    LabelOutOfRange {
        record: usize,
        label: u8,
        classes: usize,
    },
    #[error("requested {requested} samples from a dataset of {available}")]
    InsufficientData { requested: usize, available: usize },
    #[error("dataset unavailable: {0}")]
    DatasetUnavailable(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Cifar10,
    Cifar100,
    Synthetic,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Cifar100 => "cifar100",
            DatasetKind::Synthetic => "synthetic",
        }
    }

    pub fn parse(s: &str) -> Option<DatasetKind> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "cifar10" => Some(DatasetKind::Cifar10),
            "cifar100" => Some(DatasetKind::Cifar100),
            "synthetic" | "synth" => Some(DatasetKind::Synthetic),
            _ => None,
        }
    }
}

/// Raw CIFAR-format records held in memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub num_classes: usize,
    pub labels: Vec<u8>,
    /// CIFAR-100 coarse labels, kept as metadata.
    pub coarse_labels: Option<Vec<u8>>,
    pixels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Channel-major R, G, B planes of one 32x32 image.
    pub fn image(&self, i: usize) -> &[u8] {
        &self.pixels[i * IMAGE_BYTES..(i + 1) * IMAGE_BYTES]
    }

    /// Bytes in the CIFAR binary layout this dataset was parsed from
    /// (CIFAR-10 layout for synthetic data).
    pub fn to_bytes(&self) -> Vec<u8> {
        let record = match self.coarse_labels {
            Some(_) => CIFAR100_RECORD,
            None => CIFAR10_RECORD,
        };
        let mut out = Vec::with_capacity(self.len() * record);
        for i in 0..self.len() {
            if let Some(coarse) = &self.coarse_labels {
                out.push(coarse[i]);
            }
            out.push(self.labels[i]);
            out.extend_from_slice(self.image(i));
        }
        out
    }

    fn concat(parts: Vec<Dataset>) -> Dataset {
        let mut iter = parts.into_iter();
        let mut first = iter.next().expect("at least one part");
        for part in iter {
            first.labels.extend(part.labels);
            first.pixels.extend(part.pixels);
            if let (Some(a), Some(b)) = (first.coarse_labels.as_mut(), part.coarse_labels) {
                a.extend(b);
            }
        }
        first
    }
}

fn parse_records(
    bytes: &[u8],
    record: usize,
    label_offset: usize,
    classes: usize,
    kind: DatasetKind,
) -> Result<Dataset, DataError> {
    if !bytes.len().is_multiple_of(record) {
        return Err(DataError::MalformedRecord {
            len: bytes.len(),
            record,
        });
    }
    let n = bytes.len() / record;
    let mut labels = Vec::with_capacity(n);
    let mut coarse = Vec::new();
    let mut pixels = Vec::with_capacity(n * IMAGE_BYTES);
    for (i, rec) in bytes.chunks_exact(record).enumerate() {
        let label = rec[label_offset];
        if label as usize >= classes {
            return Err(DataError::LabelOutOfRange {
                record: i,
                label,
                classes,
            });
        }
        labels.push(label);
        if label_offset == 1 {
            coarse.push(rec[0]);
        }
        pixels.extend_from_slice(&rec[label_offset + 1..]);
    }
    Ok(Dataset {
        kind,
        num_classes: classes,
        labels,
        coarse_labels: (label_offset == 1).then_some(coarse),
        pixels,
    })
}

pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset, DataError> {
    parse_records(bytes, CIFAR10_RECORD, 0, 10, DatasetKind::Cifar10)
}

pub fn parse_cifar100(bytes: &[u8]) -> Result<Dataset, DataError> {
    parse_records(bytes, CIFAR100_RECORD, 1, 100, DatasetKind::Cifar100)
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_cifar10(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    parse_cifar10(&read(path.as_ref())?)
}

pub fn load_cifar100(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    parse_cifar100(&read(path.as_ref())?)
}

/// Loads the training split of `kind` from a data root. The root may hold
/// the binaries directly or the extracted `cifar-10-batches-bin` /
/// `cifar-100-binary` folder.
pub fn load_from_dir(kind: DatasetKind, root: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let root = root.as_ref();
    let (subdir, files): (&str, Vec<String>) = match kind {
        DatasetKind::Cifar10 => (
            "cifar-10-batches-bin",
            (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        ),
        DatasetKind::Cifar100 => ("cifar-100-binary", vec!["train.bin".to_string()]),
        DatasetKind::Synthetic => {
            return Err(DataError::DatasetUnavailable(
                "synthetic data is generated, not loaded".into(),
            ))
        }
    };
    let dir = [root.join(subdir), root.to_path_buf()]
        .into_iter()
        .find(|d| d.join(&files[0]).is_file())
        .ok_or_else(|| {
            DataError::DatasetUnavailable(format!("no {} under {}", files[0], root.display()))
        })?;
    let parts = files
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| p.is_file())
        .map(|p| match kind {
            DatasetKind::Cifar100 => load_cifar100(&p),
            _ => load_cifar10(&p),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::concat(parts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Divide by 255.
    #[default]
    Unit,
    /// Divide by 255, then per-channel zero mean and unit variance over the batch.
    Standardize,
}

/// `S x 3 x H x W` images in `[0, 1]` (unless standardized) and their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub shape: Shape,
    pub pixels: Vec<f64>,
    pub labels: Vec<usize>,
}

impl ImageBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn to_tensor(&self) -> SpikeTensor {
        SpikeTensor::from_vec(
            [
                self.len(),
                self.shape.channels,
                self.shape.height,
                self.shape.width,
            ],
            self.pixels.clone(),
        )
        .expect("batch shape matches pixel count")
    }

    /// Block-averages each image by `factor` in both spatial dimensions.
    pub fn downsample(&self, factor: usize) -> ImageBatch {
        if factor <= 1 {
            return self.clone();
        }
        let s = self.shape;
        let out = Shape::new(s.channels, s.height / factor, s.width / factor);
        let area = (factor * factor) as f64;
        let mut pixels = Vec::with_capacity(self.len() * out.numel());
        for img in self.pixels.chunks(s.numel()) {
            for c in 0..s.channels {
                let plane = &img[c * s.plane()..(c + 1) * s.plane()];
                for y in 0..out.height {
                    for x in 0..out.width {
                        let mut sum = 0.0;
                        for dy in 0..factor {
                            for dx in 0..factor {
                                sum += plane[(y * factor + dy) * s.width + x * factor + dx];
                            }
                        }
                        pixels.push(sum / area);
                    }
                }
            }
        }
        ImageBatch {
            shape: out,
            pixels,
            labels: self.labels.clone(),
        }
    }
}

/// `s` distinct records chosen by a seeded ChaCha stream.
pub fn sample_batch(
    data: &Dataset,
    s: usize,
    seed: u64,
    normalization: Normalization,
) -> Result<ImageBatch, DataError> {
    if s == 0 || s > data.len() {
        return Err(DataError::InsufficientData {
            requested: s,
            available: data.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, data.len(), s).into_vec();
    let mut pixels = Vec::with_capacity(s * IMAGE_BYTES);
    let mut labels = Vec::with_capacity(s);
    for &i in &picks {
        pixels.extend(data.image(i).iter().map(|&b| b as f64 / 255.0));
        labels.push(data.labels[i] as usize);
    }
    if normalization == Normalization::Standardize {
        standardize(&mut pixels, 3, 32 * 32);
    }
    Ok(ImageBatch {
        shape: Shape::new(3, 32, 32),
        pixels,
        labels,
    })
}

/// Indices [`sample_batch`] would pick, in order.
pub fn sample_indices(len: usize, s: usize, seed: u64) -> Result<Vec<usize>, DataError> {
    if s == 0 || s > len {
        return Err(DataError::InsufficientData {
            requested: s,
            available: len,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, len, s).into_vec())
}

fn standardize(pixels: &mut [f64], channels: usize, plane: usize) {
    let image = channels * plane;
    let n = (pixels.len() / image * plane) as f64;
    for c in 0..channels {
        let idx = |img: usize, k: usize| img * image + c * plane + k;
        let images = pixels.len() / image;
        let mut mean = 0.0;
        for img in 0..images {
            for k in 0..plane {
                mean += pixels[idx(img, k)];
            }
        }
        mean /= n;
        let mut var = 0.0;
        for img in 0..images {
            for k in 0..plane {
                var += (pixels[idx(img, k)] - mean).powi(2);
            }
        }
        let std = (var / n).sqrt().max(1e-12);
        for img in 0..images {
            for k in 0..plane {
                let v = &mut pixels[idx(img, k)];
                *v = (*v - mean) / std;
            }
        }
    }
}

/// Default spacing between consecutive class means, in pixel units.
pub fn default_class_shift(classes: usize) -> f64 {
    128.0 / classes.max(1) as f64
}

pub fn synth_dataset(num_records: usize, classes: usize, seed: u64) -> Dataset {
    synth_dataset_with_shift(num_records, classes, seed, default_class_shift(classes))
}

/// Images of class `k` have mean pixel `64 + k * shift` plus uniform noise
/// in `[-48, 48]`; labels cycle through the classes.
pub fn synth_dataset_with_shift(
    num_records: usize,
    classes: usize,
    seed: u64,
    shift: f64,
) -> Dataset {
    let classes = classes.clamp(1, 256);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = Vec::with_capacity(num_records);
    let mut pixels = Vec::with_capacity(num_records * IMAGE_BYTES);
    for i in 0..num_records {
        let label = i % classes;
        let center = 64.0 + label as f64 * shift;
        labels.push(label as u8);
        for _ in 0..IMAGE_BYTES {
            let v = center + rng.random_range(-48.0..=48.0);
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Dataset {
        kind: DatasetKind::Synthetic,
        num_classes: classes,
        labels,
        coarse_labels: None,
        pixels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn record10(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend(std::iter::repeat_n(fill, IMAGE_BYTES));
        r
    }

    #[test]
    fn cifar10_parsing() {
        let mut bytes = Vec::new();
        for i in 0..10 {
            bytes.extend(record10(i as u8 % 10, 0));
        }
        assert_eq!(bytes.len(), 30730);
        let d = parse_cifar10(&bytes).unwrap();
        assert_eq!(d.len(), 10);
        assert_eq!(d.labels[7], 7);
        let b = sample_batch(&d, 10, 0, Normalization::Unit).unwrap();
        assert!(b.pixels.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn cifar10_errors() {
        assert!(matches!(
            parse_cifar10(&[0u8; 3072]),
            Err(DataError::MalformedRecord { len: 3072, .. })
        ));
        assert!(matches!(
            parse_cifar10(&record10(10, 0)),
            Err(DataError::LabelOutOfRange { label: 10, .. })
        ));
    }

    #[test]
    fn cifar100_parsing() {
        let mut rec = vec![3u8, 99];
        rec.extend(vec![255u8; IMAGE_BYTES]);
        let d = parse_cifar100(&rec).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.labels[0], 99);
        assert_eq!(d.coarse_labels.as_deref(), Some(&[3u8][..]));
        let b = sample_batch(&d, 1, 0, Normalization::Unit).unwrap();
        assert!(b.pixels.iter().all(|&p| p == 1.0));
        rec[1] = 100;
        assert!(matches!(
            parse_cifar100(&rec),
            Err(DataError::LabelOutOfRange { label: 100, .. })
        ));
        assert_eq!(parse_cifar100(&d.to_bytes()).unwrap(), d);
    }

    #[test]
    fn round_trip_synthetic_bytes() {
        let d = synth_dataset(12, 10, 3);
        let bytes = d.to_bytes();
        assert_eq!(bytes.len(), 12 * CIFAR10_RECORD);
        let parsed = parse_cifar10(&bytes).unwrap();
        assert_eq!(parsed.to_bytes(), bytes);
    }

    #[test]
    fn sampling_is_seeded_and_distinct() {
        let d = synth_dataset(10_000, 10, 1);
        let a = sample_indices(d.len(), 16, 77).unwrap();
        let b = sample_indices(d.len(), 16, 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().collect::<HashSet<_>>().len(), 16);
        assert_eq!(
            sample_batch(&d, 16, 77, Normalization::Unit).unwrap(),
            sample_batch(&d, 16, 77, Normalization::Unit).unwrap()
        );
        let all = sample_indices(20, 20, 5).unwrap();
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
        assert!(matches!(
            sample_batch(&d, 10_001, 0, Normalization::Unit),
            Err(DataError::InsufficientData { .. })
        ));
    }

    #[test]
    fn synthetic_contract() {
        let d = synth_dataset(100, 10, 42);
        assert_eq!(d.len(), 100);
        assert!(d.labels.iter().all(|&l| l < 10));
        assert_eq!(d, synth_dataset(100, 10, 42));
        assert_ne!(d, synth_dataset(100, 10, 43));
    }

    #[test]
    fn synthetic_class_shift() {
        let shift = 20.0;
        let d = synth_dataset_with_shift(2000, 2, 9, shift);
        let mut sums = [0.0f64; 2];
        let mut counts = [0usize; 2];
        for i in 0..d.len() {
            let l = d.labels[i] as usize;
            sums[l] += d.image(i).iter().map(|&b| b as f64).sum::<f64>();
            counts[l] += IMAGE_BYTES;
        }
        assert_eq!(counts[0], 1000 * IMAGE_BYTES);
        let diff = sums[1] / counts[1] as f64 - sums[0] / counts[0] as f64;
        assert!((diff / shift - 1.0).abs() < 0.05, "{diff}");
    }

    #[test]
    fn standardized_batch_has_unit_moments() {
        let d = synth_dataset(40, 4, 2);
        let b = sample_batch(&d, 8, 1, Normalization::Standardize).unwrap();
        let plane = 1024;
        let vals: Vec<f64> = b
            .pixels
            .chunks(3 * plane)
            .flat_map(|img| img[..plane].to_vec())
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn downsample_averages_blocks() {
        let d = synth_dataset(2, 2, 2);
        let b = sample_batch(&d, 2, 0, Normalization::Unit).unwrap();
        let small = b.downsample(4);
        assert_eq!(small.shape, Shape::new(3, 8, 8));
        let block: f64 = (0..4)
            .flat_map(|y| (0..4).map(move |x| (y, x)))
            .map(|(y, x)| b.pixels[y * 32 + x])
            .sum::<f64>()
            / 16.0;
        assert!((small.pixels[0] - block).abs() < 1e-12);
    }

    #[test]
    fn load_from_dir_finds_nested_folder() {
        let tmp = tempfile::tempdir().unwrap();
        let nested = tmp.path().join("cifar-10-batches-bin");
        fs::create_dir(&nested).unwrap();
        fs::write(
            nested.join("data_batch_1.bin"),
            synth_dataset(3, 10, 0).to_bytes(),
        )
        .unwrap();
        fs::write(
            nested.join("data_batch_2.bin"),
            synth_dataset(2, 10, 1).to_bytes(),
        )
        .unwrap();
        let d = load_from_dir(DatasetKind::Cifar10, tmp.path()).unwrap();
        assert_eq!(d.len(), 5);
        assert_eq!(d.kind, DatasetKind::Cifar10);
        assert!(matches!(
            load_from_dir(DatasetKind::Cifar100, tmp.path()),
            Err(DataError::DatasetUnavailable(_))
        ));
    }
}
