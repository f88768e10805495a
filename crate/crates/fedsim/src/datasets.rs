//! Dataset ingestion and point-to-sample binding.
//!
//! Real datasets come in as published: FMNIST in big-endian IDX files and
//! CIFAR-10 in 3073-byte binary records. A synthetic Gaussian-blob generator
//! provides a fast substrate for tests and the acceptance suite.
//!
//! Binding attaches one train-sample index to every labeled spatial point,
//! drawn uniformly (with replacement) from the samples of the point's class.
//! The draw happens once per point and is shared by every UE that captured
//! the point, which is what turns spatial overlap into literal duplicate
//! samples across neighboring clients.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::learner::ClientDataset;
use crate::spatial::SpatialPartition;

/// A loaded source dataset with features scaled into `[0, 1]`.
#[derive(Debug, Clone)]
pub struct SourceDataset {
    pub train_features: Vec<f64>,
    pub train_labels: Vec<usize>,
    pub test_features: Vec<f64>,
    pub test_labels: Vec<usize>,
    pub feature_dim: usize,
    pub num_classes: usize,
    /// For each class, the train-sample indices carrying that label.
    pub per_class_index: Vec<Vec<usize>>,
}

impl SourceDataset {
    fn assemble(
        train_features: Vec<f64>,
        train_labels: Vec<usize>,
        test_features: Vec<f64>,
        test_labels: Vec<usize>,
        feature_dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if train_features.len() != train_labels.len() * feature_dim
            || test_features.len() != test_labels.len() * feature_dim
        {
            return Err(Error::dimension("feature/label count mismatch".to_string()));
        }
        let mut per_class_index = vec![Vec::new(); num_classes];
        for (i, &label) in train_labels.iter().enumerate() {
            if label >= num_classes {
                return Err(Error::dimension(format!(
                    "train label {label} out of range for {num_classes} classes"
                )));
            }
            per_class_index[label].push(i);
        }
        Ok(SourceDataset {
            train_features,
            train_labels,
            test_features,
            test_labels,
            feature_dim,
            num_classes,
            per_class_index,
        })
    }

    pub fn train_len(&self) -> usize {
        self.train_labels.len()
    }

    pub fn test_len(&self) -> usize {
        self.test_labels.len()
    }

    /// The held-out test split as a `ClientDataset`.
    pub fn test_set(&self) -> Result<ClientDataset> {
        ClientDataset::new(self.test_features.clone(), self.test_labels.clone(), self.feature_dim)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn dataset_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Dataset { path: path.to_path_buf(), reason: reason.into() }
}

const IDX_IMAGE_MAGIC: u32 = 2051;
const IDX_LABEL_MAGIC: u32 = 2049;

fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<(Vec<f64>, usize, usize)> {
    if bytes.len() < 16 {
        return Err(dataset_err(path, "truncated IDX image header"));
    }
    let be = |o: usize| u32::from_be_bytes(bytes[o..o + 4].try_into().unwrap());
    let magic = be(0);
    if magic != IDX_IMAGE_MAGIC {
        return Err(dataset_err(path, format!("bad image magic {magic}, expected 2051")));
    }
    let count = be(4) as usize;
    let rows = be(8) as usize;
    let cols = be(12) as usize;
    let dim = rows * cols;
    let expected = 16 + count * dim;
    if bytes.len() != expected {
        return Err(dataset_err(
            path,
            format!("file has {} bytes, header implies {expected}", bytes.len()),
        ));
    }
    let features = bytes[16..].iter().map(|&b| b as f64 / 255.0).collect();
    Ok((features, count, dim))
}

fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<usize>> {
    if bytes.len() < 8 {
        return Err(dataset_err(path, "truncated IDX label header"));
    }
    let magic = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    if magic != IDX_LABEL_MAGIC {
        return Err(dataset_err(path, format!("bad label magic {magic}, expected 2049")));
    }
    let count = u32::from_be_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + count {
        return Err(dataset_err(
            path,
            format!("file has {} bytes, header implies {}", bytes.len(), 8 + count),
        ));
    }
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

/// Parses one images/labels pair of big-endian IDX files (pixel bytes scaled
/// by 1/255).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<(Vec<f64>, Vec<usize>, usize)> {
    let (features, count, dim) = parse_idx_images(images_path, &read_file(images_path)?)?;
    let labels = parse_idx_labels(labels_path, &read_file(labels_path)?)?;
    if labels.len() != count {
        return Err(dataset_err(
            labels_path,
            format!("{} labels for {count} images", labels.len()),
        ));
    }
    Ok((features, labels, dim))
}

/// File locations of the four decompressed FMNIST IDX files.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

/// Loads FMNIST (or any 10-class IDX dataset) from its four files.
pub fn load_fmnist(paths: &IdxPaths) -> Result<SourceDataset> {
    let (train_features, train_labels, dim) = load_idx(&paths.train_images, &paths.train_labels)?;
    let (test_features, test_labels, test_dim) = load_idx(&paths.test_images, &paths.test_labels)?;
    if dim != test_dim {
        return Err(dataset_err(&paths.test_images, "train/test image sizes differ"));
    }
    if let Some(&l) = train_labels.iter().chain(&test_labels).find(|&&l| l > 9) {
        return Err(dataset_err(&paths.train_labels, format!("label {l} out of range 0..=9")));
    }
    SourceDataset::assemble(train_features, train_labels, test_features, test_labels, dim, 10)
}

const CIFAR_RECORD: usize = 3073;
const CIFAR_DIM: usize = 3072;

fn parse_cifar_batch(path: &Path, bytes: &[u8], features: &mut Vec<f64>, labels: &mut Vec<usize>) -> Result<()> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(dataset_err(
            path,
            format!("file length {} is not a positive multiple of {CIFAR_RECORD}", bytes.len()),
        ));
    }
    for record in bytes.chunks_exact(CIFAR_RECORD) {
        let label = record[0] as usize;
        if label > 9 {
            return Err(dataset_err(path, format!("label byte {label} out of range 0..=9")));
        }
        labels.push(label);
        features.extend(record[1..].iter().map(|&b| b as f64 / 255.0));
    }
    Ok(())
}

/// File locations of the CIFAR-10 binary batches.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CifarPaths {
    pub train_batches: Vec<PathBuf>,
    pub test_batch: PathBuf,
}

/// Loads CIFAR-10 from binary batches (3073-byte records: label byte followed
/// by 3072 channel-major pixels), concatenating train batches in given order.
pub fn load_cifar10(paths: &CifarPaths) -> Result<SourceDataset> {
    if paths.train_batches.is_empty() {
        return Err(Error::config("cifar10 requires at least one train batch"));
    }
    let mut train_features = Vec::new();
    let mut train_labels = Vec::new();
    for path in &paths.train_batches {
        parse_cifar_batch(path, &read_file(path)?, &mut train_features, &mut train_labels)?;
    }
    let mut test_features = Vec::new();
    let mut test_labels = Vec::new();
    parse_cifar_batch(&paths.test_batch, &read_file(&paths.test_batch)?, &mut test_features, &mut test_labels)?;
    SourceDataset::assemble(train_features, train_labels, test_features, test_labels, CIFAR_DIM, 10)
}

/// Parameters of the synthetic Gaussian-blob dataset.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub dim: usize,
    /// Minimum center separation in units of the blob standard deviation.
    pub separation: f64,
}

/// Generates a blob dataset: class `c` is an isotropic Gaussian around a
/// distinct center, with centers at least `separation` standard deviations
/// apart and all values clipped to `[0, 1]`. A held-out test split of
/// `ceil(samples_per_class / 5)` samples per class is drawn the same way.
///
/// When the feature dimension admits it (`dim >= num_classes`), centers sit
/// on a regular simplex around 0.5 so every class pair is exactly
/// `separation` standard deviations apart and all classes are equally hard;
/// lower dimensions fall back to random centers with the minimum-distance
/// guarantee.
pub fn synthetic_blobs(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<SourceDataset> {
    if spec.num_classes < 1 || spec.samples_per_class < 1 || spec.dim < 1 {
        return Err(Error::config("synthetic spec counts must be at least 1"));
    }
    if !spec.separation.is_finite() || spec.separation <= 0.0 {
        return Err(Error::config("separation must be positive"));
    }

    let n = spec.num_classes;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut min_dist;
    if n > 1 && spec.dim >= n {
        // Regular simplex: vertex i is scale * (e_i - 1/n) plus 0.5, using
        // the first n coordinates. Pairwise distance = scale * sqrt(2).
        let scale = 0.35 / (1.0 - 1.0 / n as f64);
        for i in 0..n {
            let mut center = vec![0.5; spec.dim];
            for (j, v) in center.iter_mut().enumerate().take(n) {
                let e = if i == j { 1.0 } else { 0.0 };
                *v += scale * (e - 1.0 / n as f64);
            }
            centers.push(center);
        }
        min_dist = scale * 2.0f64.sqrt();
    } else {
        // Rejection-sample centers inside [0.2, 0.8]^dim until all are
        // distinct.
        loop {
            centers.clear();
            for _ in 0..n {
                centers.push((0..spec.dim).map(|_| rng.random_range(0.2..0.8)).collect());
            }
            min_dist = f64::INFINITY;
            for i in 0..centers.len() {
                for j in (i + 1)..centers.len() {
                    let d: f64 = centers[i]
                        .iter()
                        .zip(&centers[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    min_dist = min_dist.min(d);
                }
            }
            if n == 1 || min_dist > 0.0 {
                break;
            }
        }
    }
    let sigma = if n == 1 { 0.05 } else { min_dist / spec.separation };
    let noise = Normal::new(0.0, sigma).expect("positive sigma");

    let mut draw = |count: usize, features: &mut Vec<f64>, labels: &mut Vec<usize>| {
        for (class, center) in centers.iter().enumerate() {
            for _ in 0..count {
                for &c in center {
                    features.push((c + noise.sample(rng)).clamp(0.0, 1.0));
                }
                labels.push(class);
            }
        }
    };
    let mut train_features = Vec::new();
    let mut train_labels = Vec::new();
    draw(spec.samples_per_class, &mut train_features, &mut train_labels);
    let test_per_class = spec.samples_per_class.div_ceil(5);
    let mut test_features = Vec::new();
    let mut test_labels = Vec::new();
    draw(test_per_class, &mut test_features, &mut test_labels);

    SourceDataset::assemble(
        train_features,
        train_labels,
        test_features,
        test_labels,
        spec.dim,
        spec.num_classes,
    )
}

/// One train-sample index per spatial point, aligned with the point cloud.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PointBinding {
    pub sample_indices: Vec<u32>,
}

/// Binds every labeled point to a train sample of the same class, drawn
/// uniformly with replacement (Poisson point counts may exceed the per-class
/// pool). Run with a stream keyed only by the experiment seed so all policies
/// share one binding.
pub fn bind_points(
    partition: &SpatialPartition,
    source: &SourceDataset,
    rng: &mut ChaCha8Rng,
) -> Result<PointBinding> {
    if partition.points.labels.len() != partition.points.len() {
        return Err(Error::config("partition points are not labeled"));
    }
    if partition.world.num_classes > source.num_classes {
        return Err(Error::config(format!(
            "partition uses {} classes, source provides {}",
            partition.world.num_classes, source.num_classes
        )));
    }
    let mut sample_indices = Vec::with_capacity(partition.points.len());
    for &label in &partition.points.labels {
        let pool = &source.per_class_index[label as usize];
        if pool.is_empty() {
            return Err(Error::config(format!("source dataset has no samples of class {label}")));
        }
        sample_indices.push(pool[rng.random_range(0..pool.len())] as u32);
    }
    Ok(PointBinding { sample_indices })
}

/// A partition bound to a source dataset: everything needed to materialize
/// any client's local dataset.
#[derive(Debug, Clone, Copy)]
pub struct BoundWorld<'a> {
    pub partition: &'a SpatialPartition,
    pub source: &'a SourceDataset,
    pub binding: &'a PointBinding,
}

impl<'a> BoundWorld<'a> {
    pub fn new(
        partition: &'a SpatialPartition,
        source: &'a SourceDataset,
        binding: &'a PointBinding,
    ) -> Result<Self> {
        if binding.sample_indices.len() != partition.points.len() {
            return Err(Error::dimension(format!(
                "binding covers {} points, partition has {}",
                binding.sample_indices.len(),
                partition.points.len()
            )));
        }
        Ok(BoundWorld { partition, source, binding })
    }

    pub fn num_clients(&self) -> usize {
        self.partition.capture_lists.len()
    }

    /// `D_k`: points captured by client `k` (duplicates included).
    pub fn client_len(&self, client: usize) -> usize {
        self.partition.capture_lists[client].len()
    }

    /// Materializes client `k`'s dataset by gathering its bound sample rows.
    pub fn client_dataset(&self, client: usize) -> Result<ClientDataset> {
        let dim = self.source.feature_dim;
        let capture = &self.partition.capture_lists[client];
        let mut features = Vec::with_capacity(capture.len() * dim);
        let mut labels = Vec::with_capacity(capture.len());
        for &p in capture {
            let sample = self.binding.sample_indices[p as usize] as usize;
            features.extend_from_slice(
                &self.source.train_features[sample * dim..(sample + 1) * dim],
            );
            labels.push(self.source.train_labels[sample]);
        }
        ClientDataset::new(features, labels, dim)
    }

    /// Distinct labels captured by client `k`, as a bitmask.
    pub fn client_label_mask(&self, client: usize) -> u128 {
        self.partition.label_mask(client)
    }
}
