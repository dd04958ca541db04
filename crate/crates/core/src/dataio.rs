//! Labeled datasets: MNIST IDX files and seeded synthetic blobs.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::Rng64;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// `n` feature vectors of length `dim` (values in [0, 1]) with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, n_classes: usize) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                context: "dataset features",
                expected: labels.len() * dim,
                found: features.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidLabel {
                label,
                classes: n_classes,
            });
        }
        if features.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Malformed("feature values must lie in [0, 1]".into()));
        }
        Ok(Self {
            features,
            labels,
            dim,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Feature-major batch: column `j` holds sample `indices[j]`.
    pub fn batch(&self, indices: &[usize]) -> DenseMatrix {
        let width = indices.len();
        let mut data = vec![0.0; self.dim * width];
        for (j, &i) in indices.iter().enumerate() {
            for (f, &v) in self.sample(i).iter().enumerate() {
                data[f * width + j] = v;
            }
        }
        DenseMatrix::from_vec(self.dim, width, data).expect("batch shape")
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// The first `n` samples (all of them if `n` exceeds the length).
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            features: self.features[..n * self.dim].to_vec(),
            labels: self.labels[..n].to_vec(),
            dim: self.dim,
            n_classes: self.n_classes,
        }
    }
}

struct IdxReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> IdxReader<'a> {
    fn u32(&mut self, what: &'static str) -> Result<u32> {
        let end = self.pos + 4;
        let raw = self.bytes.get(self.pos..end).ok_or(Error::Truncated(what))?;
        self.pos = end;
        Ok(u32::from_be_bytes(raw.try_into().expect("4 bytes")))
    }

    fn rest(&self, len: usize, what: &'static str) -> Result<&'a [u8]> {
        self.bytes.get(self.pos..self.pos + len).ok_or(Error::Truncated(what))
    }
}

/// Parses an IDX image file: magic 0x803, dims (n, rows, cols), bytes.
/// Returns `(n, rows * cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    let mut rd = IdxReader { bytes, pos: 0 };
    let magic = rd.u32("image header")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = rd.u32("image header")? as usize;
    let rows = rd.u32("image header")? as usize;
    let cols = rd.u32("image header")? as usize;
    let pixels = rd.rest(n * rows * cols, "image data")?;
    Ok((n, rows * cols, pixels))
}

/// Parses an IDX label file: magic 0x801, dim (n), bytes.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let mut rd = IdxReader { bytes, pos: 0 };
    let magic = rd.u32("label header")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let n = rd.u32("label header")? as usize;
    rd.rest(n, "label data")
}

/// Builds a dataset from raw IDX bytes; pixels are scaled by 1/255.
pub fn dataset_from_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Dataset> {
    let (n, dim, pixels) = parse_idx_images(image_bytes)?;
    let labels = parse_idx_labels(label_bytes)?;
    if labels.len() != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1).max(10);
    let features = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Dataset::new(features, labels, dim, n_classes)
}

/// Loads an (uncompressed) IDX image/label file pair.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    dataset_from_idx(&images, &labels)
}

/// Standard MNIST file names inside a directory, as `(train, test)` pairs of
/// `(images, labels)`.
pub fn mnist_paths(dir: impl AsRef<Path>) -> [(std::path::PathBuf, std::path::PathBuf); 2] {
    let dir = dir.as_ref();
    [
        (dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte")),
        (dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte")),
    ]
}

/// Parameters for [`synth_blobs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    pub n_per_class: usize,
    pub n_classes: usize,
    pub dim: usize,
    /// Distance between class centers, in units of `sigma`.
    pub separation: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl BlobSpec {
    pub fn new(n_per_class: usize, n_classes: usize, dim: usize, separation: f64, seed: u64) -> Self {
        Self {
            n_per_class,
            n_classes,
            dim,
            separation,
            sigma: 0.1,
            seed,
        }
    }

    /// Class centers: `0.5` everywhere, shifted along axis `c mod dim` by
    /// `separation * sigma / sqrt(2)` (positive for the first `dim` classes,
    /// negative for the next `dim`), so any two centers are `separation * sigma`
    /// apart when `n_classes <= dim`.
    pub fn centers(&self) -> Vec<Vec<f64>> {
        let offset = self.separation * self.sigma / std::f64::consts::SQRT_2;
        (0..self.n_classes)
            .map(|c| {
                let mut center = vec![0.5; self.dim];
                let sign = if c < self.dim { 1.0 } else { -1.0 };
                center[c % self.dim] += sign * offset;
                center
            })
            .collect()
    }
}

/// Gaussian blobs around [`BlobSpec::centers`], clipped to [0, 1]. Samples
/// are interleaved by class (0, 1, ..., C-1, 0, 1, ...).
pub fn synth_blobs(spec: &BlobSpec) -> Result<Dataset> {
    if spec.n_per_class == 0 || spec.n_classes == 0 || spec.dim == 0 {
        return Err(Error::InvalidArgument("blob counts must all be at least 1".into()));
    }
    if spec.n_classes > 2 * spec.dim {
        return Err(Error::InvalidArgument(format!(
            "{} classes need dim >= {}",
            spec.n_classes,
            spec.n_classes.div_ceil(2)
        )));
    }
    if !(spec.sigma >= 0.0 && spec.separation >= 0.0) {
        return Err(Error::InvalidArgument("sigma and separation must be nonnegative".into()));
    }
    let centers = spec.centers();
    let mut rng = Rng64::new(spec.seed);
    let n = spec.n_per_class * spec.n_classes;
    let mut features = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..spec.n_per_class {
        for (c, center) in centers.iter().enumerate() {
            for &mu in center {
                features.push((mu + spec.sigma * rng.next_gaussian()).clamp(0.0, 1.0));
            }
            labels.push(c);
        }
    }
    Dataset::new(features, labels, spec.dim, spec.n_classes)
}
