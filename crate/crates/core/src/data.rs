//! Datasets: IDX (MNIST) ingestion, normalization, synthetic blobs and
//! class weighting.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::network::Batch;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Sample-major images with integer labels; one-hot targets are derived on
/// demand so they are valid by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<f64>,
    image_shape: Vec<usize>,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(
        images: Vec<f64>,
        image_shape: Vec<usize>,
        labels: Vec<usize>,
        classes: usize,
        split: Split,
    ) -> Result<Self> {
        let d: usize = image_shape.iter().product();
        if d == 0 || images.len() != d * labels.len() {
            return Err(Error::Shape(format!(
                "{} pixel values for {} images of shape {image_shape:?}",
                images.len(),
                labels.len()
            )));
        }
        if classes < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 classes, got {classes}")));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::InvalidInput(format!("label {bad} out of range for {classes} classes")));
        }
        if images.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "image pixels".into() });
        }
        Ok(Dataset {
            images,
            image_shape,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> &[usize] {
        &self.image_shape
    }

    pub fn image_len(&self) -> usize {
        self.image_shape.iter().product()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let d = self.image_len();
        &self.images[i * d..(i + 1) * d]
    }

    pub fn images(&self) -> &[f64] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Widen the class count, e.g. so a test split agrees with its training split.
    pub fn with_classes(mut self, classes: usize) -> Result<Self> {
        if classes < self.classes {
            return Err(Error::InvalidInput(format!(
                "cannot shrink class count from {} to {classes}",
                self.classes
            )));
        }
        self.classes = classes;
        Ok(self)
    }

    pub fn one_hot(&self, i: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.classes];
        y[self.labels[i]] = 1.0;
        y
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let d = self.image_len();
        let mut images = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            images,
            image_shape: self.image_shape.clone(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split: self.split,
        }
    }

    /// `n` distinct samples chosen uniformly with a seeded generator, kept in
    /// their original order.
    pub fn random_subset(&self, seed: u64, n: usize) -> Result<Dataset> {
        if n == 0 || n > self.len() {
            return Err(Error::InvalidInput(format!(
                "subset size {n} outside 1..={}",
                self.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = index::sample(&mut rng, self.len(), n).into_vec();
        idx.sort_unstable();
        Ok(self.subset(&idx))
    }

    /// Sample-major batch of the given positions.
    pub fn batch(&self, idx: &[usize], class_weights: &[f64]) -> Result<Batch> {
        let d = self.image_len();
        let mut inputs = Vec::with_capacity(idx.len() * d);
        let mut targets = vec![0.0; idx.len() * self.classes];
        for (s, &i) in idx.iter().enumerate() {
            inputs.extend_from_slice(self.image(i));
            targets[s * self.classes + self.labels[i]] = 1.0;
        }
        Batch::new(inputs, targets, d, self.classes, class_weights.to_vec())
    }

    pub fn full_batch(&self, class_weights: &[f64]) -> Result<Batch> {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batch(&idx, class_weights)
    }

    /// Mean and (population) standard deviation over every pixel.
    pub fn pixel_stats(&self) -> (f64, f64) {
        let n = self.images.len() as f64;
        let mean = self.images.iter().sum::<f64>() / n;
        let var = self.images.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// Re-encode as IDX image and label files. Fails unless every pixel is
    /// exactly `k / 255` for a byte `k`.
    pub fn to_idx_bytes(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let (rows, cols) = match *self.image_shape.as_slice() {
            [1, r, c] | [r, c] => (r, c),
            _ => {
                return Err(Error::Shape(format!(
                    "IDX export needs single-channel images, got {:?}",
                    self.image_shape
                )))
            }
        };
        let n = self.len() as u32;
        let mut img = Vec::with_capacity(16 + self.images.len());
        img.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
        for dim in [n, rows as u32, cols as u32] {
            img.extend_from_slice(&dim.to_be_bytes());
        }
        for &v in &self.images {
            let byte = (v * 255.0).round();
            if !(0.0..=255.0).contains(&byte) || byte / 255.0 != v {
                return Err(Error::InvalidInput(format!("pixel {v} is not a byte value / 255")));
            }
            img.push(byte as u8);
        }
        let mut lab = Vec::with_capacity(8 + self.len());
        lab.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
        lab.extend_from_slice(&n.to_be_bytes());
        for &y in &self.labels {
            lab.push(u8::try_from(y).map_err(|_| Error::InvalidInput(format!("label {y} exceeds a byte")))?);
        }
        Ok((img, lab))
    }
}

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::IdxTruncated {
            path: path.to_path_buf(),
            message: format!("header ends before byte {}", at + 4),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = read_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::IdxMagic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

/// Parse an IDX3 image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    check_magic(bytes, IDX_IMAGE_MAGIC, path)?;
    let n = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let need = 16 + n * rows * cols;
    if bytes.len() < need {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            message: format!("{n} images of {rows}x{cols} need {need} bytes, file has {}", bytes.len()),
        });
    }
    Ok((n, rows, cols, bytes[16..need].to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABEL_MAGIC, path)?;
    let n = read_u32(bytes, 4, path)? as usize;
    if bytes.len() < 8 + n {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            message: format!("{n} labels need {} bytes, file has {}", 8 + n, bytes.len()),
        });
    }
    Ok(bytes[8..8 + n].to_vec())
}

/// Decode IDX image/label bytes; pixels are scaled to `[0, 1]`.
pub fn dataset_from_idx(image_bytes: &[u8], label_bytes: &[u8], image_path: &Path, label_path: &Path) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(image_bytes, image_path)?;
    let labels = parse_idx_labels(label_bytes, label_path)?;
    if labels.len() != n {
        return Err(Error::IdxCountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    let images = pixels.into_iter().map(|b| f64::from(b) / 255.0).collect();
    Dataset::new(images, vec![1, rows, cols], labels, classes, Split::Train)
}

pub fn load_idx(image_path: impl AsRef<Path>, label_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (image_path.as_ref(), label_path.as_ref());
    let image_bytes = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let label_bytes = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    dataset_from_idx(&image_bytes, &label_bytes, ip, lp)
}

/// `(x − mean) / std` per pixel.
pub fn normalize(dataset: &Dataset, mean: f64, std: f64) -> Result<Dataset> {
    if !(std > 0.0 && std.is_finite()) || !mean.is_finite() {
        return Err(Error::InvalidInput(format!("normalization needs finite mean and std > 0, got {mean}, {std}")));
    }
    let mut out = dataset.clone();
    for v in &mut out.images {
        *v = (*v - mean) / std;
    }
    Ok(out)
}

/// Gaussian clouds (unit variance) around class centers placed on signed
/// coordinate axes at radius `separation`; classes beyond `2·dim` move to
/// larger radii.
pub fn synthetic_blobs(seed: u64, n_per_class: usize, classes: usize, dim: usize, separation: f64) -> Result<Dataset> {
    if classes < 2 || dim == 0 || n_per_class == 0 {
        return Err(Error::InvalidInput(format!(
            "blobs need classes >= 2, dim >= 1, n >= 1 (got {classes}, {dim}, {n_per_class})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(classes * n_per_class * dim);
    let mut labels = Vec::with_capacity(classes * n_per_class);
    for c in 0..classes {
        let axis = c % dim;
        let sign = if (c / dim).is_multiple_of(2) { 1.0 } else { -1.0 };
        let radius = separation * (1 + c / (2 * dim)) as f64;
        for _ in 0..n_per_class {
            for j in 0..dim {
                let noise: f64 = StandardNormal.sample(&mut rng);
                let center = if j == axis { sign * radius } else { 0.0 };
                images.push(center + noise);
            }
            labels.push(c);
        }
    }
    Dataset::new(images, vec![dim], labels, classes, Split::Train)
}

/// `w_i = exp(|B| / (m · c_i))`.
pub fn class_weights(dataset: &Dataset) -> Result<Vec<f64>> {
    let counts = dataset.class_counts();
    let m = dataset.classes() as f64;
    let n = dataset.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if c == 0 {
                Err(Error::InvalidInput(format!("class {i} has no samples")))
            } else {
                Ok((n / (m * c as f64)).exp())
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut b = magic.to_be_bytes().to_vec();
        for d in dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b
    }

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn parses_two_images() {
        let mut img = header(IDX_IMAGE_MAGIC, &[2, 28, 28]);
        assert_eq!(&img[..4], &[0, 0, 8, 3]);
        img.extend((0..2 * 784).map(|i| (i % 256) as u8));
        let mut lab = header(IDX_LABEL_MAGIC, &[2]);
        lab.extend([3, 9]);
        let ds = dataset_from_idx(&img, &lab, p(), p()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.image_shape(), &[1, 28, 28]);
        assert_eq!(ds.labels(), &[3, 9]);
        assert_eq!(ds.classes(), 10);
        assert_eq!(ds.image(0)[255], 1.0);
        let (img2, lab2) = ds.to_idx_bytes().unwrap();
        assert_eq!(img2, img);
        assert_eq!(lab2, lab);
    }

    #[test]
    fn idx_errors_are_distinct() {
        let img = header(IDX_IMAGE_MAGIC, &[1, 2, 2]);
        let lab = header(IDX_IMAGE_MAGIC, &[1]);
        assert!(matches!(parse_idx_labels(&lab, p()), Err(Error::IdxMagic { found: 0x803, .. })));
        assert!(matches!(parse_idx_images(&img, p()), Err(Error::IdxTruncated { .. })));
        assert!(matches!(parse_idx_images(&[0, 0, 8], p()), Err(Error::IdxTruncated { .. })));
        let mut img = header(IDX_IMAGE_MAGIC, &[2, 1, 1]);
        img.extend([0, 255]);
        let mut lab = header(IDX_LABEL_MAGIC, &[1]);
        lab.push(1);
        assert!(matches!(
            dataset_from_idx(&img, &lab, p(), p()),
            Err(Error::IdxCountMismatch { images: 2, labels: 1 })
        ));
    }

    #[test]
    fn normalize_cases() {
        let ds = Dataset::new(vec![0.2, 0.4, 0.6, 0.8], vec![2], vec![0, 1], 2, Split::Train).unwrap();
        assert_eq!(normalize(&ds, 0.0, 1.0).unwrap(), ds);
        let c = Dataset::new(vec![0.3; 4], vec![2], vec![0, 1], 2, Split::Train).unwrap();
        assert!(normalize(&c, 0.3, 0.7).unwrap().images().iter().all(|&v| v == 0.0));
        assert!(matches!(normalize(&ds, 0.0, 0.0), Err(Error::InvalidInput(_))));
        let (m, s) = ds.pixel_stats();
        let (m2, s2) = normalize(&ds, m, s).unwrap().pixel_stats();
        assert!(m2.abs() < 1e-12 && (s2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blobs_are_deterministic_and_separable() {
        let a = synthetic_blobs(5, 50, 2, 2, 10.0).unwrap();
        assert_eq!(a, synthetic_blobs(5, 50, 2, 2, 10.0).unwrap());
        assert_ne!(a, synthetic_blobs(6, 50, 2, 2, 10.0).unwrap());
        let mut min_dist = f64::INFINITY;
        for i in 0..a.len() {
            for j in 0..a.len() {
                if a.label(i) != a.label(j) {
                    let d: f64 = a.image(i).iter().zip(a.image(j)).map(|(x, y)| (x - y).powi(2)).sum();
                    min_dist = min_dist.min(d.sqrt());
                }
            }
        }
        assert!(min_dist > 0.0);
        // the hyperplane x0 = x1 separates the two clouds
        assert!((0..a.len()).all(|i| (a.image(i)[0] > a.image(i)[1]) == (a.label(i) == 0)));
    }

    #[test]
    fn zero_separation_blobs_share_a_center() {
        let a = synthetic_blobs(1, 4000, 2, 2, 0.0).unwrap();
        let mean = |c: usize| {
            let mut m = [0.0; 2];
            for i in (0..a.len()).filter(|&i| a.label(i) == c) {
                m[0] += a.image(i)[0] / 4000.0;
                m[1] += a.image(i)[1] / 4000.0;
            }
            m
        };
        let (m0, m1) = (mean(0), mean(1));
        assert!((m0[0] - m1[0]).abs() < 0.1 && (m0[1] - m1[1]).abs() < 0.1);
    }

    #[test]
    fn class_weight_cases() {
        let ds = Dataset::new(vec![0.0; 4], vec![1], vec![0, 1, 0, 1], 2, Split::Train).unwrap();
        for w in class_weights(&ds).unwrap() {
            assert!((w - std::f64::consts::E).abs() < 1e-15);
        }
        let lopsided = Dataset::new(vec![0.0; 3], vec![1], vec![0, 0, 1], 2, Split::Train).unwrap();
        let w = class_weights(&lopsided).unwrap();
        assert!(w[0] < w[1]);
        let missing = Dataset::new(vec![0.0; 2], vec![1], vec![0, 0], 2, Split::Train).unwrap();
        assert!(matches!(class_weights(&missing), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn organ_class_weight() {
        // |B| = 34581, m = 11, c_i = 3143: the ratio is 34581 / 34573, not 1.00026
        let expected = 2.718_910_896_541_16; // 40-digit decimal evaluation
        let w = (34581.0f64 / (11.0 * 3143.0)).exp();
        assert!((w - expected).abs() < 1e-14, "{w}");
        let mut labels = vec![0usize; 3143];
        labels.extend((0..34581 - 3143).map(|i| 1 + i % 10));
        let ds = Dataset::new(vec![0.0; labels.len()], vec![1], labels, 11, Split::Train).unwrap();
        assert!((class_weights(&ds).unwrap()[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn random_subset_is_seeded() {
        let ds = synthetic_blobs(0, 50, 2, 1, 1.0).unwrap();
        let a = ds.random_subset(3, 20).unwrap();
        assert_eq!(a, ds.random_subset(3, 20).unwrap());
        assert_eq!(a.len(), 20);
        assert!(ds.random_subset(3, 101).is_err());
    }
}
