//! Datasets: IDX (MNIST) and CIFAR binary loaders, task construction and
//! seeded synthetic data.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

pub const CIFAR_PIXELS: usize = 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Mnist,
    Cifar10,
    Cifar100,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    C10,
    C100,
}

impl CifarVariant {
    pub fn record_len(self) -> usize {
        match self {
            CifarVariant::C10 => 1 + CIFAR_PIXELS,
            CifarVariant::C100 => 2 + CIFAR_PIXELS,
        }
    }
}

/// Labelled examples; features row-major `n × d`, scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    n_features: usize,
    class_count: usize,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        n_features: usize,
        class_count: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        Error::check_len(labels.len() * n_features, features.len())?;
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature".into()));
        }
        Ok(Self {
            features,
            labels,
            n_features,
            class_count,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            n_features: self.n_features,
            class_count: self.class_count,
            provenance: self.provenance,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    fn u32_be(&mut self) -> Result<u32> {
        let chunk = self
            .bytes
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| self.err("unexpected end of file in header"))?;
        self.pos += 4;
        Ok(u32::from_be_bytes(chunk.try_into().unwrap()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let chunk = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| {
            self.err(format!(
                "truncated payload: need {n} bytes, {} remain",
                self.bytes.len() - self.pos
            ))
        })?;
        self.pos += n;
        Ok(chunk)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses an IDX image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut cur = Cursor { path, bytes, pos: 0 };
    let magic = cur.u32_be()?;
    if magic != IDX_IMAGE_MAGIC {
        cur.pos = 0;
        return Err(cur.err(format!("bad image magic {magic:#010x}")));
    }
    let n = cur.u32_be()? as usize;
    let rows = cur.u32_be()? as usize;
    let cols = cur.u32_be()? as usize;
    let pixels = cur.take(n * rows * cols)?.to_vec();
    if cur.pos != bytes.len() {
        return Err(cur.err("trailing bytes after image payload"));
    }
    Ok((n, rows, cols, pixels))
}

pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut cur = Cursor { path, bytes, pos: 0 };
    let magic = cur.u32_be()?;
    if magic != IDX_LABEL_MAGIC {
        cur.pos = 0;
        return Err(cur.err(format!("bad label magic {magic:#010x}")));
    }
    let n = cur.u32_be()? as usize;
    let labels = cur.take(n)?.to_vec();
    if cur.pos != bytes.len() {
        return Err(cur.err("trailing bytes after label payload"));
    }
    Ok(labels)
}

/// Loads an IDX image/label file pair.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(images, &read_file(images)?)?;
    let raw_labels = parse_idx_labels(labels, &read_file(labels)?)?;
    if raw_labels.len() != n {
        return Err(Error::Parse {
            path: labels.to_path_buf(),
            offset: 4,
            msg: format!("{} labels for {n} images", raw_labels.len()),
        });
    }
    let class_count = raw_labels.iter().map(|&y| y as usize + 1).max().unwrap_or(0).max(10);
    Dataset::new(
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        raw_labels.iter().map(|&y| y as usize).collect(),
        rows * cols,
        class_count,
        Provenance::Mnist,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnistSplit {
    Train,
    Test,
}

impl MnistSplit {
    fn prefix(self) -> &'static str {
        match self {
            MnistSplit::Train => "train",
            MnistSplit::Test => "t10k",
        }
    }
}

pub fn mnist_paths(dir: &Path, split: MnistSplit) -> (PathBuf, PathBuf) {
    let p = split.prefix();
    (
        dir.join(format!("{p}-images-idx3-ubyte")),
        dir.join(format!("{p}-labels-idx1-ubyte")),
    )
}

/// Loads the training split of MNIST from a directory of raw IDX files.
pub fn load_mnist(dir: &Path) -> Result<Dataset> {
    load_mnist_split(dir, MnistSplit::Train)
}

pub fn load_mnist_split(dir: &Path, split: MnistSplit) -> Result<Dataset> {
    let (images, labels) = mnist_paths(dir, split);
    load_idx(&images, &labels)
}

/// Loads one CIFAR binary batch file. CIFAR-100 uses the fine labels.
pub fn load_cifar(path: &Path, variant: CifarVariant) -> Result<Dataset> {
    parse_cifar(path, &read_file(path)?, variant)
}

pub fn parse_cifar(path: &Path, bytes: &[u8], variant: CifarVariant) -> Result<Dataset> {
    let rec = variant.record_len();
    if bytes.is_empty() || !bytes.len().is_multiple_of(rec) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: (bytes.len() - bytes.len() % rec) as u64,
            msg: format!(
                "file size {} is not a positive multiple of the {rec}-byte record",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / rec;
    let (label_at, class_count, provenance) = match variant {
        CifarVariant::C10 => (0, 10, Provenance::Cifar10),
        CifarVariant::C100 => (1, 100, Provenance::Cifar100),
    };
    let mut features = Vec::with_capacity(n * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(n);
    for (k, record) in bytes.chunks_exact(rec).enumerate() {
        let y = record[label_at] as usize;
        if y >= class_count {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                offset: (k * rec + label_at) as u64,
                msg: format!("label {y} out of range"),
            });
        }
        labels.push(y);
        features.extend(record[rec - CIFAR_PIXELS..].iter().map(|&p| p as f64 / 255.0));
    }
    Dataset::new(features, labels, CIFAR_PIXELS, class_count, provenance)
}

/// Keeps only examples of `classes`, relabelled to their position in `classes`.
pub fn class_subset(data: &Dataset, classes: &[usize]) -> Result<Dataset> {
    if classes.is_empty() {
        return Err(Error::InvalidInput("no classes requested".into()));
    }
    for (i, c) in classes.iter().enumerate() {
        if classes[..i].contains(c) {
            return Err(Error::InvalidInput(format!("class {c} requested twice")));
        }
    }
    let counts = data.class_counts();
    for &c in classes {
        if counts.get(c).copied().unwrap_or(0) == 0 {
            return Err(Error::InsufficientData {
                class: c,
                have: 0,
                need: 1,
            });
        }
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for i in 0..data.len() {
        if let Some(pos) = classes.iter().position(|&c| c == data.label(i)) {
            features.extend_from_slice(data.row(i));
            labels.push(pos);
        }
    }
    Dataset::new(features, labels, data.n_features, classes.len(), data.provenance)
}

/// Two-class task: `class_a → 0`, `class_b → 1`.
pub fn binary_task(data: &Dataset, class_a: usize, class_b: usize) -> Result<Dataset> {
    if class_a == class_b {
        return Err(Error::InvalidInput(format!(
            "binary task needs two distinct classes, got ({class_a}, {class_b})"
        )));
    }
    class_subset(data, &[class_a, class_b])
}

/// Exactly `n_per_class` examples from each of `classes`, chosen uniformly
/// without replacement. Labels are kept; output is in original order.
pub fn balanced_subsample(
    data: &Dataset,
    classes: &[usize],
    n_per_class: usize,
    seed: u64,
) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(classes.len() * n_per_class);
    for &c in classes {
        let mut pool: Vec<usize> = (0..data.len()).filter(|&i| data.label(i) == c).collect();
        if pool.len() < n_per_class {
            return Err(Error::InsufficientData {
                class: c,
                have: pool.len(),
                need: n_per_class,
            });
        }
        let (picked, _) = pool.partial_shuffle(&mut rng, n_per_class);
        chosen.extend_from_slice(picked);
    }
    chosen.sort_unstable();
    Ok(data.subset(&chosen))
}

/// Seeded shuffle split; returns `(train, test)` with `test_fraction` held out.
pub fn train_test_split(data: &Dataset, test_fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (data.len() as f64 * test_fraction).round() as usize;
    let (test, train) = idx.split_at(n_test);
    let mut train = train.to_vec();
    let mut test = test.to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (data.subset(&train), data.subset(&test))
}

/// Gaussian class blobs in `[0, 1]^d`. Each class has its own random centre;
/// features are clamped into range.
pub fn synthetic_blobs(
    classes: usize,
    n_per_class: usize,
    n_features: usize,
    noise: f64,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..n_features).map(|_| rng.random::<f64>()).collect())
        .collect();
    let normal = Normal::new(0.0, noise).expect("noise must be finite and nonnegative");
    let mut features = Vec::with_capacity(classes * n_per_class * n_features);
    let mut labels = Vec::with_capacity(classes * n_per_class);
    for _ in 0..n_per_class {
        for (c, centre) in centres.iter().enumerate() {
            features.extend(
                centre
                    .iter()
                    .map(|&m| (m + normal.sample(&mut rng)).clamp(0.0, 1.0)),
            );
            labels.push(c);
        }
    }
    Dataset::new(features, labels, n_features, classes, Provenance::Synthetic)
        .expect("synthetic data is well formed")
}

/// Binary data labelled by a sparse linear rule: only the first
/// `informative` features carry signal.
pub fn synthetic_sparse_linear(
    n: usize,
    n_features: usize,
    informative: usize,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..n_features)
        .map(|j| {
            if j < informative {
                if j % 2 == 0 { 2.0 } else { -2.0 }
            } else {
                0.0
            }
        })
        .collect();
    let mut features = Vec::with_capacity(n * n_features);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..n_features).map(|_| rng.random::<f64>()).collect();
        let z: f64 = x.iter().zip(&weights).map(|(a, b)| (a - 0.5) * b).sum();
        labels.push(usize::from(z > 0.0));
        features.extend(x);
    }
    Dataset::new(features, labels, n_features, 2, Provenance::Synthetic)
        .expect("synthetic data is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGE_MAGIC, n, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_LABEL_MAGIC, labels.len() as u32] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn idx_header_magic() {
        let bytes = idx_images(1, 2, 2, &[0, 255, 128, 1]);
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        let (n, r, c, px) = parse_idx_images(Path::new("mem"), &bytes).unwrap();
        assert_eq!((n, r, c), (1, 2, 2));
        assert_eq!(px, vec![0, 255, 128, 1]);
    }

    #[test]
    fn idx_bad_magic_and_truncation() {
        let mut bytes = idx_images(1, 2, 2, &[0, 0, 0, 0]);
        bytes[3] = 0x01;
        let err = parse_idx_images(Path::new("x"), &bytes).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 0, .. }), "{err}");

        let bytes = idx_images(2, 2, 2, &[0, 0, 0, 0, 0]);
        let err = parse_idx_images(Path::new("x"), &bytes).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 16, .. }), "{err}");

        let err = parse_idx_images(Path::new("x"), &[0, 0, 8]).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));

        let err = parse_idx_labels(Path::new("x"), &idx_labels(&[1, 2])[..9]).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn load_idx_scales_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = mnist_paths(dir.path(), MnistSplit::Train);
        fs::write(&ip, idx_images(2, 1, 2, &[255, 0, 51, 102])).unwrap();
        fs::write(&lp, idx_labels(&[3, 7])).unwrap();
        let ds = load_mnist(dir.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.n_features(), 2);
        assert_eq!(ds.row(0), &[1.0, 0.0]);
        assert_eq!(ds.row(1), &[0.2, 0.4]);
        assert_eq!(ds.labels(), &[3, 7]);
        assert_eq!(ds, load_mnist(dir.path()).unwrap());

        fs::write(&lp, idx_labels(&[3])).unwrap();
        assert!(load_mnist(dir.path()).is_err());
    }

    #[test]
    fn cifar_records() {
        let mut c10 = Vec::new();
        for k in 0..3u8 {
            c10.push(k);
            c10.extend(std::iter::repeat_n(255 - k, CIFAR_PIXELS));
        }
        assert_eq!(c10.len(), 3 * 3073);
        let ds = parse_cifar(Path::new("c10"), &c10, CifarVariant::C10).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.labels(), &[0, 1, 2]);
        assert_eq!(ds.row(0)[0], 1.0);
        assert!(ds.features().iter().all(|x| (0.0..=1.0).contains(x)));

        // the same bytes are not a whole number of CIFAR-100 records
        assert!(parse_cifar(Path::new("c100"), &c10, CifarVariant::C100).is_err());
        let mut c100 = Vec::new();
        for fine in [5u8, 99] {
            c100.push(1);
            c100.push(fine);
            c100.extend(std::iter::repeat_n(0, CIFAR_PIXELS));
        }
        let ds = parse_cifar(Path::new("c100"), &c100, CifarVariant::C100).unwrap();
        assert_eq!(ds.labels(), &[5, 99]);
        assert_eq!(ds.class_count(), 100);
        assert!(parse_cifar(Path::new("empty"), &[], CifarVariant::C10).is_err());
    }

    #[test]
    fn binary_task_relabels() {
        let ds = synthetic_blobs(4, 5, 3, 0.1, 1);
        let bin = binary_task(&ds, 2, 0).unwrap();
        assert_eq!(bin.len(), 10);
        assert_eq!(bin.class_count(), 2);
        assert!(bin.labels().iter().all(|&y| y < 2));
        assert!(matches!(binary_task(&ds, 0, 0), Err(Error::InvalidInput(_))));
        assert!(binary_task(&ds, 0, 9).is_err());
    }

    #[test]
    fn balanced_subsample_is_exact_and_deterministic() {
        let ds = synthetic_blobs(10, 60, 4, 0.1, 3);
        let classes: Vec<usize> = (0..10).collect();
        let sub = balanced_subsample(&ds, &classes, 50, 9).unwrap();
        assert_eq!(sub.len(), 500);
        assert!(sub.class_counts().iter().all(|&c| c == 50));
        assert_eq!(sub, balanced_subsample(&ds, &classes, 50, 9).unwrap());
        assert_ne!(sub, balanced_subsample(&ds, &classes, 50, 10).unwrap());
        assert!(balanced_subsample(&ds, &classes, 0, 9).unwrap().is_empty());
        assert!(matches!(
            balanced_subsample(&ds, &classes, 61, 9),
            Err(Error::InsufficientData { class: 0, have: 60, need: 61 })
        ));
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let ds = synthetic_blobs(2, 50, 2, 0.2, 5);
        let (tr, te) = train_test_split(&ds, 0.2, 1);
        assert_eq!(tr.len(), 80);
        assert_eq!(te.len(), 20);
        assert_eq!(train_test_split(&ds, 0.2, 1), (tr, te));
    }
}
