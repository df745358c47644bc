//! MNIST in the IDX container format: parsing, serialization, loading and
//! deterministic mini-batches.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::rng::{Purpose, RngStream};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const IMAGE_SIDE: usize = 28;
pub const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const DEFAULT_BATCH: usize = 128;
/// Environment variable consulted when no data directory is given.
pub const DATA_DIR_ENV: &str = "HEBAE_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major pixel bytes, `count · rows · cols` of them.
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(bytes.len(), format!("header truncated, expected 4 bytes at offset {offset}")))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::format(0, format!("magic number {magic}, expected {expected}")));
    }
    Ok(())
}

fn check_payload(bytes: &[u8], header: usize, expected: usize) -> Result<()> {
    let have = bytes.len() - header;
    if have < expected {
        return Err(Error::format(bytes.len(), format!("payload truncated: {have} of {expected} bytes")));
    }
    if have > expected {
        return Err(Error::format(header + expected, format!("{} unexpected trailing bytes", have - expected)));
    }
    Ok(())
}

/// Parses an image file (magic 2051, dimensions `n × rows × cols`).
pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let len = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::format(4, "image dimensions overflow"))?;
    check_payload(bytes, 16, len)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

/// Parses a label file (magic 2049); every label must be a digit.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    check_payload(bytes, 8, count)?;
    let labels = &bytes[8..];
    if let Some(i) = labels.iter().position(|&l| l > 9) {
        return Err(Error::format(8 + i, format!("label {} out of range 0..9", labels[i])));
    }
    Ok(labels.to_vec())
}

pub fn serialize_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn serialize_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Inflates gzip input (recognized by its `1f 8b` magic); other input is
/// returned unchanged.
pub fn maybe_decompress(bytes: Vec<u8>) -> Result<Vec<u8>> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(0, format!("gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

/// Pixel bytes scaled into `[0, 1]`.
pub fn normalize(pixels: &[u8]) -> Vec<f64> {
    pixels.iter().map(|&p| f64::from(p) / 255.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn stem(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Images kept as raw bytes (normalized when batched) with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pixels: Vec<u8>,
    labels: Vec<u8>,
    pub split: Split,
}

impl Dataset {
    pub fn new(pixels: Vec<u8>, labels: Vec<u8>, split: Split) -> Result<Self> {
        if pixels.len() != labels.len() * PIXELS {
            return Err(Error::dim(format!(
                "{} pixel bytes do not make {} images of {PIXELS}",
                pixels.len(),
                labels.len()
            )));
        }
        Ok(Self { pixels, labels, split })
    }

    pub fn from_idx(images: IdxImages, labels: Vec<u8>, split: Split) -> Result<Self> {
        if images.rows != IMAGE_SIDE || images.cols != IMAGE_SIDE {
            return Err(Error::format(8, format!("images are {}×{}, expected 28×28", images.rows, images.cols)));
        }
        if images.count != labels.len() {
            return Err(Error::format(4, format!("{} images but {} labels", images.count, labels.len())));
        }
        Self::new(images.pixels, labels, split)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image_bytes(&self, i: usize) -> &[u8] {
        &self.pixels[i * PIXELS..(i + 1) * PIXELS]
    }

    /// Normalized images at `indices`, as a `[len, 784]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * PIXELS);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::contract(format!("index {i} out of range for {} images", self.len())));
            }
            data.extend(self.image_bytes(i).iter().map(|&p| f64::from(p) / 255.0));
        }
        Tensor::new(data, &[indices.len(), PIXELS])
    }

    /// All images as one tensor.
    pub fn images(&self) -> Result<Tensor> {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }

    /// The examples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let mut pixels = Vec::with_capacity(indices.len() * PIXELS);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::contract(format!("index {i} out of range for {} images", self.len())));
            }
            pixels.extend_from_slice(self.image_bytes(i));
            labels.push(self.labels[i]);
        }
        Self::new(pixels, labels, self.split)
    }

    /// The first `n` examples after a shuffle seeded by `rng` and `purpose`.
    pub fn shuffled_prefix(&self, n: usize, rng: &RngStream, purpose: Purpose) -> Result<Dataset> {
        if n == 0 || n > self.len() {
            return Err(Error::Config(format!("subset size {n} not in 1..={}", self.len())));
        }
        let perm = rng.substream(purpose, 0, 0).permutation(self.len());
        self.select(&perm[..n])
    }

    /// Training subset: the first `n` images after a seeded shuffle.
    pub fn subset(&self, n: usize, rng: &RngStream) -> Result<Dataset> {
        self.shuffled_prefix(n, rng, Purpose::Subset)
    }
}

fn find_file(dir: &Path, split: Split, kind: &str) -> Result<PathBuf> {
    let stem = split.stem();
    let candidates = [
        format!("{stem}-{kind}-idx{}-ubyte", if kind == "images" { 3 } else { 1 }),
        format!("{stem}-{kind}.idx{}-ubyte", if kind == "images" { 3 } else { 1 }),
    ];
    for name in &candidates {
        for suffix in ["", ".gz"] {
            let path = dir.join(format!("{name}{suffix}"));
            if path.is_file() {
                return Ok(path);
            }
        }
    }
    Err(Error::io(
        dir.join(&candidates[0]),
        std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file not found"),
    ))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    maybe_decompress(bytes)
}

/// Loads one canonical split from `dir`, accepting plain or gzipped files.
pub fn load_mnist(dir: &Path, split: Split) -> Result<Dataset> {
    let images = parse_idx_images(&read_file(&find_file(dir, split, "images")?)?)?;
    let labels = parse_idx_labels(&read_file(&find_file(dir, split, "labels")?)?)?;
    Dataset::from_idx(images, labels, split)
}

/// `explicit`, else `$HEBAE_DATA_DIR`.
pub fn resolve_data_dir(explicit: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(v) if !v.is_empty() => Ok(PathBuf::from(v)),
        _ => Err(Error::Config(format!("no data directory given and {DATA_DIR_ENV} is unset"))),
    }
}

/// One epoch of mini-batches over a seeded permutation. A final batch with
/// fewer than two examples is dropped.
pub struct BatchIterator<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

pub struct Batch {
    pub indices: Vec<usize>,
    pub images: Tensor,
}

impl<'a> BatchIterator<'a> {
    pub fn new(dataset: &'a Dataset, batch_size: usize, rng: &RngStream, epoch: u64) -> Result<Self> {
        if batch_size < 2 {
            return Err(Error::contract(format!("batch size must be at least 2, got {batch_size}")));
        }
        Ok(Self {
            dataset,
            order: rng.substream(Purpose::Shuffle, epoch, 0).permutation(dataset.len()),
            batch_size,
            pos: 0,
        })
    }

    /// Number of batches this epoch yields.
    pub fn batch_count(&self) -> usize {
        let n = self.order.len();
        let full = n / self.batch_size;
        full + usize::from(n % self.batch_size >= 2)
    }
}

impl Iterator for BatchIterator<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        let end = (self.pos + self.batch_size).min(self.order.len());
        if end - self.pos < 2 {
            return None;
        }
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(self.dataset.batch(&indices).map(|images| Batch { indices, images }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tiny(n: usize) -> Dataset {
        let pixels = (0..n * PIXELS).map(|i| (i % 251) as u8).collect();
        Dataset::new(pixels, (0..n).map(|i| (i % 10) as u8).collect(), Split::Train).unwrap()
    }

    #[test]
    fn image_magic_checked() {
        let imgs = IdxImages {
            count: 2,
            rows: 2,
            cols: 3,
            pixels: (0..12).collect(),
        };
        let bytes = serialize_idx_images(&imgs);
        assert_eq!(parse_idx_images(&bytes).unwrap(), imgs);
        let mut wrong = bytes.clone();
        wrong[3] = 0x01; // 2049
        assert!(matches!(parse_idx_images(&wrong), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(parse_idx_images(&[]), Err(Error::Format { .. })));
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = serialize_idx_images(&IdxImages {
            count: 3,
            rows: 2,
            cols: 2,
            pixels: vec![7; 12],
        });
        let cut = &bytes[..bytes.len() - 5];
        assert!(matches!(parse_idx_images(cut), Err(Error::Format { offset, .. }) if offset == cut.len()));
        assert!(matches!(parse_idx_images(&bytes[..10]), Err(Error::Format { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(parse_idx_images(&extra), Err(Error::Format { offset, .. }) if offset == bytes.len()));
    }

    #[test]
    fn labels_round_trip_and_range() {
        let bytes = serialize_idx_labels(&[3, 0, 9]);
        assert_eq!(parse_idx_labels(&bytes).unwrap(), vec![3, 0, 9]);
        let bad = serialize_idx_labels(&[3, 10, 9]);
        assert!(matches!(parse_idx_labels(&bad), Err(Error::Format { offset: 9, .. })));
        let img_magic = serialize_idx_images(&IdxImages {
            count: 0,
            rows: 0,
            cols: 0,
            pixels: vec![],
        });
        assert!(parse_idx_labels(&img_magic[..8]).is_err());
    }

    #[test]
    fn gzip_detected() {
        let plain = serialize_idx_labels(&[1, 2, 3, 4]);
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&plain).unwrap();
        let gz = enc.finish().unwrap();
        assert_eq!(maybe_decompress(gz).unwrap(), plain);
        assert_eq!(maybe_decompress(plain.clone()).unwrap(), plain);
        assert!(maybe_decompress(vec![0x1f, 0x8b, 0, 0]).is_err());
    }

    #[test]
    fn normalized_pixels_in_unit_interval() {
        let v = normalize(&[0, 128, 255]);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[2], 1.0);
        let b = tiny(3).batch(&[2, 0]).unwrap();
        assert_eq!(b.shape(), &[2, PIXELS]);
        assert!(b.data().iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn batches_cover_epoch_and_drop_singletons() {
        let ds = tiny(11);
        let rng = RngStream::new(5);
        let it = BatchIterator::new(&ds, 5, &rng, 0).unwrap();
        assert_eq!(it.batch_count(), 2);
        let batches: Vec<Batch> = it.map(Result::unwrap).collect();
        assert_eq!(batches.len(), 2);
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
        assert_eq!(seen.len(), 10);
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 10);

        // a remainder of two is kept
        let sizes: Vec<usize> = BatchIterator::new(&tiny(12), 5, &rng, 0).unwrap().map(|b| b.unwrap().indices.len()).collect();
        assert_eq!(sizes, vec![5, 5, 2]);
    }

    #[test]
    fn batches_deterministic_per_seed_and_epoch() {
        let ds = tiny(40);
        let order = |seed, epoch| -> Vec<usize> {
            BatchIterator::new(&ds, 8, &RngStream::new(seed), epoch)
                .unwrap()
                .flat_map(|b| b.unwrap().indices)
                .collect()
        };
        assert_eq!(order(1, 0), order(1, 0));
        assert_ne!(order(1, 0), order(1, 1));
        assert_ne!(order(1, 0), order(2, 0));
    }

    #[test]
    fn batch_size_contract() {
        assert!(matches!(BatchIterator::new(&tiny(4), 1, &RngStream::new(0), 0), Err(Error::Contract(_))));
    }

    #[test]
    fn subset_is_seeded_prefix() {
        let ds = tiny(30);
        let a = ds.subset(10, &RngStream::new(3)).unwrap();
        let b = ds.subset(10, &RngStream::new(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert!(ds.subset(31, &RngStream::new(3)).is_err());
    }

    #[test]
    fn load_from_directory_plain_and_gzip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny(4);
        let imgs = IdxImages {
            count: 4,
            rows: 28,
            cols: 28,
            pixels: (0..4).flat_map(|i| ds.image_bytes(i).to_vec()).collect(),
        };
        std::fs::write(dir.path().join("t10k-images-idx3-ubyte"), serialize_idx_images(&imgs)).unwrap();
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
        enc.write_all(&serialize_idx_labels(ds.labels())).unwrap();
        std::fs::write(dir.path().join("t10k-labels-idx1-ubyte.gz"), enc.finish().unwrap()).unwrap();
        let loaded = load_mnist(dir.path(), Split::Test).unwrap();
        assert_eq!(loaded.labels(), ds.labels());
        assert_eq!(loaded.image_bytes(3), ds.image_bytes(3));
        assert!(matches!(load_mnist(dir.path(), Split::Train), Err(Error::Io { .. })));
    }
}
