//! Binary file formats: IDX ingestion for the MNIST-family image sets, a
//! flat container for sampled datasets, and model checkpoints.
//!
//! Container layout (little-endian): magic `CLLAC1`, `u32` feature
//! dimension, `u64` row count, `u8` label width (0 or 1), then row-major
//! `f32` features, then one label byte per row when present. Label bytes
//! store 0 for the augmented class and `class + 1` otherwise, so features
//! written from wider scalars are truncated to `f32` by design.
//!
//! Checkpoint layout (little-endian): magic `CLLACM1`, `u8` architecture
//! tag (0 linear, 1 mlp), `u32` known classes, `u32` input dimension,
//! `u16` hidden-layer count, one `u32` per hidden width, then every
//! parameter as `f64` in the model's flat order.

use std::fs;
use std::path::Path;

use crate::dists::{ComplementaryDataset, TestDataset, UnlabeledDataset};
use crate::model::{Arch, OvrModel};
use crate::num::Real;
use crate::{Error, Result};

/// A labeled pool in its original class ids, before any known/augmented
/// split is applied.
#[derive(Clone, Debug, PartialEq)]
pub struct RawLabeled<T> {
    pub features: Vec<Vec<T>>,
    pub labels: Vec<usize>,
    pub d: usize,
}

impl<T> RawLabeled<T> {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

// --------------------------------------------------------------------------
// Byte-level reader
// --------------------------------------------------------------------------

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        Error::format(self.pos as u64, message)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail(format!(
                "unexpected end of file reading {what}: need {n} bytes, {} left",
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16_le(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32_le(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64_le(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn u32_be(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32_le(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64_le(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.fail(format!(
                "{} trailing bytes after the declared content",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

// --------------------------------------------------------------------------
// IDX ingestion
// --------------------------------------------------------------------------

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Reads an images/labels IDX pair (big-endian) into a raw labeled pool.
/// Pixels are scaled to [0, 1] by dividing by 255 in `f32`, then widened.
/// Image and label counts must match, and label bytes must stay in the
/// MNIST-family domain 0..=9.
pub fn ingest_idx<T: Real>(images: &Path, labels: &Path) -> Result<RawLabeled<T>> {
    let img_buf = fs::read(images)?;
    let mut r = Reader::new(&img_buf);
    let magic = r.u32_be("images magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            0,
            format!("bad images magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let n = r.u32_be("image count")? as usize;
    let rows = r.u32_be("row count")? as usize;
    let cols = r.u32_be("column count")? as usize;
    let d = rows * cols;
    if d == 0 {
        return Err(r.fail("image dimensions must be positive"));
    }
    let pixels = r.take(n * d, "pixel data")?;
    r.finish()?;

    let lab_buf = fs::read(labels)?;
    let mut r = Reader::new(&lab_buf);
    let magic = r.u32_be("labels magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            0,
            format!("bad labels magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let n_labels = r.u32_be("label count")? as usize;
    if n_labels != n {
        return Err(r.fail(format!("{n} images but {n_labels} labels")));
    }
    let label_bytes = r.take(n, "label data")?;
    r.finish()?;

    let mut out_labels = Vec::with_capacity(n);
    for (i, &b) in label_bytes.iter().enumerate() {
        if b > 9 {
            return Err(Error::format(
                (8 + i) as u64,
                format!("label byte {b} outside the 0..=9 class domain"),
            ));
        }
        out_labels.push(b as usize);
    }
    let features = pixels
        .chunks_exact(d)
        .map(|row| row.iter().map(|&b| T::of((b as f32 / 255.0) as f64)).collect())
        .collect();
    Ok(RawLabeled {
        features,
        labels: out_labels,
        d,
    })
}

// --------------------------------------------------------------------------
// Dataset containers
// --------------------------------------------------------------------------

const CONTAINER_MAGIC: &[u8; 6] = b"CLLAC1";

fn write_container<T: Real>(
    path: &Path,
    features: &[Vec<T>],
    labels: Option<&[u8]>,
) -> Result<()> {
    let n = features.len();
    if n == 0 {
        return Err(Error::invalid("refusing to write an empty container"));
    }
    let d = features[0].len();
    if d == 0 || features.iter().any(|row| row.len() != d) {
        return Err(Error::invalid("features must be non-empty and rectangular"));
    }
    if let Some(l) = labels {
        if l.len() != n {
            return Err(Error::invalid("label count must match the row count"));
        }
    }
    let mut buf = Vec::with_capacity(6 + 4 + 8 + 1 + n * d * 4 + n);
    buf.extend_from_slice(CONTAINER_MAGIC);
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.push(labels.is_some() as u8);
    for row in features {
        for &v in row {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    if let Some(l) = labels {
        buf.extend_from_slice(l);
    }
    fs::write(path, buf)?;
    Ok(())
}

fn read_container<T: Real>(path: &Path) -> Result<(Vec<Vec<T>>, Option<Vec<u8>>)> {
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf);
    let magic = r.take(6, "container magic")?;
    if magic != CONTAINER_MAGIC {
        return Err(Error::format(0, "bad container magic"));
    }
    let d = r.u32_le("feature dimension")? as usize;
    let n = r.u64_le("row count")? as usize;
    let label_width = r.u8("label width")?;
    if d == 0 {
        return Err(r.fail("feature dimension must be positive"));
    }
    if label_width > 1 {
        return Err(r.fail(format!("unsupported label width {label_width}")));
    }
    let mut features = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = Vec::with_capacity(d);
        for _ in 0..d {
            row.push(T::of(r.f32_le("feature value")? as f64));
        }
        features.push(row);
    }
    let labels = if label_width == 1 {
        Some(r.take(n, "label bytes")?.to_vec())
    } else {
        None
    };
    r.finish()?;
    Ok((features, labels))
}

/// Encodes a label for the container: 0 is the augmented class, known
/// classes shift up by one.
fn encode_label(class: usize, augmented: usize) -> Result<u8> {
    if class == augmented {
        Ok(0)
    } else {
        u8::try_from(class + 1)
            .map_err(|_| Error::invalid(format!("class {class} does not fit the label byte")))
    }
}

pub fn save_complementary<T: Real>(path: &Path, data: &ComplementaryDataset<T>) -> Result<()> {
    let labels: Vec<u8> = data
        .labels
        .iter()
        .map(|&y| encode_label(y, usize::MAX))
        .collect::<Result<_>>()?;
    write_container(path, &data.features, Some(&labels))
}

pub fn load_complementary<T: Real>(path: &Path, k: usize) -> Result<ComplementaryDataset<T>> {
    let (features, labels) = read_container(path)?;
    let labels = labels.ok_or_else(|| Error::format(0, "complementary container has no labels"))?;
    let labels = labels
        .iter()
        .map(|&b| match b {
            0 => Err(Error::format(
                0,
                "augmented label found in complementary data",
            )),
            b if (b as usize) <= k => Ok(b as usize - 1),
            b => Err(Error::format(0, format!("label {b} out of range for k = {k}"))),
        })
        .collect::<Result<_>>()?;
    Ok(ComplementaryDataset {
        features,
        labels,
        k,
    })
}

pub fn save_unlabeled<T: Real>(path: &Path, data: &UnlabeledDataset<T>) -> Result<()> {
    write_container(path, &data.features, None)
}

pub fn load_unlabeled<T: Real>(path: &Path) -> Result<UnlabeledDataset<T>> {
    let (features, labels) = read_container(path)?;
    if labels.is_some() {
        return Err(Error::format(0, "unlabeled container carries labels"));
    }
    Ok(UnlabeledDataset { features })
}

pub fn save_test<T: Real>(path: &Path, data: &TestDataset<T>) -> Result<()> {
    let labels: Vec<u8> = data
        .labels
        .iter()
        .map(|&y| encode_label(y, data.k))
        .collect::<Result<_>>()?;
    write_container(path, &data.features, Some(&labels))
}

pub fn load_test<T: Real>(path: &Path, k: usize) -> Result<TestDataset<T>> {
    let (features, labels) = read_container(path)?;
    let labels = labels.ok_or_else(|| Error::format(0, "test container has no labels"))?;
    let labels = labels
        .iter()
        .map(|&b| match b as usize {
            0 => Ok(k),
            b if b <= k => Ok(b - 1),
            b => Err(Error::format(0, format!("label {b} out of range for k = {k}"))),
        })
        .collect::<Result<_>>()?;
    Ok(TestDataset {
        features,
        labels,
        k,
    })
}

pub fn save_raw<T: Real>(path: &Path, data: &RawLabeled<T>) -> Result<()> {
    let labels: Vec<u8> = data
        .labels
        .iter()
        .map(|&y| encode_label(y, usize::MAX))
        .collect::<Result<_>>()?;
    write_container(path, &data.features, Some(&labels))
}

pub fn load_raw<T: Real>(path: &Path) -> Result<RawLabeled<T>> {
    let (features, labels) = read_container(path)?;
    let labels: Vec<usize> = labels
        .ok_or_else(|| Error::format(0, "raw container has no labels"))?
        .iter()
        .map(|&b| match b {
            0 => Err(Error::format(0, "raw pools have no augmented label")),
            b => Ok(b as usize - 1),
        })
        .collect::<Result<_>>()?;
    let d = features[0].len();
    Ok(RawLabeled {
        features,
        labels,
        d,
    })
}

// --------------------------------------------------------------------------
// Model checkpoints
// --------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 7] = b"CLLACM1";

pub fn save_model<T: Real>(path: &Path, model: &OvrModel<T>) -> Result<()> {
    let (tag, hidden): (u8, &[usize]) = match model.arch() {
        Arch::Linear => (0, &[]),
        Arch::Mlp { hidden } => (1, hidden),
    };
    let mut buf = Vec::with_capacity(7 + 1 + 4 + 4 + 2 + hidden.len() * 4 + model.params().len() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.push(tag);
    buf.extend_from_slice(&(model.k() as u32).to_le_bytes());
    buf.extend_from_slice(&(model.d() as u32).to_le_bytes());
    let n_hidden = u16::try_from(hidden.len())
        .map_err(|_| Error::invalid("too many hidden layers for the checkpoint header"))?;
    buf.extend_from_slice(&n_hidden.to_le_bytes());
    for &h in hidden {
        let h = u32::try_from(h)
            .map_err(|_| Error::invalid("hidden width does not fit the checkpoint header"))?;
        buf.extend_from_slice(&h.to_le_bytes());
    }
    for &p in model.params() {
        buf.extend_from_slice(&p.to_f64_lossy().to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_model<T: Real>(path: &Path) -> Result<OvrModel<T>> {
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf);
    let magic = r.take(7, "checkpoint magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad checkpoint magic"));
    }
    let tag = r.u8("architecture tag")?;
    let k = r.u32_le("known-class count")? as usize;
    let d = r.u32_le("input dimension")? as usize;
    let n_hidden = r.u16_le("hidden-layer count")? as usize;
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(r.u32_le("hidden width")? as usize);
    }
    let arch = match (tag, n_hidden) {
        (0, 0) => Arch::Linear,
        (0, _) => return Err(r.fail("linear checkpoint declares hidden layers")),
        (1, 0) => return Err(r.fail("mlp checkpoint declares no hidden layers")),
        (1, _) => Arch::Mlp { hidden },
        (t, _) => return Err(r.fail(format!("unknown architecture tag {t}"))),
    };
    let expected = arch.param_count(k, d);
    let mut params = Vec::with_capacity(expected);
    for _ in 0..expected {
        params.push(T::of(r.f64_le("parameter")?));
    }
    r.finish()?;
    OvrModel::from_params(arch, k, d, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn idx_pair(dir: &Path, images: &[u8], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("images.idx");
        let lp = dir.join("labels.idx");
        fs::write(&ip, images).unwrap();
        fs::write(&lp, labels).unwrap();
        (ip, lp)
    }

    fn tiny_images() -> Vec<u8> {
        // 2 images of 2x2 pixels.
        let mut buf = Vec::new();
        buf.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        buf.extend_from_slice(&2u32.to_be_bytes());
        buf.extend_from_slice(&2u32.to_be_bytes());
        buf.extend_from_slice(&2u32.to_be_bytes());
        buf.extend_from_slice(&[0, 51, 102, 255, 10, 20, 30, 40]);
        buf
    }

    fn tiny_labels() -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        buf.extend_from_slice(&2u32.to_be_bytes());
        buf.extend_from_slice(&[3, 7]);
        buf
    }

    #[test]
    fn idx_round_trip_scales_pixels() {
        let dir = TempDir::new().unwrap();
        let (ip, lp) = idx_pair(dir.path(), &tiny_images(), &tiny_labels());
        let raw: RawLabeled<f64> = ingest_idx(&ip, &lp).unwrap();
        assert_eq!(raw.len(), 2);
        assert_eq!(raw.d, 4);
        assert_eq!(raw.labels, vec![3, 7]);
        assert_eq!(raw.features[0][0], 0.0);
        assert_eq!(raw.features[0][3], 1.0);
        // Pixels divide in f32 before widening.
        assert_eq!(raw.features[0][1], (51.0f32 / 255.0) as f64);
    }

    #[test]
    fn idx_rejects_malformed_files() {
        let dir = TempDir::new().unwrap();

        // Wrong image magic.
        let mut bad = tiny_images();
        bad[3] = 0x01;
        let (ip, lp) = idx_pair(dir.path(), &bad, &tiny_labels());
        match ingest_idx::<f64>(&ip, &lp) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }

        // Truncated pixel data.
        let mut short = tiny_images();
        short.truncate(short.len() - 3);
        let (ip, lp) = idx_pair(dir.path(), &short, &tiny_labels());
        match ingest_idx::<f64>(&ip, &lp) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 16),
            other => panic!("expected format error, got {other:?}"),
        }

        // Count mismatch.
        let mut labels3 = Vec::new();
        labels3.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        labels3.extend_from_slice(&3u32.to_be_bytes());
        labels3.extend_from_slice(&[1, 2, 3]);
        let (ip, lp) = idx_pair(dir.path(), &tiny_images(), &labels3);
        assert!(matches!(ingest_idx::<f64>(&ip, &lp), Err(Error::Format { .. })));

        // Label out of the class domain, offset points at the byte.
        let mut bad_label = tiny_labels();
        let last = bad_label.len() - 1;
        bad_label[last] = 10;
        let (ip, lp) = idx_pair(dir.path(), &tiny_images(), &bad_label);
        match ingest_idx::<f64>(&ip, &lp) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, 9);
                assert!(message.contains("label byte 10"));
            }
            other => panic!("expected format error, got {other:?}"),
        }

        // Trailing bytes after the labels.
        let mut trailing = tiny_labels();
        trailing.push(0);
        let (ip, lp) = idx_pair(dir.path(), &tiny_images(), &trailing);
        assert!(matches!(ingest_idx::<f64>(&ip, &lp), Err(Error::Format { .. })));
    }

    #[test]
    fn container_round_trips_every_dataset_kind() {
        let dir = TempDir::new().unwrap();
        let cl = ComplementaryDataset {
            features: vec![vec![0.25, -1.5], vec![3.75, 0.0]],
            labels: vec![0, 2],
            k: 3,
        };
        let p = dir.path().join("cl.bin");
        save_complementary(&p, &cl).unwrap();
        let back: ComplementaryDataset<f64> = load_complementary(&p, 3).unwrap();
        assert_eq!(back, cl);
        // Re-writing the loaded data is byte-identical.
        let p2 = dir.path().join("cl2.bin");
        save_complementary(&p2, &back).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());

        let u = UnlabeledDataset {
            features: vec![vec![1.0], vec![2.0], vec![-0.5]],
        };
        let p = dir.path().join("u.bin");
        save_unlabeled(&p, &u).unwrap();
        assert_eq!(load_unlabeled::<f64>(&p).unwrap(), u);

        let t = TestDataset {
            features: vec![vec![0.5, 0.5], vec![1.5, -0.25]],
            labels: vec![2, 1],
            k: 2,
        };
        let p = dir.path().join("t.bin");
        save_test(&p, &t).unwrap();
        assert_eq!(load_test::<f64>(&p, 2).unwrap(), t);

        let raw = RawLabeled {
            features: vec![vec![0.125; 3]; 2],
            labels: vec![9, 0],
            d: 3,
        };
        let p = dir.path().join("raw.bin");
        save_raw(&p, &raw).unwrap();
        assert_eq!(load_raw::<f64>(&p).unwrap(), raw);
    }

    #[test]
    fn container_values_truncate_to_f32() {
        let dir = TempDir::new().unwrap();
        let u = UnlabeledDataset {
            features: vec![vec![0.1f64]],
        };
        let p = dir.path().join("u.bin");
        save_unlabeled(&p, &u).unwrap();
        let back: UnlabeledDataset<f64> = load_unlabeled(&p).unwrap();
        assert_eq!(back.features[0][0], 0.1f32 as f64);
        assert_ne!(back.features[0][0], 0.1f64);
    }

    #[test]
    fn container_rejects_corruption() {
        let dir = TempDir::new().unwrap();
        let t = TestDataset {
            features: vec![vec![1.0]],
            labels: vec![0],
            k: 2,
        };
        let p = dir.path().join("t.bin");
        save_test(&p, &t).unwrap();

        // Label byte beyond k + 1.
        let mut buf = fs::read(&p).unwrap();
        *buf.last_mut().unwrap() = 9;
        let bad = dir.path().join("bad.bin");
        fs::write(&bad, &buf).unwrap();
        assert!(matches!(load_test::<f64>(&bad, 2), Err(Error::Format { .. })));

        // Augmented label where none is allowed.
        *buf.last_mut().unwrap() = 0;
        fs::write(&bad, &buf).unwrap();
        assert!(matches!(
            load_complementary::<f64>(&bad, 2),
            Err(Error::Format { .. })
        ));

        // Truncation and trailing garbage.
        let good = fs::read(&p).unwrap();
        fs::write(&bad, &good[..good.len() - 1]).unwrap();
        assert!(matches!(load_test::<f64>(&bad, 2), Err(Error::Format { .. })));
        let mut long = good.clone();
        long.push(7);
        fs::write(&bad, &long).unwrap();
        assert!(matches!(load_test::<f64>(&bad, 2), Err(Error::Format { .. })));

        // Wrong magic.
        let mut wrong = good;
        wrong[0] = b'X';
        fs::write(&bad, &wrong).unwrap();
        assert!(matches!(load_test::<f64>(&bad, 2), Err(Error::Format { .. })));
    }

    #[test]
    fn checkpoint_round_trips_both_architectures() {
        let dir = TempDir::new().unwrap();
        for arch in [Arch::Linear, Arch::Mlp { hidden: vec![7, 3] }] {
            let model = OvrModel::<f64>::new(arch, 3, 4, 42).unwrap();
            let p = dir.path().join("model.bin");
            save_model(&p, &model).unwrap();
            let back: OvrModel<f64> = load_model(&p).unwrap();
            assert_eq!(back, model);
        }
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = TempDir::new().unwrap();
        let model = OvrModel::<f64>::new(Arch::Linear, 2, 3, 1).unwrap();
        let p = dir.path().join("model.bin");
        save_model(&p, &model).unwrap();
        let good = fs::read(&p).unwrap();

        let bad = dir.path().join("bad.bin");
        fs::write(&bad, &good[..good.len() - 4]).unwrap();
        assert!(matches!(load_model::<f64>(&bad), Err(Error::Format { .. })));

        let mut long = good.clone();
        long.extend_from_slice(&[0; 8]);
        fs::write(&bad, &long).unwrap();
        assert!(matches!(load_model::<f64>(&bad), Err(Error::Format { .. })));

        let mut wrong = good;
        wrong[0] = b'Y';
        fs::write(&bad, &wrong).unwrap();
        assert!(matches!(load_model::<f64>(&bad), Err(Error::Format { .. })));
    }
}
