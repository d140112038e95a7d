//! IDX and CSV dataset readers.
//!
//! IDX is the MNIST container: a 4-byte big-endian magic (`0x00000803` for
//! rank-3 unsigned-byte images, `0x00000801` for rank-1 labels), one
//! big-endian `u32` per dimension, then raw bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{ImageShape, LabeledDataset};
use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn read_be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, "truncated header"))
}

/// Returns `(dims, payload)` after checking the magic and payload length.
fn read_idx(path: &Path, magic: u32) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = fs::read(path)?;
    let found = read_be_u32(&bytes, 0, path)?;
    if found != magic {
        return Err(format_err(
            path,
            format!("bad magic 0x{found:08x}, expected 0x{magic:08x}"),
        ));
    }
    let rank = (magic & 0xff) as usize;
    let dims = (0..rank)
        .map(|i| read_be_u32(&bytes, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * rank;
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(format_err(
            path,
            format!(
                "header declares {expected} bytes of data, file holds {}",
                payload.len()
            ),
        ));
    }
    Ok((dims, payload.to_vec()))
}

/// Loads an IDX image/label pair. Pixels are scaled to `[0, 1]`.
pub fn load_idx(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    num_classes: usize,
) -> Result<LabeledDataset> {
    let (images, labels) = (images.as_ref(), labels.as_ref());
    let (img_dims, pixels) = read_idx(images, IDX_IMAGES_MAGIC)?;
    let (lbl_dims, raw_labels) = read_idx(labels, IDX_LABELS_MAGIC)?;
    if img_dims[0] != lbl_dims[0] {
        return Err(format_err(
            labels,
            format!(
                "{} labels for {} images in {}",
                lbl_dims[0],
                img_dims[0],
                images.display()
            ),
        ));
    }
    let shape = ImageShape::new(img_dims[1], img_dims[2], 1);
    let features = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels = raw_labels.iter().map(|&b| usize::from(b)).collect();
    LabeledDataset::new(features, shape.len(), labels, num_classes)?.with_image_shape(shape)
}

/// Writes images (values in `[0, 1]`, rounded to bytes) in IDX format.
pub fn write_idx_images(path: impl AsRef<Path>, ds: &LabeledDataset) -> Result<()> {
    let shape = ds.image_shape().ok_or_else(|| {
        Error::InvalidInput("IDX images need image metadata on the dataset".into())
    })?;
    if shape.channels != 1 {
        return Err(Error::InvalidInput(
            "IDX image files hold single-channel images".into(),
        ));
    }
    let mut out = Vec::with_capacity(16 + ds.features().len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [ds.len(), shape.height, shape.width] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend(
        ds.features()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Writes the true labels in IDX format.
pub fn write_idx_labels(path: impl AsRef<Path>, ds: &LabeledDataset) -> Result<()> {
    let mut out = Vec::with_capacity(8 + ds.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    for &y in ds.true_labels() {
        let b = u8::try_from(y)
            .map_err(|_| Error::InvalidInput(format!("label {y} does not fit a byte")))?;
        out.push(b);
    }
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Loads a CSV with one sample per row: label first, features after.
///
/// A header row is detected when the first field of the first row is not an
/// integer. Feature values are taken as given.
pub fn load_csv(path: impl AsRef<Path>, num_classes: usize) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let first = record.get(0).unwrap_or("");
        let label = match first.parse::<i64>() {
            Ok(v) => v,
            Err(_) if row == 0 => continue,
            Err(_) => {
                return Err(format_err(path, format!("row {}: bad label {first:?}", row + 1)))
            }
        };
        if label < 0 || label as usize >= num_classes {
            return Err(Error::Data(format!(
                "{}: row {}: label {label} outside [0, {num_classes})",
                path.display(),
                row + 1
            )));
        }
        let row_dim = record.len() - 1;
        match dim {
            None => dim = Some(row_dim),
            Some(d) if d != row_dim => {
                return Err(format_err(
                    path,
                    format!("row {} has {row_dim} features, expected {d}", row + 1),
                ))
            }
            _ => {}
        }
        for field in record.iter().skip(1) {
            let v: f64 = field.parse().map_err(|_| {
                format_err(path, format!("row {}: bad feature {field:?}", row + 1))
            })?;
            features.push(v);
        }
        labels.push(label as usize);
    }
    let dim = dim.ok_or_else(|| format_err(path, "no data rows"))?;
    if dim == 0 {
        return Err(format_err(path, "rows carry no features"));
    }
    LabeledDataset::new(features, dim, labels, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v.extend_from_slice(payload);
        v
    }

    fn write(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::File::create(&p).unwrap().write_all(bytes).unwrap();
        p
    }

    #[test]
    fn idx_pair_shape_from_header() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..10 * 784).map(|i| (i % 256) as u8).collect();
        let img = write(&dir, "img", &idx_bytes(0x803, &[10, 28, 28], &pixels));
        let lbl = write(&dir, "lbl", &idx_bytes(0x801, &[10], &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]));
        let ds = load_idx(&img, &lbl, 10).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.dim(), 784);
        assert_eq!(ds.image_shape(), Some(ImageShape::new(28, 28, 1)));
        assert_eq!(ds.sample(0)[255], 1.0);
        assert!(ds.features().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(ds.observed_labels(), ds.true_labels());
    }

    #[test]
    fn idx_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(&dir, "img", &idx_bytes(0x803, &[2, 2, 2], &[0; 8]));
        let lbl3 = write(&dir, "lbl3", &idx_bytes(0x801, &[3], &[0, 1, 2]));
        assert!(matches!(load_idx(&img, &lbl3, 10), Err(Error::Format { .. })));

        let bad_magic = write(&dir, "bad", &idx_bytes(0x802, &[2, 2, 2], &[0; 8]));
        let lbl2 = write(&dir, "lbl2", &idx_bytes(0x801, &[2], &[0, 1]));
        assert!(matches!(load_idx(&bad_magic, &lbl2, 10), Err(Error::Format { .. })));

        let short = write(&dir, "short", &idx_bytes(0x803, &[2, 2, 2], &[0; 7]));
        assert!(matches!(load_idx(&short, &lbl2, 10), Err(Error::Format { .. })));

        let big_label = write(&dir, "big", &idx_bytes(0x801, &[2], &[0, 12]));
        assert!(matches!(load_idx(&img, &big_label, 10), Err(Error::Data(_))));
    }

    #[test]
    fn idx_write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let feats: Vec<f64> = (0..3 * 4).map(|i| f64::from(i as u8 * 20) / 255.0).collect();
        let ds = LabeledDataset::new(feats, 4, vec![2, 0, 1], 3)
            .unwrap()
            .with_image_shape(ImageShape::new(2, 2, 1))
            .unwrap();
        let (i, l) = (dir.path().join("i"), dir.path().join("l"));
        write_idx_images(&i, &ds).unwrap();
        write_idx_labels(&l, &ds).unwrap();
        assert_eq!(load_idx(&i, &l, 3).unwrap(), ds);
    }

    #[test]
    fn csv_single_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", b"3,0.0,1.0\n");
        let ds = load_csv(&p, 10).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.true_labels(), &[3]);
        assert_eq!(ds.sample(0), &[0.0, 1.0]);
    }

    #[test]
    fn csv_header_is_optional() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "h.csv", b"label,f0,f1\n1,0.5,0.25\n0,1,2\n");
        let ds = load_csv(&p, 2).unwrap();
        assert_eq!(ds.true_labels(), &[1, 0]);
        assert_eq!(ds.sample(1), &[1.0, 2.0]);
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "r.csv", b"1,0.5\n10,0.1\n");
        assert!(matches!(load_csv(&p, 10), Err(Error::Data(_))));
        let p = write(&dir, "f.csv", b"1,0.5\n2,abc\n");
        assert!(matches!(load_csv(&p, 10), Err(Error::Format { .. })));
        let p = write(&dir, "e.csv", b"");
        assert!(load_csv(&p, 10).is_err());
    }
}
