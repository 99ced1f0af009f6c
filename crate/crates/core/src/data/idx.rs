//! IDX files of unsigned bytes (the MNIST container).
//!
//! Layout: `0x00 0x00`, type byte `0x08`, dimension count, one big-endian
//! `u32` per dimension, then the raw payload.

use std::fs;
use std::path::Path;

use super::{LabeledDataset, Split};
use crate::augment::SampleShape;
use crate::error::{Error, Result};

const UNSIGNED_BYTE: u8 = 0x08;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::Format {
            offset: bytes.len(),
            detail: format!("file is {} bytes, too short for an IDX header", bytes.len()),
        });
    }
    for (offset, &b) in bytes[..2].iter().enumerate() {
        if b != 0 {
            return Err(Error::Format {
                offset,
                detail: format!("bad magic byte 0x{b:02x}, expected 0x00"),
            });
        }
    }
    if bytes[2] != UNSIGNED_BYTE {
        return Err(Error::Format {
            offset: 2,
            detail: format!("unsupported element type 0x{:02x}, expected 0x08", bytes[2]),
        });
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(Error::Format {
            offset: 3,
            detail: "IDX array has no dimensions".into(),
        });
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::Length {
            expected: header,
            actual: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let payload = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or(Error::Format {
        offset: 4,
        detail: "dimension product overflows".into(),
    })?;
    let actual = bytes.len() - header;
    if actual != payload {
        return Err(Error::Length {
            expected: header + payload,
            actual: bytes.len(),
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

/// Encodes an unsigned-byte IDX array.
pub fn write_idx(dims: &[usize], data: &[u8]) -> Result<Vec<u8>> {
    let n: usize = dims.iter().product();
    if dims.is_empty() || dims.len() > u8::MAX as usize || n != data.len() {
        return Err(Error::InvalidArgument(format!(
            "IDX dims {dims:?} do not describe {} bytes",
            data.len()
        )));
    }
    let mut out = vec![0, 0, UNSIGNED_BYTE, dims.len() as u8];
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("IDX dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(data);
    Ok(out)
}

/// Reads an image file and its paired label file. Pixels are scaled to
/// `[0, 1]`; the class count is one more than the largest label.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<LabeledDataset> {
    let img = parse_idx(&fs::read(images)?)?;
    let lab = parse_idx(&fs::read(labels)?)?;
    if lab.dims.len() != 1 {
        return Err(Error::Format {
            offset: 3,
            detail: format!("label file must be one-dimensional, has {} dims", lab.dims.len()),
        });
    }
    let n = img.dims[0];
    if lab.dims[0] != n {
        return Err(Error::Length {
            expected: n,
            actual: lab.dims[0],
        });
    }
    let shape = match img.dims[1..] {
        [d] => SampleShape::Vector(d),
        [height, width] => SampleShape::Image { height, width },
        _ => {
            return Err(Error::Format {
                offset: 3,
                detail: format!("image file must have 2 or 3 dims, has {}", img.dims.len()),
            })
        }
    };
    let labels: Vec<usize> = lab.data.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let samples = img.data.iter().map(|&b| f64::from(b) / 255.0).collect();
    LabeledDataset::new(samples, shape, labels, classes, Split::Train)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Byte-by-byte fixture: two 2x2 images and their labels.
    fn fixture() -> (Vec<u8>, Vec<u8>) {
        let images = vec![
            0x00, 0x00, 0x08, 0x03, //
            0x00, 0x00, 0x00, 0x02, //
            0x00, 0x00, 0x00, 0x02, //
            0x00, 0x00, 0x00, 0x02, //
            0, 255, 51, 102, //
            204, 153, 0, 255,
        ];
        let labels = vec![0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x02, 1, 0];
        (images, labels)
    }

    #[test]
    fn fixture_round_trip() {
        let (images, labels) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        fs::write(&ip, &images).unwrap();
        fs::write(&lp, &labels).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.shape(), SampleShape::Image { height: 2, width: 2 });
        assert_eq!(ds.sample(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.sample(1), &[0.8, 0.6, 0.0, 1.0]);
        assert_eq!(ds.labels(), &[1, 0]);
        assert_eq!(ds.num_classes(), 2);
    }

    #[test]
    fn writer_matches_fixture() {
        let (images, _) = fixture();
        assert_eq!(write_idx(&[2, 2, 2], &images[16..]).unwrap(), images);
    }

    #[test]
    fn empty_file_is_a_format_error() {
        assert!(matches!(parse_idx(&[]), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn bad_magic_reports_offset() {
        let (mut images, _) = fixture();
        images[1] = 0x01;
        assert!(matches!(parse_idx(&images), Err(Error::Format { offset: 1, .. })));
        images[1] = 0;
        images[2] = 0x0D;
        assert!(matches!(parse_idx(&images), Err(Error::Format { offset: 2, .. })));
    }

    #[test]
    fn payload_mismatch_is_a_length_error() {
        let (images, _) = fixture();
        assert!(matches!(parse_idx(&images[..images.len() - 1]), Err(Error::Length { .. })));
        let mut long = images.clone();
        long.push(0);
        assert!(matches!(parse_idx(&long), Err(Error::Length { .. })));
        assert!(matches!(parse_idx(&images[..9]), Err(Error::Length { .. })));
    }
}
