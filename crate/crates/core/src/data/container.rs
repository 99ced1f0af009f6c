//! Header plus little-endian `f64` container for dataset fixtures.

use std::fs;
use std::path::Path;

use super::{LabeledDataset, Split};
use crate::augment::SampleShape;
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ISDDATA\0";
const VERSION: u32 = 1;

pub fn write_dataset(ds: &LabeledDataset) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC).u32(VERSION);
    match ds.shape() {
        SampleShape::Vector(d) => w.u8(0).usize(d).usize(0),
        SampleShape::Image { height, width } => w.u8(1).usize(height).usize(width),
    };
    w.u8(match ds.split() {
        Split::Train => 0,
        Split::Eval => 1,
    });
    w.usize(ds.num_classes()).usizes(ds.labels()).f64s(ds.samples());
    w.finish()
}

pub fn read_dataset(bytes: &[u8]) -> Result<LabeledDataset> {
    let mut r = Reader::new(bytes);
    if r.take(MAGIC.len()).map_err(|_| bad(0, "truncated magic"))? != MAGIC {
        return Err(bad(0, "not a dataset container"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(8, &format!("unsupported version {version}")));
    }
    let at = r.pos();
    let shape = match (r.u8()?, r.usize()?, r.usize()?) {
        (0, d, _) => SampleShape::Vector(d),
        (1, height, width) => SampleShape::Image { height, width },
        (tag, ..) => return Err(bad(at, &format!("unknown shape tag {tag}"))),
    };
    let at = r.pos();
    let split = match r.u8()? {
        0 => Split::Train,
        1 => Split::Eval,
        tag => return Err(bad(at, &format!("unknown split tag {tag}"))),
    };
    let classes = r.usize()?;
    let labels = r.usizes()?;
    let samples = r.f64s()?;
    if r.remaining() != 0 {
        return Err(bad(r.pos(), "trailing bytes"));
    }
    LabeledDataset::new(samples, shape, labels, classes, split)
}

pub fn save_dataset(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_dataset(ds))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    read_dataset(&fs::read(path)?)
}

fn bad(offset: usize, detail: &str) -> Error {
    Error::Format {
        offset,
        detail: detail.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_gaussian_mixture;

    #[test]
    fn round_trip_is_exact() {
        let ds = gen_gaussian_mixture(3, 5, 4, 2.0, 11).unwrap();
        let bytes = write_dataset(&ds);
        assert_eq!(read_dataset(&bytes).unwrap(), ds);

        let img = LabeledDataset::new(vec![0.5; 8], SampleShape::Image { height: 2, width: 2 }, vec![0, 1], 2, Split::Eval).unwrap();
        assert_eq!(read_dataset(&write_dataset(&img)).unwrap(), img);
    }

    #[test]
    fn corrupt_input() {
        let ds = gen_gaussian_mixture(2, 2, 2, 1.0, 1).unwrap();
        let bytes = write_dataset(&ds);
        assert!(matches!(read_dataset(&bytes[..bytes.len() - 3]), Err(Error::Length { .. })));
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(read_dataset(&wrong), Err(Error::Format { offset: 0, .. })));
        assert!(read_dataset(&[]).is_err());
    }
}
