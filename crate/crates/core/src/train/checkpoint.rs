//! Versioned binary checkpoint: model pair, optimizer state, anchor bank,
//! generator positions and progress counters. All numbers little-endian.

use std::fs;
use std::path::Path;

use crate::bank::AnchorBank;
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::{MlpSpec, ModelPair, ParamBuffer, ParamSet, Role};
use crate::rng::RngState;

const MAGIC: &[u8; 8] = b"ISDCKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub pair: ModelPair,
    /// Learning rate in effect when the checkpoint was written.
    pub lr: f64,
    pub velocity: Vec<Vec<f64>>,
    pub bank: Option<AnchorBank>,
    pub order_rng: RngState,
    pub augment_rng: RngState,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC).u32(VERSION);
        w.f64(self.pair.momentum());
        write_params(&mut w, &self.pair.student_encoder);
        write_params(&mut w, &self.pair.student_predictor);
        write_params(&mut w, &self.pair.teacher_encoder);
        w.f64(self.lr).usize(self.velocity.len());
        for v in &self.velocity {
            w.f64s(v);
        }
        match &self.bank {
            None => {
                w.u8(0);
            }
            Some(bank) => {
                let (storage, head) = bank.raw();
                w.u8(1).usize(bank.capacity()).usize(bank.dim()).usize(head).usize(bank.len());
                w.u64(bank.total_inserted()).f64s(storage);
            }
        }
        write_rng(&mut w, &self.order_rng);
        write_rng(&mut w, &self.augment_rng);
        w.usize(self.epoch).usize(self.step);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic = r.take(MAGIC.len()).map_err(|_| Error::Checkpoint("file too short for a checkpoint".into()))?;
        if magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let momentum = r.f64()?;
        let student_encoder = read_params(&mut r)?;
        let student_predictor = read_params(&mut r)?;
        let teacher_encoder = read_params(&mut r)?;
        let pair = ModelPair::from_parts(student_encoder, student_predictor, teacher_encoder, momentum)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let lr = r.f64()?;
        let n = r.usize()?;
        let velocity = (0..n).map(|_| r.f64s()).collect::<Result<Vec<_>>>()?;
        let bank = match r.u8()? {
            0 => None,
            1 => {
                let (capacity, dim, head, count) = (r.usize()?, r.usize()?, r.usize()?, r.usize()?);
                let inserted = r.u64()?;
                let storage = r.f64s()?;
                Some(AnchorBank::from_parts(capacity, dim, storage, head, count, inserted)?)
            }
            tag => return Err(Error::Checkpoint(format!("unknown bank tag {tag}"))),
        };
        let order_rng = read_rng(&mut r)?;
        let augment_rng = read_rng(&mut r)?;
        let epoch = r.usize()?;
        let step = r.usize()?;
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Checkpoint {
            pair,
            lr,
            velocity,
            bank,
            order_rng,
            augment_rng,
            epoch,
            step,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path.as_ref()).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(_) => e,
            other => Error::Checkpoint(other.to_string()),
        })
    }
}

fn write_params(w: &mut Writer, p: &ParamSet) {
    w.usizes(&p.spec().widths).u8(p.spec().final_normalize as u8);
    w.u8(match p.role() {
        Role::Student => 0,
        Role::Teacher => 1,
    });
    w.usize(p.buffers().len());
    for b in p.buffers() {
        w.usizes(&b.shape).f64s(&b.values);
    }
}

fn read_params(r: &mut Reader) -> Result<ParamSet> {
    let widths = r.usizes()?;
    let final_normalize = r.u8()? != 0;
    let role = match r.u8()? {
        0 => Role::Student,
        1 => Role::Teacher,
        tag => return Err(Error::Checkpoint(format!("unknown role tag {tag}"))),
    };
    let n = r.usize()?;
    let mut buffers = Vec::new();
    for _ in 0..n {
        let shape = r.usizes()?;
        let values = r.f64s()?;
        buffers.push(ParamBuffer { shape, values });
    }
    let spec = MlpSpec { widths, final_normalize };
    ParamSet::from_buffers(spec, buffers, role).map_err(|e| Error::Checkpoint(e.to_string()))
}

fn write_rng(w: &mut Writer, s: &RngState) {
    w.bytes(&s.seed).u64(s.stream).u128(s.word_pos);
}

fn read_rng(r: &mut Reader) -> Result<RngState> {
    let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    Ok(RngState {
        seed,
        stream: r.u64()?,
        word_pos: r.u128()?,
    })
}
