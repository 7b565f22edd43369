//! Binary checkpoint and activation-dump formats.
//!
//! Checkpoint: `CDRNCKPT`, u32 version, u32 `m, n, blocks, layers, filters,
//! io_channels`, f64 BN epsilon, momentum and input scale, then for each block and each
//! layer the conv weights and bias followed (hidden layers only) by BN gain,
//! shift, running mean and running variance. Activation dump: `CDRNACTS`,
//! u32 version, u32 count, then per tensor u32 index, u32 `h, w, c, b` and
//! the values. All integers and floats are little-endian; both files end in
//! a CRC-32 of everything before it.

use std::fs;
use std::path::Path;

use super::{CdrnArch, CdrnModel, IO_CHANNELS};
use crate::error::{Error, Result};
use crate::nn::RealTensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const CKPT_MAGIC: &[u8; 8] = b"CDRNCKPT";
const ACTS_MAGIC: &[u8; 8] = b"CDRNACTS";
const ACTS_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.0);
        self.u32(crc);
        self.0
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and trailer before any field is decoded.
    fn open(bytes: &'a [u8], magic: &[u8; 8]) -> Result<Self> {
        if bytes.len() < magic.len() + 4 {
            return Err(Error::Format("file too short".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        if &body[..8] != magic {
            return Err(Error::Format("bad magic bytes".into()));
        }
        Ok(Self { buf: body, pos: 8 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn fill(&mut self, out: &mut [f64]) -> Result<()> {
        for v in out {
            *v = self.f64()?;
        }
        Ok(())
    }

    fn done(&self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.pos)))
        }
    }
}

pub fn checkpoint_bytes(model: &CdrnModel) -> Vec<u8> {
    let a = model.arch;
    let mut w = Writer(CKPT_MAGIC.to_vec());
    w.u32(CHECKPOINT_VERSION);
    for v in [a.m, a.n, a.blocks, a.layers, a.filters, IO_CHANNELS] {
        w.u32(v as u32);
    }
    let first_bn = &model.blocks[0].norms[0];
    w.f64s(&[first_bn.epsilon, first_bn.momentum, model.input_scale]);
    for block in &model.blocks {
        for (i, conv) in block.convs.iter().enumerate() {
            w.f64s(&conv.weights);
            w.f64s(&conv.bias);
            if let Some(bn) = block.norms.get(i) {
                w.f64s(&bn.gain);
                w.f64s(&bn.shift);
                w.f64s(&bn.running_mean);
                w.f64s(&bn.running_var);
            }
        }
    }
    w.finish()
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<CdrnModel> {
    let mut r = Reader::open(bytes, CKPT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let arch = CdrnArch {
        m: r.usize()?,
        n: r.usize()?,
        blocks: r.usize()?,
        layers: r.usize()?,
        filters: r.usize()?,
    };
    let io = r.usize()?;
    if io != IO_CHANNELS {
        return Err(Error::Format(format!("{io} io channels, expected {IO_CHANNELS}")));
    }
    arch.validate().map_err(|e| Error::Format(e.to_string()))?;
    let epsilon = r.f64()?;
    let momentum = r.f64()?;
    let input_scale = r.f64()?;
    let mut model = CdrnModel::zeros(arch)?;
    model
        .set_input_scale(input_scale)
        .map_err(|e| Error::Format(e.to_string()))?;
    for block in &mut model.blocks {
        let hidden = block.norms.len();
        for (i, conv) in block.convs.iter_mut().enumerate() {
            r.fill(&mut conv.weights)?;
            r.fill(&mut conv.bias)?;
            if i < hidden {
                let bn = &mut block.norms[i];
                r.fill(&mut bn.gain)?;
                r.fill(&mut bn.shift)?;
                r.fill(&mut bn.running_mean)?;
                r.fill(&mut bn.running_var)?;
                bn.epsilon = epsilon;
                bn.momentum = momentum;
            }
        }
    }
    r.done()?;
    Ok(model)
}

pub fn save_checkpoint(model: &CdrnModel, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CdrnModel> {
    checkpoint_from_bytes(&fs::read(path)?)
}

pub fn activations_bytes(tensors: &[RealTensor]) -> Vec<u8> {
    let mut w = Writer(ACTS_MAGIC.to_vec());
    w.u32(ACTS_VERSION);
    w.u32(tensors.len() as u32);
    for (i, t) in tensors.iter().enumerate() {
        w.u32(i as u32);
        let (h, wd, c, b) = t.shape();
        for v in [h, wd, c, b] {
            w.u32(v as u32);
        }
        w.f64s(t.as_slice());
    }
    w.finish()
}

pub fn activations_from_bytes(bytes: &[u8]) -> Result<Vec<RealTensor>> {
    let mut r = Reader::open(bytes, ACTS_MAGIC)?;
    let version = r.u32()?;
    if version != ACTS_VERSION {
        return Err(Error::Format(format!("unsupported activation dump version {version}")));
    }
    let count = r.usize()?;
    let mut out = Vec::with_capacity(count);
    for expect in 0..count {
        let idx = r.usize()?;
        if idx != expect {
            return Err(Error::Format(format!("tensor index {idx}, expected {expect}")));
        }
        let (h, w, c, b) = (r.usize()?, r.usize()?, r.usize()?, r.usize()?);
        let len = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(c))
            .and_then(|v| v.checked_mul(b))
            .ok_or_else(|| Error::Format("tensor shape overflows".into()))?;
        let mut data = vec![0.0; len];
        r.fill(&mut data)?;
        out.push(RealTensor::from_vec(h, w, c, b, data).map_err(|e| Error::Format(e.to_string()))?);
    }
    r.done()?;
    Ok(out)
}

/// Writes `A, A_1, ..., A_D` with their block indices.
pub fn save_activations(tensors: &[RealTensor], path: &Path) -> Result<()> {
    fs::write(path, activations_bytes(tensors))?;
    Ok(())
}

pub fn load_activations(path: &Path) -> Result<Vec<RealTensor>> {
    activations_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use crate::rng::{substream, Domain};
    use rand::Rng;

    fn trained_like() -> CdrnModel {
        let arch = CdrnArch {
            m: 3,
            n: 4,
            blocks: 2,
            layers: 3,
            filters: 4,
        };
        let mut model = CdrnModel::random(arch, 11).unwrap();
        model.set_input_scale(0.5).unwrap();
        let mut rng = substream(1, Domain::Scratch, 0);
        let x = RealTensor::from_fn(3, 5, 2, 4, |_, _, _, _| rng.gen_range(-1.0..1.0));
        model.forward(&x, Mode::Train).unwrap();
        model
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = trained_like();
        let bytes = checkpoint_bytes(&model);
        let loaded = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(checkpoint_bytes(&loaded), bytes);
    }

    #[test]
    fn corruption_is_rejected() {
        let bytes = checkpoint_bytes(&trained_like());
        assert!(matches!(
            checkpoint_from_bytes(&bytes[..bytes.len() - 9]),
            Err(Error::Checksum { .. })
        ));
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(checkpoint_from_bytes(&flipped), Err(Error::Checksum { .. })));
        assert!(checkpoint_from_bytes(&bytes[..5]).is_err());

        // valid checksum, wrong version
        let mut body = bytes[..bytes.len() - 4].to_vec();
        body[8] = 9;
        let crc = crc32fast::hash(&body);
        body.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(checkpoint_from_bytes(&body), Err(Error::Format(_))));
    }

    #[test]
    fn activations_round_trip() {
        let t = vec![
            RealTensor::from_fn(2, 3, 2, 1, |y, x, c, _| (y * 6 + x * 2 + c) as f64),
            RealTensor::zeros(2, 3, 2, 1),
        ];
        let bytes = activations_bytes(&t);
        assert_eq!(activations_from_bytes(&bytes).unwrap(), t);
        assert!(activations_from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
