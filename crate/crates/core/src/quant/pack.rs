//! Dense n-bit packing of quantized weights.
//!
//! Container layout (little-endian):
//!
//! ```text
//! "QSSM" | version u16 | bits u8 | rank u8 | dims u32[rank]
//!        | level_count u16 | levels f64[level_count] | bitstream
//! ```
//!
//! Element `j` occupies bits `[j·n, (j+1)·n)` of the stream, least
//! significant bit first; the last byte is zero-padded.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"QSSM";
pub const VERSION: u16 = 1;
const GRID_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct PackedWeights {
    pub bits: u8,
    pub shape: Vec<usize>,
    pub levels: Vec<f64>,
    pub bitstream: Vec<u8>,
}

fn level_index(levels: &[f64], v: f64) -> Option<usize> {
    let i = levels.partition_point(|&q| q < v);
    [i.checked_sub(1), Some(i)]
        .into_iter()
        .flatten()
        .filter(|&j| j < levels.len())
        .min_by(|&a, &b| (levels[a] - v).abs().total_cmp(&(levels[b] - v).abs()))
        .filter(|&j| (levels[j] - v).abs() <= GRID_TOL)
}

pub fn pack_weights(w_hat: &Tensor, levels: &[f64], bits: u32) -> Result<PackedWeights> {
    if !(1..=16).contains(&bits) || levels.len() > 1usize << bits || levels.is_empty() {
        return Err(Error::Quant(format!(
            "{} levels do not fit in {bits} bits",
            levels.len()
        )));
    }
    let n = bits as usize;
    let total_bits = n * w_hat.numel();
    let mut stream = vec![0u8; total_bits.div_ceil(8)];
    for (j, &v) in w_hat.data().iter().enumerate() {
        let idx = level_index(levels, v).ok_or(Error::OffGrid { index: j, value: v })?;
        for b in 0..n {
            if (idx >> b) & 1 == 1 {
                let pos = j * n + b;
                stream[pos / 8] |= 1 << (pos % 8);
            }
        }
    }
    Ok(PackedWeights {
        bits: bits as u8,
        shape: w_hat.shape().to_vec(),
        levels: levels.to_vec(),
        bitstream: stream,
    })
}

pub fn unpack_weights(pw: &PackedWeights) -> Result<Tensor> {
    let n = pw.bits as usize;
    let count: usize = pw.shape.iter().product();
    if pw.bitstream.len() != (n * count).div_ceil(8) {
        return Err(Error::Format("bitstream length does not match shape".into()));
    }
    let mut out = Vec::with_capacity(count);
    for j in 0..count {
        let mut idx = 0usize;
        for b in 0..n {
            let pos = j * n + b;
            idx |= (((pw.bitstream[pos / 8] >> (pos % 8)) & 1) as usize) << b;
        }
        let v = *pw
            .levels
            .get(idx)
            .ok_or_else(|| Error::Format(format!("level index {idx} out of range")))?;
        out.push(v);
    }
    Tensor::new(pw.shape.clone(), out)
}

impl PackedWeights {
    pub fn header_len(&self) -> usize {
        4 + 2 + 1 + 1 + 4 * self.shape.len() + 2 + 8 * self.levels.len()
    }

    pub fn byte_len(&self) -> usize {
        self.header_len() + self.bitstream.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.bits);
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.levels.len() as u16).to_le_bytes());
        for &q in &self.levels {
            out.extend_from_slice(&q.to_le_bytes());
        }
        out.extend_from_slice(&self.bitstream);
        out
    }

    /// Parses one container from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::BadMagic("QSSM"));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported QSSM version {version}")));
        }
        let bits = r.take(1)?[0];
        let rank = r.take(1)?[0] as usize;
        let shape = (0..rank)
            .map(|_| r.array().map(|b| u32::from_le_bytes(b) as usize))
            .collect::<Result<Vec<_>>>()?;
        let n_levels = u16::from_le_bytes(r.array()?) as usize;
        let levels = (0..n_levels)
            .map(|_| r.array().map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let stream = r.take((bits as usize * count).div_ceil(8))?.to_vec();
        Ok((
            Self {
                bits,
                shape,
                levels,
                bitstream: stream,
            },
            r.pos,
        ))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Format("unexpected end of QSSM container".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice length"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_two_bit_elements_fill_two_bytes() {
        let levels = [0.0, 1.0, 2.0, 3.0];
        let w = Tensor::from_vec(vec![0., 1., 2., 3., 3., 2., 1., 0.]);
        let pw = pack_weights(&w, &levels, 2).unwrap();
        assert_eq!(pw.bitstream.len(), 2);
        // indices 0,1,2,3 -> 0b11_10_01_00
        assert_eq!(pw.bitstream[0], 0b1110_0100);
        assert_eq!(unpack_weights(&pw).unwrap(), w);
    }

    #[test]
    fn padding_to_byte_boundary() {
        let levels: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let w = Tensor::from_vec(vec![15.0, 1.0, 7.0]);
        let pw = pack_weights(&w, &levels, 4).unwrap();
        assert_eq!(pw.bitstream.len(), 2);
        assert_eq!(pw.bitstream[1] >> 4, 0);
        assert_eq!(unpack_weights(&pw).unwrap(), w);
    }

    #[test]
    fn off_grid_rejected() {
        let w = Tensor::from_vec(vec![0.0, 0.5]);
        assert!(matches!(
            pack_weights(&w, &[0.0, 1.0], 2),
            Err(Error::OffGrid { index: 1, .. })
        ));
    }

    #[test]
    fn serialized_round_trip() {
        let levels = [-0.5, 0.0, 0.5, 1.0];
        let w = Tensor::new(vec![2, 3], vec![-0.5, 1.0, 0.0, 0.5, 0.5, -0.5]).unwrap();
        let pw = pack_weights(&w, &levels, 2).unwrap();
        let bytes = pw.to_bytes();
        assert_eq!(bytes.len(), pw.byte_len());
        let (back, used) = PackedWeights::from_bytes(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, pw);
    }

    #[test]
    fn corrupt_magic() {
        let pw = pack_weights(&Tensor::from_vec(vec![0.0]), &[0.0, 1.0], 2).unwrap();
        let mut bytes = pw.to_bytes();
        bytes[0] = b'X';
        let err = PackedWeights::from_bytes(&bytes).unwrap_err();
        assert_eq!(err.to_string(), "not a QSSM container");
    }
}
