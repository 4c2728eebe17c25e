//! `QIRC` checkpoint container (little-endian):
//!
//! ```text
//! "QIRC" | version u16 | config_len u32 | config (TOML text)
//!        | entry_count u32 | entries | packed_count u32 | packed sections
//! entry  = name_len u16 | name | dtype u8 | trainable u8 | rank u8
//!          | dims u32[rank] | data
//! packed = name_len u16 | name | QSSM container
//! ```
//!
//! `dtype` 0 carries raw `f64` data; `dtype` 1 marks a weight whose values
//! live in the packed section of the same name, and carries no data.

use super::config::ModelConfig;
use super::net::{build_model, dls_keys, levels_key, range_key, thresholds_key, ActQuant, RestorationNet, WeightQuant};
use super::store::ParamStore;
use crate::error::{Error, Result};
use crate::quant::{pack_weights, unpack_weights, PackedWeights};
use crate::tensor::Tensor;
use std::collections::HashMap;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"QIRC";
pub const VERSION: u16 = 1;
const DTYPE_F64: u8 = 0;
const DTYPE_PACKED: u8 = 1;

fn put_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

/// Serializes `net`. With `pack`, frozen body weights go into packed
/// sections instead of raw blobs.
pub fn to_bytes(net: &RestorationNet, pack: bool) -> Result<Vec<u8>> {
    let mut packed: Vec<(String, PackedWeights)> = Vec::new();
    if pack {
        for (name, q) in &net.weight_quant {
            let WeightQuant::Frozen { bits } = *q else {
                return Err(Error::Quant(format!("{name} must be frozen before packing")));
            };
            let pw = pack_weights(net.store.get(name)?, net.store.get(&levels_key(name))?.data(), bits)?;
            packed.push((name.clone(), pw));
        }
    }
    let is_packed: HashMap<&str, ()> = packed.iter().map(|(n, _)| (n.as_str(), ())).collect();

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = net.cfg.to_toml();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    out.extend_from_slice(&(net.store.len() as u32).to_le_bytes());
    for (name, value, trainable) in net.store.iter() {
        put_name(&mut out, name);
        let dtype = if is_packed.contains_key(name) { DTYPE_PACKED } else { DTYPE_F64 };
        out.push(dtype);
        out.push(trainable as u8);
        out.push(value.rank() as u8);
        for &d in value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        if dtype == DTYPE_F64 {
            for &v in value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out.extend_from_slice(&(packed.len() as u32).to_le_bytes());
    for (name, pw) in &packed {
        put_name(&mut out, name);
        out.extend_from_slice(&pw.to_bytes());
    }
    Ok(out)
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
            .ok_or_else(|| Error::Format("unexpected end of QIRC checkpoint".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn name(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("parameter name is not UTF-8".into()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<RestorationNet> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::BadMagic("QIRC"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported QIRC version {version}")));
    }
    let cfg_len = r.u32()? as usize;
    let cfg_text =
        std::str::from_utf8(r.take(cfg_len)?).map_err(|_| Error::Format("checkpoint config is not UTF-8".into()))?;
    let cfg = ModelConfig::from_toml(cfg_text)?;

    let mut store = ParamStore::new();
    let mut pending: Vec<(String, Vec<usize>)> = Vec::new();
    for _ in 0..r.u32()? {
        let name = r.name()?;
        let dtype = r.u8()?;
        let trainable = r.u8()? != 0;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let value = match dtype {
            DTYPE_F64 => {
                let raw = r.take(8 * numel)?;
                let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
                Tensor::new(shape, data)?
            }
            DTYPE_PACKED => {
                pending.push((name.clone(), shape.clone()));
                Tensor::zeros(&shape)
            }
            d => return Err(Error::Format(format!("unknown dtype {d} for {name}"))),
        };
        store.insert(name, value, trainable)?;
    }
    let mut packed: HashMap<String, PackedWeights> = HashMap::new();
    for _ in 0..r.u32()? {
        let name = r.name()?;
        let (pw, used) = PackedWeights::from_bytes(&r.buf[r.pos..])?;
        r.pos += used;
        packed.insert(name, pw);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after QIRC checkpoint".into()));
    }
    for (name, shape) in pending {
        let pw = packed
            .remove(&name)
            .ok_or_else(|| Error::Format(format!("no packed section for {name}")))?;
        let w = unpack_weights(&pw)?;
        if w.shape() != shape.as_slice() {
            return Err(Error::Format(format!("packed shape of {name} disagrees with its entry")));
        }
        store.set(&name, w)?;
    }
    assemble(cfg, store)
}

/// Rebuilds the network structure around a loaded store, inferring each
/// quantizer from the store entries present.
fn assemble(cfg: ModelConfig, store: ParamStore) -> Result<RestorationNet> {
    let mut net = build_model(&cfg, 0)?;
    net.cfg = cfg;
    for sp in &net.specs {
        let v = store
            .get(&sp.name)
            .map_err(|_| Error::Format(format!("checkpoint lacks parameter {}", sp.name)))?;
        if v.shape() != sp.shape.as_slice() {
            return Err(Error::Format(format!("parameter {} has shape {:?}, expected {:?}", sp.name, v.shape(), sp.shape)));
        }
    }
    let (w_bits, a_bits) = net.cfg.bits.unwrap_or((32, 32));
    let names: Vec<String> = net.body_weights().iter().map(|s| s.name.clone()).collect();
    for name in names {
        let q = if store.contains(&thresholds_key(&name)) {
            Some(WeightQuant::Rfa {
                bits: w_bits,
                fixed_slope: net.cfg.rfa_fixed_slope,
                rho: net.cfg.rfa_rho,
            })
        } else if store.contains(&levels_key(&name)) {
            Some(WeightQuant::Frozen { bits: w_bits })
        } else if store.contains(&range_key(&name)) {
            Some(WeightQuant::Static { bits: w_bits })
        } else {
            None
        };
        if let Some(q) = q {
            net.weight_quant.insert(name, q);
        }
    }
    for site in net.all_sites() {
        if store.contains(&dls_keys(&site).0) {
            net.act_quant.insert(site, ActQuant::Dls { bits: a_bits });
        } else if store.contains(&range_key(&site)) {
            net.act_quant.insert(site, ActQuant::Static { bits: a_bits });
        }
    }
    net.store = store;
    Ok(net)
}

pub fn save(net: &RestorationNet, path: &Path, pack: bool) -> Result<()> {
    std::fs::write(path, to_bytes(net, pack)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<RestorationNet> {
    from_bytes(&std::fs::read(path)?)
}
