//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "CYST" | version u32
//! vocab:  min_frequency u32 | count u32 | count × (len u32, utf-8 bytes)
//! arch:   emb u32 | hidden u32 | cls_emb u32 | filters u32
//!         | n_widths u32 | n_widths × u32 | attention u8
//! params: count u32 | count × (name_len u32, name, ndim u32, ndim × u64, f64 data)
//! ```

use std::fs;
use std::path::Path;

use super::model::{ModelDims, TransferModel};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CYST";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(model: &TransferModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);

    put_u32(&mut out, model.vocab.min_frequency() as u32);
    put_u32(&mut out, model.vocab.tokens().len() as u32);
    for t in model.vocab.tokens() {
        put_str(&mut out, t);
    }

    let d = &model.dims;
    for v in [d.emb, d.hidden, d.cls_emb, d.filters, d.widths.len()] {
        put_u32(&mut out, v as u32);
    }
    for &w in &d.widths {
        put_u32(&mut out, w as u32);
    }
    out.push(u8::from(d.attention));

    put_u32(&mut out, model.params.len() as u32);
    for (_, name, t) in model.params.iter() {
        put_str(&mut out, name);
        put_u32(&mut out, t.shape().len() as u32);
        for &s in t.shape() {
            out.extend_from_slice(&(s as u64).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<TransferModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let min_frequency = r.u32()? as usize;
    let n_tokens = r.u32()? as usize;
    let tokens = (0..n_tokens)
        .map(|_| r.string())
        .collect::<Result<Vec<_>>>()?;
    let vocab = Vocabulary::from_tokens(tokens, min_frequency);
    if vocab.tokens().len() != n_tokens {
        return Err(Error::Format(
            "checkpoint vocabulary has duplicate tokens".into(),
        ));
    }

    let (emb, hidden, cls_emb, filters) = (
        r.u32()? as usize,
        r.u32()? as usize,
        r.u32()? as usize,
        r.u32()? as usize,
    );
    let n_widths = r.u32()? as usize;
    if n_widths > 64 {
        return Err(Error::Format(format!(
            "implausible filter width count {n_widths}"
        )));
    }
    let widths = (0..n_widths)
        .map(|_| r.u32().map(|w| w as usize))
        .collect::<Result<Vec<_>>>()?;
    let attention = match r.take(1)?[0] {
        0 => false,
        1 => true,
        b => return Err(Error::Format(format!("bad attention flag {b}"))),
    };
    let dims = ModelDims {
        vocab: vocab.len(),
        emb,
        hidden,
        cls_emb,
        filters,
        widths,
        attention,
    };
    if [emb, hidden, cls_emb, filters].contains(&0) {
        return Err(Error::Format("zero-sized layer in checkpoint".into()));
    }

    let n_params = r.u32()? as usize;
    let mut records = Vec::with_capacity(n_params.min(1024));
    for _ in 0..n_params {
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        if ndim > 8 {
            return Err(Error::Format(format!("parameter `{name}` has {ndim} dims")));
        }
        let shape = (0..ndim)
            .map(|_| r.u64().map(|s| s as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &b| a.checked_mul(b))
            .ok_or_else(|| Error::Format("shape overflow".into()))?;
        let raw = r.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("shape overflow".into()))?,
        )?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push((name, shape, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }

    let mut model = TransferModel::new(vocab, dims, 0)?;
    if records.len() != model.params.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} parameters, architecture needs {}",
            records.len(),
            model.params.len()
        )));
    }
    for (id, (name, shape, data)) in model
        .params
        .ids()
        .collect::<Vec<_>>()
        .into_iter()
        .zip(records)
    {
        let t = model.params.get_mut(id);
        if t.shape() != shape.as_slice() {
            return Err(Error::Format(format!(
                "parameter `{name}` has shape {shape:?}, expected {:?}",
                t.shape()
            )));
        }
        t.data_mut().copy_from_slice(&data);
        if model.params.name(id) != name {
            return Err(Error::Format(format!(
                "parameter `{name}` where `{}` was expected",
                model.params.name(id)
            )));
        }
    }
    Ok(model)
}

pub fn save_checkpoint(model: &TransferModel, path: &Path) -> Result<()> {
    fs::write(path, write_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TransferModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end =
            end.ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("non-utf8 string in checkpoint".into()))
    }
}
