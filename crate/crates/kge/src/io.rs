//! Binary model file.
//!
//! ```text
//! "KGXM" | version u8 | kind u8 | dim u32
//! n_entities u32 | (len u32, utf-8 bytes)*
//! n_relations u32 | (len u32, utf-8 bytes)*
//! entity table f32* | relation table f32*
//! ```
//!
//! Integers and floats are little-endian; tables are row-major, one row per
//! entity or relation in vocabulary order.

use std::path::Path;

use kgx_core::Vocabulary;

use crate::model::{KgeModel, ModelKind};
use crate::KgeError;

pub const MAGIC: &[u8; 4] = b"KGXM";
pub const VERSION: u8 = 1;
/// Magic, version, kind and dim.
pub const FIXED_HEADER: usize = 4 + 1 + 1 + 4;

pub fn serialize_model(m: &KgeModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(FIXED_HEADER + 4 * (m.entities.len() + m.relations.len()));
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(m.kind.code());
    out.extend_from_slice(&(m.dim as u32).to_le_bytes());
    for labels in [m.vocab.entity_labels(), m.vocab.relation_labels()] {
        out.extend_from_slice(&(labels.len() as u32).to_le_bytes());
        for l in labels {
            out.extend_from_slice(&(l.len() as u32).to_le_bytes());
            out.extend_from_slice(l.as_bytes());
        }
    }
    for x in m.entities.iter().chain(&m.relations) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], KgeError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(KgeError::Format(format!("truncated file while reading {what} at byte {}", self.pos))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32, KgeError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn labels(&mut self, what: &str) -> Result<Vec<String>, KgeError> {
        let n = self.u32(what)? as usize;
        let mut out = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let len = self.u32(what)? as usize;
            let raw = self.take(len, what)?;
            out.push(String::from_utf8(raw.to_vec()).map_err(|_| KgeError::Format(format!("{what} label is not UTF-8")))?);
        }
        Ok(out)
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f32>, KgeError> {
        let len = n.checked_mul(4).ok_or_else(|| KgeError::Format(format!("{what} too large")))?;
        let raw = self.take(len, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

pub fn deserialize_model(bytes: &[u8]) -> Result<KgeModel, KgeError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(KgeError::Format("bad magic, not a model file".into()));
    }
    let version = r.take(1, "version")?[0];
    if version != VERSION {
        return Err(KgeError::Format(format!("unsupported model file version {version}")));
    }
    let code = r.take(1, "kind")?[0];
    let kind = ModelKind::from_code(code).ok_or_else(|| KgeError::Format(format!("unknown model kind code {code}")))?;
    let dim = r.u32("dim")? as usize;
    if dim == 0 {
        return Err(KgeError::Format("dim must be positive".into()));
    }
    let entities = r.labels("entity vocabulary")?;
    let relations = r.labels("relation vocabulary")?;
    let (ne, nr) = (entities.len(), relations.len());
    let vocab = Vocabulary::from_labels(entities, relations).ok_or_else(|| KgeError::Format("duplicate vocabulary label".into()))?;
    let ent = r.floats(ne * kind.entity_width(dim), "entity table")?;
    let rel = r.floats(nr * kind.relation_width(dim), "relation table")?;
    if r.pos != bytes.len() {
        return Err(KgeError::Format(format!("{} trailing bytes after the tables", bytes.len() - r.pos)));
    }
    Ok(KgeModel {
        kind,
        dim,
        vocab,
        entities: ent,
        relations: rel,
    })
}

pub fn save_model(m: &KgeModel, path: &Path) -> Result<(), KgeError> {
    std::fs::write(path, serialize_model(m))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<KgeModel, KgeError> {
    deserialize_model(&std::fs::read(path)?)
}
