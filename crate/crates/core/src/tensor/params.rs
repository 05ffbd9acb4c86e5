use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

fn fresh_uid() -> u64 {
    NEXT_UID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of trainable tensors.
///
/// Each instance (including every clone) carries a unique id so that a graph
/// holding leaves from both an online and a target copy keeps them apart.
#[derive(Debug)]
pub struct ParamSet {
    uid: u64,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamSet {
    fn clone(&self) -> Self {
        ParamSet {
            uid: fresh_uid(),
            names: self.names.clone(),
            tensors: self.tensors.clone(),
        }
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            uid: fresh_uid(),
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor.with_requires_grad(true));
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        for t in &mut self.tensors {
            t.set_requires_grad(flag);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Hard copy of every value from `other`, which must have the same layout.
    pub fn copy_from(&mut self, other: &ParamSet) -> Result<()> {
        if self.names != other.names {
            return Err(Error::contract("parameter layouts differ"));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(Error::shape("parameter shapes differ"));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Global L2 norm of populated gradients.
    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .iter()
            .filter_map(Tensor::grad)
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global norm is at most `max_norm`; returns
    /// the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for t in &mut self.tensors {
                if let Some(g) = t.grad_mut() {
                    g.iter_mut().for_each(|x| *x *= s);
                }
            }
        }
        norm
    }
}

const MAGIC: &[u8; 8] = b"ACPARAM1";

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: Vec<HeaderEntry>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

/// Parameters plus free-form string metadata read back from disk.
pub struct Checkpoint {
    pub params: ParamSet,
    pub metadata: BTreeMap<String, String>,
}

/// Writes `MAGIC | u64-le header length | JSON header | f64-le payload`.
/// Header offsets are byte offsets into the payload.
pub fn save_checkpoint(
    path: &Path,
    params: &ParamSet,
    metadata: &BTreeMap<String, String>,
) -> Result<()> {
    let mut offset = 0;
    let mut entries = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        entries.push(HeaderEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len() * 8;
    }
    let header = serde_json::to_vec(&Header {
        tensors: entries,
        metadata: metadata.clone(),
    })
    .map_err(|e| Error::Format(e.to_string()))?;

    let mut buf = Vec::with_capacity(16 + header.len() + offset);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for (_, t) in params.iter() {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format(format!("{}: not a checkpoint", path.display())));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = 16 + hlen;
    if bytes.len() < body {
        return Err(Error::Format("truncated header".into()));
    }
    let header: Header =
        serde_json::from_slice(&bytes[16..body]).map_err(|e| Error::Format(e.to_string()))?;
    let payload = &bytes[body..];
    let mut params = ParamSet::new();
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let end = e.offset + n * 8;
        if end > payload.len() {
            return Err(Error::Format(format!("tensor {} runs past payload", e.name)));
        }
        let data = payload[e.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.add(e.name, Tensor::new(e.shape, data)?);
    }
    Ok(Checkpoint {
        params,
        metadata: header.metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_preserves_names_shapes_bits() {
        let mut ps = ParamSet::new();
        ps.add("a.w", Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.25, 0.0, 1e-300, -0.0]).unwrap());
        ps.add("a.b", Tensor::vector(vec![f64::MAX, 7.0]));
        let mut meta = BTreeMap::new();
        meta.insert("env.name".to_string(), "matrix".to_string());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        save_checkpoint(&path, &ps, &meta).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.metadata, meta);
        for ((n1, t1), (n2, t2)) in ps.iter().zip(ck.params.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }

    #[test]
    fn header_offsets_are_byte_offsets() {
        let mut ps = ParamSet::new();
        ps.add("x", Tensor::vector(vec![1.0, 2.0, 3.0]));
        ps.add("y", Tensor::vector(vec![4.0]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        save_checkpoint(&path, &ps, &BTreeMap::new()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + hlen]).unwrap();
        assert_eq!(header["tensors"][1]["offset"], 24);
        let y = &bytes[16 + hlen + 24..16 + hlen + 32];
        assert_eq!(f64::from_le_bytes(y.try_into().unwrap()), 4.0);
    }

    #[test]
    fn clones_get_distinct_ids() {
        let ps = ParamSet::new();
        assert_ne!(ps.uid(), ps.clone().uid());
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::vector(vec![0.0, 0.0]));
        ps.get_mut(id).accumulate_grad(&[3.0, 4.0]);
        assert_eq!(ps.clip_grad_norm(1.0), 5.0);
        assert!((ps.grad_norm() - 1.0).abs() < 1e-15);
    }
}
