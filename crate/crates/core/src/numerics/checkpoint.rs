//! `MARW` parameter checkpoints.
//!
//! Layout (little-endian): magic `MARW`, u32 version, u32 tensor count, then
//! per tensor a u32 name length, the UTF-8 name, u32 rank, rank x u64 dims
//! and the f64 payload.

use std::path::Path;

use crate::binio::Reader;
use crate::error::{Error, Result};
use crate::numerics::graph::ParamStore;
use crate::numerics::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MARW";
pub const VERSION: u32 = 1;

pub fn encode<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "not a MARW file".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return r.fail(format!("unsupported MARW version {version}"));
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Parse {
                offset: r.offset(),
                message: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return r.fail(format!("implausible rank {rank}"));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut n: usize = 1;
        for _ in 0..rank {
            let d = r.u64("dim")? as usize;
            n = n.checked_mul(d).ok_or_else(|| r.overflow("dims"))?;
            shape.push(d);
        }
        let data = r.f64_vec(n, "payload")?;
        out.push((name, Tensor::new(&shape, data)?));
    }
    if r.remaining() != 0 {
        return r.fail("trailing bytes after last tensor");
    }
    Ok(out)
}

pub fn save(path: &Path, store: &ParamStore) -> Result<()> {
    let bytes = encode(store.iter().map(|p| (p.name.as_str(), &p.value)));
    std::fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

/// Loads a checkpoint into `store`, matching tensors by name and shape.
pub fn load_into(path: &Path, store: &mut ParamStore) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    let tensors = decode(&bytes)?;
    if tensors.len() != store.len() {
        return Err(Error::invalid(format!(
            "checkpoint has {} tensors, model expects {}",
            tensors.len(),
            store.len()
        )));
    }
    for (name, t) in tensors {
        let id = store
            .find(&name)
            .ok_or_else(|| Error::invalid(format!("checkpoint tensor {name} unknown to model")))?;
        if store.value(id).shape() != t.shape() {
            return Err(Error::shape(
                "load_checkpoint",
                format!("{name}: {:?} vs model {:?}", t.shape(), store.value(id).shape()),
            ));
        }
        *store.value_mut(id) = t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_bits() {
        let a = Tensor::new(&[2, 3], vec![1.5, -0.0, f64::MIN_POSITIVE, 3.25, 1e300, -7.0]).unwrap();
        let b = Tensor::scalar(0.1);
        let bytes = encode([("enc.w", &a), ("b", &b)]);
        let back = decode(&bytes).unwrap();
        assert_eq!(back[0].0, "enc.w");
        assert_eq!(back[0].1.shape(), &[2, 3]);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back[0].1), bits(&a));
        assert_eq!(bits(&back[1].1), bits(&b));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let bytes = encode([("w", &Tensor::ones(&[4]))]);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).unwrap_err().to_string().contains("not a MARW file"));
        for cut in 0..bytes.len() {
            assert!(decode(&bytes[..cut]).is_err(), "cut {cut}");
        }
    }
}
