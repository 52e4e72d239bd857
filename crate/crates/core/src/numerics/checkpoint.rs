//! Binary named-tensor archive.
//!
//! Layout: the 8-byte magic `KGCKPT01`, a little-endian `u64` header length,
//! a JSON header, then every tensor's data as little-endian `f64` in header
//! order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"KGCKPT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: usize,
    /// Free-form model configuration stored alongside the tensors.
    #[serde(default)]
    pub config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn write_checkpoint(path: &Path, store: &ParamStore, meta: &CheckpointMeta) -> Result<()> {
    let header = Header {
        meta: meta.clone(),
        tensors: store
            .ids()
            .map(|id| TensorEntry {
                name: store.name(id).to_string(),
                shape: store.value(id).shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for id in store.ids() {
        for x in store.value(id).data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn open_header(path: &Path) -> Result<(BufReader<File>, Header)> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => e.into(),
    })?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Contract(format!("{} is not a checkpoint", path.display())));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    Ok((r, serde_json::from_slice(&json)?))
}

pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    Ok(open_header(path)?.1.meta)
}

/// Loads every tensor of the archive into the same-named parameter of
/// `store`. Names and shapes must match exactly.
pub fn read_checkpoint(path: &Path, store: &mut ParamStore) -> Result<CheckpointMeta> {
    let (mut r, header) = open_header(path)?;
    if header.tensors.len() != store.len() {
        return Err(Error::Config(format!(
            "checkpoint has {} tensors, model expects {}",
            header.tensors.len(),
            store.len()
        )));
    }
    let mut buf = [0u8; 8];
    for entry in &header.tensors {
        let id = store
            .id(&entry.name)
            .ok_or_else(|| Error::Config(format!("checkpoint tensor `{}` not in model", entry.name)))?;
        let n: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        if entry.shape != store.value(id).shape() {
            return Err(Error::Config(format!(
                "checkpoint tensor `{}` has shape {:?}, model expects {:?}",
                entry.name,
                entry.shape,
                store.value(id).shape()
            )));
        }
        store.set_value(id, Tensor::from_vec(&entry.shape, data)?)?;
    }
    Ok(header.meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Init;

    fn model(seed: u64) -> ParamStore {
        let mut s = ParamStore::new(seed);
        s.add("emb", &[5, 3], Init::Normal(0.1)).unwrap();
        s.add("gru.b", &[6], Init::Uniform(0.08)).unwrap();
        s
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let a = model(1);
        let meta = CheckpointMeta {
            seed: 1,
            epoch: 7,
            config: serde_json::json!({"hidden": 3}),
        };
        write_checkpoint(&path, &a, &meta).unwrap();
        let mut b = model(2);
        let got = read_checkpoint(&path, &mut b).unwrap();
        assert_eq!(got, meta);
        for id in a.ids() {
            assert_eq!(a.value(id), b.value(id));
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        write_checkpoint(&path, &model(1), &CheckpointMeta { seed: 1, epoch: 0, config: Default::default() }).unwrap();
        let mut other = ParamStore::new(0);
        other.add("emb", &[4, 3], Init::Zeros).unwrap();
        other.add("gru.b", &[6], Init::Zeros).unwrap();
        assert!(matches!(read_checkpoint(&path, &mut other), Err(Error::Config(_))));
    }

    #[test]
    fn missing_file_is_missing_artifact() {
        let mut s = model(0);
        assert!(matches!(
            read_checkpoint(Path::new("/nonexistent/x.ckpt"), &mut s),
            Err(Error::MissingArtifact(_))
        ));
    }
}
