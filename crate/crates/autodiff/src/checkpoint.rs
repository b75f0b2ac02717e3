//! Parameter checkpoints: an 8-byte magic, a little-endian `u32` header
//! length, a JSON header naming every tensor and its shape, then all values
//! as little-endian `f32` in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SPSCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    params: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

pub fn write_params<W: Write>(params: &ParamSet, mut w: W) -> Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        params: params
            .iter()
            .map(|(name, t)| Entry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, t) in params.iter() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_params<R: Read>(mut r: R) -> Result<ParamSet> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| Error::Format(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported version {}",
            header.format_version
        )));
    }
    let mut params = ParamSet::new();
    for entry in header.params {
        let n: usize = entry.shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.insert(entry.name, Tensor::new(&entry.shape, data)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after tensor data".into()));
    }
    Ok(params)
}

pub fn save_params(params: &ParamSet, path: &Path) -> Result<()> {
    write_params(params, BufWriter::new(File::create(path)?))
}

pub fn load_params(path: &Path) -> Result<ParamSet> {
    read_params(BufReader::new(File::open(path)?))
}

/// Copies values from `loaded` into `target`, requiring identical names and
/// shapes in the same order.
pub fn restore_into(target: &mut ParamSet, loaded: &ParamSet) -> Result<()> {
    if target.len() != loaded.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, model expects {}",
            loaded.len(),
            target.len()
        )));
    }
    for id in loaded.ids() {
        let name = loaded.name(id);
        let tid = target.id(name)?;
        if target.get(tid).shape() != loaded.get(id).shape() {
            return Err(Error::Format(format!(
                "`{name}`: checkpoint shape {:?}, model shape {:?}",
                loaded.get(id).shape(),
                target.get(tid).shape()
            )));
        }
        *target.get_mut(tid) = loaded.get(id).clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in proptest::collection::vec(any::<f32>(), 1..40), split in 1usize..40) {
            let split = split.min(values.len());
            let mut ps = ParamSet::new();
            ps.insert("a", Tensor::new(&[split], values[..split].to_vec()).unwrap());
            if split < values.len() {
                let rest = values.len() - split;
                ps.insert("b.weight", Tensor::new(&[1, rest], values[split..].to_vec()).unwrap());
            }
            let mut buf = Vec::new();
            write_params(&ps, &mut buf).unwrap();
            let back = read_params(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), ps.len());
            for ((n1, t1), (n2, t2)) in ps.iter().zip(back.iter()) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(t1.shape(), t2.shape());
                let b1: Vec<u32> = t1.data().iter().map(|v| v.to_bits()).collect();
                let b2: Vec<u32> = t2.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(b1, b2);
            }
        }
    }

    #[test]
    fn truncated_and_corrupt_files_are_rejected() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::ones(&[2, 2]));
        let mut buf = Vec::new();
        write_params(&ps, &mut buf).unwrap();
        assert!(read_params(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_params(bad.as_slice()).is_err());
        let mut long = buf;
        long.push(0);
        assert!(read_params(long.as_slice()).is_err());
    }

    #[test]
    fn restore_checks_shapes() {
        let mut a = ParamSet::new();
        a.insert("w", Tensor::ones(&[2, 2]));
        let mut b = ParamSet::new();
        b.insert("w", Tensor::ones(&[4]));
        assert!(restore_into(&mut a, &b).is_err());
        let mut c = ParamSet::new();
        c.insert("w", Tensor::full(&[2, 2], 3.0));
        restore_into(&mut a, &c).unwrap();
        assert_eq!(a.get(a.id("w").unwrap()).data(), &[3.0; 4]);
    }
}
