//! Parameter checkpoints: a plain-text manifest plus one flat blob.
//!
//! Each manifest line is `name<TAB>shape<TAB>byte_offset`, where shape is
//! written as `d0xd1x...`. The blob holds every tensor back to back as
//! little-endian `f32`, in manifest order.

use std::fs;
use std::path::Path;

use crate::autograd::ParamStore;
use crate::error::{Error, IoContext, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "params.manifest";
pub const BLOB_FILE: &str = "params.bin";

pub fn write_manifest(params: &ParamStore<f32>) -> String {
    let mut out = String::new();
    let mut offset = 0usize;
    for (name, t) in params.iter() {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        out.push_str(&format!("{name}\t{}\t{offset}\n", shape.join("x")));
        offset += t.numel() * 4;
    }
    out
}

pub fn write_blob(params: &ParamStore<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.num_scalars() * 4);
    for (_, t) in params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(manifest: &str, blob: &[u8]) -> Result<ParamStore<f32>> {
    let mut params = ParamStore::new();
    let mut expected_offset = 0usize;
    for (lineno, line) in manifest.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Checkpoint(format!("manifest line {}: {msg}", lineno + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        let [name, shape, offset] = fields[..] else {
            return Err(bad("expected `name<TAB>shape<TAB>offset`"));
        };
        let shape: Vec<usize> = shape
            .split('x')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("bad shape"))?;
        let offset: usize = offset.parse().map_err(|_| bad("bad offset"))?;
        if offset != expected_offset {
            return Err(bad("offsets are not contiguous"));
        }
        let numel: usize = shape.iter().product();
        let end = offset + numel * 4;
        let bytes = blob.get(offset..end).ok_or_else(|| bad("blob too short"))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.insert(name, Tensor::new(shape, data)?)?;
        expected_offset = end;
    }
    if expected_offset != blob.len() {
        return Err(Error::Checkpoint(format!(
            "blob has {} bytes, manifest covers {expected_offset}",
            blob.len()
        )));
    }
    Ok(params)
}

pub fn save(dir: &Path, params: &ParamStore<f32>) -> Result<()> {
    fs::create_dir_all(dir).context(|| format!("creating {}", dir.display()))?;
    let manifest = dir.join(MANIFEST_FILE);
    fs::write(&manifest, write_manifest(params)).context(|| format!("writing {}", manifest.display()))?;
    let blob = dir.join(BLOB_FILE);
    fs::write(&blob, write_blob(params)).context(|| format!("writing {}", blob.display()))?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<ParamStore<f32>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest =
        fs::read_to_string(&manifest_path).context(|| format!("reading {}", manifest_path.display()))?;
    let blob_path = dir.join(BLOB_FILE);
    let blob = fs::read(&blob_path).context(|| format!("reading {}", blob_path.display()))?;
    decode(&manifest, &blob)
}
