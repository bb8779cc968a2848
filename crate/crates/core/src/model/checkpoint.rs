//! Checkpoint archive: both network specs as JSON plus every named weight
//! array as a raw little-endian `f32` block, preceded by a table of contents.
//!
//! Layout:
//!
//! ```text
//! "MCANET-CKPT-1\n"
//! u64  json length, then the JSON spec block
//! u32  array count
//! per array: u16 name length, name bytes, u64 value count   (the TOC)
//! per array: raw f32 little-endian values, in TOC order
//! ```

use super::{
    build_discriminator, build_generator, Discriminator, DiscriminatorSpec, Generator,
    GeneratorSpec,
};
use crate::error::{Result, VdeError};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8] = b"MCANET-CKPT-1\n";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointSpecs {
    generator: GeneratorSpec,
    discriminator: DiscriminatorSpec,
}

/// Serialize both networks into checkpoint bytes.
pub fn checkpoint_to_bytes<F: Scalar>(
    gen: &Generator<F>,
    disc: &Discriminator<F>,
) -> Result<Vec<u8>> {
    let specs = CheckpointSpecs {
        generator: gen.spec.clone(),
        discriminator: disc.spec.clone(),
    };
    let json = serde_json::to_vec(&specs)
        .map_err(|e| VdeError::format("checkpoint", e.to_string()))?;

    let mut named: Vec<(String, &Vec<F>)> = Vec::new();
    for (name, arr) in gen.named_arrays() {
        named.push((format!("g.{name}"), arr));
    }
    for (name, arr) in disc.named_arrays() {
        named.push((format!("d.{name}"), arr));
    }

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, arr) in &named {
        let nb = name.as_bytes();
        out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        out.extend_from_slice(nb);
        out.extend_from_slice(&(arr.len() as u64).to_le_bytes());
    }
    for (_, arr) in &named {
        for v in arr.iter() {
            out.extend_from_slice(&v.to_f32_c().to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint<F: Scalar>(
    path: &Path,
    gen: &Generator<F>,
    disc: &Discriminator<F>,
) -> Result<()> {
    let bytes = checkpoint_to_bytes(gen, disc)?;
    fs::write(path, bytes).map_err(|e| VdeError::io(format!("writing {}", path.display()), e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(VdeError::format(self.path.clone(), "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Load a checkpoint: rebuild both networks from the embedded specs, then
/// overwrite their weights from the stored blocks and shape-audit the result.
pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<(Generator<F>, Discriminator<F>)> {
    let bytes =
        fs::read(path).map_err(|e| VdeError::io(format!("reading {}", path.display()), e))?;
    let display = path.display().to_string();
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: display.clone(),
    };
    if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(VdeError::format(display, "bad checkpoint magic"));
    }
    let json_len = r.u64()? as usize;
    let specs: CheckpointSpecs = serde_json::from_slice(r.take(json_len)?)
        .map_err(|e| VdeError::format(display.clone(), e.to_string()))?;
    let n_arrays = r.u32()? as usize;
    let mut toc = Vec::with_capacity(n_arrays);
    for _ in 0..n_arrays {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8_lossy(r.take(name_len)?).into_owned();
        let count = r.u64()? as usize;
        toc.push((name, count));
    }

    let mut gen = build_generator::<F>(&specs.generator, 0)?;
    let mut disc = build_discriminator::<F>(&specs.discriminator, 0)?;
    {
        let mut g_arrays = gen.arrays_mut();
        let mut d_arrays = disc.arrays_mut();
        let mut gi = 0usize;
        let mut di = 0usize;
        for (name, count) in &toc {
            let data = r.take(count * 4)?;
            let target: &mut Vec<F> = if let Some(_rest) = name.strip_prefix("g.") {
                let t = g_arrays
                    .get_mut(gi)
                    .ok_or_else(|| VdeError::format(display.clone(), "extra generator array"))?;
                gi += 1;
                t
            } else if name.starts_with("d.") {
                let t = d_arrays
                    .get_mut(di)
                    .ok_or_else(|| VdeError::format(display.clone(), "extra discriminator array"))?;
                di += 1;
                t
            } else {
                return Err(VdeError::format(display, format!("unknown array {name}")));
            };
            if target.len() != *count {
                return Err(VdeError::format(
                    display,
                    format!("array {name}: {count} values, expected {}", target.len()),
                ));
            }
            for (i, v) in target.iter_mut().enumerate() {
                let b = &data[i * 4..i * 4 + 4];
                *v = F::from_f32_c(f32::from_le_bytes(b.try_into().unwrap()));
            }
        }
        if gi != g_arrays.len() || di != d_arrays.len() {
            return Err(VdeError::format(display, "missing arrays in checkpoint"));
        }
    }
    gen.audit()?;
    disc.audit()?;
    Ok((gen, disc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_preserves_weights_bitwise() {
        let gspec = GeneratorSpec {
            n_scales: 2,
            base_channels: 4,
            depth: 2,
            ..GeneratorSpec::default()
        };
        let dspec = DiscriminatorSpec {
            patch_size: 16,
            n_layers: 2,
            base_channels: 4,
            ..DiscriminatorSpec::default()
        };
        let gen = build_generator::<f32>(&gspec, 42).unwrap();
        let disc = build_discriminator::<f32>(&dspec, 43).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &gen, &disc).unwrap();
        let (g2, d2) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(g2.spec, gspec);
        assert_eq!(d2.spec, dspec);
        for ((_, a), (_, b)) in gen.named_arrays().iter().zip(g2.named_arrays().iter()) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        for ((_, a), (_, b)) in disc.named_arrays().iter().zip(d2.named_arrays().iter()) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn rejects_corrupt_magic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOT-A-CKPT").unwrap();
        assert!(load_checkpoint::<f32>(&path).is_err());
    }
}
