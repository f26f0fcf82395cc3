//! Checkpoints: a JSON model description followed by every named parameter
//! as little-endian f64.
//!
//! ```text
//! "RBCK" | u32 json_len | json | u32 count | count × (u32 name_len | name | u32 ndim | u64 dims… | f64 data…)
//! ```

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::ParamStore;
use crate::bitcodec::Header;
use crate::error::{Error, Result};
use crate::networks::codec::Codec;
use crate::networks::{ArchConfig, Cascaded, CompTeacher, IspTeacher, Rbn, Unified};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"RBCK";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum System {
    Rbn,
    Unified,
    CompTeacher,
    IspTeacher,
    Cascaded,
}

impl System {
    pub const ALL: [System; 5] = [System::Rbn, System::Unified, System::CompTeacher, System::IspTeacher, System::Cascaded];

    pub fn name(self) -> &'static str {
        match self {
            System::Rbn => "rbn",
            System::Unified => "unified",
            System::CompTeacher => "comp-teacher",
            System::IspTeacher => "isp-teacher",
            System::Cascaded => "cascaded",
        }
    }
}

/// Everything needed to rebuild a model before loading its weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub system: System,
    pub arch: ArchConfig,
    /// Latent width of the compression teacher.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub quality: u8,
}

impl ModelSpec {
    pub fn new(system: System, arch: ArchConfig) -> Self {
        ModelSpec { system, arch, k: None, lambda: None, quality: 0 }
    }

    /// Rejects a stream written by a different quality setting.
    pub fn check_stream(&self, header: &Header) -> Result<()> {
        if header.quality != self.quality {
            return Err(Error::ModelMismatch(format!("stream has quality {}, checkpoint has {}", header.quality, self.quality)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum AnyModel<T> {
    Rbn(Rbn<T>),
    Unified(Unified<T>),
    CompTeacher(CompTeacher<T>),
    IspTeacher(IspTeacher<T>),
    Cascaded(Cascaded<T>),
}

impl<T: Scalar> AnyModel<T> {
    /// Freshly initialized model for `spec`.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let arch = spec.arch;
        Ok(match spec.system {
            System::Rbn => AnyModel::Rbn(Rbn::new(arch, rng)?),
            System::Unified => AnyModel::Unified(Unified::new(arch, rng)?),
            System::CompTeacher => {
                let k = spec.k.unwrap_or(arch.latent_channels);
                AnyModel::CompTeacher(CompTeacher::new(arch, k, rng)?)
            }
            System::IspTeacher => AnyModel::IspTeacher(IspTeacher::new(arch, rng)?),
            System::Cascaded => AnyModel::Cascaded(Cascaded::new(arch, rng)?),
        })
    }

    pub fn store(&self) -> &ParamStore<T> {
        match self {
            AnyModel::Rbn(m) => &m.ps,
            AnyModel::Unified(m) => &m.ps,
            AnyModel::CompTeacher(m) => &m.ps,
            AnyModel::IspTeacher(m) => &m.ps,
            AnyModel::Cascaded(m) => &m.ps,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        match self {
            AnyModel::Rbn(m) => &mut m.ps,
            AnyModel::Unified(m) => &mut m.ps,
            AnyModel::CompTeacher(m) => &mut m.ps,
            AnyModel::IspTeacher(m) => &mut m.ps,
            AnyModel::Cascaded(m) => &mut m.ps,
        }
    }

    /// The model as a codec; `None` for the ISP teacher.
    pub fn codec(&self) -> Option<&dyn Codec<T>> {
        match self {
            AnyModel::Rbn(m) => Some(m),
            AnyModel::Unified(m) => Some(m),
            AnyModel::CompTeacher(m) => Some(m),
            AnyModel::IspTeacher(_) => None,
            AnyModel::Cascaded(m) => Some(m),
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidSpec(format!("{v} does not fit the checkpoint format")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn save_checkpoint<T: Scalar>(path: &Path, spec: &ModelSpec, ps: &ParamStore<T>) -> Result<()> {
    let json = serde_json::to_vec(spec).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(64 + json.len() + 8 * ps.num_elements());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, json.len())?;
    out.extend_from_slice(&json);
    put_u32(&mut out, ps.len())?;
    for p in ps.iter() {
        put_u32(&mut out, p.name.len())?;
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.value.ndim())?;
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Decode {
            offset: self.bytes.len(),
            reason: "checkpoint is truncated".into(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Reads a checkpoint and rebuilds the model it describes.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(ModelSpec, AnyModel<T>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Format(format!("{} is not a checkpoint", path.display())));
    }
    let n = r.u32()?;
    let spec: ModelSpec = serde_json::from_slice(r.take(n)?).map_err(|e| Error::parse(path, e))?;
    let count = r.u32()?;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u32()?;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|e| Error::parse(path, e))?;
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Format("tensor size overflow".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap()))).collect();
        named.push((name, Tensor::from_vec(&shape, data)?));
    }
    let mut model = AnyModel::build(&spec, 0)?;
    if model.store().len() != named.len() {
        return Err(Error::ModelMismatch(format!("checkpoint has {} tensors, model has {}", named.len(), model.store().len())));
    }
    model.store_mut().load_named(&named)?;
    Ok((spec, model))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_every_parameter() {
        let dir = tempfile::tempdir().unwrap();
        for system in System::ALL {
            let spec = ModelSpec { k: Some(24), lambda: Some(0.01), quality: 2, ..ModelSpec::new(system, ArchConfig::tiny()) };
            let model = AnyModel::<f32>::build(&spec, 7).unwrap();
            let path = dir.path().join(format!("{}.ckpt", system.name()));
            save_checkpoint(&path, &spec, model.store()).unwrap();
            let (spec2, loaded) = load_checkpoint::<f32>(&path).unwrap();
            assert_eq!(spec2, spec);
            assert_eq!(loaded.store().checksum(), model.store().checksum());
        }
    }

    #[test]
    fn wrong_architecture_is_a_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let spec = ModelSpec::new(System::Rbn, ArchConfig::tiny());
        let model = AnyModel::<f64>::build(&spec, 1).unwrap();
        let mut wrong = spec.clone();
        wrong.arch.width = 32;
        save_checkpoint(&path, &wrong, model.store()).unwrap();
        assert!(matches!(load_checkpoint::<f64>(&path), Err(Error::ModelMismatch(_))));
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk");
        fs::write(&path, b"RBCK\x05\x00").unwrap();
        assert!(matches!(load_checkpoint::<f64>(&path), Err(Error::Decode { .. })));
        fs::write(&path, b"nope").unwrap();
        assert!(matches!(load_checkpoint::<f64>(&path), Err(Error::Format(_))));
    }
}
