//! Binary checkpoint format.
//!
//! ```text
//! "IEPG"  u32 version  u32 meta_len  meta (JSON)  u32 count
//! count × { u32 name_len  name  u32 rank  rank × u64 dim  Π dims × f64 }
//! ```
//! All integers and reals are little-endian.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use iepg_core::fusion::{FusionConfig, FusionModel};
use iepg_core::gec::{GecConfig, GecModel};
use iepg_core::train::TrainConfig;
use iepg_core::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"IEPG";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Gec,
    Pis,
}

/// Everything needed to rebuild the model around the stored tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub stage: Stage,
    pub seed: u64,
    /// Completed optimizer steps.
    pub step: usize,
    #[serde(default)]
    pub gec: Option<GecConfig>,
    #[serde(default)]
    pub fusion: Option<FusionConfig>,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: Metadata,
    pub tensors: Vec<(String, Tensor)>,
}

const GEN: &str = "params/";
const DISC: &str = "disc/";

fn table(params: &ParamStore, disc: &ParamStore) -> Vec<(String, Tensor)> {
    let mut out = Vec::with_capacity(params.len() + disc.len());
    for (prefix, store) in [(GEN, params), (DISC, disc)] {
        out.extend(store.entries().iter().map(|e| (format!("{prefix}{}", e.name), e.value.clone())));
    }
    out
}

impl Checkpoint {
    pub fn from_gec(model: &GecModel, train: &TrainConfig, step: usize) -> Self {
        Checkpoint {
            meta: Metadata {
                stage: Stage::Gec,
                seed: train.seed,
                step,
                gec: Some(model.cfg.clone()),
                fusion: None,
                train: train.clone(),
            },
            tensors: table(&model.params, &model.disc_params),
        }
    }

    pub fn from_fusion(model: &FusionModel, train: &TrainConfig, step: usize) -> Self {
        Checkpoint {
            meta: Metadata {
                stage: Stage::Pis,
                seed: train.seed,
                step,
                gec: None,
                fusion: Some(model.cfg.clone()),
                train: train.clone(),
            },
            tensors: table(&model.params, &model.disc_params),
        }
    }

    fn fill(&self, params: &mut ParamStore, disc: &mut ParamStore) -> CliResult<()> {
        let expected = params.len() + disc.len();
        if self.tensors.len() != expected {
            return Err(CliError::Format(format!(
                "{} tensors stored, the model has {expected}",
                self.tensors.len()
            )));
        }
        let find = |prefix: &str, name: &str| {
            self.tensors
                .iter()
                .find(|(n, _)| n.strip_prefix(prefix) == Some(name))
                .map(|(_, t)| t)
        };
        params.load_named(|n| find(GEN, n))?;
        disc.load_named(|n| find(DISC, n))?;
        Ok(())
    }

    pub fn to_gec(&self) -> CliResult<GecModel> {
        let cfg = match (&self.meta.stage, &self.meta.gec) {
            (Stage::Gec, Some(cfg)) => cfg,
            _ => return Err(CliError::Usage("not a global evolution checkpoint".into())),
        };
        let mut m = GecModel::new(cfg, &mut iepg_core::rng_from_seed(0))?;
        self.fill(&mut m.params, &mut m.disc_params)?;
        Ok(m)
    }

    pub fn to_fusion(&self) -> CliResult<FusionModel> {
        let cfg = match (&self.meta.stage, &self.meta.fusion) {
            (Stage::Pis, Some(cfg)) => cfg,
            _ => return Err(CliError::Usage("not a synthesis checkpoint".into())),
        };
        let mut m = FusionModel::new(cfg, &mut iepg_core::rng_from_seed(0))?;
        self.fill(&mut m.params, &mut m.disc_params)?;
        Ok(m)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        let payload: usize = self.tensors.iter().map(|(n, t)| 12 + n.len() + 8 * t.rank() + 8 * t.len()).sum();
        let mut out = Vec::with_capacity(16 + meta.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CliError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CliError::Format(format!("unsupported version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let meta: Metadata = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| CliError::Format(format!("metadata: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| CliError::Format("tensor name is not UTF-8".into()))?
                .to_owned();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<CliResult<Vec<_>>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| CliError::Format(format!("tensor `{name}` is too large")))?;
            if len.checked_mul(8).is_none_or(|b| b > r.remaining()) {
                return Err(CliError::Format(format!("payload of `{name}` is truncated")));
            }
            let data = r
                .take(8 * len)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        if r.remaining() != 0 {
            return Err(CliError::Format(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Checkpoint { meta, tensors })
    }

    /// Writes to a temporary sibling and renames it over `path`, so readers
    /// only ever see a complete file.
    pub fn save(&self, path: &Path) -> CliResult<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("checkpoint");
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        if n > self.remaining() {
            return Err(CliError::Format("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
