//! Binary checkpoint container.
//!
//! Layout: magic bytes `PFG1`, a little-endian u64 length, the header as
//! UTF-8 JSON (model config, method label, config hash), every parameter
//! as little-endian f64 in the canonical order of `Model::param_refs`,
//! then the patch bank: a u64 patch count followed per patch by id,
//! origin example id (both u64), `b_p`, the `k_p` floats, and the `v_p`
//! floats. Round-trips are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::patching::{Patch, PatchBank};

const MAGIC: &[u8; 4] = b"PFG1";

/// Metadata carried in the checkpoint header next to the model config.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Human-readable label of how this checkpoint was produced
    /// ("Original", "T-patcher", ...).
    pub method: String,
    pub config_hash: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    #[serde(flatten)]
    meta: CheckpointMeta,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "unexpected end of file at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Model parameters alone, in canonical order; useful for asserting base
/// immutability across edits.
pub fn model_param_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::with_capacity(model.param_count() * 8);
    for m in model.param_refs() {
        push_f64s(&mut out, m.data());
    }
    out
}

/// The patch-bank section alone (count + patches).
pub fn bank_bytes(bank: &PatchBank) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(bank.len() as u64).to_le_bytes());
    for p in bank.iter() {
        out.extend_from_slice(&p.id.to_le_bytes());
        out.extend_from_slice(&p.origin_example_id.to_le_bytes());
        out.extend_from_slice(&p.b_p.to_le_bytes());
        push_f64s(&mut out, &p.k_p);
        push_f64s(&mut out, &p.v_p);
    }
    out
}

pub fn checkpoint_bytes(model: &Model, bank: &PatchBank, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let header = Header {
        config: model.config.clone(),
        meta: meta.clone(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&model_param_bytes(model));
    out.extend_from_slice(&bank_bytes(bank));
    Ok(out)
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    bank: &PatchBank,
    meta: &CheckpointMeta,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, checkpoint_bytes(model, bank, meta)?)?;
    Ok(())
}

/// Builds a model with the given config and all parameters zero, ready to
/// be filled from a checkpoint stream.
fn zeros_model(config: &ModelConfig) -> Result<Model> {
    let mut model = super::init_model(config)?;
    for p in model.param_refs_mut() {
        for v in p.data_mut() {
            *v = 0.0;
        }
    }
    Ok(model)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(Model, PatchBank, CheckpointMeta)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".to_string()));
    }
    let header_len = r.u64()? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    header.config.validate()?;

    let mut model = zeros_model(&header.config)?;
    for m in model.param_refs_mut() {
        let n = m.len();
        let (rows, cols) = m.shape();
        *m = Matrix::from_vec(rows, cols, r.f64_vec(n)?);
    }

    let mut bank = PatchBank::new(header.config.n_layers - 1);
    let count = r.u64()? as usize;
    let d = header.config.d_model;
    for _ in 0..count {
        let id = r.u64()?;
        let origin_example_id = r.u64()?;
        let b_p = r.f64()?;
        let k_p = r.f64_vec(d)?;
        let v_p = r.f64_vec(d)?;
        bank.push(Patch {
            id,
            k_p,
            b_p,
            v_p,
            frozen: true,
            origin_example_id,
        })?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after patch section",
            bytes.len() - r.pos
        )));
    }
    Ok((model, bank, header.meta))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, PatchBank, CheckpointMeta)> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    checkpoint_from_bytes(&bytes)
}
