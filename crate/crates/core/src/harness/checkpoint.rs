//! Versioned little-endian binary checkpoints.
//!
//! Layout: magic, format version, payload kind, config echo, structural
//! metadata (JSON), then named tensors with their shapes and raw `f64`s.
//! Every string is prefixed by its byte length as `u32`; tensors store
//! `ndim: u32`, `dims: u64…` and `data: f64…`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet, LayerSpec, LossKind};
use crate::quantize::PrecisionMap;
use crate::share::{FoldResult, TemplateBank};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SLIMNET\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointKind {
    Train,
    Sparsify,
    Quantize,
    Share,
    Fold,
}

impl CheckpointKind {
    pub fn name(self) -> &'static str {
        match self {
            CheckpointKind::Train => "train",
            CheckpointKind::Sparsify => "sparsify",
            CheckpointKind::Quantize => "quantize",
            CheckpointKind::Share => "share",
            CheckpointKind::Fold => "fold",
        }
    }
}

impl fmt::Display for CheckpointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CheckpointKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            CheckpointKind::Train,
            CheckpointKind::Sparsify,
            CheckpointKind::Quantize,
            CheckpointKind::Share,
            CheckpointKind::Fold,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::Checkpoint(format!("unknown payload kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct NetMeta {
    layers: Vec<LayerSpec>,
    loss: LossKind,
}

/// Everything stored in the metadata string; absent parts are omitted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    net: Option<NetMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bank_activation: Option<Activation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    /// Echo of the configuration that produced the payload.
    pub config: String,
    /// Structural metadata as a JSON object; empty when nothing needs it.
    pub meta: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(kind: CheckpointKind, config: impl Into<String>) -> Self {
        Self {
            kind,
            config: config.into(),
            meta: String::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    fn prefixed(&self, prefix: &str) -> Vec<Tensor> {
        let mut i = 0;
        let mut out = Vec::new();
        while let Some(t) = self.get(&format!("{prefix}.{i}")) {
            out.push(t.clone());
            i += 1;
        }
        out
    }

    fn read_meta(&self) -> Result<Meta> {
        if self.meta.is_empty() {
            return Ok(Meta::default());
        }
        Ok(serde_json::from_str(&self.meta)?)
    }

    fn update_meta(&mut self, edit: impl FnOnce(&mut Meta)) {
        // Unparseable metadata is replaced rather than merged.
        let mut meta = self.read_meta().unwrap_or_default();
        edit(&mut meta);
        self.meta = serde_json::to_string(&meta).expect("metadata serializes");
    }

    pub fn put_net(&mut self, net: &DenseNet) {
        let net_meta = NetMeta {
            layers: net.layers().to_vec(),
            loss: net.loss_kind(),
        };
        self.update_meta(|m| m.net = Some(net_meta));
        for (i, p) in net.params().iter().enumerate() {
            self.push(format!("param.{i}"), p.clone());
        }
    }

    pub fn net(&self) -> Result<DenseNet> {
        let meta = self
            .read_meta()?
            .net
            .ok_or_else(|| Error::Checkpoint("no network stored".into()))?;
        DenseNet::from_parts(meta.layers, self.prefixed("param"), meta.loss)
    }

    pub fn put_masks(&mut self, masks: &[Tensor]) {
        for (i, m) in masks.iter().enumerate() {
            self.push(format!("mask.{i}"), m.clone());
        }
    }

    pub fn masks(&self) -> Vec<Tensor> {
        self.prefixed("mask")
    }

    pub fn put_precisions(&mut self, map: &PrecisionMap) {
        let bits = map.bits.iter().map(|&b| f64::from(b)).collect();
        self.push("precision.bits", Tensor::vector(bits));
        for (i, s) in map.shapes.iter().enumerate() {
            self.push(
                format!("precision.shape.{i}"),
                Tensor::vector(s.iter().map(|&d| d as f64).collect()),
            );
        }
    }

    pub fn precisions(&self) -> Result<PrecisionMap> {
        let bits = self.require("precision.bits")?.data().iter().map(|&b| b as u32).collect();
        let shapes = self
            .prefixed("precision.shape")
            .iter()
            .map(|t| t.data().iter().map(|&d| d as usize).collect())
            .collect();
        Ok(PrecisionMap { bits, shapes })
    }

    pub fn put_bank(&mut self, bank: &TemplateBank, activation: Activation) {
        self.update_meta(|m| m.bank_activation = Some(activation));
        self.push("bank.templates", bank.templates.clone());
        self.push("bank.coeffs", bank.coeffs.clone());
        self.push(
            "bank.weight_shape",
            Tensor::vector(bank.weight_shape.iter().map(|&d| d as f64).collect()),
        );
    }

    pub fn bank(&self) -> Result<(TemplateBank, Activation)> {
        let activation = self.read_meta()?.bank_activation.unwrap_or(Activation::Identity);
        let shape = self.require("bank.weight_shape")?.data().iter().map(|&d| d as usize).collect();
        let bank = TemplateBank::new(
            self.require("bank.templates")?.clone(),
            self.require("bank.coeffs")?.clone(),
            shape,
        )?;
        Ok((bank, activation))
    }

    pub fn put_fold(&mut self, fold: &FoldResult) {
        self.push(
            "fold.groups",
            Tensor::vector(fold.groups.iter().map(|&g| g as f64).collect()),
        );
        self.push("fold.coeffs", fold.coeffs.clone());
        self.push("fold.b", fold.b.clone());
        self.push("fold.residuals", Tensor::vector(fold.residuals.clone()));
    }

    pub fn fold(&self) -> Result<FoldResult> {
        Ok(FoldResult {
            groups: self.require("fold.groups")?.data().iter().map(|&g| g as usize).collect(),
            coeffs: self.require("fold.coeffs")?.clone(),
            b: self.require("fold.b")?.clone(),
            residuals: self.require("fold.residuals")?.data().to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, self.kind.name());
        put_str(&mut out, &self.config);
        put_str(&mut out, &self.meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: VERSION,
            });
        }
        let kind = r.string()?.parse()?;
        let config = r.string()?;
        let meta = r.string()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint("tensor size overflows".into()))?;
            if n.checked_mul(8).is_none_or(|b| b > r.remaining()) {
                return Err(Error::Checkpoint(format!("tensor `{name}` is truncated")));
            }
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            kind,
            config,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Loads and checks the payload kind.
    pub fn load_kind(path: &Path, expected: CheckpointKind) -> Result<Self> {
        let ck = Self::load(path)?;
        ck.expect_kind(expected)?;
        Ok(ck)
    }

    pub fn expect_kind(&self, expected: CheckpointKind) -> Result<()> {
        if self.kind != expected {
            return Err(Error::CheckpointKind {
                found: self.kind.to_string(),
                expected: expected.to_string(),
            });
        }
        Ok(())
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
    }
}
