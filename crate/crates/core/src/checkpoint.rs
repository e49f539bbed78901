//! The `DANCKPT1` container.
//!
//! Layout: the 8 magic bytes, then entries until end of file. Each entry is
//! a `u32` name length, the UTF-8 name, a `u32` rank, `rank` `u64` dims and
//! the row-major values as little-endian `f64`. Parameters keep their group
//! names (`repr/`, `seg/`, `dcls/`); running statistics are stored as
//! `<layer>/running_mean`, `<layer>/running_var` and `<layer>/update_count`,
//! with the split batch norm target accumulator under `<layer>@target/`.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid4;
use crate::model::{Architecture, ModelParams, SegmentationModel};
use crate::norm::{NormConfig, NormKind, NormLayer, NormStats};
use crate::param::ParamGroup;

pub const MAGIC: &[u8; 8] = b"DANCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered list of named arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let name = name.into();
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::shape(format!("entry `{name}` dims {dims:?} vs {} values", data.len())));
        }
        if self.get(&name).is_some() {
            return Err(Error::invalid(format!("duplicate checkpoint entry `{name}`")));
        }
        self.entries.push(Entry { name, dims, data });
        Ok(())
    }

    pub fn push_vec(&mut self, name: impl Into<String>, data: Vec<f64>) -> Result<()> {
        self.push(name, vec![data.len()], data)
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Entry> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks entry `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        for e in &self.entries {
            out.extend((e.name.len() as u32).to_le_bytes());
            out.extend(e.name.as_bytes());
            out.extend((e.dims.len() as u32).to_le_bytes());
            for d in &e.dims {
                out.extend((*d as u64).to_le_bytes());
            }
            for v in &e.data {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("missing DANCKPT1 magic".into()));
        }
        let mut ck = Checkpoint::default();
        while r.pos < bytes.len() {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let dims = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count = dims
                .iter()
                .try_fold(1usize, |a, d| a.checked_mul(*d))
                .filter(|c| c.checked_mul(8).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| Error::Format(format!("entry `{name}` has absurd dims {dims:?}")))?;
            let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            ck.push(name, dims, data)
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
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
}

fn push_group(ck: &mut Checkpoint, group: &ParamGroup) -> Result<()> {
    for p in group.iter() {
        ck.push(p.name(), p.value().shape().dims().to_vec(), p.value().data().to_vec())?;
    }
    Ok(())
}

fn push_stats(ck: &mut Checkpoint, prefix: &str, s: &NormStats) -> Result<()> {
    ck.push_vec(format!("{prefix}/running_mean"), s.running_mean.clone())?;
    ck.push_vec(format!("{prefix}/running_var"), s.running_var.clone())?;
    ck.push_vec(format!("{prefix}/update_count"), vec![s.update_count as f64])
}

fn read_stats(ck: &Checkpoint, prefix: &str, channels: usize) -> Result<NormStats> {
    let mean = ck.require(&format!("{prefix}/running_mean"))?.data.clone();
    let var = ck.require(&format!("{prefix}/running_var"))?.data.clone();
    let count = ck.require(&format!("{prefix}/update_count"))?.data.clone();
    if mean.len() != channels || var.len() != channels || count.len() != 1 {
        return Err(Error::Format(format!("statistics of `{prefix}` have wrong length")));
    }
    if var.iter().any(|v| !(*v >= 0.0)) || !(count[0] >= 0.0) || count[0].fract() != 0.0 {
        return Err(Error::Format(format!("statistics of `{prefix}` are invalid")));
    }
    let mut s = NormStats::new(channels);
    s.running_mean = mean;
    s.running_var = var;
    s.update_count = count[0] as u64;
    Ok(s)
}

fn read_group(ck: &Checkpoint, like: &ParamGroup) -> Result<ParamGroup> {
    let mut g = ParamGroup::new();
    for p in like.iter() {
        let e = ck.require(p.name())?;
        if e.dims != p.value().shape().dims() {
            return Err(Error::Format(format!(
                "entry `{}` has dims {:?}, expected {}",
                p.name(),
                e.dims,
                p.value().shape()
            )));
        }
        g.insert(p.name(), Grid4::from_vec(p.value().shape(), e.data.clone())?)?;
    }
    Ok(g)
}

/// Serializes all three parameter groups, every layer's running statistics
/// and the architecture metadata.
pub fn model_to_checkpoint(model: &SegmentationModel) -> Result<Checkpoint> {
    let mut ck = Checkpoint::default();
    let a = &model.arch;
    let mut arch = vec![a.in_channels as f64, a.kernel as f64, a.classes as f64, a.classifier_hidden as f64];
    arch.extend(a.widths.iter().map(|w| *w as f64));
    ck.push_vec("meta/arch", arch)?;
    let cfg = model.norms.first().map(|n| n.config).unwrap_or(NormConfig::new(NormKind::None));
    ck.push_vec("meta/norm_kind", vec![cfg.kind.code()])?;
    ck.push_vec("meta/norm", vec![cfg.epsilon, cfg.ema_momentum])?;
    ck.push_vec("meta/classes", vec![a.classes as f64])?;
    push_group(&mut ck, &model.params.repr)?;
    push_group(&mut ck, &model.params.seg)?;
    push_group(&mut ck, &model.params.dcls)?;
    for layer in &model.norms {
        if layer.kind().has_running_stats() {
            push_stats(&mut ck, &layer.name, &layer.stats)?;
        }
        if let Some(t) = &layer.target_stats {
            push_stats(&mut ck, &format!("{}@target", layer.name), t)?;
        }
    }
    Ok(ck)
}

fn whole(v: f64, what: &str) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
        Ok(v as usize)
    } else {
        Err(Error::Format(format!("bad {what} {v}")))
    }
}

pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<SegmentationModel> {
    let arch = &ck.require("meta/arch")?.data;
    if arch.len() < 5 {
        return Err(Error::Format("meta/arch too short".into()));
    }
    let architecture = Architecture {
        in_channels: whole(arch[0], "in_channels")?,
        kernel: whole(arch[1], "kernel")?,
        classes: whole(arch[2], "classes")?,
        classifier_hidden: whole(arch[3], "classifier width")?,
        widths: arch[4..].iter().map(|w| whole(*w, "width")).collect::<Result<_>>()?,
    };
    let kind_code = ck.require("meta/norm_kind")?.data.first().copied().unwrap_or(f64::NAN);
    let kind = NormKind::from_code(kind_code)
        .ok_or_else(|| Error::Format(format!("unknown norm kind code {kind_code}")))?;
    let norm = &ck.require("meta/norm")?.data;
    if norm.len() != 2 {
        return Err(Error::Format("meta/norm must hold epsilon and momentum".into()));
    }
    let config = NormConfig {
        kind,
        epsilon: norm[0],
        ema_momentum: norm[1],
    };
    // A template model supplies names and shapes; its values are replaced.
    let template = SegmentationModel::new(architecture, config, &mut crate::rng::stream(0, 0))
        .map_err(|e| Error::Format(e.to_string()))?;
    let params = ModelParams {
        repr: read_group(ck, &template.params.repr)?,
        seg: read_group(ck, &template.params.seg)?,
        dcls: read_group(ck, &template.params.dcls)?,
    };
    let mut norms = Vec::new();
    for layer in &template.norms {
        let c = layer.stats.channels();
        let mut l = NormLayer::new(layer.name.clone(), c, config);
        if kind.has_running_stats() {
            l.stats = read_stats(ck, &layer.name, c)?;
        }
        if kind == NormKind::SplitBn {
            l.target_stats = Some(read_stats(ck, &format!("{}@target", layer.name), c)?);
        }
        norms.push(l);
    }
    Ok(SegmentationModel {
        arch: template.arch,
        norms,
        params,
    })
}

pub fn save_model(model: &SegmentationModel, path: &Path) -> Result<()> {
    model_to_checkpoint(model)?.save(path)
}

pub fn load_model(path: &Path) -> Result<SegmentationModel> {
    model_from_checkpoint(&Checkpoint::load(path)?)
}

/// Rejects models whose running statistics were never updated.
pub fn ensure_trained(model: &SegmentationModel) -> Result<()> {
    for layer in &model.norms {
        if layer.kind().has_running_stats() && layer.stats.update_count == 0 {
            return Err(Error::UntrainedStats(layer.name.clone()));
        }
    }
    Ok(())
}
