//! JSON instance files.
//!
//! ```json
//! { "meta": {"format": "erm-ipm-instance", "version": 1, "name": "tiny"},
//!   "blocks": [{"barrier": "box", "params": {"lower": [0], "upper": [1]}, "coords": [0, 1]}],
//!   "A": {"rows": 1, "cols": 1, "data": [1.0]},
//!   "b": [0.5], "c": [1.0], "kappa": 10.0 }
//! ```
//!
//! `A` may instead name a sidecar file of `rows * cols` little-endian `f64` values in
//! row-major order: `"A": {"rows": n, "cols": d, "sidecar": "a.bin"}`, resolved
//! relative to the instance file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_path_to_error::Segment;

use crate::barrier::{BarrierDescriptor, BarrierKind, BlockLayout};
use crate::error::{ErmError, Result};
use crate::linalg::DenseMatrix;

use super::{ErmInstance, PrimalErmSpec};

pub const FORMAT: &str = "erm-ipm-instance";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BlockEntry {
    #[serde(flatten)]
    kind: BarrierKind,
    coords: [usize; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixEntry {
    rows: usize,
    cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sidecar: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    meta: Meta,
    blocks: Vec<BlockEntry>,
    #[serde(rename = "A")]
    a: MatrixEntry,
    b: Vec<f64>,
    c: Vec<f64>,
    kappa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    anchor: Option<Vec<f64>>,
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// Parses a primal ERM description.
pub fn primal_spec_from_json(text: &str) -> Result<PrimalErmSpec> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let spec: PrimalErmSpec = serde_path_to_error::deserialize(de).map_err(|e| {
        let loc = pointer(e.path());
        ErmError::validation(loc, e.into_inner().to_string())
    })?;
    spec.validate()?;
    Ok(spec)
}

/// Parses and validates an instance. `base` resolves sidecar paths.
pub fn instance_from_json(text: &str, base: Option<&Path>) -> Result<ErmInstance> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: InstanceFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let loc = pointer(e.path());
        ErmError::validation(loc, e.into_inner().to_string())
    })?;
    if file.meta.format != FORMAT {
        return Err(ErmError::validation(
            "/meta/format",
            format!("expected {FORMAT:?}, found {:?}", file.meta.format),
        ));
    }
    if file.meta.version != VERSION {
        return Err(ErmError::validation(
            "/meta/version",
            format!("unsupported version {}", file.meta.version),
        ));
    }
    let MatrixEntry { rows, cols, data, sidecar } = file.a;
    let data = match (data, sidecar) {
        (Some(d), None) => d,
        (None, Some(p)) => read_sidecar(&resolve(base, &p), rows * cols)?,
        _ => return Err(ErmError::validation("/A", "exactly one of data and sidecar is required")),
    };
    if data.len() != rows * cols {
        return Err(ErmError::validation(
            "/A/data",
            format!("expected {} entries for {rows}x{cols}, found {}", rows * cols, data.len()),
        ));
    }
    let a = DenseMatrix::from_row_major(rows, cols, data)?;
    let mut next = 0;
    let mut barriers: Vec<BarrierDescriptor> = Vec::with_capacity(file.blocks.len());
    for (i, blk) in file.blocks.into_iter().enumerate() {
        let [lo, hi] = blk.coords;
        blk.kind
            .validate()
            .map_err(|m| ErmError::validation(format!("/blocks/{i}/params"), m))?;
        let dim = crate::barrier::Barrier::dim(&blk.kind);
        if lo != next || hi < lo || hi - lo != dim {
            return Err(ErmError::validation(
                format!("/blocks/{i}/coords"),
                format!("expected [{next}, {}] for a block of size {dim}, found [{lo}, {hi}]", next + dim),
            ));
        }
        next = hi;
        barriers.push(blk.kind.into());
    }
    let sizes: Vec<usize> = barriers.iter().map(|b| b.as_barrier().dim()).collect();
    let inst = ErmInstance {
        a,
        b: file.b,
        c: file.c,
        layout: BlockLayout::from_sizes(&sizes)?,
        barriers,
        kappa: file.kappa,
        anchor: file.anchor,
        name: file.meta.name,
    };
    inst.validate()?;
    Ok(inst)
}

fn resolve(base: Option<&Path>, p: &str) -> PathBuf {
    let p = Path::new(p);
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    }
}

fn read_sidecar(path: &Path, len: usize) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() != 8 * len {
        return Err(ErmError::validation(
            "/A/sidecar",
            format!("{} holds {} bytes, expected {}", path.display(), bytes.len(), 8 * len),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

fn to_file(inst: &ErmInstance, sidecar: Option<String>) -> Result<InstanceFile> {
    let mut blocks = Vec::with_capacity(inst.m());
    for (i, b) in inst.barriers.iter().enumerate() {
        let kind = b.builtin().ok_or_else(|| {
            ErmError::InvalidArgument(format!("block {i} uses a custom barrier, which cannot be serialized"))
        })?;
        let r = inst.layout.range(i);
        blocks.push(BlockEntry {
            kind: kind.clone(),
            coords: [r.start, r.end],
        });
    }
    let (rows, cols) = inst.a.shape();
    let data = if sidecar.is_some() { None } else { Some(inst.a.data().to_vec()) };
    Ok(InstanceFile {
        meta: Meta {
            format: FORMAT.into(),
            version: VERSION,
            name: inst.name.clone(),
        },
        blocks,
        a: MatrixEntry { rows, cols, data, sidecar },
        b: inst.b.clone(),
        c: inst.c.clone(),
        kappa: inst.kappa,
        anchor: inst.anchor.clone(),
    })
}

/// Serializes with `A` inline.
pub fn instance_to_json(inst: &ErmInstance) -> Result<String> {
    let f = to_file(inst, None)?;
    serde_json::to_string_pretty(&f).map_err(|e| ErmError::Io(e.into()))
}

pub fn load_instance(path: &Path) -> Result<ErmInstance> {
    let text = std::fs::read_to_string(path)?;
    instance_from_json(&text, path.parent())
}

/// Writes `path`; with `sidecar`, `A` goes to `<stem>.A.bin` next to it.
pub fn save_instance(inst: &ErmInstance, path: &Path, sidecar: bool) -> Result<()> {
    let side = if sidecar {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("instance");
        let name = format!("{stem}.A.bin");
        let target = path.with_file_name(&name);
        let mut bytes = Vec::with_capacity(8 * inst.a.data().len());
        for v in inst.a.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(target, bytes)?;
        Some(name)
    } else {
        None
    };
    let f = to_file(inst, side)?;
    let text = serde_json::to_string_pretty(&f).map_err(|e| ErmError::Io(e.into()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
