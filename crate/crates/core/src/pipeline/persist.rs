//! Binary parameter files.
//!
//! Layout: 4-byte magic, `u32` format version, then the shape header as
//! little-endian `u32`s, then every array as little-endian `f64`s.
//! Model files (`TIEP`) carry `d, H, L, B` and one relation code byte per
//! head, followed by the arrays in [`TieParams::arrays`] order. Span scorer
//! files (`TIEQ`) carry `B`, then the start table, end table, start bonus
//! and end bonus. The encoder configuration lives in a JSON sidecar next
//! to the model file.

use std::io::Write;
use std::path::{Path, PathBuf};

use super::PipelineError;
use crate::encoder::{EncoderConfig, TieParams};
use crate::graph::RelationKind;
use crate::span_qa::QaParams;

pub const TIE_MAGIC: &[u8; 4] = b"TIEP";
pub const QA_MAGIC: &[u8; 4] = b"TIEQ";
pub const FORMAT_VERSION: u32 = 1;

/// `model.tiep` → `model.tiep.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(|_| std::io::Error::other("dimension exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

fn put_f64s<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_params<W: Write>(
    mut w: W,
    params: &TieParams,
    assignment: &[RelationKind],
) -> std::io::Result<()> {
    w.write_all(TIE_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for v in [params.dim, params.heads, params.layer_count(), params.buckets] {
        put_u32(&mut w, v)?;
    }
    let codes: Vec<u8> = assignment.iter().map(|k| k.code()).collect();
    w.write_all(&codes)?;
    for array in params.arrays() {
        put_f64s(&mut w, array)?;
    }
    Ok(())
}

pub fn write_qa_params<W: Write>(mut w: W, params: &QaParams) -> std::io::Result<()> {
    w.write_all(QA_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    put_u32(&mut w, params.buckets)?;
    put_f64s(&mut w, &params.start_table)?;
    put_f64s(&mut w, &params.end_table)?;
    put_f64s(&mut w, &[params.start_bonus, params.end_bonus])
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn header(bytes: &'a [u8], path: &'a Path, magic: &[u8; 4]) -> Result<Self, PipelineError> {
        if bytes.len() < 4 || &bytes[..4] != magic {
            return Err(PipelineError::BadMagic(path.to_path_buf()));
        }
        let mut r = Reader { bytes, at: 4, path };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(PipelineError::VersionMismatch {
                path: path.to_path_buf(),
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], PipelineError> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| PipelineError::TruncatedFile(self.path.to_path_buf()))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, PipelineError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn fill(&mut self, out: &mut [f64]) -> Result<(), PipelineError> {
        let b = self.take(out.len() * 8)?;
        for (v, chunk) in out.iter_mut().zip(b.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        Ok(())
    }

    fn shape_error(&self, message: String) -> PipelineError {
        PipelineError::ShapeMismatch {
            path: self.path.to_path_buf(),
            message,
        }
    }

    fn finish(&self) -> Result<(), PipelineError> {
        if self.at != self.bytes.len() {
            return Err(self.shape_error(format!(
                "{} bytes left after the declared arrays",
                self.bytes.len() - self.at
            )));
        }
        Ok(())
    }
}

/// Decode a model file; `path` is only used in error messages.
pub fn read_params(bytes: &[u8], path: &Path) -> Result<(TieParams, Vec<RelationKind>), PipelineError> {
    let mut r = Reader::header(bytes, path, TIE_MAGIC)?;
    let dim = r.u32()? as usize;
    let heads = r.u32()? as usize;
    let layers = r.u32()? as usize;
    let buckets = r.u32()? as usize;
    if heads == 0 || dim == 0 || !dim.is_multiple_of(heads) {
        return Err(r.shape_error(format!("d={dim} is not a positive multiple of H={heads}")));
    }
    let codes = r.take(heads)?;
    let assignment = codes
        .iter()
        .map(|&c| {
            RelationKind::from_code(c).ok_or_else(|| r.shape_error(format!("unknown relation code {c}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    // check the declared size against the file before allocating it
    let floats = buckets
        .checked_mul(dim)
        .zip(layers.checked_mul(3 * dim).and_then(|v| v.checked_mul(dim)))
        .and_then(|(table, attention)| table.checked_add(attention))
        .and_then(|v| v.checked_add(2 * dim + 1))
        .and_then(|v| v.checked_mul(8));
    if floats.is_none_or(|b| b > bytes.len() - r.at) {
        return Err(PipelineError::TruncatedFile(path.to_path_buf()));
    }
    let mut params = TieParams::zeros(dim, heads, layers, buckets);
    for array in params.arrays_mut() {
        r.fill(array)?;
    }
    r.finish()?;
    Ok((params, assignment))
}

pub fn read_qa_params(bytes: &[u8], path: &Path) -> Result<QaParams, PipelineError> {
    let mut r = Reader::header(bytes, path, QA_MAGIC)?;
    let buckets = r.u32()? as usize;
    if buckets.checked_mul(16).is_none_or(|b| b > bytes.len()) {
        return Err(PipelineError::TruncatedFile(path.to_path_buf()));
    }
    let mut params = QaParams::new(buckets);
    r.fill(&mut params.start_table)?;
    r.fill(&mut params.end_table)?;
    let mut bonus = [0.0; 2];
    r.fill(&mut bonus)?;
    params.start_bonus = bonus[0];
    params.end_bonus = bonus[1];
    r.finish()?;
    Ok(params)
}

/// Write the model file and its configuration sidecar.
pub fn save_params(path: &Path, params: &TieParams, config: &EncoderConfig) -> Result<(), PipelineError> {
    config.check_params(params)?;
    let mut bytes = Vec::with_capacity(params.parameter_count() * 8 + 64);
    write_params(&mut bytes, params, &config.assignment).map_err(|e| PipelineError::io(path, e))?;
    std::fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(config).expect("config serializes");
    std::fs::write(&side, json + "\n").map_err(|e| PipelineError::io(&side, e))
}

/// Read a model file and its sidecar, checking that they agree.
pub fn load_params(path: &Path) -> Result<(TieParams, EncoderConfig), PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    let (params, assignment) = read_params(&bytes, path)?;
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| PipelineError::io(&side, e))?;
    let config: EncoderConfig = serde_json::from_str(&text).map_err(|e| PipelineError::Schema {
        path: side.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    config
        .check_params(&params)
        .map_err(|e| PipelineError::ShapeMismatch {
            path: side.clone(),
            message: e.to_string(),
        })?;
    if config.assignment != assignment {
        return Err(PipelineError::ShapeMismatch {
            path: side,
            message: "head assignment differs from the parameter file".into(),
        });
    }
    Ok((params, config))
}

pub fn save_qa_params(path: &Path, params: &QaParams) -> Result<(), PipelineError> {
    let mut bytes = Vec::new();
    write_qa_params(&mut bytes, params).map_err(|e| PipelineError::io(path, e))?;
    std::fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

pub fn load_qa_params(path: &Path) -> Result<QaParams, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    read_qa_params(&bytes, path)
}
