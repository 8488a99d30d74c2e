//! Parameter checkpoint format "COSPAPR1": magic bytes, a structured-text
//! header listing names, shapes, and precision, then raw little-endian values
//! in header order. The header is human-diffable; the payload is bit-exact.

use std::path::Path;

use crate::autodiff::{ParamSet, Real, Tensor};
use crate::error::{CospaError, Result};

pub const MAGIC: &[u8; 8] = b"COSPAPR1";

pub fn checkpoint_to_bytes<R: Real>(sets: &[&ParamSet<R>]) -> Vec<u8> {
    let mut header = String::new();
    header.push_str("version 1\n");
    header.push_str(&format!("precision {}\n", R::PRECISION_TAG));
    let count: usize = sets.iter().map(|s| s.len()).sum();
    header.push_str(&format!("tensors {count}\n"));
    for set in sets {
        for (name, t) in set.iter() {
            header.push_str(&format!("{} {} {}\n", name, t.rows(), t.cols()));
        }
    }
    header.push('\n');

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(header.as_bytes());
    for set in sets {
        for (_, t) in set.iter() {
            for v in t.as_slice() {
                out.extend_from_slice(&v.to_le_bytes_vec());
            }
        }
    }
    out
}

pub fn checkpoint_from_bytes<R: Real>(bytes: &[u8]) -> Result<Vec<(String, Tensor<R>)>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CospaError::Format("checkpoint magic mismatch".into()));
    }
    let rest = &bytes[MAGIC.len()..];
    // Header is text up to the first blank line.
    let mut header_end = None;
    for i in 0..rest.len().saturating_sub(1) {
        if rest[i] == b'\n' && rest[i + 1] == b'\n' {
            header_end = Some(i + 2);
            break;
        }
    }
    let header_end =
        header_end.ok_or_else(|| CospaError::Format("checkpoint header unterminated".into()))?;
    let header = std::str::from_utf8(&rest[..header_end])
        .map_err(|_| CospaError::Format("checkpoint header is not utf-8".into()))?;
    let mut lines = header.lines();

    let version_line = lines.next().unwrap_or("");
    if version_line != "version 1" {
        return Err(CospaError::Format(format!("unsupported checkpoint version: {version_line}")));
    }
    let precision_line = lines.next().unwrap_or("");
    let expected = format!("precision {}", R::PRECISION_TAG);
    if precision_line != expected {
        return Err(CospaError::Format(format!(
            "precision mismatch: file says '{precision_line}', expected '{expected}'"
        )));
    }
    let tensors_line = lines.next().unwrap_or("");
    let count: usize = tensors_line
        .strip_prefix("tensors ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CospaError::Format(format!("bad tensor count line: {tensors_line}")))?;

    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| CospaError::Format("checkpoint header ends mid-list".into()))?;
        let mut parts = line.split(' ');
        let name = parts
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| CospaError::Format(format!("bad tensor line: {line}")))?;
        let rows: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CospaError::Format(format!("bad rows in: {line}")))?;
        let cols: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CospaError::Format(format!("bad cols in: {line}")))?;
        shapes.push((name.to_string(), rows, cols));
    }

    let payload = &rest[header_end..];
    let total: usize = shapes.iter().map(|(_, r, c)| r * c * R::BYTE_WIDTH).sum();
    if payload.len() != total {
        return Err(CospaError::Format(format!(
            "checkpoint payload: expected {total} bytes, found {}",
            payload.len()
        )));
    }
    let mut entries = Vec::with_capacity(count);
    let mut off = 0;
    for (name, rows, cols) in shapes {
        let n = rows * cols;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(R::from_le_slice(&payload[off..off + R::BYTE_WIDTH]));
            off += R::BYTE_WIDTH;
        }
        entries.push((name, Tensor::from_vec(rows, cols, data)?));
    }
    Ok(entries)
}

pub fn save_checkpoint<R: Real>(path: &Path, sets: &[&ParamSet<R>]) -> Result<()> {
    std::fs::write(path, checkpoint_to_bytes(sets))?;
    Ok(())
}

pub fn load_checkpoint<R: Real>(path: &Path) -> Result<Vec<(String, Tensor<R>)>> {
    let bytes = std::fs::read(path)
        .map_err(|e| CospaError::MissingArtifact(format!("{}: {e}", path.display())))?;
    checkpoint_from_bytes(&bytes)
}

/// Pull every entry named `prefix` or `prefix.*` into a fresh ParamSet,
/// preserving file order.
pub fn extract_set<R: Real>(
    entries: &[(String, Tensor<R>)],
    prefix: &str,
) -> Result<ParamSet<R>> {
    let mut set = ParamSet::new();
    let dotted = format!("{prefix}.");
    for (name, t) in entries {
        if name == prefix || name.starts_with(&dotted) {
            set.add(name.clone(), t.clone())?;
        }
    }
    if set.is_empty() {
        return Err(CospaError::Format(format!("checkpoint has no entries under '{prefix}'")));
    }
    Ok(set)
}
