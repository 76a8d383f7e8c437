//! Binary tensor blobs: a text line `<name> <rank> <d0> .. <dk>` followed by
//! `numel` little-endian `f64` values.

use std::io::{BufRead, Read, Write};

use crate::{Result, Tensor, TensorError};

/// Largest element count accepted when reading, guarding against
/// allocation bombs in untrusted files.
pub const MAX_NUMEL: usize = 1 << 28;

pub fn write_f64s(w: &mut impl Write, data: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 8);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    if n > MAX_NUMEL {
        return Err(TensorError::Format(format!("element count {n} too large")));
    }
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)
        .map_err(|e| TensorError::Format(format!("truncated payload: {e}")))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn write_named(w: &mut impl Write, name: &str, t: &Tensor) -> Result<()> {
    if name.is_empty() || name.contains(char::is_whitespace) {
        return Err(TensorError::Format(format!("invalid blob name {name:?}")));
    }
    let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
    writeln!(w, "{} {} {}", name, t.shape().len(), dims.join(" "))?;
    write_f64s(w, t.data())
}

/// Read one line terminated by `\n` (without the terminator).
pub fn read_line(r: &mut impl BufRead, limit: usize) -> Result<Option<String>> {
    let mut bytes = Vec::new();
    let n = r
        .by_ref()
        .take(limit as u64 + 1)
        .read_until(b'\n', &mut bytes)?;
    if n == 0 {
        return Ok(None);
    }
    if bytes.last() != Some(&b'\n') {
        return Err(TensorError::Format("unterminated header line".into()));
    }
    bytes.pop();
    String::from_utf8(bytes)
        .map(Some)
        .map_err(|_| TensorError::Format("header is not UTF-8".into()))
}

/// Read the next blob; `Ok(None)` at clean end of input.
pub fn read_named(r: &mut impl BufRead) -> Result<Option<(String, Tensor)>> {
    let Some(line) = read_line(r, 4096)? else {
        return Ok(None);
    };
    let mut parts = line.split(' ');
    let name = parts
        .next()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| TensorError::Format("missing blob name".into()))?
        .to_string();
    let rank: usize = parse_num(parts.next(), "rank")?;
    if rank > 8 {
        return Err(TensorError::Format(format!("rank {rank} too large")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut numel: usize = 1;
    for _ in 0..rank {
        let d: usize = parse_num(parts.next(), "dimension")?;
        numel = numel
            .checked_mul(d)
            .filter(|n| *n <= MAX_NUMEL)
            .ok_or_else(|| TensorError::Format("blob too large".into()))?;
        shape.push(d);
    }
    if parts.next().is_some() {
        return Err(TensorError::Format("trailing fields in blob header".into()));
    }
    let data = read_f64s(r, numel)?;
    Ok(Some((name, Tensor::new(shape, data)?)))
}

fn parse_num(field: Option<&str>, what: &str) -> Result<usize> {
    field
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| TensorError::Format(format!("bad {what}")))
}
