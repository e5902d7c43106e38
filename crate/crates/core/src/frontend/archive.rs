//! Feature archive: concatenated binary records plus a text index.
//!
//! Record layout (little-endian):
//!
//! ```text
//! "FEAT" | u32 id_len | id bytes | u32 T | u32 F | f32 frame_shift_ms | f32 x T*F (row-major)
//! ```
//!
//! The index file holds one `<utterance-id> <byte-offset>` line per record.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::nn::Matrix;

pub const RECORD_MAGIC: &[u8; 4] = b"FEAT";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub frame_shift_ms: f32,
    pub frames: Matrix,
}

#[derive(Debug, Default)]
pub struct ArchiveWriter {
    bytes: Vec<u8>,
    index: Vec<(String, u64)>,
}

impl ArchiveWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, id: &str, frames: &Matrix, frame_shift_ms: f64) -> Result<()> {
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(Error::data(format!(
                "record id {id:?} must be non-empty without whitespace"
            )));
        }
        self.index.push((id.to_owned(), self.bytes.len() as u64));
        let b = &mut self.bytes;
        b.extend_from_slice(RECORD_MAGIC);
        b.extend_from_slice(&(id.len() as u32).to_le_bytes());
        b.extend_from_slice(id.as_bytes());
        b.extend_from_slice(&(frames.rows() as u32).to_le_bytes());
        b.extend_from_slice(&(frames.cols() as u32).to_le_bytes());
        b.extend_from_slice(&(frame_shift_ms as f32).to_le_bytes());
        for &v in frames.data() {
            b.extend_from_slice(&(v as f32).to_le_bytes());
        }
        Ok(())
    }

    pub fn index_text(&self) -> String {
        self.index.iter().map(|(id, off)| format!("{id} {off}\n")).collect()
    }

    pub fn archive_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn finish(self, ark: &Path, index: &Path) -> Result<()> {
        write_atomic(ark, &self.bytes)?;
        write_atomic(index, self.index_text().as_bytes())
    }
}

pub fn parse_record(bytes: &[u8], offset: usize, origin: &Path) -> Result<(FeatureRecord, usize)> {
    let bad = |why: &str| Error::format(origin, format!("record at byte {offset}: {why}"));
    let mut pos = offset;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != RECORD_MAGIC {
        return Err(bad("bad magic, expected FEAT"));
    }
    let id_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let id = String::from_utf8(take(id_len)?.to_vec()).map_err(|_| bad("id is not UTF-8"))?;
    let rows = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let shift = f32::from_le_bytes(take(4)?.try_into().unwrap());
    let raw = take(rows * cols * 4)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let frames = Matrix::from_vec(rows, cols, data)?;
    Ok((
        FeatureRecord {
            id,
            frame_shift_ms: shift,
            frames,
        },
        pos,
    ))
}

pub fn read_index(path: &Path) -> Result<BTreeMap<String, u64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(id), Some(off), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::format(path, format!("line {}: expected `<id> <offset>`", n + 1)));
        };
        let off: u64 = off
            .parse()
            .map_err(|_| Error::format(path, format!("line {}: bad offset", n + 1)))?;
        out.insert(id.to_owned(), off);
    }
    Ok(out)
}

/// Reads every record in file order.
pub fn read_archive(path: &Path) -> Result<Vec<FeatureRecord>> {
    let bytes = std::fs::read(path)?;
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let (rec, next) = parse_record(&bytes, pos, path)?;
        out.push(rec);
        pos = next;
    }
    Ok(out)
}

/// Reads records into a map keyed by id, cross-checking the index.
pub fn read_archive_map(ark: &Path, index: &Path) -> Result<BTreeMap<String, FeatureRecord>> {
    let idx = read_index(index)?;
    let bytes = std::fs::read(ark)?;
    let mut out = BTreeMap::new();
    for (id, off) in idx {
        let (rec, _) = parse_record(&bytes, off as usize, ark)?;
        if rec.id != id {
            return Err(Error::format(
                index,
                format!("index entry {id} points at record {}", rec.id),
            ));
        }
        out.insert(id, rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_read_via_index() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArchiveWriter::new();
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.5, -4.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.25, 0.5, 0.75]]).unwrap();
        w.push("utt-a", &a, 10.0).unwrap();
        w.push("utt-b", &b, 10.0).unwrap();
        assert!(w.index_text().starts_with("utt-a 0\n"));
        let ark = dir.path().join("f.ark");
        let idx = dir.path().join("f.idx");
        w.finish(&ark, &idx).unwrap();
        let map = read_archive_map(&ark, &idx).unwrap();
        assert_eq!(map["utt-a"].frames, a);
        assert_eq!(map["utt-b"].frames, b);
        assert_eq!(read_archive(&ark).unwrap().len(), 2);
    }

    #[test]
    fn ids_with_spaces_rejected() {
        let mut w = ArchiveWriter::new();
        assert!(w.push("a b", &Matrix::zeros(1, 1), 10.0).is_err());
    }
}
