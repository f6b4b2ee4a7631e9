//! Sample files: headerless CSV (one sample per row) or the `RDS1` binary layout
//! `b"RDS1" | u32 n | u64 count | count * n f64`, all little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::SourceError;

pub const BINARY_MAGIC: &[u8; 4] = b"RDS1";

fn io_err(path: &Path, e: impl std::fmt::Display) -> SourceError {
    SourceError::Io {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

/// Reads CSV samples; returns `(dimension, row-major values)`.
pub fn read_csv(path: &Path, header: bool) -> Result<(usize, Vec<f64>), SourceError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let mut dim = None;
    let mut values = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| io_err(path, e))?;
        let width = record.len();
        match dim {
            None => dim = Some(width),
            Some(d) if d != width => {
                return Err(io_err(path, format!("row {line} has {width} columns, expected {d}")));
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| io_err(path, format!("row {line}: cannot parse {field:?}")))?;
            if !v.is_finite() {
                return Err(io_err(path, format!("row {line}: non-finite value")));
            }
            values.push(v);
        }
    }
    let dim = dim.ok_or_else(|| io_err(path, "no rows"))?;
    Ok((dim, values))
}

pub fn write_csv(path: &Path, dim: usize, values: &[f64]) -> Result<(), SourceError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    for row in values.chunks(dim) {
        w.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_binary(path: &Path) -> Result<(usize, Vec<f64>), SourceError> {
    let mut r = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|e| io_err(path, e))?;
    if &header[..4] != BINARY_MAGIC {
        return Err(io_err(path, "bad magic, expected RDS1"));
    }
    let n = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
    let count = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes")) as usize;
    if n == 0 {
        return Err(io_err(path, "zero dimension"));
    }
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| io_err(path, e))?;
    if buf.len() != n * count * 8 {
        return Err(io_err(
            path,
            format!("payload is {} bytes, header promises {}", buf.len(), n * count * 8),
        ));
    }
    let values: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(io_err(path, "non-finite value"));
    }
    Ok((n, values))
}

pub fn write_binary(path: &Path, dim: usize, values: &[f64]) -> Result<(), SourceError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    let count = (values.len() / dim) as u64;
    let mut bytes = Vec::with_capacity(16 + values.len() * 8);
    bytes.extend_from_slice(BINARY_MAGIC);
    bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    bytes.extend_from_slice(&count.to_le_bytes());
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

/// Binary if the file starts with the magic, CSV otherwise.
pub fn read_any(path: &Path, header: bool) -> Result<(usize, Vec<f64>), SourceError> {
    let mut magic = [0u8; 4];
    let is_binary = File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .map(|_| &magic == BINARY_MAGIC)
        .unwrap_or(false);
    if is_binary {
        read_binary(path)
    } else {
        read_csv(path, header)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sources::Source;

    #[test]
    fn binary_layout_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.rds");
        let vals = [1.0, -2.5, 3.25, 1e-300, 0.1, 7.0];
        write_binary(&p, 3, &vals).unwrap();
        let raw = std::fs::read(&p).unwrap();
        assert_eq!(&raw[..4], b"RDS1");
        assert_eq!(u32::from_le_bytes(raw[4..8].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(raw[8..16].try_into().unwrap()), 2);
        assert_eq!(raw.len(), 16 + 48);
        assert_eq!(read_binary(&p).unwrap(), (3, vals.to_vec()));
    }

    #[test]
    fn csv_with_and_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(&p, "x,y\n1,2\n3.5,-4\n").unwrap();
        assert_eq!(read_csv(&p, true).unwrap(), (2, vec![1.0, 2.0, 3.5, -4.0]));
        assert!(read_csv(&p, false).is_err());
        std::fs::write(&p, "1,2\n3\n").unwrap();
        assert!(read_csv(&p, false).is_err());
    }

    #[test]
    fn file_source_serves_rows_then_exhausts() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_csv(&p, 2, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let mut s = Source::from_file(&p, 2, false).unwrap();
        assert_eq!(s.sample(2).unwrap().data.data(), &[0.0, 1.0, 2.0, 3.0]);
        let err = s.sample(2).unwrap_err();
        assert!(
            matches!(err, crate::sources::SourceError::Exhausted { available: 1, .. }),
            "{err}"
        );
        assert!(Source::from_file(&p, 3, false).is_err());
    }
}
