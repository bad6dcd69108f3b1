//! Matrix Market readers and writers.
//!
//! Coordinate format for sparse matrices (real, general or symmetric) and
//! array format for dense vectors. Symmetric files store the lower triangle
//! and are expanded to full storage on read. Values are written with Rust's
//! shortest round-trip float formatting, so a write/read cycle reproduces
//! every entry bit for bit.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::csr::{CsrMatrix, SparseError};

#[derive(Debug, Error)]
pub enum MmError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported Matrix Market header: {0}")]
    UnsupportedHeader(String),
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

fn parse_err(line: usize, msg: impl Into<String>) -> MmError {
    MmError::Parse {
        line,
        msg: msg.into(),
    }
}

/// Writes a sparse matrix in coordinate format. With `symmetric` set, only
/// entries on or below the diagonal are stored and the header is marked
/// symmetric; the caller is responsible for the matrix actually being so.
pub fn write_coordinate(path: &Path, m: &CsrMatrix, symmetric: bool) -> Result<(), MmError> {
    let mut out = String::new();
    let kind = if symmetric { "symmetric" } else { "general" };
    out.push_str(&format!("%%MatrixMarket matrix coordinate real {kind}\n"));
    let mut entries = Vec::new();
    for i in 0..m.rows {
        let (cols, vals) = m.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            if !symmetric || c <= i {
                entries.push((i, c, v));
            }
        }
    }
    out.push_str(&format!("{} {} {}\n", m.rows, m.cols, entries.len()));
    for (i, c, v) in entries {
        out.push_str(&format!("{} {} {:e}\n", i + 1, c + 1, v));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Reads a coordinate-format real matrix, expanding symmetric storage.
pub fn read_coordinate(path: &Path) -> Result<CsrMatrix, MmError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file"))?;
    let symmetric = parse_header(header, "coordinate")?;
    let mut size_line = None;
    for (idx, line) in lines.by_ref() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        size_line = Some((idx + 1, t));
        break;
    }
    let (lno, size_line) = size_line.ok_or_else(|| parse_err(1, "missing size line"))?;
    let dims: Vec<&str> = size_line.split_whitespace().collect();
    if dims.len() != 3 {
        return Err(parse_err(lno, "size line must be `rows cols nnz`"));
    }
    let rows: usize = dims[0]
        .parse()
        .map_err(|_| parse_err(lno, "bad row count"))?;
    let cols: usize = dims[1]
        .parse()
        .map_err(|_| parse_err(lno, "bad column count"))?;
    let nnz: usize = dims[2]
        .parse()
        .map_err(|_| parse_err(lno, "bad entry count"))?;
    let mut triplets = Vec::with_capacity(if symmetric { 2 * nnz } else { nnz });
    let mut seen = 0usize;
    for (idx, line) in lines {
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let lno = idx + 1;
        let parts: Vec<&str> = t.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(parse_err(lno, "entry line must be `i j value`"));
        }
        let i: usize = parts[0].parse().map_err(|_| parse_err(lno, "bad row index"))?;
        let j: usize = parts[1]
            .parse()
            .map_err(|_| parse_err(lno, "bad column index"))?;
        let v: f64 = parts[2].parse().map_err(|_| parse_err(lno, "bad value"))?;
        if i == 0 || j == 0 || i > rows || j > cols {
            return Err(parse_err(lno, "index outside declared size (1-based)"));
        }
        triplets.push((i - 1, j - 1, v));
        if symmetric && i != j {
            triplets.push((j - 1, i - 1, v));
        }
        seen += 1;
    }
    if seen != nnz {
        return Err(parse_err(
            0,
            format!("declared {nnz} entries, found {seen}"),
        ));
    }
    Ok(CsrMatrix::from_triplets(rows, cols, triplets)?)
}

/// Writes a vector in array format (an n-by-1 dense matrix).
pub fn write_array(path: &Path, v: &[f64]) -> Result<(), MmError> {
    let mut out = String::new();
    out.push_str("%%MatrixMarket matrix array real general\n");
    out.push_str(&format!("{} 1\n", v.len()));
    for x in v {
        out.push_str(&format!("{:e}\n", x));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Reads an array-format real vector (single column).
pub fn read_array(path: &Path) -> Result<Vec<f64>, MmError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file"))?;
    parse_header(header, "array")?;
    let mut size_line = None;
    for (idx, line) in lines.by_ref() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        size_line = Some((idx + 1, t));
        break;
    }
    let (lno, size_line) = size_line.ok_or_else(|| parse_err(1, "missing size line"))?;
    let dims: Vec<&str> = size_line.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(parse_err(lno, "size line must be `rows cols`"));
    }
    let rows: usize = dims[0]
        .parse()
        .map_err(|_| parse_err(lno, "bad row count"))?;
    let cols: usize = dims[1]
        .parse()
        .map_err(|_| parse_err(lno, "bad column count"))?;
    if cols != 1 {
        return Err(parse_err(lno, "expected a single-column array"));
    }
    let mut v = Vec::with_capacity(rows);
    for (idx, line) in lines {
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let x: f64 = t
            .parse()
            .map_err(|_| parse_err(idx + 1, "bad value"))?;
        v.push(x);
    }
    if v.len() != rows {
        return Err(parse_err(
            0,
            format!("declared {rows} values, found {}", v.len()),
        ));
    }
    Ok(v)
}

/// Validates the banner and returns whether the file is symmetric.
fn parse_header(header: &str, want_format: &str) -> Result<bool, MmError> {
    let lower = header.to_ascii_lowercase();
    let words: Vec<&str> = lower.split_whitespace().collect();
    if words.len() != 5 || words[0] != "%%matrixmarket" || words[1] != "matrix" {
        return Err(MmError::UnsupportedHeader(header.to_string()));
    }
    if words[2] != want_format || words[3] != "real" {
        return Err(MmError::UnsupportedHeader(header.to_string()));
    }
    match words[4] {
        "general" => Ok(false),
        "symmetric" => Ok(true),
        _ => Err(MmError::UnsupportedHeader(header.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("saddlekit-mm-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn general_round_trip_is_bitwise() {
        let m = CsrMatrix::from_triplets(
            3,
            2,
            vec![(0, 0, 0.1), (1, 1, -2.5e-17), (2, 0, 12345.6789)],
        )
        .unwrap();
        let p = tmp("general.mtx");
        write_coordinate(&p, &m, false).unwrap();
        let back = read_coordinate(&p).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn symmetric_storage_expands_to_full() {
        let full = CsrMatrix::from_triplets(
            2,
            2,
            vec![(0, 0, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0)],
        )
        .unwrap();
        let p = tmp("sym.mtx");
        write_coordinate(&p, &full, true).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("symmetric"));
        assert_eq!(text.lines().count(), 2 + 3); // header, sizes, 3 lower entries
        let back = read_coordinate(&p).unwrap();
        assert_eq!(back, full);
    }

    #[test]
    fn vector_round_trip_is_bitwise() {
        let v = vec![1.0, -1.0 / 3.0, 7e-200];
        let p = tmp("vec.mtx");
        write_array(&p, &v).unwrap();
        assert_eq!(read_array(&p).unwrap(), v);
    }

    #[test]
    fn bad_header_is_rejected() {
        let p = tmp("bad.mtx");
        fs::write(&p, "%%MatrixMarket matrix coordinate complex general\n1 1 0\n").unwrap();
        assert!(matches!(
            read_coordinate(&p),
            Err(MmError::UnsupportedHeader(_))
        ));
    }

    #[test]
    fn malformed_entry_reports_line_number() {
        let p = tmp("malformed.mtx");
        fs::write(
            &p,
            "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 oops 3.0\n",
        )
        .unwrap();
        match read_coordinate(&p) {
            Err(MmError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn indices_are_one_based() {
        let p = tmp("onebased.mtx");
        fs::write(
            &p,
            "%%MatrixMarket matrix coordinate real general\n2 2 1\n2 1 5.0\n",
        )
        .unwrap();
        let m = read_coordinate(&p).unwrap();
        assert_eq!(m.get(1, 0), 5.0);
        assert_eq!(m.nnz(), 1);
    }

    #[test]
    fn out_of_range_index_is_an_error() {
        let p = tmp("range.mtx");
        fs::write(
            &p,
            "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 5.0\n",
        )
        .unwrap();
        assert!(read_coordinate(&p).is_err());
    }
}
