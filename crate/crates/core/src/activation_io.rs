//! LTAD activation dumps: per-document token activation matrices.
//!
//! Layout (all integers little-endian `u32`, floats little-endian IEEE-754
//! binary32):
//!
//! ```text
//! header  := "LTAD" version:u32 d:u32
//! record  := id_len:u32 id:[u8; id_len] n_tokens:u32 values:[f32; n_tokens * d]
//! ```
//!
//! Records follow the header back to back until end of file. Values are
//! row-major, one row of `d` floats per token.

use std::collections::HashSet;
use std::fs::File;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::TokenMatrix;

pub const DUMP_MAGIC: &[u8; 4] = b"LTAD";
pub const DUMP_VERSION: u32 = 1;
const HEADER_LEN: u64 = 12;
const MAX_ID_LEN: u32 = 1 << 20;

pub type DumpRecord = (String, TokenMatrix);

/// Streaming writer. Rejects duplicate ids, empty documents and rows whose
/// width differs from the header `d`.
pub struct DumpWriter<W: Write> {
    out: BufWriter<W>,
    d: usize,
    seen: HashSet<String>,
    written: usize,
}

impl DumpWriter<File> {
    pub fn create(path: impl AsRef<Path>, d: usize) -> Result<Self> {
        Self::new(File::create(path)?, d)
    }
}

impl<W: Write> DumpWriter<W> {
    pub fn new(inner: W, d: usize) -> Result<Self> {
        if d == 0 || d > u32::MAX as usize {
            return Err(Error::InvalidShape(format!(
                "hidden dimension {d} is not representable"
            )));
        }
        let mut out = BufWriter::new(inner);
        out.write_all(DUMP_MAGIC)?;
        out.write_all(&DUMP_VERSION.to_le_bytes())?;
        out.write_all(&(d as u32).to_le_bytes())?;
        Ok(Self {
            out,
            d,
            seen: HashSet::new(),
            written: 0,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn write_record(&mut self, doc_id: &str, tokens: &TokenMatrix) -> Result<()> {
        check_record(doc_id, tokens, self.d)?;
        if !self.seen.insert(doc_id.to_owned()) {
            return Err(Error::DuplicateDocument(doc_id.to_owned()));
        }
        self.out.write_all(&(doc_id.len() as u32).to_le_bytes())?;
        self.out.write_all(doc_id.as_bytes())?;
        self.out.write_all(&(tokens.rows() as u32).to_le_bytes())?;
        for v in tokens.as_slice() {
            self.out.write_all(&v.to_le_bytes())?;
        }
        self.written += 1;
        Ok(())
    }

    /// Flushes and returns the number of records written.
    pub fn finish(mut self) -> Result<usize> {
        self.out.flush()?;
        Ok(self.written)
    }
}

fn check_record(doc_id: &str, tokens: &TokenMatrix, d: usize) -> Result<()> {
    if tokens.cols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: tokens.cols(),
        });
    }
    if tokens.rows() == 0 {
        return Err(Error::EmptyDocument(doc_id.to_owned()));
    }
    if doc_id.len() > MAX_ID_LEN as usize || tokens.rows() > u32::MAX as usize {
        return Err(Error::InvalidShape(format!(
            "record `{doc_id}` too large for LTAD"
        )));
    }
    Ok(())
}

/// Writes `records` to `path`, validating the whole set before the file is
/// created. Returns the number of records written.
pub fn write_dump(records: &[DumpRecord], path: impl AsRef<Path>) -> Result<usize> {
    let Some((_, first)) = records.first() else {
        return Err(Error::EmptyInput);
    };
    let d = first.cols();
    let mut seen = HashSet::with_capacity(records.len());
    for (id, tokens) in records {
        check_record(id, tokens, d)?;
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateDocument(id.clone()));
        }
    }
    let mut writer = DumpWriter::create(path, d)?;
    for (id, tokens) in records {
        writer.write_record(id, tokens)?;
    }
    writer.finish()
}

/// Streaming reader yielding records in on-disk order. Holds one record in
/// memory at a time plus an 8-byte fingerprint per id seen so far (used to
/// reject duplicates).
pub struct DumpReader<R: Read> {
    input: BufReader<R>,
    d: usize,
    offset: u64,
    limit: Option<u64>,
    seen: HashSet<u64>,
    done: bool,
}

/// Opens an LTAD file for streaming.
pub fn read_dump(path: impl AsRef<Path>) -> Result<DumpReader<File>> {
    DumpReader::open(path)
}

impl DumpReader<File> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        let len = file.metadata()?.len();
        let mut reader = Self::new(file)?;
        reader.limit = Some(len);
        Ok(reader)
    }
}

impl<R: Read> DumpReader<R> {
    pub fn new(inner: R) -> Result<Self> {
        let mut input = BufReader::new(inner);
        let mut magic = [0u8; 4];
        input
            .read_exact(&mut magic)
            .map_err(|_| Error::FormatError("file shorter than LTAD header".into()))?;
        if &magic != DUMP_MAGIC {
            return Err(Error::FormatError(format!(
                "bad magic {magic:?}, expected LTAD"
            )));
        }
        let version = input
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::FormatError("file shorter than LTAD header".into()))?;
        if version != DUMP_VERSION {
            return Err(Error::FormatError(format!(
                "unsupported LTAD version {version}"
            )));
        }
        let d = input
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::FormatError("file shorter than LTAD header".into()))?;
        if d == 0 {
            return Err(Error::FormatError("hidden dimension is zero".into()));
        }
        Ok(Self {
            input,
            d: d as usize,
            offset: HEADER_LEN,
            limit: None,
            seen: HashSet::new(),
            done: false,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Reads the next record without duplicate or empty-document checks.
    fn next_raw(&mut self) -> Result<Option<DumpRecord>> {
        if self.input.fill_buf()?.is_empty() {
            return Ok(None);
        }
        let start = self.offset;
        let truncated = |e: io::Error| match e.kind() {
            io::ErrorKind::UnexpectedEof => Error::TruncatedDump { offset: start },
            _ => Error::Io(e),
        };
        let id_len = self.input.read_u32::<LittleEndian>().map_err(truncated)?;
        if id_len > MAX_ID_LEN {
            return Err(Error::FormatError(format!(
                "record at byte {start} declares a {id_len}-byte id"
            )));
        }
        self.ensure_available(start, 4 + id_len as u64 + 4)?;
        let mut id = vec![0u8; id_len as usize];
        self.input.read_exact(&mut id).map_err(truncated)?;
        let id = String::from_utf8(id).map_err(|_| {
            Error::FormatError(format!("record at byte {start} has a non-UTF-8 id"))
        })?;
        let n_tokens = self.input.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let n_values = n_tokens
            .checked_mul(self.d)
            .ok_or_else(|| Error::FormatError(format!("record `{id}` overflows")))?;
        let record_len = 8 + id_len as u64 + 4 * n_values as u64;
        self.ensure_available(start, record_len)?;
        let mut values = vec![0f32; n_values];
        self.input
            .read_f32_into::<LittleEndian>(&mut values)
            .map_err(truncated)?;
        self.offset = start + record_len;
        let matrix = TokenMatrix::new(n_tokens, self.d, values)?;
        Ok(Some((id, matrix)))
    }

    fn ensure_available(&self, start: u64, len: u64) -> Result<()> {
        match self.limit {
            Some(limit) if start + len > limit => Err(Error::TruncatedDump { offset: start }),
            _ => Ok(()),
        }
    }
}

fn fingerprint(id: &str) -> u64 {
    let mut h = DefaultHasher::new();
    id.hash(&mut h);
    h.finish()
}

impl<R: Read> Iterator for DumpReader<R> {
    type Item = Result<DumpRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = match self.next_raw() {
            Ok(None) => {
                self.done = true;
                return None;
            }
            Ok(Some((id, m))) => {
                if m.rows() == 0 {
                    Err(Error::EmptyDocument(id))
                } else if !self.seen.insert(fingerprint(&id)) {
                    Err(Error::DuplicateDocument(id))
                } else {
                    Ok((id, m))
                }
            }
            Err(e) => Err(e),
        };
        if item.is_err() {
            self.done = true;
        }
        Some(item)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Violation {
    FormatError(String),
    TruncatedDump { offset: u64 },
    DuplicateDocument(String),
    EmptyDocument(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DumpReport {
    pub records: usize,
    pub d: usize,
    pub total_tokens: u64,
    pub min_tokens: Option<usize>,
    pub max_tokens: Option<usize>,
    pub violations: Vec<Violation>,
}

impl DumpReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Scans a dump and reports its shape and every violation found. Never
/// fails: I/O and format problems are reported as violations.
pub fn validate_dump(path: impl AsRef<Path>) -> DumpReport {
    let mut report = DumpReport {
        records: 0,
        d: 0,
        total_tokens: 0,
        min_tokens: None,
        max_tokens: None,
        violations: Vec::new(),
    };
    let mut reader = match DumpReader::open(path) {
        Ok(r) => r,
        Err(e) => {
            report.violations.push(to_violation(e));
            return report;
        }
    };
    report.d = reader.d();
    let mut seen = HashSet::new();
    loop {
        match reader.next_raw() {
            Ok(None) => break,
            Ok(Some((id, m))) => {
                let n = m.rows();
                report.records += 1;
                report.total_tokens += n as u64;
                report.min_tokens = Some(report.min_tokens.map_or(n, |x| x.min(n)));
                report.max_tokens = Some(report.max_tokens.map_or(n, |x| x.max(n)));
                if n == 0 {
                    report.violations.push(Violation::EmptyDocument(id.clone()));
                }
                if !seen.insert(id.clone()) {
                    report.violations.push(Violation::DuplicateDocument(id));
                }
            }
            Err(e) => {
                report.violations.push(to_violation(e));
                break;
            }
        }
    }
    report
}

fn to_violation(e: Error) -> Violation {
    match e {
        Error::TruncatedDump { offset } => Violation::TruncatedDump { offset },
        Error::DuplicateDocument(id) => Violation::DuplicateDocument(id),
        Error::EmptyDocument(id) => Violation::EmptyDocument(id),
        other => Violation::FormatError(other.to_string()),
    }
}

/// Reads every record into memory.
pub fn read_all(path: impl AsRef<Path>) -> Result<Vec<DumpRecord>> {
    read_dump(path)?.collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn matrix(rows: usize, cols: usize, seed: f32) -> TokenMatrix {
        let data = (0..rows * cols).map(|i| seed + i as f32 * 0.5).collect();
        TokenMatrix::new(rows, cols, data).unwrap()
    }

    fn raw_record(id: &str, n: u32, values: &[f32]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend((id.len() as u32).to_le_bytes());
        b.extend(id.as_bytes());
        b.extend(n.to_le_bytes());
        for v in values {
            b.extend(v.to_le_bytes());
        }
        b
    }

    fn header(d: u32) -> Vec<u8> {
        let mut b = b"LTAD".to_vec();
        b.extend(1u32.to_le_bytes());
        b.extend(d.to_le_bytes());
        b
    }

    #[test]
    fn zero_matrix_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.ltad");
        let recs = vec![("d0".to_string(), TokenMatrix::zeros(1, 4))];
        assert_eq!(write_dump(&recs, &path).unwrap(), 1);
        assert_eq!(read_all(&path).unwrap(), recs);
    }

    #[test]
    fn order_preserved() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.ltad");
        let recs: Vec<_> = [("c", 2), ("a", 5), ("b", 1)]
            .iter()
            .map(|(id, n)| (id.to_string(), matrix(*n, 8, 1.0)))
            .collect();
        assert_eq!(write_dump(&recs, &path).unwrap(), 3);
        let ids: Vec<_> = read_all(&path).unwrap().into_iter().map(|r| r.0).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    #[test]
    fn write_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.ltad");
        let dup = vec![
            ("x".into(), matrix(1, 2, 0.0)),
            ("x".into(), matrix(1, 2, 0.0)),
        ];
        assert!(matches!(write_dump(&dup, &path), Err(Error::DuplicateDocument(id)) if id == "x"));
        let mism = vec![
            ("x".into(), matrix(1, 2, 0.0)),
            ("y".into(), matrix(1, 3, 0.0)),
        ];
        assert!(matches!(
            write_dump(&mism, &path),
            Err(Error::DimensionMismatch { .. })
        ));
        let empty = vec![("x".into(), TokenMatrix::zeros(0, 2))];
        assert!(matches!(
            write_dump(&empty, &path),
            Err(Error::EmptyDocument(_))
        ));
    }

    #[test]
    fn golden_bytes_are_little_endian() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("g.ltad");
        let m = TokenMatrix::new(1, 2, vec![1.0, -2.5]).unwrap();
        write_dump(&[("ab".into(), m)], &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let expected: Vec<u8> = [
            &b"LTAD"[..],
            &[1, 0, 0, 0],
            &[2, 0, 0, 0],
            &[2, 0, 0, 0],
            b"ab",
            &[1, 0, 0, 0],
            &[0x00, 0x00, 0x80, 0x3f],
            &[0x00, 0x00, 0x20, 0xc0],
        ]
        .concat();
        assert_eq!(bytes, expected);
    }

    #[test]
    fn truncated_mid_matrix() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.ltad");
        let mut bytes = header(4);
        bytes.extend(raw_record("d0", 1, &[0.0; 4]));
        let second = raw_record("d1", 2, &[1.0; 8]);
        bytes.extend(&second[..second.len() - 3]);
        std::fs::write(&path, &bytes).unwrap();
        let results: Vec<_> = read_dump(&path).unwrap().collect();
        assert_eq!(results.len(), 2);
        assert!(results[0].is_ok());
        // first record is 12 header + 4 + 2 + 4 + 16 bytes
        assert!(matches!(
            results[1],
            Err(Error::TruncatedDump { offset: 38 })
        ));

        // same truncation through a reader with no known length
        let reader = DumpReader::new(std::io::Cursor::new(bytes)).unwrap();
        let last = reader.last().unwrap();
        assert!(matches!(last, Err(Error::TruncatedDump { offset: 38 })));
    }

    #[test]
    fn bad_magic_and_version() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ltad");
        std::fs::write(&path, b"NOPE\x01\0\0\0\x04\0\0\0").unwrap();
        assert!(matches!(read_dump(&path), Err(Error::FormatError(_))));
        let mut bytes = b"LTAD".to_vec();
        bytes.extend(7u32.to_le_bytes());
        bytes.extend(4u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_dump(&path), Err(Error::FormatError(_))));
    }

    #[test]
    fn validate_reports_hand_built_duplicate() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("dup.ltad");
        let mut bytes = header(2);
        bytes.extend(raw_record("d0", 1, &[0.0, 1.0]));
        bytes.extend(raw_record("d0", 1, &[2.0, 3.0]));
        std::fs::write(&path, &bytes).unwrap();
        let report = validate_dump(&path);
        assert_eq!(report.records, 2);
        assert_eq!(
            report.violations,
            vec![Violation::DuplicateDocument("d0".into())]
        );
        let results: Vec<_> = read_dump(&path).unwrap().collect();
        assert!(matches!(results.last().unwrap(), Err(Error::DuplicateDocument(id)) if id == "d0"));
    }

    #[test]
    fn validate_reports_hand_built_empty_record() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("e.ltad");
        let mut bytes = header(2);
        bytes.extend(raw_record("d0", 0, &[]));
        std::fs::write(&path, &bytes).unwrap();
        let report = validate_dump(&path);
        assert_eq!(
            report.violations,
            vec![Violation::EmptyDocument("d0".into())]
        );
        assert!(read_dump(&path).unwrap().any(|r| r.is_err()));
    }

    #[test]
    fn validate_counts_tokens() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.ltad");
        let recs: Vec<_> = [2usize, 5, 1]
            .iter()
            .enumerate()
            .map(|(i, n)| (format!("d{i}"), matrix(*n, 32, i as f32)))
            .collect();
        write_dump(&recs, &path).unwrap();
        let report = validate_dump(&path);
        assert!(report.is_valid());
        assert_eq!(report.records, 3);
        assert_eq!(report.d, 32);
        // 2 + 5 + 1
        assert_eq!(report.total_tokens, 8);
        assert_eq!(report.min_tokens, Some(1));
        assert_eq!(report.max_tokens, Some(5));
    }

    #[test]
    fn validate_reports_missing_file() {
        let report = validate_dump("/nonexistent/definitely/missing.ltad");
        assert_eq!(report.violations.len(), 1);
    }
}
