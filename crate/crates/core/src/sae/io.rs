//! LTSA model files.
//!
//! ```text
//! "LTSA" version:u32 d:u32 m:u32 k:u32 init_bound:f32
//! W_enc [m×d]  b_enc [m]  W_dec [d×m]  b_dec [d]      (f32, row-major)
//! ```
//!
//! Everything little-endian. `init_bound` is the Kaiming-uniform bound the
//! decoder was drawn from (0 for models not created by `init`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt};

use super::{SaeModel, SaeParts};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"LTSA";
pub const MODEL_VERSION: u32 = 1;

pub fn save_model(model: &SaeModel, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_model(model, &mut out)?;
    out.flush()?;
    Ok(())
}

pub(crate) fn write_model(model: &SaeModel, out: &mut impl Write) -> Result<()> {
    out.write_all(MODEL_MAGIC)?;
    for v in [
        MODEL_VERSION,
        model.d as u32,
        model.m as u32,
        model.k as u32,
    ] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&model.init_bound.to_le_bytes())?;
    let parts = model.to_parts();
    for block in [&parts.w_enc, &parts.b_enc, &parts.w_dec, &parts.b_dec] {
        for v in block.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn format_err(what: &str) -> Error {
    Error::FormatError(format!("LTSA: {what}"))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SaeModel> {
    let file = File::open(path)?;
    let len = file.metadata()?.len();
    let mut input = BufReader::new(file);
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|_| format_err("truncated header"))?;
    if &magic != MODEL_MAGIC {
        return Err(format_err("bad magic"));
    }
    let mut header = [0u32; 4];
    input
        .read_u32_into::<LittleEndian>(&mut header)
        .map_err(|_| format_err("truncated header"))?;
    let [version, d, m, k] = header.map(|v| v as usize);
    if version != MODEL_VERSION as usize {
        return Err(format_err(&format!("unsupported version {version}")));
    }
    let init_bound = input
        .read_f32::<LittleEndian>()
        .map_err(|_| format_err("truncated header"))?;
    let expected = 24 + 4 * (2 * m as u64 * d as u64 + m as u64 + d as u64);
    if len != expected {
        return Err(format_err(&format!(
            "expected {expected} bytes for d={d} m={m}, found {len}"
        )));
    }
    let mut block = |n: usize| -> Result<Vec<f32>> {
        let mut v = vec![0f32; n];
        input
            .read_f32_into::<LittleEndian>(&mut v)
            .map_err(|_| format_err("truncated weights"))?;
        Ok(v)
    };
    let parts = SaeParts {
        w_enc: block(m * d)?,
        b_enc: block(m)?,
        w_dec: block(d * m)?,
        b_dec: block(d)?,
    };
    SaeModel::from_parts_with_bound(d, m, k, parts, init_bound).map_err(|e| match e {
        Error::InvalidShape(msg) => format_err(&msg),
        Error::NonFiniteInput => format_err("non-finite weights"),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn fresh_model_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ltsa");
        let model = SaeModel::init(6, 20, 4, 42).unwrap();
        save_model(&model, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), model);
    }

    #[test]
    fn truncated_file_is_format_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ltsa");
        save_model(&SaeModel::init(6, 20, 4, 42).unwrap(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        for cut in [3, 10, 30, bytes.len() - 1] {
            std::fs::write(&path, &bytes[..cut]).unwrap();
            assert!(
                matches!(load_model(&path), Err(Error::FormatError(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn bad_magic_is_format_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ltsa");
        save_model(&SaeModel::init(2, 3, 1, 0).unwrap(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_model(&path), Err(Error::FormatError(_))));
    }
}
