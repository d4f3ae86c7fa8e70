//! Weight file serialization.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "GWLSTMWT"
//! 8       4     format version (u32, currently 1)
//! 12      4     hidden size (u32)
//! 16      4     window length (u32)
//! 20      8     decision threshold (f64)
//! 28      8*P   parameters, row-major per tensor in ParamLayout order:
//!               wx, wh, bias, dense_w, dense_b
//! ```
//!
//! Loads validate the magic, version, shape-implied length, and threshold.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{LstmModel, ParamLayout};

const MAGIC: &[u8; 8] = b"GWLSTMWT";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 4 + 8;

/// Write a model to `path`.
pub fn save_weights(model: &LstmModel, path: &Path) -> Result<()> {
    let params = model.params();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.hidden_size() as u32).to_le_bytes());
    out.extend_from_slice(&(model.window_len() as u32).to_le_bytes());
    out.extend_from_slice(&model.decision_threshold().to_le_bytes());
    for &p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a model from `path`, validating shape consistency.
pub fn load_weights(path: &Path) -> Result<LstmModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "{}: file truncated ({} bytes, header needs {HEADER_LEN})",
            path.display(),
            bytes.len()
        )));
    }
    if &bytes[0..8] != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic, not a weight file",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported format version {version}, expected {VERSION}",
            path.display()
        )));
    }
    let hidden = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let window_len = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let threshold = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
    if hidden == 0 || window_len == 0 {
        return Err(Error::Format(format!(
            "{}: invalid shapes (hidden {hidden}, window {window_len})",
            path.display()
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Format(format!(
            "{}: decision threshold {threshold} outside (0, 1)",
            path.display()
        )));
    }

    let layout = ParamLayout::for_hidden(hidden);
    let expected = HEADER_LEN + 8 * layout.total;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: {} bytes, hidden size {hidden} implies {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let mut params = Vec::with_capacity(layout.total);
    for chunk in bytes[HEADER_LEN..].chunks_exact(8) {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Format(format!(
                "{}: non-finite parameter value",
                path.display()
            )));
        }
        params.push(v);
    }
    LstmModel::from_parts(hidden, window_len, threshold, params)
}

/// Load and require a specific hidden size; the error names both sizes.
pub fn load_weights_expecting(path: &Path, expected_hidden: usize) -> Result<LstmModel> {
    let model = load_weights(path)?;
    if model.hidden_size() != expected_hidden {
        return Err(Error::Format(format!(
            "{}: weight file has hidden size {}, expected {expected_hidden}",
            path.display(),
            model.hidden_size()
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gw");
        let model = LstmModel::init(8, 72, 0.5, 42).unwrap();
        save_weights(&model, &path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn truncated_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gw");
        let model = LstmModel::init(4, 72, 0.5, 1).unwrap();
        save_weights(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load_weights(&path).unwrap_err(), Error::Format(_)));
    }

    #[test]
    fn trailing_bytes_are_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gw");
        let model = LstmModel::init(4, 72, 0.5, 1).unwrap();
        save_weights(&model, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0u8; 8]);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_weights(&path).unwrap_err(), Error::Format(_)));
    }

    #[test]
    fn bad_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gw");
        std::fs::write(&path, b"NOTMODEL____________________________").unwrap();
        assert!(matches!(load_weights(&path).unwrap_err(), Error::Format(_)));
    }

    #[test]
    fn hidden_size_mismatch_names_both_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gw");
        let model = LstmModel::init(32, 72, 0.5, 1).unwrap();
        save_weights(&model, &path).unwrap();
        let err = load_weights_expecting(&path, 64).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Format(_)));
        assert!(msg.contains("32") && msg.contains("64"), "{msg}");
    }

    #[test]
    fn version_mismatch_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gw");
        let model = LstmModel::init(4, 72, 0.5, 1).unwrap();
        save_weights(&model, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 9; // bump version field
        std::fs::write(&path, bytes).unwrap();
        let err = load_weights(&path).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        assert!(err.to_string().contains("version"));
    }
}
