//! Protocol configuration: data model, JSON decoding, validation and
//! canonical serialization.

mod diagnostic;
pub mod markup;
mod model;
mod parse;
mod validate;

use std::path::Path;

pub use diagnostic::{has_errors, Diagnostic, Severity};
pub use model::*;
pub use parse::{parse_protocol, Parsed};
pub use validate::{check_asset_path, missing_assets, on_grid, validate_protocol};

/// Canonical JSON form: two-space indentation, keys in declaration order,
/// every default written out, trailing newline.
pub fn serialize_protocol(spec: &ProtocolSpec) -> String {
    let mut out = serde_json::to_string_pretty(spec).expect("protocol model always serializes");
    out.push('\n');
    out
}

/// Reads, decodes and validates one protocol file. Asset warnings are added
/// when `asset_root` is given.
pub fn load_protocol_file(path: &Path, asset_root: Option<&Path>) -> Result<Parsed, LoadError> {
    let bytes = std::fs::read(path).map_err(|e| LoadError::Io(e.to_string()))?;
    let mut parsed = parse_protocol(&bytes).map_err(LoadError::Invalid)?;
    if let Some(root) = asset_root {
        let missing = missing_assets(&parsed.spec, root);
        parsed.warnings.extend(missing);
    }
    Ok(parsed)
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read file: {0}")]
    Io(String),
    #[error("{} error(s) in protocol", .0.iter().filter(|d| d.is_error()).count())]
    Invalid(Vec<Diagnostic>),
}
