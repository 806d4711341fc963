//! JSON prediction files.
//!
//! A file is one JSON object whose `kind` is `"keypoints"` (with
//! `image_size`, `num_keypoints`, `cells`) or `"dense_codes"` (with
//! `grid_size`, `code_dim`, `cells`). Reals are written in their shortest
//! round-trip form, so reading a written file reproduces it exactly.

use std::fs;
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::prediction::{DenseCell, DenseCodePredictionSet, KeypointCell, KeypointPredictionSet, PredictionSet};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KeypointDocument {
    #[allow(dead_code)]
    kind: String,
    image_size: [f64; 2],
    num_keypoints: usize,
    cells: Vec<KeypointCell>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DenseDocument {
    #[allow(dead_code)]
    kind: String,
    grid_size: [usize; 2],
    code_dim: usize,
    cells: Vec<DenseCell>,
}

fn schema(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        location: location.into(),
        message: message.into(),
    }
}

fn syntax_location(e: &serde_json::Error) -> String {
    format!("line {} column {}", e.line(), e.column())
}

fn typed<'de, T: Deserialize<'de>>(text: &'de str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let mut location = syntax_location(&inner);
        if path != "." {
            location.push_str(&format!(", field {path}"));
        }
        // serde_json appends its own position; the location already has it
        let message = inner.to_string();
        let message = message.split(" at line ").next().unwrap_or(&message).to_string();
        schema(location, message)
    })
}

/// Validation messages name the offending cell as `cell <i> …`; map them to
/// a field path.
fn validation_field(message: &str) -> String {
    let mut words = message.split_whitespace();
    match (words.next(), words.next().and_then(|w| w.parse::<usize>().ok())) {
        (Some("cell"), Some(i)) => format!("field cells[{i}]"),
        _ => {
            let top = ["image_size", "num_keypoints", "grid_size", "code_dim"];
            let normalized = message.replace("image size", "image_size").replace("grid size", "grid_size");
            top.iter()
                .find(|f| normalized.contains(*f))
                .map_or_else(|| "field cells".to_string(), |f| format!("field {f}"))
        }
    }
}

/// Parses and validates a prediction document.
pub fn parse_predictions(text: &str) -> Result<PredictionSet> {
    let value: Value = serde_json::from_str(text).map_err(|e| {
        let message = e.to_string();
        let message = message.split(" at line ").next().unwrap_or(&message).to_string();
        schema(syntax_location(&e), message)
    })?;
    let kind = match value.get("kind") {
        Some(Value::String(k)) => k.as_str(),
        Some(_) => return Err(schema("field kind", "kind must be a string")),
        None if value.is_object() => return Err(schema("field kind", "missing field `kind`")),
        None => return Err(schema("line 1 column 1", "a prediction file must be a JSON object")),
    };
    let set = match kind {
        "keypoints" => {
            let d: KeypointDocument = typed(text)?;
            PredictionSet::Keypoints(KeypointPredictionSet {
                image_size: d.image_size,
                num_keypoints: d.num_keypoints,
                cells: d.cells,
            })
        }
        "dense_codes" => {
            let d: DenseDocument = typed(text)?;
            PredictionSet::DenseCodes(DenseCodePredictionSet {
                grid_size: d.grid_size,
                code_dim: d.code_dim,
                cells: d.cells,
            })
        }
        other => {
            return Err(schema(
                "field kind",
                format!("unknown kind `{other}`, expected `keypoints` or `dense_codes`"),
            ))
        }
    };
    set.validate().map_err(|e| match e {
        Error::InvalidInput(message) => schema(validation_field(&message), message),
        other => other,
    })?;
    Ok(set)
}

/// Pretty-printed JSON document of `set`.
pub fn to_json(set: &PredictionSet) -> String {
    serde_json::to_string_pretty(set).expect("prediction sets always serialize")
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<PredictionSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_predictions(&text).map_err(|e| match e {
        Error::Schema { location, message } => Error::Schema {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn write_predictions(path: impl AsRef<Path>, set: &PredictionSet) -> Result<()> {
    let path = path.as_ref();
    let mut text = to_json(set);
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
