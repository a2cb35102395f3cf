//! JSON Lines datasets: one [`Frame`] per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use lnms_core::Frame;
use serde_json::Value;

use crate::error::{LnmsError, Result};

const FRAME_FIELDS: &[&str] = &["frame_id", "width", "height", "annotations", "detections"];
const ANNOTATION_FIELDS: &[&str] = &["x", "y", "w", "h", "object_id"];
const DETECTION_FIELDS: &[&str] = &["x", "y", "w", "h", "score"];

pub fn write_frames<W: Write>(mut out: W, frames: &[Frame]) -> std::io::Result<()> {
    for frame in frames {
        serde_json::to_writer(&mut out, frame)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_dataset(path: &Path, frames: &[Frame]) -> Result<()> {
    let file = File::create(path).map_err(|e| LnmsError::io(path, e))?;
    write_frames(BufWriter::new(file), frames).map_err(|e| LnmsError::io(path, e))
}

fn warn_unknown(value: &Value, known: &[&str], what: &str, path: &Path, line: usize) {
    if let Value::Object(map) = value {
        for key in map.keys().filter(|k| !known.contains(&k.as_str())) {
            log::warn!("{}:{line}: ignoring unknown {what} field `{key}`", path.display());
        }
    }
}

fn parse_line(text: &str, path: &Path, line: usize) -> Result<Frame> {
    let parse_err = |message: String| LnmsError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let value: Value = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    warn_unknown(&value, FRAME_FIELDS, "frame", path, line);
    for (list, known, what) in [
        ("annotations", ANNOTATION_FIELDS, "annotation"),
        ("detections", DETECTION_FIELDS, "detection"),
    ] {
        if let Some(Value::Array(items)) = value.get(list) {
            for item in items {
                warn_unknown(item, known, what, path, line);
            }
        }
    }
    let frame: Frame = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
    frame.validate().map_err(|e| parse_err(e.to_string()))?;
    Ok(frame)
}

/// Frames in file order. Blank lines are skipped; line numbers in errors are 1-based.
pub fn read_frames<R: BufRead>(input: R, path: &Path) -> Result<Vec<Frame>> {
    let mut frames = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_text = line.map_err(|e| LnmsError::io(path, e))?;
        if line_text.trim().is_empty() {
            continue;
        }
        frames.push(parse_line(&line_text, path, i + 1)?);
    }
    Ok(frames)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Frame>> {
    let file = File::open(path).map_err(|e| LnmsError::io(path, e))?;
    read_frames(BufReader::new(file), path)
}
