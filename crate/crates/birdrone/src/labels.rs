//! YOLO text labels: one `class cx cy w h` line per box, six decimals.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use birdrone_core::detect::BoundingBox;

use crate::error::{Error, Result};

pub fn format(boxes: &[BoundingBox]) -> String {
    let mut s = String::new();
    for b in boxes {
        writeln!(s, "{} {:.6} {:.6} {:.6} {:.6}", b.class_id, b.cx, b.cy, b.w, b.h).expect("string write");
    }
    s
}

/// Parses label text; errors name `path` and the 1-based line.
pub fn parse(text: &str, path: &Path, num_classes: usize) -> Result<Vec<BoundingBox>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let bad = |reason: String| Error::Label { path: path.to_path_buf(), line: i + 1, reason };
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", tokens.len())));
        }
        let class_id: usize = tokens[0].parse().map_err(|_| bad(format!("class id {:?} is not an integer", tokens[0])))?;
        if class_id >= num_classes {
            return Err(bad(format!("class id {class_id} out of range for {num_classes} classes")));
        }
        let mut v = [0.0; 4];
        for (k, t) in tokens[1..].iter().enumerate() {
            v[k] = t.parse().map_err(|_| bad(format!("{t:?} is not a number")))?;
        }
        let b = BoundingBox::new(class_id, v[0], v[1], v[2], v[3]).map_err(|_| bad(format!("box {v:?} out of range")))?;
        out.push(b);
    }
    Ok(out)
}

pub fn write(path: &Path, boxes: &[BoundingBox]) -> Result<()> {
    fs::write(path, format(boxes)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path, num_classes: usize) -> Result<Vec<BoundingBox>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, path, num_classes)
}
