//! Normalized label files: one `class_id cx cy w h` line per object.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelBox {
    pub class_id: u32,
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

impl LabelBox {
    pub fn new(class_id: u32, cx: f32, cy: f32, w: f32, h: f32) -> Result<Self> {
        let b = LabelBox { class_id, cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f32| (0.0..=1.0).contains(&v);
        if !(in_unit(self.cx) && in_unit(self.cy) && in_unit(self.w) && in_unit(self.h)) {
            return Err(Error::Input(format!("label coordinates must lie in [0, 1]: {self:?}")));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::Input(format!("label box must have positive size: {self:?}")));
        }
        Ok(())
    }
}

pub fn parse_labels(text: &str) -> Result<Vec<LabelBox>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |what: &str| Error::Input(format!("label line {}: {what}: `{line}`", lineno + 1));
        if fields.len() != 5 {
            return Err(bad("expected `class_id cx cy w h`"));
        }
        let class_id = fields[0].parse::<u32>().map_err(|_| bad("bad class id"))?;
        let mut v = [0.0f32; 4];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse::<f32>().map_err(|_| bad("bad coordinate"))?;
        }
        out.push(LabelBox::new(class_id, v[0], v[1], v[2], v[3]).map_err(|e| bad(&e.to_string()))?);
    }
    Ok(out)
}

pub fn read_label_file(path: &Path) -> Result<Vec<LabelBox>> {
    parse_labels(&fs::read_to_string(path)?)
}

pub fn format_labels(boxes: &[LabelBox]) -> String {
    boxes
        .iter()
        .map(|b| format!("{} {:.6} {:.6} {:.6} {:.6}\n", b.class_id, b.cx, b.cy, b.w, b.h))
        .collect()
}

/// Every `*.txt` file in `dir`, sorted by file name.
pub fn label_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    files.sort();
    Ok(files)
}

/// Reads every label file in a directory and returns all boxes.
pub fn read_labels_dir(dir: &Path) -> Result<Vec<LabelBox>> {
    let mut all = Vec::new();
    for f in label_files(dir)? {
        all.extend(read_label_file(&f)?);
    }
    Ok(all)
}
