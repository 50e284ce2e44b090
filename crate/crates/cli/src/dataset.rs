//! On-disk dataset: `<root>/<split>/<class>/<index>.pgm` plus
//! `<root>/manifest.jsonl`, one record per image, train split first.

use std::fmt::Write as _;
use std::path::Path;

use ciatr_core::{read_pgm, write_pgm, ImagingCondition, LabeledImage, Split};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Relative to the dataset root, with `/` separators.
    pub path: String,
    pub label: usize,
    pub azimuth_deg: f64,
    pub background_level: f64,
    pub speckle_scale: f64,
    pub bucket: usize,
}

impl ManifestRecord {
    fn split(&self) -> Option<Split> {
        match self.path.split('/').next() {
            Some("train") => Some(Split::Train),
            Some("test") => Some(Split::Test),
            _ => None,
        }
    }
}

/// Writes both splits and the manifest. Returns the manifest text.
pub fn write_dataset(root: &Path, train: &[LabeledImage], test: &[LabeledImage]) -> Result<String, CliError> {
    let mut manifest = String::new();
    for (split, items) in [(Split::Train, train), (Split::Test, test)] {
        let mut next_index = Vec::new();
        for x in items {
            if next_index.len() <= x.label {
                next_index.resize(x.label + 1, 0usize);
            }
            let index = next_index[x.label];
            next_index[x.label] += 1;
            let rel = format!("{}/{}/{}.pgm", split.name(), x.label, index);
            let file = root.join(&rel);
            std::fs::create_dir_all(file.parent().expect("file has a parent"))?;
            write_pgm(&x.image, &file)?;
            let record = ManifestRecord {
                path: rel,
                label: x.label,
                azimuth_deg: x.ic.azimuth_deg,
                background_level: x.ic.background_level,
                speckle_scale: x.ic.speckle_scale,
                bucket: x.bucket,
            };
            writeln!(manifest, "{}", serde_json::to_string(&record).expect("record serializes")).expect("string write");
        }
    }
    std::fs::write(root.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Reads one split back, in manifest order.
pub fn read_split(root: &Path, split: Split) -> Result<Vec<LabeledImage>, CliError> {
    let manifest_path = root.join(MANIFEST);
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", manifest_path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(line)
            .map_err(|e| CliError::Io(format!("{}:{}: {e}", manifest_path.display(), lineno + 1)))?;
        if record.split() != Some(split) {
            continue;
        }
        let image = read_pgm(&root.join(&record.path))?;
        let ic = ImagingCondition::new(record.azimuth_deg, record.background_level, record.speckle_scale)
            .map_err(|e| CliError::Io(format!("{}:{}: {e}", manifest_path.display(), lineno + 1)))?;
        out.push(LabeledImage {
            image,
            label: record.label,
            ic,
            bucket: record.bucket,
        });
    }
    if out.is_empty() {
        return Err(CliError::Io(format!("no {} images listed in {}", split.name(), manifest_path.display())));
    }
    Ok(out)
}
