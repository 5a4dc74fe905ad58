//! Loading the `<Person>/<ClassFolder>/*.ppm` dataset layout.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use crate::data::class::OcclusionClass;
use crate::data::ppm::decode_resize;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_IMAGE_SIZE: usize = 224;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// `[size, size, 3]`, values in `[0, 1]`.
    pub pixels: Tensor,
    pub occlusion: OcclusionClass,
    pub person: String,
    pub source: PathBuf,
}

impl LabeledImage {
    pub fn validate(&self, size: usize) -> Result<()> {
        if self.pixels.shape() != [size, size, 3] {
            return Err(Error::shape("labeled image", self.pixels.shape(), &[size, size, 3]));
        }
        if !self.pixels.data().iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!("{}: pixel outside [0, 1]", self.source.display())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// Lexicographic by path.
    pub images: Vec<LabeledImage>,
    pub counts: BTreeMap<(String, OcclusionClass), usize>,
    /// Files that could not be read or decoded.
    pub skipped: Vec<PathBuf>,
}

impl Dataset {
    pub fn persons(&self) -> Vec<&str> {
        let mut p: Vec<&str> = self.images.iter().map(|i| i.person.as_str()).collect();
        p.dedup();
        p
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn is_ppm(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"))
}

/// Reads every `<root>/<Person>/<ClassFolder>/*.ppm`, resized to
/// `size × size`. Unknown class folders are an error; unreadable images are
/// skipped with a warning.
pub fn load_dataset(root: &Path, size: usize) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut counts = BTreeMap::new();
    let mut skipped = Vec::new();
    for person_dir in sorted_entries(root)? {
        if !person_dir.is_dir() {
            continue;
        }
        let person = person_dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::InvalidArgument(format!("{}: person name is not UTF-8", person_dir.display())))?
            .to_string();
        for class_dir in sorted_entries(&person_dir)? {
            if !class_dir.is_dir() {
                continue;
            }
            let folder = class_dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let occlusion = OcclusionClass::from_folder(folder).ok_or_else(|| Error::UnknownClass(folder.to_string()))?;
            let entry = counts.entry((person.clone(), occlusion)).or_insert(0usize);
            for file in sorted_entries(&class_dir)?.into_iter().filter(|p| is_ppm(p)) {
                let decoded = fs::read(&file)
                    .map_err(|e| Error::io(&file, e))
                    .and_then(|bytes| decode_resize(&bytes, size));
                match decoded {
                    Ok(pixels) => {
                        images.push(LabeledImage {
                            pixels,
                            occlusion,
                            person: person.clone(),
                            source: file,
                        });
                        *entry += 1;
                    }
                    Err(e) => {
                        warn!("skipping {}: {e}", file.display());
                        skipped.push(file);
                    }
                }
            }
        }
    }
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Dataset { images, counts, skipped })
}

/// Collects `*.ppm` files directly under `dir`, sorted.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(sorted_entries(dir)?.into_iter().filter(|p| p.is_file() && is_ppm(p)).collect())
}
