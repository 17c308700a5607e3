//! Paired `low/` + `high/` directory datasets.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{Error, Result};
use crate::image::{load_image, Image};

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub low: Image,
    pub high: Image,
}

impl ImagePair {
    pub fn new(low: Image, high: Image) -> Result<Self> {
        crate::error::ensure!(
            low.width == high.width && low.height == high.height,
            "pair sizes differ: {}x{} vs {}x{}",
            low.width,
            low.height,
            high.width,
            high.height
        );
        Ok(Self { low, high })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub name: String,
    pub low: PathBuf,
    pub high: PathBuf,
}

#[derive(Clone, Debug)]
pub struct PairedDataset {
    pub root: PathBuf,
    pub entries: Vec<DatasetEntry>,
    /// Files present on only one side.
    pub unmatched: Vec<PathBuf>,
}

fn list_files(dir: &Path) -> Result<Vec<String>> {
    if !dir.is_dir() {
        return Err(Error::NotFound(dir.to_path_buf()));
    }
    let mut names = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// Match files by identical name under `root/low` and `root/high`, sorted
/// lexicographically.
pub fn scan_dataset(root: &Path) -> Result<PairedDataset> {
    let (low_dir, high_dir) = (root.join("low"), root.join("high"));
    let low = list_files(&low_dir)?;
    let high = list_files(&high_dir)?;
    let mut entries = Vec::new();
    let mut unmatched = Vec::new();
    for name in &low {
        if high.binary_search(name).is_ok() {
            entries.push(DatasetEntry {
                name: name.clone(),
                low: low_dir.join(name),
                high: high_dir.join(name),
            });
        } else {
            unmatched.push(low_dir.join(name));
        }
    }
    for name in &high {
        if low.binary_search(name).is_err() {
            unmatched.push(high_dir.join(name));
        }
    }
    for path in &unmatched {
        warn!("no partner for {}", path.display());
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no matched pairs under {}",
            root.display()
        )));
    }
    Ok(PairedDataset {
        root: root.to_path_buf(),
        entries,
        unmatched,
    })
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load_pair(&self, i: usize) -> Result<ImagePair> {
        let e = &self.entries[i];
        let low = load_image(&e.low)?;
        let high = load_image(&e.high)?;
        ImagePair::new(low, high).map_err(|err| {
            Error::Contract(format!("{}: {err}", e.name))
        })
    }

    pub fn load_all(&self) -> Result<Vec<ImagePair>> {
        (0..self.len()).map(|i| self.load_pair(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::save_image;

    #[test]
    fn matching_and_order() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("low")).unwrap();
        fs::create_dir(dir.path().join("high")).unwrap();
        let img = Image::filled(2, 2, 0.5);
        for name in ["c.ppm", "a.ppm", "b.ppm", "only_low.ppm"] {
            save_image(&img, &dir.path().join("low").join(name)).unwrap();
        }
        for name in ["b.ppm", "c.ppm", "a.ppm"] {
            save_image(&img, &dir.path().join("high").join(name)).unwrap();
        }
        let ds = scan_dataset(dir.path()).unwrap();
        let names: Vec<_> = ds.entries.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["a.ppm", "b.ppm", "c.ppm"]);
        assert_eq!(ds.unmatched.len(), 1);
        assert_eq!(ds.load_all().unwrap().len(), 3);
    }

    #[test]
    fn empty_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(scan_dataset(dir.path()), Err(Error::NotFound(_))));
        fs::create_dir(dir.path().join("low")).unwrap();
        fs::create_dir(dir.path().join("high")).unwrap();
        assert!(matches!(scan_dataset(dir.path()), Err(Error::EmptyDataset(_))));
    }
}
