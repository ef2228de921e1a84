use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CLASS_NAMES;

pub const IMAGE_EXTENSIONS: [&str; 3] = ["jpeg", "jpg", "png"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Parameter(format!("unknown split {s:?}; expected train, val or test"))),
        }
    }
}

/// Files of one split, per class in manifest class order. Paths are
/// relative to the dataset root.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFiles {
    pub files: Vec<Vec<PathBuf>>,
}

impl SplitFiles {
    pub fn counts(&self) -> Vec<usize> {
        self.files.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.files.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(relative path, class index)` in class-major order. Source indices
    /// of batches index into this list.
    pub fn items(&self) -> Vec<(&Path, usize)> {
        self.files.iter().enumerate().flat_map(|(c, files)| files.iter().map(move |f| (f.as_path(), c))).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub classes: Vec<String>,
    /// Indexed by [`Split::index`].
    pub splits: [SplitFiles; 3],
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> &SplitFiles {
        &self.splits[split.index()]
    }

    pub fn counts(&self, split: Split) -> Vec<usize> {
        self.split(split).counts()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Every file of a class across all splits, sorted.
    pub fn class_files(&self, class: usize) -> Vec<PathBuf> {
        let mut all: Vec<PathBuf> = self.splits.iter().flat_map(|s| s.files[class].iter().cloned()).collect();
        all.sort();
        all
    }

    pub fn total(&self) -> usize {
        self.splits.iter().map(SplitFiles::len).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn subdirs(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
        if entry.path().is_dir() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}

/// Resolves the class list from the folder names found in all splits.
/// Names from the standard set keep the standard order; any other set of
/// names is accepted only if there are exactly four, in sorted order.
fn resolve_classes(found: &BTreeSet<String>) -> Result<Vec<String>> {
    if found.iter().all(|n| CLASS_NAMES.contains(&n.as_str())) {
        return Ok(CLASS_NAMES.iter().map(|s| s.to_string()).collect());
    }
    if found.len() == CLASS_NAMES.len() {
        return Ok(found.iter().cloned().collect());
    }
    let unknown: Vec<&str> = found.iter().map(String::as_str).filter(|n| !CLASS_NAMES.contains(n)).collect();
    Err(Error::Dataset(format!(
        "unknown class folder(s) {unknown:?}; expected {CLASS_NAMES:?} or exactly four classes, found {}",
        found.len()
    )))
}

/// Scans `<root>/{train,val,test}/<class>/` into a manifest with sorted
/// file lists.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = root.as_ref();
    for split in Split::ALL {
        let dir = root.join(split.dir_name());
        if !dir.is_dir() {
            return Err(Error::MissingSplit(dir));
        }
    }
    let mut found = BTreeSet::new();
    for split in Split::ALL {
        found.extend(subdirs(&root.join(split.dir_name()))?);
    }
    let classes = resolve_classes(&found)?;

    let mut warnings = Vec::new();
    let mut splits: [SplitFiles; 3] = Default::default();
    for split in Split::ALL {
        let mut per_class = Vec::with_capacity(classes.len());
        for class in &classes {
            let rel = Path::new(split.dir_name()).join(class);
            let dir = root.join(&rel);
            let mut files = Vec::new();
            if dir.is_dir() {
                let entries = fs::read_dir(&dir).map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
                for entry in entries {
                    let entry = entry.map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
                    let path = entry.path();
                    if path.is_file() && is_image(&path) {
                        files.push(rel.join(entry.file_name()));
                    }
                }
            }
            files.sort();
            if files.is_empty() {
                warnings.push(format!("{split}/{class}: no images"));
            }
            per_class.push(files);
        }
        splits[split.index()] = SplitFiles { files: per_class };
    }
    Ok(DatasetManifest { root: root.to_path_buf(), classes, splits, warnings })
}
