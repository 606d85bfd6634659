//! Corpus manifests: CSV with header `path,split,label,speaker,gender,belt_path`.
//! Paths are relative to the manifest's directory so corpora stay
//! relocatable and regeneration is byte-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Devel,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Devel => "devel",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "devel" => Ok(Split::Devel),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskLabel {
    Clear,
    Mask,
}

impl MaskLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            MaskLabel::Clear => "clear",
            MaskLabel::Mask => "mask",
        }
    }

    /// Class index used across training and metrics: clear = 0, mask = 1.
    pub fn index(&self) -> usize {
        match self {
            MaskLabel::Clear => 0,
            MaskLabel::Mask => 1,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "clear" => Ok(MaskLabel::Clear),
            "mask" => Ok(MaskLabel::Mask),
            other => Err(Error::Validation(format!("unknown label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gender {
    F,
    M,
    Unknown,
}

impl Gender {
    pub fn as_str(&self) -> &'static str {
        match self {
            Gender::F => "f",
            Gender::M => "m",
            Gender::Unknown => "unknown",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            Gender::F => 0,
            Gender::M => 1,
            Gender::Unknown => 2,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f" => Ok(Gender::F),
            "m" => Ok(Gender::M),
            "unknown" => Ok(Gender::Unknown),
            other => Err(Error::Validation(format!("unknown gender `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Mask,
    Breath,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Mask => "mask",
            Task::Breath => "breath",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mask" => Ok(Task::Mask),
            "breath" => Ok(Task::Breath),
            other => Err(Error::Validation(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub path: String,
    pub split: Split,
    pub label: Option<MaskLabel>,
    pub speaker: String,
    pub gender: Gender,
    pub belt_path: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    records: Vec<ManifestRecord>,
    base_dir: PathBuf,
}

const HEADER: &str = "path,split,label,speaker,gender,belt_path";

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>, base_dir: impl Into<PathBuf>) -> Self {
        Manifest {
            records,
            base_dir: base_dir.into(),
        }
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    /// Absolute location of a path column value.
    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn split_records(&self, split: Split) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == HEADER => {}
            other => {
                return Err(Error::Validation(format!(
                    "manifest must start with `{HEADER}`, got {other:?}"
                )))
            }
        }
        let mut records = Vec::new();
        for (no, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::Validation(format!(
                    "manifest line {}: expected 6 fields, got {}",
                    no + 2,
                    fields.len()
                )));
            }
            let label = if fields[2].is_empty() {
                None
            } else {
                Some(MaskLabel::parse(fields[2])?)
            };
            let belt_path = if fields[5].is_empty() {
                None
            } else {
                Some(fields[5].to_string())
            };
            records.push(ManifestRecord {
                path: fields[0].to_string(),
                split: Split::parse(fields[1])?,
                label,
                speaker: fields[3].to_string(),
                gender: Gender::parse(fields[4])?,
                belt_path,
            });
        }
        let manifest = Manifest { records, base_dir };
        manifest.validate_structure()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from(HEADER);
        out.push('\n');
        for r in &self.records {
            for field in [r.path.as_str(), r.speaker.as_str()] {
                if field.contains(',') {
                    return Err(Error::Validation(format!(
                        "manifest field `{field}` must not contain commas"
                    )));
                }
            }
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.path,
                r.split.as_str(),
                r.label.map(|l| l.as_str()).unwrap_or(""),
                r.speaker,
                r.gender.as_str(),
                r.belt_path.as_deref().unwrap_or("")
            ));
        }
        std::fs::write(path, out).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Structural checks independent of the task: unique paths and
    /// speaker-disjoint splits.
    pub fn validate_structure(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert(r.path.as_str()) {
                return Err(Error::Validation(format!("duplicate clip path `{}`", r.path)));
            }
        }
        let mut speaker_split: BTreeMap<&str, Split> = BTreeMap::new();
        for r in &self.records {
            match speaker_split.get(r.speaker.as_str()) {
                None => {
                    speaker_split.insert(&r.speaker, r.split);
                }
                Some(&s) if s == r.split => {}
                Some(&s) => {
                    return Err(Error::Validation(format!(
                        "speaker `{}` appears in splits {} and {}",
                        r.speaker,
                        s.as_str(),
                        r.split.as_str()
                    )))
                }
            }
        }
        Ok(())
    }

    /// Task-specific checks: every split populated, labels or belt paths
    /// present where the task needs them.
    pub fn validate_for_task(&self, task: Task) -> Result<()> {
        self.validate_structure()?;
        for split in [Split::Train, Split::Devel, Split::Test] {
            if self.split_records(split).is_empty() {
                return Err(Error::Validation(format!(
                    "split `{}` is empty",
                    split.as_str()
                )));
            }
        }
        for r in &self.records {
            match task {
                Task::Mask => {
                    if r.label.is_none() {
                        return Err(Error::Validation(format!(
                            "clip `{}` misses the mask/clear label",
                            r.path
                        )));
                    }
                }
                Task::Breath => {
                    if r.belt_path.is_none() {
                        return Err(Error::Validation(format!(
                            "clip `{}` misses the belt-signal path",
                            r.path
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
