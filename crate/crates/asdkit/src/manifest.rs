//! Dataset manifests: which WAV belongs to which machine kind, SNR, label,
//! and split. One CSV format is shared by the synthetic generator and the
//! real-corpus scanner, so everything downstream is source-agnostic.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Ground-truth condition of a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    /// Numeric form used in score CSVs: normal = 0, anomalous = 1.
    pub fn as_int(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Anomalous => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomalous => "anomalous",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which side of the train/test partition a file belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One audio file with its metadata. `path` is relative to the manifest root.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub kind: String,
    pub snr_db: i32,
    pub label: Label,
    pub split: Split,
}

/// A labeled corpus: entries plus the directory they are relative to and the
/// seed that generated them (0 for scanned real corpora).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub generation_seed: u64,
}

impl DatasetManifest {
    /// Enforces the unsupervised-training invariant: no anomalous file may
    /// sit in the train split.
    pub fn new(root: PathBuf, entries: Vec<ManifestEntry>, generation_seed: u64) -> Result<Self> {
        if let Some(bad) = entries
            .iter()
            .find(|e| e.split == Split::Train && e.label == Label::Anomalous)
        {
            return Err(Error::BadManifest {
                path: root,
                line: 0,
                reason: format!("anomalous file {} in train split", bad.path.display()),
            });
        }
        Ok(Self { root, entries, generation_seed })
    }

    /// Absolute path of an entry.
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Machine kinds present, sorted and deduplicated.
    pub fn kinds(&self) -> Vec<String> {
        let mut kinds: Vec<String> = self.entries.iter().map(|e| e.kind.clone()).collect();
        kinds.sort();
        kinds.dedup();
        kinds
    }

    /// SNRs present, sorted and deduplicated.
    pub fn snrs_db(&self) -> Vec<i32> {
        let mut snrs: Vec<i32> = self.entries.iter().map(|e| e.snr_db).collect();
        snrs.sort_unstable();
        snrs.dedup();
        snrs
    }

    pub fn select(
        &self,
        kind: Option<&str>,
        snr_db: Option<i32>,
        split: Option<Split>,
    ) -> Vec<&ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| kind.is_none_or(|k| e.kind == k))
            .filter(|e| snr_db.is_none_or(|s| e.snr_db == s))
            .filter(|e| split.is_none_or(|s| e.split == s))
            .collect()
    }

    /// CSV form: a seed comment, a header, then `path,kind,snr_db,label,split`
    /// per entry. Paths are relative, so the bytes do not depend on where the
    /// dataset lives.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# generation_seed={}\n", self.generation_seed));
        out.push_str("path,kind,snr_db,label,split\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.path.display(),
                e.kind,
                e.snr_db,
                e.label.name(),
                e.split.name()
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parse a manifest CSV; the root becomes the CSV's parent directory.
    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let bad = |line: usize, reason: String| Error::BadManifest {
            path: path.to_path_buf(),
            line,
            reason,
        };

        let mut generation_seed = 0u64;
        let mut entries = Vec::new();
        let mut saw_header = false;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(value) = rest.trim().strip_prefix("generation_seed=") {
                    generation_seed = value
                        .parse()
                        .map_err(|_| bad(line_no, format!("bad seed '{value}'")))?;
                }
                continue;
            }
            if !saw_header {
                if line != "path,kind,snr_db,label,split" {
                    return Err(bad(line_no, format!("unexpected header '{line}'")));
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(bad(line_no, format!("expected 5 fields, got {}", fields.len())));
            }
            let label = match fields[3] {
                "normal" => Label::Normal,
                "anomalous" => Label::Anomalous,
                other => return Err(bad(line_no, format!("unknown label '{other}'"))),
            };
            let split = match fields[4] {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(bad(line_no, format!("unknown split '{other}'"))),
            };
            entries.push(ManifestEntry {
                path: PathBuf::from(fields[0]),
                kind: fields[1].to_string(),
                snr_db: fields[2]
                    .parse()
                    .map_err(|_| bad(line_no, format!("bad snr '{}'", fields[2])))?,
                label,
                split,
            });
        }
        if !saw_header {
            return Err(bad(0, "missing header".into()));
        }
        Self::new(root, entries, generation_seed)
    }
}
