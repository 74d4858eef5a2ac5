//! Scanner for user-supplied machine-sound corpora arranged as
//! `<snr>/<machine-type>/<machine-id>/{normal,abnormal}/*.wav`, producing the
//! same manifest shape as the synthetic generator so real-data runs reuse the
//! whole pipeline.

use std::path::{Path, PathBuf};

use crate::audio::probe_wav;
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Label, ManifestEntry, Split};
use crate::seeding::derive_seed;

/// How discovered files are assigned to splits and validated.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanOptions {
    /// Percentage of normal files assigned to the train split by a
    /// deterministic hash of the root-relative file path. Abnormal files
    /// always land in the test split.
    pub train_percent: u8,
    /// When set, every file's header sample rate must match.
    pub expected_sample_rate: Option<u32>,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            train_percent: 80,
            expected_sample_rate: Some(16000),
        }
    }
}

/// Parse an SNR directory name such as `0dB`, `-6_dB`, or `6db`.
fn parse_snr_dir(name: &str) -> Option<i32> {
    let lower = name.to_ascii_lowercase();
    let stripped = lower.strip_suffix("db")?;
    let stripped = stripped.strip_suffix('_').unwrap_or(stripped);
    stripped.parse().ok()
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut children: Vec<PathBuf> = std::fs::read_dir(path)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .collect();
    children.sort();
    Ok(children)
}

/// Scan a corpus tree into a manifest.
///
/// Machine kind becomes `<machine-type>_<machine-id>`. The manifest is a pure
/// function of the directory contents and the options: entries are ordered
/// lexicographically by relative path, and the train/test assignment of a
/// normal file depends only on the hash of its relative path.
pub fn scan_corpus(root: &Path, options: &ScanOptions) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::FileNotFound(root.to_path_buf()));
    }
    let mut entries = Vec::new();

    for snr_dir in sorted_dir(root)? {
        if !snr_dir.is_dir() {
            continue;
        }
        let snr_name = snr_dir.file_name().unwrap().to_string_lossy().to_string();
        let snr_db = parse_snr_dir(&snr_name)
            .ok_or_else(|| Error::UnrecognizedLayout(snr_dir.clone()))?;

        for type_dir in sorted_dir(&snr_dir)? {
            if !type_dir.is_dir() {
                return Err(Error::UnrecognizedLayout(type_dir));
            }
            let type_name = type_dir.file_name().unwrap().to_string_lossy().to_string();

            for id_dir in sorted_dir(&type_dir)? {
                if !id_dir.is_dir() {
                    return Err(Error::UnrecognizedLayout(id_dir));
                }
                let id_name = id_dir.file_name().unwrap().to_string_lossy().to_string();
                let kind = format!("{type_name}_{id_name}");

                for label_dir in sorted_dir(&id_dir)? {
                    if !label_dir.is_dir() {
                        return Err(Error::UnrecognizedLayout(label_dir));
                    }
                    let label = match label_dir.file_name().unwrap().to_string_lossy().as_ref() {
                        "normal" => Label::Normal,
                        "abnormal" => Label::Anomalous,
                        _ => return Err(Error::UnrecognizedLayout(label_dir)),
                    };

                    for file in sorted_dir(&label_dir)? {
                        if file.extension().and_then(|e| e.to_str()) != Some("wav") {
                            continue;
                        }
                        let sample_rate = probe_wav(&file)?;
                        if let Some(expected) = options.expected_sample_rate {
                            if sample_rate != expected {
                                return Err(Error::ClipMismatch(format!(
                                    "{}: sample rate {sample_rate}, corpus expects {expected}",
                                    file.display()
                                )));
                            }
                        }
                        let rel = file.strip_prefix(root).unwrap().to_path_buf();
                        let split = match label {
                            Label::Anomalous => Split::Test,
                            Label::Normal => {
                                let rel_str = rel.to_string_lossy();
                                let bucket = derive_seed(0, &[&rel_str]) % 100;
                                if (bucket as u8) < options.train_percent {
                                    Split::Train
                                } else {
                                    Split::Test
                                }
                            }
                        };
                        entries.push(ManifestEntry {
                            path: rel,
                            kind: kind.clone(),
                            snr_db,
                            label,
                            split,
                        });
                    }
                }
            }
        }
    }

    if entries.is_empty() {
        return Err(Error::EmptyCorpus(root.to_path_buf()));
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    DatasetManifest::new(root.to_path_buf(), entries, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{write_wav, AudioClip};
    use tempfile::tempdir;

    fn touch_wav(path: &Path, sample_rate: u32) {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        let clip = AudioClip::new(vec![0.01; 64], sample_rate).unwrap();
        write_wav(path, &clip).unwrap();
    }

    fn build_tree(root: &Path) {
        for name in ["a.wav", "b.wav", "c.wav"] {
            touch_wav(&root.join("0_dB/valve/id_00/normal").join(name), 16000);
        }
        for name in ["x.wav", "y.wav"] {
            touch_wav(&root.join("0_dB/valve/id_00/abnormal").join(name), 16000);
        }
    }

    #[test]
    fn five_files_scan_with_abnormal_in_test() {
        let dir = tempdir().unwrap();
        build_tree(dir.path());
        let manifest = scan_corpus(dir.path(), &ScanOptions::default()).unwrap();
        assert_eq!(manifest.entries.len(), 5);
        for e in &manifest.entries {
            assert_eq!(e.kind, "valve_id_00");
            assert_eq!(e.snr_db, 0);
            if e.label == Label::Anomalous {
                assert_eq!(e.split, Split::Test);
            }
        }
        let normals = manifest
            .entries
            .iter()
            .filter(|e| e.label == Label::Normal)
            .count();
        assert_eq!(normals, 3);
    }

    #[test]
    fn rescan_is_identical_and_ordered() {
        let dir = tempdir().unwrap();
        build_tree(dir.path());
        let a = scan_corpus(dir.path(), &ScanOptions::default()).unwrap();
        let b = scan_corpus(dir.path(), &ScanOptions::default()).unwrap();
        assert_eq!(a, b);
        let mut sorted = a.entries.clone();
        sorted.sort_by(|x, y| x.path.cmp(&y.path));
        assert_eq!(a.entries, sorted);
    }

    #[test]
    fn snr_directory_variants_parse() {
        assert_eq!(parse_snr_dir("0dB"), Some(0));
        assert_eq!(parse_snr_dir("-6_dB"), Some(-6));
        assert_eq!(parse_snr_dir("6db"), Some(6));
        assert_eq!(parse_snr_dir("noise"), None);
    }

    #[test]
    fn wrong_sample_rate_is_rejected() {
        let dir = tempdir().unwrap();
        touch_wav(&dir.path().join("0_dB/fan/id_02/normal/a.wav"), 8000);
        let err = scan_corpus(dir.path(), &ScanOptions::default()).unwrap_err();
        assert!(matches!(err, Error::ClipMismatch(_)));
        let relaxed = ScanOptions {
            expected_sample_rate: None,
            ..ScanOptions::default()
        };
        assert!(scan_corpus(dir.path(), &relaxed).is_ok());
    }

    #[test]
    fn stray_layout_is_rejected() {
        let dir = tempdir().unwrap();
        touch_wav(&dir.path().join("0_dB/fan/id_02/sideways/a.wav"), 16000);
        assert!(matches!(
            scan_corpus(dir.path(), &ScanOptions::default()),
            Err(Error::UnrecognizedLayout(_))
        ));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let dir = tempdir().unwrap();
        assert!(matches!(
            scan_corpus(dir.path(), &ScanOptions::default()),
            Err(Error::EmptyCorpus(_))
        ));
    }

    #[test]
    fn split_fractions_follow_the_rule() {
        let dir = tempdir().unwrap();
        for i in 0..200 {
            touch_wav(
                &dir.path()
                    .join(format!("6_dB/pump/id_00/normal/{i:05}.wav")),
                16000,
            );
        }
        let manifest = scan_corpus(
            dir.path(),
            &ScanOptions {
                train_percent: 80,
                expected_sample_rate: Some(16000),
            },
        )
        .unwrap();
        let train = manifest
            .entries
            .iter()
            .filter(|e| e.split == Split::Train)
            .count();
        // Hash-based 80/20: allow a generous band around the expectation.
        assert!((120..=190).contains(&train), "train count {train}");
    }
}
