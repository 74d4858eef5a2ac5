//! ROC-AUC and the repeated-trial experiment runner comparing detectors
//! across machine kinds and SNRs.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::audio::load_wav;
use crate::dsp::{extract_log_mel, FeatureParams, Spectrogram};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Label, Split};
use crate::model::{build_model, score_segment, train, ModelKind, ModelSpec, TrainConfig};
use crate::nn::AdamConfig;
use crate::seeding::derive_seed;
use crate::synth::{gen_mixed_clip, GenConfig};
use crate::windowing::{apply_norm, fit_norm_stats, make_windows, Regime, WindowSet};

/// One scored test segment.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub segment_id: String,
    pub label: Label,
    pub score: f64,
}

/// Probability that a uniformly random anomalous segment outscores a
/// uniformly random normal one, ties counted half (the rank / Mann-Whitney
/// formulation).
pub fn roc_auc(records: &[ScoreRecord]) -> Result<f64> {
    let positives = records.iter().filter(|r| r.label == Label::Anomalous).count();
    let negatives = records.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClassInput {
            normal: negatives,
            anomalous: positives,
        });
    }

    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[a]
            .score
            .partial_cmp(&records[b].score)
            .expect("scores must be finite")
    });

    // 1-based ranks, averaging over tied score groups.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && records[order[j + 1]].score == records[order[i]].score {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if records[idx].label == Label::Anomalous {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }

    let p = positives as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// Where the experiment's audio comes from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// A corpus on disk; trials revary weight init and shuffling only.
    Manifest(DatasetManifest),
    /// In-memory synthetic data, regenerated per trial with a trial seed.
    Synthetic(GenConfig),
}

/// Full description of one experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub models: Vec<ModelKind>,
    /// Machine kinds to include; empty means every kind in the source.
    pub kinds: Vec<String>,
    /// SNRs to include; empty means every SNR in the source.
    pub snrs_db: Vec<i32>,
    pub trials: usize,
    pub master_seed: u64,
    /// Frames per window.
    pub n: usize,
    pub features: FeatureParams,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Overrides every model's default KL weight when set.
    pub kl_weight: Option<f32>,
    /// Run independent (kind, snr, trial) cells on the rayon pool.
    pub parallel: bool,
    pub source: DataSource,
}

impl ExperimentConfig {
    pub fn new(source: DataSource) -> Self {
        Self {
            models: ModelKind::ALL.to_vec(),
            kinds: Vec::new(),
            snrs_db: Vec::new(),
            trials: 3,
            master_seed: 0,
            n: 5,
            features: FeatureParams::default(),
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            kl_weight: None,
            parallel: true,
            source,
        }
    }
}

/// Per-(model, kind, SNR) list of per-trial AUCs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentCell {
    pub model: ModelKind,
    pub kind: String,
    pub snr_db: i32,
    pub aucs: Vec<f64>,
}

impl ExperimentCell {
    pub fn mean(&self) -> f64 {
        self.aucs.iter().sum::<f64>() / self.aucs.len() as f64
    }

    /// Population standard deviation across trials.
    pub fn std(&self) -> f64 {
        let mean = self.mean();
        let var = self
            .aucs
            .iter()
            .map(|a| (a - mean).powi(2))
            .sum::<f64>()
            / self.aucs.len() as f64;
        var.max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub cells: Vec<ExperimentCell>,
    pub trials: usize,
}

impl ExperimentResult {
    pub fn cell(&self, model: ModelKind, kind: &str, snr_db: i32) -> Option<&ExperimentCell> {
        self.cells
            .iter()
            .find(|c| c.model == model && c.kind == kind && c.snr_db == snr_db)
    }

    /// One row per trial: model,machine,snr_db,trial,auc.
    pub fn trials_csv(&self) -> String {
        let mut out = String::from("model,machine,snr_db,trial,auc\n");
        for cell in &self.cells {
            for (trial, auc) in cell.aucs.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    cell.model.name(),
                    cell.kind,
                    cell.snr_db,
                    trial,
                    auc
                ));
            }
        }
        out
    }

    /// One row per cell: model,machine,snr_db,trials,mean_auc,std_auc.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("model,machine,snr_db,trials,mean_auc,std_auc\n");
        for cell in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                cell.model.name(),
                cell.kind,
                cell.snr_db,
                cell.aucs.len(),
                cell.mean(),
                cell.std()
            ));
        }
        out
    }
}

/// Audio of one (kind, snr) cell, featurized.
struct CellData {
    train: Vec<Spectrogram>,
    test: Vec<(String, Label, Spectrogram)>,
}

fn featurize_manifest_cell(
    manifest: &DatasetManifest,
    kind: &str,
    snr_db: i32,
    features: &FeatureParams,
) -> Result<CellData> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for entry in manifest.select(Some(kind), Some(snr_db), None) {
        let clip = load_wav(&manifest.resolve(entry))?;
        let spec = extract_log_mel(&clip, features)?;
        match entry.split {
            Split::Train => train.push(spec),
            Split::Test => test.push((entry.path.display().to_string(), entry.label, spec)),
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyCorpus(manifest.root.join(kind)));
    }
    Ok(CellData { train, test })
}

fn synthesize_cell(
    gen: &GenConfig,
    kind: &str,
    snr_db: i32,
    trial_seed: u64,
    features: &FeatureParams,
) -> Result<CellData> {
    let cfg = GenConfig {
        seed: trial_seed,
        ..gen.clone()
    };
    let mut train = Vec::new();
    for index in 0..cfg.train_count {
        let clip = gen_mixed_clip(kind, snr_db, Label::Normal, Split::Train, index, &cfg)?;
        train.push(extract_log_mel(&clip, features)?);
    }
    let mut test = Vec::new();
    for (label, count) in [(Label::Normal, cfg.test_normal), (Label::Anomalous, cfg.test_anomalous)]
    {
        for index in 0..count {
            let clip = gen_mixed_clip(kind, snr_db, label, Split::Test, index, &cfg)?;
            let id = format!("{kind}/{snr_db}dB/test/{}_{index:04}", label.name());
            test.push((id, label, extract_log_mel(&clip, features)?));
        }
    }
    Ok(CellData { train, test })
}

/// Concatenate the windows of all training spectrograms under one regime,
/// fit normalization stats, and standardize.
fn training_windows(train: &[Spectrogram], n: usize, regime: Regime) -> Result<WindowSet> {
    let mut combined: Option<WindowSet> = None;
    for spec in train {
        let ws = make_windows(spec, n, regime)?;
        match combined.as_mut() {
            Some(acc) => acc.append(&ws)?,
            None => combined = Some(ws),
        }
    }
    let combined = combined.ok_or(Error::EmptyWindowSet)?;
    let stats = fit_norm_stats(&combined)?;
    apply_norm(&combined, &stats)
}

/// Train (or, with zero epochs, merely normalize) one model and score the
/// cell's test segments.
fn run_model_on_cell(
    model_kind: ModelKind,
    data: &CellData,
    windows_by_regime: &HashMap<u8, WindowSet>,
    cfg: &ExperimentConfig,
    kind: &str,
    snr_db: i32,
    trial: usize,
) -> Result<f64> {
    let regime = model_kind.regime();
    let ws = &windows_by_regime[&regime.code()];
    let spec = ModelSpec::new(model_kind, cfg.n, cfg.features.n_mels);
    let snr_tag = snr_db.to_string();
    let trial_tag = trial.to_string();
    let init_seed = derive_seed(
        cfg.master_seed,
        &[model_kind.name(), kind, &snr_tag, &trial_tag, "init"],
    );
    let train_seed = derive_seed(
        cfg.master_seed,
        &[model_kind.name(), kind, &snr_tag, &trial_tag, "train"],
    );
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        adam: AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        kl_weight: cfg.kl_weight.unwrap_or_else(|| model_kind.default_kl_weight()),
        seed: train_seed,
    };
    let model = train(build_model(&spec, init_seed)?, ws, &train_cfg)?;

    let mut records = Vec::with_capacity(data.test.len());
    for (id, label, spec) in &data.test {
        records.push(ScoreRecord {
            segment_id: id.clone(),
            label: *label,
            score: score_segment(&model, spec)?,
        });
    }
    roc_auc(&records)
}

/// Run the full grid: for each (kind, SNR, trial), prepare that cell's data
/// once and evaluate every requested model on it. Returns cells ordered by
/// model, then kind, then SNR, with AUCs in trial order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    assert!(cfg.trials >= 1, "trial count must be at least 1");
    let (kinds, snrs) = match &cfg.source {
        DataSource::Manifest(manifest) => (
            if cfg.kinds.is_empty() { manifest.kinds() } else { cfg.kinds.clone() },
            if cfg.snrs_db.is_empty() { manifest.snrs_db() } else { cfg.snrs_db.clone() },
        ),
        DataSource::Synthetic(gen) => (
            if cfg.kinds.is_empty() { gen.kinds.clone() } else { cfg.kinds.clone() },
            if cfg.snrs_db.is_empty() { gen.snrs_db.clone() } else { cfg.snrs_db.clone() },
        ),
    };

    // Featurize manifest data once per (kind, snr); trials share it.
    let mut manifest_data: HashMap<(String, i32), CellData> = HashMap::new();
    if let DataSource::Manifest(manifest) = &cfg.source {
        for kind in &kinds {
            for &snr_db in &snrs {
                manifest_data.insert(
                    (kind.clone(), snr_db),
                    featurize_manifest_cell(manifest, kind, snr_db, &cfg.features)?,
                );
            }
        }
    }

    let regimes: Vec<Regime> = {
        let mut seen = Vec::new();
        for m in &cfg.models {
            if !seen.contains(&m.regime()) {
                seen.push(m.regime());
            }
        }
        seen
    };

    let mut work: Vec<(String, i32, usize)> = Vec::new();
    for kind in &kinds {
        for &snr_db in &snrs {
            for trial in 0..cfg.trials {
                work.push((kind.clone(), snr_db, trial));
            }
        }
    }

    let run_one = |(kind, snr_db, trial): &(String, i32, usize)| -> Result<Vec<f64>> {
        let synthetic;
        let data = match &cfg.source {
            DataSource::Manifest(_) => &manifest_data[&(kind.clone(), *snr_db)],
            DataSource::Synthetic(gen) => {
                let trial_seed =
                    derive_seed(cfg.master_seed, &["data", &trial.to_string()]);
                synthetic = synthesize_cell(gen, kind, *snr_db, trial_seed, &cfg.features)?;
                &synthetic
            }
        };
        let mut windows_by_regime = HashMap::new();
        for &regime in &regimes {
            windows_by_regime.insert(
                regime.code(),
                training_windows(&data.train, cfg.n, regime)?,
            );
        }
        cfg.models
            .iter()
            .map(|&m| run_model_on_cell(m, data, &windows_by_regime, cfg, kind, *snr_db, *trial))
            .collect()
    };

    let per_work: Vec<Result<Vec<f64>>> = if cfg.parallel {
        work.par_iter().map(run_one).collect()
    } else {
        work.iter().map(run_one).collect()
    };

    // Surface the first failure with its cell coordinates.
    let mut per_work_ok = Vec::with_capacity(per_work.len());
    for (result, (kind, snr_db, trial)) in per_work.into_iter().zip(&work) {
        match result {
            Ok(aucs) => per_work_ok.push(aucs),
            Err(e) => {
                return Err(Error::ExperimentCell {
                    kind: kind.clone(),
                    snr_db: *snr_db,
                    trial: *trial,
                    source: Box::new(e),
                })
            }
        }
    }

    // Regroup into (model, kind, snr) cells with trial-ordered AUCs.
    let mut cells = Vec::new();
    for (m_idx, &model) in cfg.models.iter().enumerate() {
        for kind in &kinds {
            for &snr_db in &snrs {
                let mut aucs = Vec::with_capacity(cfg.trials);
                for (w_idx, (w_kind, w_snr, _)) in work.iter().enumerate() {
                    if w_kind == kind && *w_snr == snr_db {
                        aucs.push(per_work_ok[w_idx][m_idx]);
                    }
                }
                cells.push(ExperimentCell {
                    model,
                    kind: kind.clone(),
                    snr_db,
                    aucs,
                });
            }
        }
    }
    Ok(ExperimentResult {
        cells,
        trials: cfg.trials,
    })
}
