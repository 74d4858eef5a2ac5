//! Command-line interface: dataset synthesis, training, scoring, evaluation,
//! and gradient checking.
//!
//! Option precedence is flags, then a line-oriented `key=value` config file
//! passed with `--config`, then built-in defaults (frame 1024, hop 512, 64
//! Mel bins, 5-frame windows). The environment variable `ASDKIT_DATA_ROOT`
//! supplies a default dataset location when neither `--manifest` nor
//! `--corpus` is given.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{extract_log_mel, FeatureParams};
use crate::error::{Error, Result};
use crate::eval::{run_experiment, DataSource, ExperimentConfig, ScoreRecord};
use crate::manifest::{DatasetManifest, Split};
use crate::mimii::{scan_corpus, ScanOptions};
use crate::model::{
    build_model, load_checkpoint_file, save_checkpoint_file, score_segment, train, window_errors,
    ModelKind, ModelSpec, TrainConfig,
};
use crate::nn::{
    grad_check_tampered, relu_margin, Activation, AdamConfig, CheckLoss, DenseLayer, DenseNetwork,
    VariationalHead,
};
use crate::synth::{make_dataset, GenConfig};
use crate::windowing::{apply_norm, fit_norm_stats, make_windows, WindowSet};

pub const DATA_ROOT_ENV: &str = "ASDKIT_DATA_ROOT";
const GRADCHECK_THRESHOLD: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "asdkit",
    version,
    about = "Unsupervised anomalous machine-sound detection with windowed dense networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic machine-sound corpus
    Synth(SynthArgs),
    /// Train one detector on the normal train split
    Train(TrainArgs),
    /// Score test segments with a trained checkpoint
    Score(ScoreArgs),
    /// Run the repeated-trial model comparison and write AUC tables
    Eval(EvalArgs),
    /// Verify analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory; must not exist or be empty. Defaults to $ASDKIT_DATA_ROOT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value config file (same keys as the flags)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated machine kinds
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<String>>,
    /// Comma-separated SNRs in dB
    #[arg(long, value_delimiter = ',')]
    snrs: Option<Vec<i32>>,
    #[arg(long)]
    train_count: Option<usize>,
    #[arg(long)]
    test_normal: Option<usize>,
    #[arg(long)]
    test_anomalous: Option<usize>,
    /// Clip length in seconds
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args)]
struct DataArgs {
    /// Manifest CSV of an existing dataset
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Root of a corpus tree laid out as <snr>/<type>/<id>/{normal,abnormal}
    #[arg(long, conflicts_with = "manifest")]
    corpus: Option<PathBuf>,
}

#[derive(Args)]
struct FeatureArgs {
    /// Frames per window
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    frame_size: Option<usize>,
    #[arg(long)]
    hop_size: Option<usize>,
    #[arg(long)]
    n_mels: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// ae | vae | idnn | vidnn | pdnn | vpdnn
    #[arg(long)]
    model: String,
    /// Restrict training data to one machine kind
    #[arg(long)]
    kind: Option<String>,
    /// Restrict training data to one SNR
    #[arg(long)]
    snr: Option<i32>,
    /// Checkpoint output path
    #[arg(long)]
    out: PathBuf,
    /// Loss history CSV (default: <out>.loss.csv)
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[command(flatten)]
    features: FeatureArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// KL weight for variational models (default 0.1 for vae, 0.01 for vidnn/vpdnn)
    #[arg(long)]
    kl_weight: Option<f32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Scores CSV output path
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    snr: Option<i32>,
    /// Which split to score: test, train, or all
    #[arg(long, default_value = "test")]
    split: String,
    /// Also dump the per-window, per-Mel squared-error matrix of this segment
    /// (identified by its manifest path), one window per row
    #[arg(long, requires = "dump_out")]
    dump_errors: Option<String>,
    #[arg(long, requires = "dump_errors")]
    dump_out: Option<PathBuf>,
    #[command(flatten)]
    features: FeatureArgs,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Directory for trials.csv and summary.csv
    #[arg(long)]
    out_dir: PathBuf,
    /// Comma-separated subset of ae,vae,idnn,vidnn,pdnn,vpdnn
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    snrs: Option<Vec<i32>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    features: FeatureArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Override every model's default KL weight
    #[arg(long)]
    kl_weight: Option<f32>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Negative-control hook: corrupt one analytic gradient and expect failure
    #[arg(long, hide = true)]
    corrupt: bool,
}

/// Parse argv, run the selected command, and return the process exit code.
/// Any output files of a failed command are removed.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let mut outputs: Vec<PathBuf> = Vec::new();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args, &mut outputs),
        Command::Score(args) => cmd_score(args, &mut outputs),
        Command::Eval(args) => cmd_eval(args, &mut outputs),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            for path in outputs {
                let _ = std::fs::remove_file(path);
            }
            eprintln!("error: {e}");
            1
        }
    }
}

// ---------------------------------------------------------------------------
// Config file support
// ---------------------------------------------------------------------------

/// Line-oriented `key=value` pairs; `#` starts a comment.
struct KeyValues {
    path: PathBuf,
    values: HashMap<String, String>,
}

impl KeyValues {
    fn empty() -> Self {
        Self {
            path: PathBuf::new(),
            values: HashMap::new(),
        }
    }

    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::empty());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::BadConfig {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut values = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::BadConfig {
                path: path.to_path_buf(),
                reason: format!("line {}: expected key=value, got '{line}'", i + 1),
            })?;
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self {
            path: path.to_path_buf(),
            values,
        })
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| Error::BadConfig {
                path: self.path.clone(),
                reason: format!("key '{key}': cannot parse '{raw}'"),
            }),
        }
    }

    /// List values split on commas or semicolons.
    fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .split([',', ';'])
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.trim().parse().map_err(|_| Error::BadConfig {
                        path: self.path.clone(),
                        reason: format!("key '{key}': cannot parse '{s}'"),
                    })
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }
}

fn pick<T: FromStr>(flag: Option<T>, kv: &KeyValues, key: &str, default: T) -> Result<T> {
    Ok(flag.or(kv.get(key)?).unwrap_or(default))
}

fn feature_params(args: &FeatureArgs, kv: &KeyValues) -> Result<(usize, FeatureParams)> {
    let defaults = FeatureParams::default();
    let n = pick(args.n, kv, "n", 5)?;
    let params = FeatureParams {
        frame_size: pick(args.frame_size, kv, "frame_size", defaults.frame_size)?,
        hop_size: pick(args.hop_size, kv, "hop_size", defaults.hop_size)?,
        n_mels: pick(args.n_mels, kv, "n_mels", defaults.n_mels)?,
        ..defaults
    };
    Ok((n, params))
}

fn data_root_from_env() -> Option<PathBuf> {
    std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from)
}

/// Load the dataset from --manifest, --corpus, or the environment default.
fn resolve_manifest(data: &DataArgs) -> Result<DatasetManifest> {
    if let Some(path) = &data.manifest {
        return DatasetManifest::read_csv(path);
    }
    if let Some(root) = &data.corpus {
        return scan_corpus(root, &ScanOptions::default());
    }
    if let Some(root) = data_root_from_env() {
        return DatasetManifest::read_csv(&root.join("manifest.csv"));
    }
    Err(Error::BadConfig {
        path: PathBuf::new(),
        reason: format!("no dataset: pass --manifest or --corpus, or set {DATA_ROOT_ENV}"),
    })
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_synth(args: SynthArgs) -> Result<i32> {
    let kv = KeyValues::load(args.config.as_deref())?;
    let defaults = GenConfig::default();
    let cfg = GenConfig {
        kinds: args
            .kinds
            .or(kv.get_list("kinds")?)
            .unwrap_or(defaults.kinds),
        snrs_db: args.snrs.or(kv.get_list("snrs")?).unwrap_or(defaults.snrs_db),
        train_count: pick(args.train_count, &kv, "train_count", defaults.train_count)?,
        test_normal: pick(args.test_normal, &kv, "test_normal", defaults.test_normal)?,
        test_anomalous: pick(
            args.test_anomalous,
            &kv,
            "test_anomalous",
            defaults.test_anomalous,
        )?,
        duration_s: pick(args.duration, &kv, "duration", defaults.duration_s)?,
        sample_rate: defaults.sample_rate,
        seed: pick(args.seed, &kv, "seed", defaults.seed)?,
    };

    let out = args
        .out
        .or_else(data_root_from_env)
        .ok_or_else(|| Error::BadConfig {
            path: PathBuf::new(),
            reason: format!("no output directory: pass --out or set {DATA_ROOT_ENV}"),
        })?;
    if out.exists() {
        let occupied = out.is_file() || std::fs::read_dir(&out)?.next().is_some();
        if occupied {
            return Err(Error::BadConfig {
                path: out,
                reason: "output directory exists and is not empty".into(),
            });
        }
    }

    // Build in a scratch directory, then move into place: a failed run leaves
    // nothing behind.
    let parent = out.parent().unwrap_or(Path::new("."));
    if !parent.as_os_str().is_empty() {
        std::fs::create_dir_all(parent)?;
    }
    let scratch = parent.join(format!(
        ".{}.partial",
        out.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
    ));
    if scratch.exists() {
        std::fs::remove_dir_all(&scratch)?;
    }
    let built = make_dataset(&cfg, &scratch);
    match built {
        Ok(_) => {
            if out.exists() {
                std::fs::remove_dir(&out)?;
            }
            std::fs::rename(&scratch, &out)?;
            println!("{}", out.join("manifest.csv").display());
            Ok(0)
        }
        Err(e) => {
            let _ = std::fs::remove_dir_all(&scratch);
            Err(e)
        }
    }
}

fn cmd_train(args: TrainArgs, outputs: &mut Vec<PathBuf>) -> Result<i32> {
    let kv = KeyValues::load(args.config.as_deref())?;
    let model_kind = ModelKind::parse(&args.model).ok_or_else(|| Error::BadConfig {
        path: PathBuf::new(),
        reason: format!("unknown model '{}'", args.model),
    })?;
    let (n, features) = feature_params(&args.features, &kv)?;
    let seed = pick(args.seed, &kv, "seed", 0)?;
    let train_cfg = TrainConfig {
        epochs: pick(args.epochs, &kv, "epochs", 50)?,
        batch_size: pick(args.batch_size, &kv, "batch_size", 64)?,
        adam: AdamConfig {
            learning_rate: pick(args.learning_rate, &kv, "learning_rate", 1e-3)?,
            ..AdamConfig::default()
        },
        kl_weight: pick(
            args.kl_weight,
            &kv,
            "kl_weight",
            model_kind.default_kl_weight(),
        )?,
        seed,
    };

    let manifest = resolve_manifest(&args.data)?;
    let entries = manifest.select(args.kind.as_deref(), args.snr, Some(Split::Train));
    if entries.is_empty() {
        return Err(Error::EmptyCorpus(manifest.root.clone()));
    }

    let spec = ModelSpec::new(model_kind, n, features.n_mels);
    let mut combined: Option<WindowSet> = None;
    for entry in entries {
        let clip = crate::audio::load_wav(&manifest.resolve(entry))?;
        let spectrogram = extract_log_mel(&clip, &features)?;
        let ws = make_windows(&spectrogram, n, spec.regime)?;
        match combined.as_mut() {
            Some(acc) => acc.append(&ws)?,
            None => combined = Some(ws),
        }
    }
    let raw = combined.ok_or(Error::EmptyWindowSet)?;
    let stats = fit_norm_stats(&raw)?;
    let ws = apply_norm(&raw, &stats)?;

    let trained = train(build_model(&spec, seed)?, &ws, &train_cfg)?;

    outputs.push(args.out.clone());
    save_checkpoint_file(&trained, &args.out)?;
    let loss_path = args.loss_csv.unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".loss.csv");
        PathBuf::from(p)
    });
    outputs.push(loss_path.clone());
    let mut csv = String::from("epoch,loss\n");
    for (epoch, loss) in trained.loss_history.iter().enumerate() {
        csv.push_str(&format!("{epoch},{loss}\n"));
    }
    std::fs::write(&loss_path, csv)?;
    println!("{}", args.out.display());
    Ok(0)
}

fn cmd_score(args: ScoreArgs, outputs: &mut Vec<PathBuf>) -> Result<i32> {
    let kv = KeyValues::load(args.config.as_deref())?;
    let model = load_checkpoint_file(&args.checkpoint)?;
    let (n, features) = feature_params(&args.features, &kv)?;
    if n != model.spec.n || features.n_mels != model.spec.n_mels {
        return Err(Error::RegimeMismatch {
            expected: format!("n={} M={}", model.spec.n, model.spec.n_mels),
            actual: format!("n={n} M={}", features.n_mels),
        });
    }

    let split = match args.split.as_str() {
        "test" => Some(Split::Test),
        "train" => Some(Split::Train),
        "all" => None,
        other => {
            return Err(Error::BadConfig {
                path: PathBuf::new(),
                reason: format!("unknown split '{other}'"),
            })
        }
    };
    let manifest = resolve_manifest(&args.data)?;
    let entries = manifest.select(args.kind.as_deref(), args.snr, split);
    if entries.is_empty() {
        return Err(Error::EmptyCorpus(manifest.root.clone()));
    }

    let mut records = Vec::with_capacity(entries.len());
    let mut dump: Option<(PathBuf, String)> = None;
    for entry in &entries {
        let clip = crate::audio::load_wav(&manifest.resolve(entry))?;
        let spectrogram = extract_log_mel(&clip, &features)?;
        let id = entry.path.display().to_string();
        if args.dump_errors.as_deref() == Some(id.as_str()) {
            let errors = window_errors(&model, &spectrogram)?;
            let mut text = String::new();
            for row in errors.rows() {
                let fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                text.push_str(&fields.join(","));
                text.push('\n');
            }
            dump = Some((args.dump_out.clone().expect("clap enforces dump_out"), text));
        }
        records.push(ScoreRecord {
            segment_id: id,
            label: entry.label,
            score: score_segment(&model, &spectrogram)?,
        });
    }
    if let Some(wanted) = &args.dump_errors {
        if dump.is_none() {
            return Err(Error::BadConfig {
                path: PathBuf::new(),
                reason: format!("--dump-errors segment '{wanted}' not among scored segments"),
            });
        }
    }

    outputs.push(args.out.clone());
    let mut csv = String::from("segment_id,label,score\n");
    for r in &records {
        csv.push_str(&format!("{},{},{}\n", r.segment_id, r.label.as_int(), r.score));
    }
    std::fs::write(&args.out, csv)?;
    if let Some((path, text)) = dump {
        outputs.push(path.clone());
        std::fs::write(&path, text)?;
    }
    println!("{}", args.out.display());
    Ok(0)
}

fn cmd_eval(args: EvalArgs, outputs: &mut Vec<PathBuf>) -> Result<i32> {
    let kv = KeyValues::load(args.config.as_deref())?;
    let manifest = resolve_manifest(&args.data)?;
    let models = match args.models.or(kv.get_list::<String>("models")?) {
        None => ModelKind::ALL.to_vec(),
        Some(names) => names
            .iter()
            .map(|name| {
                ModelKind::parse(name).ok_or_else(|| Error::BadConfig {
                    path: PathBuf::new(),
                    reason: format!("unknown model '{name}'"),
                })
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let (n, features) = feature_params(&args.features, &kv)?;
    let cfg = ExperimentConfig {
        models,
        kinds: args.kinds.or(kv.get_list("kinds")?).unwrap_or_default(),
        snrs_db: args.snrs.or(kv.get_list("snrs")?).unwrap_or_default(),
        trials: pick(args.trials, &kv, "trials", 3)?,
        master_seed: pick(args.seed, &kv, "seed", 0)?,
        n,
        features,
        epochs: pick(args.epochs, &kv, "epochs", 50)?,
        batch_size: pick(args.batch_size, &kv, "batch_size", 64)?,
        learning_rate: pick(args.learning_rate, &kv, "learning_rate", 1e-3)?,
        kl_weight: match args.kl_weight {
            Some(w) => Some(w),
            None => kv.get("kl_weight")?,
        },
        parallel: true,
        source: DataSource::Manifest(manifest),
    };

    let result = run_experiment(&cfg)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let trials_path = args.out_dir.join("trials.csv");
    let summary_path = args.out_dir.join("summary.csv");
    outputs.push(trials_path.clone());
    outputs.push(summary_path.clone());
    std::fs::write(&trials_path, result.trials_csv())?;
    std::fs::write(&summary_path, result.summary_csv())?;
    println!("{}", summary_path.display());
    Ok(0)
}

/// The four loss forms checked by `gradcheck`.
fn gradcheck_cases() -> [(&'static str, usize, usize, bool); 4] {
    [
        ("reconstruct-all", 15, 15, false),
        ("interpolate-center", 12, 3, false),
        ("predict-next", 12, 3, false),
        ("variational", 15, 15, true),
    ]
}

fn random_layer(rng: &mut ChaCha8Rng, din: usize, dout: usize, act: Activation) -> DenseLayer<f64> {
    DenseLayer::random(din, dout, act, rng)
}

/// Build a random small net (plus head when variational) and a test point
/// with every ReLU preactivation safely away from zero.
fn sample_case(
    rng: &mut ChaCha8Rng,
    input_dim: usize,
    output_dim: usize,
    variational: bool,
) -> (
    DenseNetwork<f64>,
    Option<VariationalHead<f64>>,
    Array1<f64>,
    Array1<f64>,
    Array1<f64>,
) {
    loop {
        let (net, head) = if variational {
            let layers = vec![
                random_layer(rng, input_dim, 8, Activation::Relu),
                random_layer(rng, 8, 6, Activation::Relu),
                random_layer(rng, 4, 6, Activation::Relu),
                random_layer(rng, 6, 8, Activation::Relu),
                random_layer(rng, 8, output_dim, Activation::Linear),
            ];
            let head = VariationalHead::new(
                random_layer(rng, 6, 4, Activation::Linear),
                random_layer(rng, 6, 4, Activation::Linear),
            )
            .expect("head dims chain");
            (DenseNetwork::new_split(layers, 2).expect("dims chain"), Some(head))
        } else {
            let layers = vec![
                random_layer(rng, input_dim, 8, Activation::Relu),
                random_layer(rng, 8, 6, Activation::Relu),
                random_layer(rng, 6, 4, Activation::Relu),
                random_layer(rng, 4, 6, Activation::Relu),
                random_layer(rng, 6, 8, Activation::Relu),
                random_layer(rng, 8, output_dim, Activation::Linear),
            ];
            (DenseNetwork::new(layers, 3).expect("dims chain"), None)
        };
        let x = Array1::from_shape_fn(input_dim, |_| rng.gen_range(-1.5..1.5));
        let target = Array1::from_shape_fn(output_dim, |_| rng.gen_range(-1.5..1.5));
        let eps = Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0));
        let eps_view = if variational { Some(eps.view()) } else { None };
        let margin = relu_margin(&net, head.as_ref(), x.view(), eps_view)
            .expect("forward pass on sampled case");
        // Finite differences near a ReLU kink are meaningless; resample.
        if margin > 1e-2 {
            return (net, head, x, target, eps);
        }
    }
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<i32> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let nets_per_case = 20;
    let mut worst = 0.0f64;
    println!("loss kind            max relative error ({nets_per_case} nets each)");
    for (name, input_dim, output_dim, variational) in gradcheck_cases() {
        let mut case_max = 0.0f64;
        for net_idx in 0..nets_per_case {
            let (net, head, x, target, eps) =
                sample_case(&mut rng, input_dim, output_dim, variational);
            let loss = if variational {
                CheckLoss::VaeElbo {
                    kl_weight: 0.01,
                    eps,
                }
            } else {
                CheckLoss::Mse
            };
            let tamper = if args.corrupt && net_idx == 0 { 0.5 } else { 0.0 };
            let err = grad_check_tampered(
                &net,
                head.as_ref(),
                x.view(),
                target.view(),
                &loss,
                tamper,
            )?;
            case_max = case_max.max(err);
        }
        println!("{name:<20} {case_max:.3e}");
        worst = worst.max(case_max);
    }
    if worst < GRADCHECK_THRESHOLD {
        println!("ok: max relative error {worst:.3e} < {GRADCHECK_THRESHOLD:e}");
        Ok(0)
    } else {
        eprintln!("gradient check failed: max relative error {worst:.3e} >= {GRADCHECK_THRESHOLD:e}");
        Ok(2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_values_parse_and_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\nepochs=7\nkinds=a;b\nsnrs=-6,0\n").unwrap();
        let kv = KeyValues::load(Some(&path)).unwrap();
        assert_eq!(pick(None, &kv, "epochs", 50usize).unwrap(), 7);
        assert_eq!(pick(Some(3usize), &kv, "epochs", 50).unwrap(), 3);
        assert_eq!(pick(None, &kv, "missing", 50usize).unwrap(), 50);
        assert_eq!(
            kv.get_list::<String>("kinds").unwrap().unwrap(),
            vec!["a".to_string(), "b".to_string()]
        );
        assert_eq!(kv.get_list::<i32>("snrs").unwrap().unwrap(), vec![-6, 0]);
    }

    #[test]
    fn malformed_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cfg");
        std::fs::write(&path, "no equals sign here\n").unwrap();
        assert!(matches!(
            KeyValues::load(Some(&path)),
            Err(Error::BadConfig { .. })
        ));
    }

    #[test]
    fn gradcheck_cases_cover_four_loss_kinds() {
        assert_eq!(gradcheck_cases().len(), 4);
        let names: Vec<&str> = gradcheck_cases().iter().map(|c| c.0).collect();
        assert!(names.contains(&"variational"));
    }
}
