//! The six detectors — plain and variational networks under the three
//! windowing regimes — with training, anomaly scoring, and checkpoint I/O.
//!
//! Every detector shares one layer recipe: encoder widths 64-32-16, decoder
//! widths 32-64, ReLU everywhere except a linear output layer. Variational
//! models replace the 32-to-16 encoder layer with parallel linear mean and
//! log-variance layers of width 16, and train with squared error plus a
//! weighted KL term against a standard-normal prior.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::nn::{
    self, Activation, AdamConfig, AdamState, DenseLayer, DenseNetwork, VariationalHead,
};
use crate::windowing::{self, NormStats, Regime, WindowSet};

const ENCODER_WIDTHS: [usize; 2] = [64, 32];
const LATENT_WIDTH: usize = 16;
const DECODER_WIDTHS: [usize; 2] = [32, 64];

/// The six detector variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Ae,
    Vae,
    Idnn,
    Vidnn,
    Pdnn,
    Vpdnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Ae,
        ModelKind::Vae,
        ModelKind::Idnn,
        ModelKind::Vidnn,
        ModelKind::Pdnn,
        ModelKind::Vpdnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ae => "ae",
            ModelKind::Vae => "vae",
            ModelKind::Idnn => "idnn",
            ModelKind::Vidnn => "vidnn",
            ModelKind::Pdnn => "pdnn",
            ModelKind::Vpdnn => "vpdnn",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn regime(self) -> Regime {
        match self {
            ModelKind::Ae | ModelKind::Vae => Regime::ReconstructAll,
            ModelKind::Idnn | ModelKind::Vidnn => Regime::InterpolateCenter,
            ModelKind::Pdnn | ModelKind::Vpdnn => Regime::PredictNext,
        }
    }

    pub fn variational(self) -> bool {
        matches!(self, ModelKind::Vae | ModelKind::Vidnn | ModelKind::Vpdnn)
    }

    pub fn from_parts(regime: Regime, variational: bool) -> Self {
        match (regime, variational) {
            (Regime::ReconstructAll, false) => ModelKind::Ae,
            (Regime::ReconstructAll, true) => ModelKind::Vae,
            (Regime::InterpolateCenter, false) => ModelKind::Idnn,
            (Regime::InterpolateCenter, true) => ModelKind::Vidnn,
            (Regime::PredictNext, false) => ModelKind::Pdnn,
            (Regime::PredictNext, true) => ModelKind::Vpdnn,
        }
    }

    /// KL weight w: 0.1 for the plain VAE, 0.01 for the variational
    /// interpolator and predictor, unused otherwise.
    pub fn default_kl_weight(self) -> f32 {
        match self {
            ModelKind::Vae => 0.1,
            ModelKind::Vidnn | ModelKind::Vpdnn => 0.01,
            _ => 0.0,
        }
    }
}

/// What to build: regime, variational flag, and window geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub regime: Regime,
    pub variational: bool,
    /// Total frames per window (inputs plus the one output frame).
    pub n: usize,
    pub n_mels: usize,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, n: usize, n_mels: usize) -> Self {
        Self {
            regime: kind.regime(),
            variational: kind.variational(),
            n,
            n_mels,
        }
    }

    pub fn kind(&self) -> ModelKind {
        ModelKind::from_parts(self.regime, self.variational)
    }

    pub fn input_dim(&self) -> usize {
        self.regime.input_dim(self.n, self.n_mels)
    }

    pub fn output_dim(&self) -> usize {
        self.regime.output_dim(self.n, self.n_mels)
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Weight of the KL term; ignored for non-variational models.
    pub kl_weight: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            adam: AdamConfig::default(),
            kl_weight: 0.0,
            seed: 0,
        }
    }
}

/// A detector: spec, weights, the normalization used at training time, and
/// the per-epoch training loss trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub network: DenseNetwork<f32>,
    pub head: Option<VariationalHead<f32>>,
    pub norm_stats: Option<NormStats>,
    pub loss_history: Vec<f64>,
}

impl TrainedModel {
    pub fn param_count(&self) -> usize {
        self.network.param_count() + self.head.as_ref().map_or(0, VariationalHead::param_count)
    }
}

/// Build an untrained model from the fixed layer recipe, seeded.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<TrainedModel> {
    if spec.n < 2 || spec.n_mels == 0 {
        return Err(Error::DimensionMismatch {
            context: "model spec window geometry",
            expected: 2,
            actual: spec.n,
        });
    }
    if spec.regime == Regime::InterpolateCenter && spec.n % 2 == 0 {
        return Err(Error::EvenInterpolationWindow(spec.n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_dim = spec.input_dim();
    let output_dim = spec.output_dim();

    let (network, head) = if spec.variational {
        let mut layers = Vec::new();
        let mut prev = input_dim;
        for &w in &ENCODER_WIDTHS {
            layers.push(DenseLayer::random(prev, w, Activation::Relu, &mut rng));
            prev = w;
        }
        let head = VariationalHead::new(
            DenseLayer::random(prev, LATENT_WIDTH, Activation::Linear, &mut rng),
            DenseLayer::random(prev, LATENT_WIDTH, Activation::Linear, &mut rng),
        )?;
        let latent_index = layers.len();
        prev = LATENT_WIDTH;
        for &w in &DECODER_WIDTHS {
            layers.push(DenseLayer::random(prev, w, Activation::Relu, &mut rng));
            prev = w;
        }
        layers.push(DenseLayer::random(prev, output_dim, Activation::Linear, &mut rng));
        (DenseNetwork::new_split(layers, latent_index)?, Some(head))
    } else {
        let mut widths = vec![input_dim];
        widths.extend(ENCODER_WIDTHS);
        widths.push(LATENT_WIDTH);
        widths.extend(DECODER_WIDTHS);
        widths.push(output_dim);
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { Activation::Linear } else { Activation::Relu };
                DenseLayer::random(w[0], w[1], act, &mut rng)
            })
            .collect();
        (DenseNetwork::new(layers, ENCODER_WIDTHS.len() + 1)?, None)
    };

    // Output-layer width must agree with the regime.
    assert_eq!(network.output_dim(), output_dim);
    assert_eq!(network.input_dim(), input_dim);

    Ok(TrainedModel {
        spec: *spec,
        network,
        head,
        norm_stats: None,
        loss_history: Vec::new(),
    })
}

/// Mini-batch Adam on the regime's loss over a normalized window set.
///
/// Order is reshuffled every epoch from `cfg.seed`; variational models draw
/// fresh standard-normal noise per example. Non-finite gradients are reported
/// to stderr and the step skipped. The per-epoch mean training loss is
/// recorded in `loss_history`.
pub fn train(mut model: TrainedModel, ws: &WindowSet, cfg: &TrainConfig) -> Result<TrainedModel> {
    if ws.is_empty() {
        return Err(Error::EmptyWindowSet);
    }
    if ws.regime != model.spec.regime || ws.n != model.spec.n || ws.n_mels != model.spec.n_mels {
        return Err(Error::RegimeMismatch {
            expected: format!(
                "{} n={} M={}",
                model.spec.regime.name(),
                model.spec.n,
                model.spec.n_mels
            ),
            actual: format!("{} n={} M={}", ws.regime.name(), ws.n, ws.n_mels),
        });
    }
    let stats = ws.norm_stats.as_ref().ok_or(Error::NotNormalized)?;
    model.norm_stats = Some(stats.clone());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(&model.network, model.head.as_ref(), cfg.adam);
    let n_examples = ws.len();
    let latent = model.head.as_ref().map(VariationalHead::latent_dim);
    let mut indices: Vec<usize> = (0..n_examples).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for _epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for chunk in indices.chunks(cfg.batch_size.max(1)) {
            let inputs = ws.inputs.select(Axis(0), chunk);
            let targets = ws.targets.select(Axis(0), chunk);
            let step = match (&model.head, latent) {
                (Some(head), Some(latent_dim)) => {
                    let eps = Array2::from_shape_fn((chunk.len(), latent_dim), |_| {
                        rng.sample::<f32, _>(StandardNormal)
                    });
                    nn::vae_batch_gradients(
                        &model.network,
                        head,
                        &inputs,
                        &targets,
                        &eps,
                        cfg.kl_weight,
                    )?
                }
                _ => nn::mse_batch_gradients(&model.network, &inputs, &targets)?,
            };
            let (grads, batch_loss) = step;
            match state.step(&mut model.network, model.head.as_mut(), &grads) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient { step }) => {
                    eprintln!("warning: skipped optimizer step {step}: non-finite gradient");
                }
                Err(e) => return Err(e),
            }
            epoch_loss += batch_loss * chunk.len() as f64;
        }
        history.push(epoch_loss / n_examples as f64);
    }
    model.loss_history = history;
    Ok(model)
}

/// Model outputs for a batch of normalized inputs; variational models follow
/// the deterministic posterior-mean path.
pub fn predict(model: &TrainedModel, inputs: &Array2<f32>) -> Result<Array2<f32>> {
    match &model.head {
        Some(head) => nn::vae_forward_mean_batch(&model.network, head, inputs),
        None => Ok(nn::forward_batch(&model.network, inputs)?.pop().unwrap()),
    }
}

/// Anomaly score of one window: squared L2 error between the model output
/// and the target, in normalized feature space.
pub fn score_window(model: &TrainedModel, input: &Array1<f32>, target: &Array1<f32>) -> Result<f64> {
    if target.len() != model.spec.output_dim() {
        return Err(Error::DimensionMismatch {
            context: "score_window target",
            expected: model.spec.output_dim(),
            actual: target.len(),
        });
    }
    let out = predict(model, &input.view().insert_axis(Axis(0)).to_owned())?;
    let mut acc = 0.0f64;
    for (&o, &t) in out.row(0).iter().zip(target.iter()) {
        let d = (o - t) as f64;
        acc += d * d;
    }
    Ok(acc)
}

/// Anomaly score of a whole segment: mean window score over all its windows,
/// using the normalization fitted at training time.
pub fn score_segment(model: &TrainedModel, spec: &Spectrogram) -> Result<f64> {
    let scores = window_scores(model, spec)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Per-window anomaly scores for a segment, in window order.
pub fn window_scores(model: &TrainedModel, spec: &Spectrogram) -> Result<Vec<f64>> {
    let errors = window_errors(model, spec)?;
    Ok(errors
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|&e| e as f64).sum())
        .collect())
}

/// Per-window, per-Mel squared errors for a segment: one row per window, M
/// columns. For the reconstruct-all regime the error of a Mel bin is summed
/// over the window's frame positions.
pub fn window_errors(model: &TrainedModel, spec: &Spectrogram) -> Result<Array2<f32>> {
    let stats = model.norm_stats.as_ref().ok_or(Error::NotNormalized)?;
    let raw = windowing::make_windows(spec, model.spec.n, model.spec.regime)?;
    let ws = windowing::apply_norm(&raw, stats)?;
    let outputs = predict(model, &ws.inputs)?;
    let m = model.spec.n_mels;
    let mut errors = Array2::<f32>::zeros((ws.len(), m));
    for (i, (out, target)) in outputs.rows().into_iter().zip(ws.targets.rows()).enumerate() {
        for (c, (&o, &t)) in out.iter().zip(target.iter()).enumerate() {
            let d = o - t;
            errors[[i, c % m]] += d * d;
        }
    }
    Ok(errors)
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"ASDC";
const CHECKPOINT_VERSION: u32 = 1;

fn write_layer<W: Write>(w: &mut W, layer: &DenseLayer<f32>) -> Result<()> {
    w.write_all(&(layer.in_dim() as u32).to_le_bytes())?;
    w.write_all(&(layer.out_dim() as u32).to_le_bytes())?;
    w.write_all(&[layer.activation.code()])?;
    for &v in layer.weights.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    for &v in layer.bias.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

struct CheckpointReader<R> {
    inner: R,
}

impl<R: Read> CheckpointReader<R> {
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.inner
            .read_exact(&mut b)
            .map_err(|_| Error::CorruptCheckpoint("unexpected end of file".into()))?;
        Ok(b[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.inner
            .read_exact(&mut b)
            .map_err(|_| Error::CorruptCheckpoint("unexpected end of file".into()))?;
        Ok(u32::from_le_bytes(b))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let mut out = vec![0.0f32; count];
        let mut b = [0u8; 4];
        for v in out.iter_mut() {
            self.inner
                .read_exact(&mut b)
                .map_err(|_| Error::CorruptCheckpoint("unexpected end of file".into()))?;
            *v = f32::from_le_bytes(b);
        }
        Ok(out)
    }

    fn layer(&mut self) -> Result<DenseLayer<f32>> {
        let in_dim = self.u32()? as usize;
        let out_dim = self.u32()? as usize;
        if in_dim == 0 || out_dim == 0 || in_dim > 1 << 20 || out_dim > 1 << 20 {
            return Err(Error::CorruptCheckpoint(format!(
                "implausible layer dims {in_dim}x{out_dim}"
            )));
        }
        let activation = Activation::from_code(self.u8()?)
            .ok_or_else(|| Error::CorruptCheckpoint("unknown activation code".into()))?;
        let weights = Array2::from_shape_vec((out_dim, in_dim), self.f32s(out_dim * in_dim)?)
            .expect("shape matches data");
        let bias = Array1::from_vec(self.f32s(out_dim)?);
        Ok(DenseLayer::new(weights, bias, activation))
    }
}

/// Serialize a model: magic, version, spec header, normalization stats,
/// layers, and the optional variational head.
pub fn save_checkpoint<W: Write>(model: &TrainedModel, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&[model.spec.regime.code(), model.spec.variational as u8])?;
    w.write_all(&(model.spec.n as u32).to_le_bytes())?;
    w.write_all(&(model.spec.n_mels as u32).to_le_bytes())?;
    w.write_all(&(model.spec.input_dim() as u32).to_le_bytes())?;
    w.write_all(&(model.spec.output_dim() as u32).to_le_bytes())?;

    match &model.norm_stats {
        Some(stats) => {
            w.write_all(&[1])?;
            for &v in stats.mean.iter().chain(stats.std.iter()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        None => w.write_all(&[0])?,
    }

    w.write_all(&(model.network.layers.len() as u32).to_le_bytes())?;
    w.write_all(&(model.network.latent_index as u32).to_le_bytes())?;
    for layer in &model.network.layers {
        write_layer(&mut w, layer)?;
    }
    match &model.head {
        Some(head) => {
            w.write_all(&[1])?;
            write_layer(&mut w, &head.mean_layer)?;
            write_layer(&mut w, &head.logvar_layer)?;
        }
        None => w.write_all(&[0])?,
    }
    Ok(())
}

/// Load a model saved by [`save_checkpoint`]. The loss history is not part
/// of the format and comes back empty.
pub fn load_checkpoint<R: Read>(r: R) -> Result<TrainedModel> {
    let mut r = CheckpointReader { inner: r };
    let mut magic = [0u8; 4];
    r.inner
        .read_exact(&mut magic)
        .map_err(|_| Error::BadCheckpointMagic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::BadCheckpointMagic);
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::BadCheckpointVersion(version));
    }
    let regime = Regime::from_code(r.u8()?)
        .ok_or_else(|| Error::CorruptCheckpoint("unknown regime code".into()))?;
    let variational = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(Error::CorruptCheckpoint(format!("bad variational flag {v}"))),
    };
    let n = r.u32()? as usize;
    let n_mels = r.u32()? as usize;
    let input_dim = r.u32()? as usize;
    let output_dim = r.u32()? as usize;
    let spec = ModelSpec { regime, variational, n, n_mels };
    if spec.input_dim() != input_dim || spec.output_dim() != output_dim {
        return Err(Error::CorruptCheckpoint(format!(
            "header dims {input_dim}->{output_dim} disagree with regime {} n={n} M={n_mels}",
            regime.name()
        )));
    }

    let norm_stats = match r.u8()? {
        0 => None,
        1 => {
            let mean = r.f32s(n_mels)?;
            let std = r.f32s(n_mels)?;
            Some(NormStats { mean, std })
        }
        v => return Err(Error::CorruptCheckpoint(format!("bad stats flag {v}"))),
    };

    let layer_count = r.u32()? as usize;
    let latent_index = r.u32()? as usize;
    if layer_count == 0 || layer_count > 64 || latent_index > layer_count {
        return Err(Error::CorruptCheckpoint(format!(
            "implausible layer count {layer_count} / latent index {latent_index}"
        )));
    }
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        layers.push(r.layer()?);
    }
    let head = match r.u8()? {
        0 => None,
        1 => Some(VariationalHead::new(r.layer()?, r.layer()?)?),
        v => return Err(Error::CorruptCheckpoint(format!("bad head flag {v}"))),
    };
    if variational != head.is_some() {
        return Err(Error::CorruptCheckpoint(
            "variational flag disagrees with head presence".into(),
        ));
    }

    let network = if variational {
        DenseNetwork::new_split(layers, latent_index)?
    } else {
        DenseNetwork::new(layers, latent_index)?
    };
    if network.input_dim() != input_dim || network.output_dim() != output_dim {
        return Err(Error::CorruptCheckpoint("layer dims disagree with header".into()));
    }

    Ok(TrainedModel {
        spec,
        network,
        head,
        norm_stats,
        loss_history: Vec::new(),
    })
}

/// Save to a file path.
pub fn save_checkpoint_file(model: &TrainedModel, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    save_checkpoint(model, std::io::BufWriter::new(file))
}

/// Load from a file path.
pub fn load_checkpoint_file(path: &Path) -> Result<TrainedModel> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let file = std::fs::File::open(path)?;
    load_checkpoint(std::io::BufReader::new(file))
}
