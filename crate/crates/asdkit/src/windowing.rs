//! Builds (input, target) training pairs from spectrogram frames for the
//! three windowing regimes, and standardizes them per Mel dimension.
//!
//! Windows slide with stride 1. Feature vectors are flattened frame-major:
//! frame i's M bins, then frame i+1's, and so on. That order is fixed and
//! shared with the checkpoint format.

use std::io::{Read, Write};

use ndarray::Array2;

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};

/// How a window of `n` frames is split into model input and target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Input and target are all `n` frames (autoencoding).
    ReconstructAll,
    /// Input is the n-1 context frames, target is the removed center frame.
    InterpolateCenter,
    /// Input is the first n-1 frames, target is the last frame.
    PredictNext,
}

impl Regime {
    pub fn code(self) -> u8 {
        match self {
            Regime::ReconstructAll => 0,
            Regime::InterpolateCenter => 1,
            Regime::PredictNext => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Regime::ReconstructAll),
            1 => Some(Regime::InterpolateCenter),
            2 => Some(Regime::PredictNext),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::ReconstructAll => "reconstruct-all",
            Regime::InterpolateCenter => "interpolate-center",
            Regime::PredictNext => "predict-next",
        }
    }

    /// Model input width for a window of `n` frames of `m` Mel bins.
    pub fn input_dim(self, n: usize, m: usize) -> usize {
        match self {
            Regime::ReconstructAll => n * m,
            Regime::InterpolateCenter | Regime::PredictNext => (n - 1) * m,
        }
    }

    /// Model output width for a window of `n` frames of `m` Mel bins.
    pub fn output_dim(self, n: usize, m: usize) -> usize {
        match self {
            Regime::ReconstructAll => n * m,
            Regime::InterpolateCenter | Regime::PredictNext => m,
        }
    }
}

/// Per-Mel-dimension mean and standard deviation, shared across all frame
/// positions of that bin.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl NormStats {
    pub fn n_mels(&self) -> usize {
        self.mean.len()
    }

    /// Undo standardization for one value of Mel bin `bin`.
    pub fn invert(&self, bin: usize, value: f32) -> f32 {
        value * self.std[bin] + self.mean[bin]
    }
}

/// Paired (input, target) examples for one regime, N rows each.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub regime: Regime,
    pub n: usize,
    pub n_mels: usize,
    pub inputs: Array2<f32>,
    pub targets: Array2<f32>,
    /// Stats that were applied to produce these values, if any.
    pub norm_stats: Option<NormStats>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    /// Stack another window set of the same shape below this one.
    pub fn append(&mut self, other: &WindowSet) -> Result<()> {
        if other.regime != self.regime || other.n != self.n || other.n_mels != self.n_mels {
            return Err(Error::RegimeMismatch {
                expected: format!("{} n={} M={}", self.regime.name(), self.n, self.n_mels),
                actual: format!("{} n={} M={}", other.regime.name(), other.n, other.n_mels),
            });
        }
        self.inputs.append(ndarray::Axis(0), other.inputs.view())
            .expect("input widths match");
        self.targets.append(ndarray::Axis(0), other.targets.view())
            .expect("target widths match");
        Ok(())
    }
}

/// Slice a spectrogram into the regime's (input, target) pairs.
///
/// Window i covers frames i..i+n-1, giving T-n+1 windows. For
/// `InterpolateCenter` the removed frame of window i is i + (n-1)/2.
pub fn make_windows(spec: &Spectrogram, n: usize, regime: Regime) -> Result<WindowSet> {
    let t = spec.n_frames();
    let m = spec.n_mels;
    if n < 2 {
        return Err(Error::SpectrogramTooShort { frames: t, n });
    }
    if regime == Regime::InterpolateCenter && n % 2 == 0 {
        return Err(Error::EvenInterpolationWindow(n));
    }
    if t < n {
        return Err(Error::SpectrogramTooShort { frames: t, n });
    }

    let count = t - n + 1;
    let d_in = regime.input_dim(n, m);
    let d_out = regime.output_dim(n, m);
    let mut inputs = Array2::<f32>::zeros((count, d_in));
    let mut targets = Array2::<f32>::zeros((count, d_out));

    let center = (n - 1) / 2;
    for i in 0..count {
        let mut in_col = 0;
        for offset in 0..n {
            let frame = spec.frames.row(i + offset);
            let is_target = match regime {
                Regime::ReconstructAll => false,
                Regime::InterpolateCenter => offset == center,
                Regime::PredictNext => offset == n - 1,
            };
            if !is_target {
                inputs
                    .row_mut(i)
                    .slice_mut(ndarray::s![in_col..in_col + m])
                    .assign(&frame);
                in_col += m;
            }
            if is_target {
                targets.row_mut(i).assign(&frame);
            }
        }
        if regime == Regime::ReconstructAll {
            let row = inputs.row(i).to_owned();
            targets.row_mut(i).assign(&row);
        }
    }

    Ok(WindowSet {
        regime,
        n,
        n_mels: m,
        inputs,
        targets,
        norm_stats: None,
    })
}

/// Per-Mel mean and population standard deviation over inputs and targets
/// jointly, with the standard deviation floored at 1e-8.
pub fn fit_norm_stats(ws: &WindowSet) -> Result<NormStats> {
    if ws.len() < 2 {
        return Err(Error::TooFewWindows(ws.len()));
    }
    let m = ws.n_mels;
    let mut sum = vec![0.0f64; m];
    let mut sum_sq = vec![0.0f64; m];
    let mut count = vec![0u64; m];

    for matrix in [&ws.inputs, &ws.targets] {
        for row in matrix.rows() {
            for (c, &v) in row.iter().enumerate() {
                let bin = c % m;
                sum[bin] += v as f64;
                sum_sq[bin] += v as f64 * v as f64;
                count[bin] += 1;
            }
        }
    }

    let mut mean = Vec::with_capacity(m);
    let mut std = Vec::with_capacity(m);
    for bin in 0..m {
        let n = count[bin] as f64;
        let mu = sum[bin] / n;
        let var = (sum_sq[bin] / n - mu * mu).max(0.0);
        mean.push(mu as f32);
        std.push(var.sqrt().max(1e-8) as f32);
    }
    Ok(NormStats { mean, std })
}

/// Standardize every Mel dimension of inputs and targets as (v - mean) / std.
pub fn apply_norm(ws: &WindowSet, stats: &NormStats) -> Result<WindowSet> {
    if stats.n_mels() != ws.n_mels {
        return Err(Error::DimensionMismatch {
            context: "apply_norm: stats dims vs n_mels",
            expected: ws.n_mels,
            actual: stats.n_mels(),
        });
    }
    let m = ws.n_mels;
    let normalize = |matrix: &Array2<f32>| {
        let mut out = matrix.clone();
        for mut row in out.rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                let bin = c % m;
                *v = (*v - stats.mean[bin]) / stats.std[bin];
            }
        }
        out
    };
    Ok(WindowSet {
        regime: ws.regime,
        n: ws.n,
        n_mels: ws.n_mels,
        inputs: normalize(&ws.inputs),
        targets: normalize(&ws.targets),
        norm_stats: Some(stats.clone()),
    })
}

/// Serialize to the flat cache format: regime code, n, M, N header, then
/// row-major f32 inputs and targets.
pub fn write_blob<W: Write>(ws: &WindowSet, mut w: W) -> Result<()> {
    w.write_all(&[ws.regime.code()])?;
    w.write_all(&(ws.n as u32).to_le_bytes())?;
    w.write_all(&(ws.n_mels as u32).to_le_bytes())?;
    w.write_all(&(ws.len() as u32).to_le_bytes())?;
    for matrix in [&ws.inputs, &ws.targets] {
        for &v in matrix.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read a window set previously written by [`write_blob`].
pub fn read_blob<R: Read>(mut r: R) -> Result<WindowSet> {
    let mut byte = [0u8; 1];
    r.read_exact(&mut byte)
        .map_err(|_| Error::CorruptBlob("missing header".into()))?;
    let regime = Regime::from_code(byte[0])
        .ok_or_else(|| Error::CorruptBlob(format!("unknown regime code {}", byte[0])))?;
    let mut u32_buf = [0u8; 4];
    let mut read_u32 = |r: &mut R| -> Result<u32> {
        r.read_exact(&mut u32_buf)
            .map_err(|_| Error::CorruptBlob("truncated header".into()))?;
        Ok(u32::from_le_bytes(u32_buf))
    };
    let n = read_u32(&mut r)? as usize;
    let m = read_u32(&mut r)? as usize;
    let count = read_u32(&mut r)? as usize;
    if n < 2 || m == 0 {
        return Err(Error::CorruptBlob(format!("bad dims n={n} M={m}")));
    }

    let read_matrix = |rows: usize, cols: usize, r: &mut R| -> Result<Array2<f32>> {
        let mut data = vec![0.0f32; rows * cols];
        let mut buf = [0u8; 4];
        for v in data.iter_mut() {
            r.read_exact(&mut buf)
                .map_err(|_| Error::CorruptBlob("truncated body".into()))?;
            *v = f32::from_le_bytes(buf);
        }
        Ok(Array2::from_shape_vec((rows, cols), data).expect("shape matches data"))
    };
    let inputs = read_matrix(count, regime.input_dim(n, m), &mut r)?;
    let targets = read_matrix(count, regime.output_dim(n, m), &mut r)?;
    Ok(WindowSet {
        regime,
        n,
        n_mels: m,
        inputs,
        targets,
        norm_stats: None,
    })
}
