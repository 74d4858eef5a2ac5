//! Log-Mel spectrogram extraction: STFT power, triangular Mel filterbank,
//! log compression.
//!
//! Conventions, fixed for the whole pipeline:
//! - periodic Hann analysis window,
//! - Mel scale `mel = 2595 * log10(1 + f/700)`,
//! - natural log with a floor applied to linear Mel energy before the log,
//! - no padding: trailing samples that do not fill a frame are dropped.

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// Analysis window applied to each frame before the DFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Periodic Hann, the default for spectral analysis.
    Hann,
    /// No windowing; mainly useful for tests with bin-centered tones.
    Rectangular,
}

impl Window {
    fn coefficients(self, size: usize) -> Vec<f32> {
        match self {
            Window::Hann => (0..size)
                .map(|i| {
                    0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / size as f64).cos())
                        as f32
                })
                .collect(),
            Window::Rectangular => vec![1.0; size],
        }
    }
}

/// Feature-extraction parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureParams {
    pub frame_size: usize,
    pub hop_size: usize,
    pub n_mels: usize,
    /// Floor applied to linear Mel energy before the natural log.
    pub log_floor: f32,
    pub window: Window,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            frame_size: 1024,
            hop_size: 512,
            n_mels: 64,
            log_floor: 1e-10,
            window: Window::Hann,
        }
    }
}

/// Time x Mel matrix of natural-log Mel energies plus the parameters that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// T x M, frame-major.
    pub frames: Array2<f32>,
    pub frame_size: usize,
    pub hop_size: usize,
    pub n_mels: usize,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    /// One row per frame, M comma-separated values.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.frames.rows() {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                out.push_str(&format!("{v}"));
                first = false;
            }
            out.push('\n');
        }
        out
    }
}

/// Short-time power spectrum: frame t, bin k holds the squared DFT magnitude
/// of the windowed frame starting at sample `t * hop_size`.
///
/// The frame count is `floor((len - frame_size) / hop_size) + 1`.
pub fn stft_power(
    clip: &AudioClip,
    frame_size: usize,
    hop_size: usize,
    window: Window,
) -> Result<Array2<f32>> {
    assert!(frame_size >= 2 && frame_size % 2 == 0, "frame_size must be even");
    assert!(hop_size >= 1, "hop_size must be positive");
    if clip.len() < frame_size {
        return Err(Error::ClipTooShort {
            samples: clip.len(),
            frame_size,
        });
    }

    let n_frames = (clip.len() - frame_size) / hop_size + 1;
    let n_bins = frame_size / 2 + 1;
    let coeffs = window.coefficients(frame_size);

    let fft = FftPlanner::<f32>::new().plan_fft_forward(frame_size);
    let mut power = Array2::<f32>::zeros((n_frames, n_bins));
    let mut buf = vec![Complex::new(0.0f32, 0.0); frame_size];

    for t in 0..n_frames {
        let start = t * hop_size;
        for i in 0..frame_size {
            buf[i] = Complex::new(clip.samples[start + i] * coeffs[i], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..n_bins {
            power[[t, k]] = buf[k].norm_sqr();
        }
    }
    Ok(power)
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular Mel filterbank: M rows over `n_fft/2 + 1` frequency bins,
/// centers equally spaced on the Mel scale between 0 Hz and `sample_rate/2`.
///
/// Uses `mel = 2595 * log10(1 + f/700)`; triangles peak at 1 and are not
/// area-normalized (the log and per-dimension standardization downstream make
/// the absolute filter scale irrelevant).
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize) -> Result<Array2<f32>> {
    assert!(n_mels >= 1, "n_mels must be at least 1");
    assert!(n_fft >= 2 && n_fft % 2 == 0, "n_fft must be even");

    let n_bins = n_fft / 2 + 1;
    let mel_max = hz_to_mel(sample_rate as f64 / 2.0);
    // n_mels + 2 edge points; filter m spans edges m .. m+2, peaking at m+1.
    let edges_hz: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();

    let mut bank = Array2::<f32>::zeros((n_mels, n_bins));
    let bin_hz = sample_rate as f64 / n_fft as f64;
    for m in 0..n_mels {
        let (lo, center, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
        let mut any_positive = false;
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f > lo && f < center {
                (f - lo) / (center - lo)
            } else if (f - center).abs() < 1e-12 {
                1.0
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            if w > 0.0 {
                any_positive = true;
            }
            bank[[m, k]] = w as f32;
        }
        if !any_positive {
            return Err(Error::FilterbankTooFine {
                filter: m,
                n_mels,
                n_fft,
            });
        }
    }
    Ok(bank)
}

/// Apply a Mel filterbank to an STFT power matrix and take the natural log
/// with a floor, producing a finite `Spectrogram`.
///
/// Mel energies are accumulated in f64 and stored as f32.
pub fn log_mel(
    power: &Array2<f32>,
    filterbank: &Array2<f32>,
    params: &FeatureParams,
) -> Result<Spectrogram> {
    if power.ncols() != filterbank.ncols() {
        return Err(Error::DimensionMismatch {
            context: "log_mel: power bins vs filterbank bins",
            expected: filterbank.ncols(),
            actual: power.ncols(),
        });
    }
    if filterbank.nrows() != params.n_mels {
        return Err(Error::DimensionMismatch {
            context: "log_mel: filterbank rows vs n_mels",
            expected: params.n_mels,
            actual: filterbank.nrows(),
        });
    }
    let floor = params.log_floor as f64;
    let mut frames = Array2::<f32>::zeros((power.nrows(), params.n_mels));
    for (t, row) in power.rows().into_iter().enumerate() {
        for m in 0..params.n_mels {
            let mut acc = 0.0f64;
            for (k, &p) in row.iter().enumerate() {
                acc += filterbank[[m, k]] as f64 * p as f64;
            }
            frames[[t, m]] = acc.max(floor).ln() as f32;
        }
    }
    Ok(Spectrogram {
        frames,
        frame_size: params.frame_size,
        hop_size: params.hop_size,
        n_mels: params.n_mels,
    })
}

/// Full frontend: clip to log-Mel spectrogram with the given parameters.
pub fn extract_log_mel(clip: &AudioClip, params: &FeatureParams) -> Result<Spectrogram> {
    let power = stft_power(clip, params.frame_size, params.hop_size, params.window)?;
    let bank = mel_filterbank(clip.sample_rate, params.frame_size, params.n_mels)?;
    log_mel(&power, &bank, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn clip_of(samples: Vec<f32>) -> AudioClip {
        AudioClip::new(samples, 16000).unwrap()
    }

    /// Independent O(n^2) DFT of a windowed frame, in f64.
    fn brute_force_power(frame: &[f32], window: Window) -> Vec<f64> {
        let n = frame.len();
        let coeffs = window.coefficients(n);
        let windowed: Vec<f64> = frame
            .iter()
            .zip(&coeffs)
            .map(|(&s, &w)| s as f64 * w as f64)
            .collect();
        (0..n / 2 + 1)
            .map(|k| {
                let mut re = 0.0;
                let mut im = 0.0;
                for (i, &x) in windowed.iter().enumerate() {
                    let phase = -2.0 * std::f64::consts::PI * k as f64 * i as f64 / n as f64;
                    re += x * phase.cos();
                    im += x * phase.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn zero_clip_gives_zero_power() {
        let clip = clip_of(vec![0.0; 4096]);
        let power = stft_power(&clip, 1024, 512, Window::Hann).unwrap();
        assert!(power.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn frame_count_formula() {
        let clip = clip_of(vec![0.0; 16000]);
        let power = stft_power(&clip, 1024, 512, Window::Hann).unwrap();
        assert_eq!(power.nrows(), 30); // floor((16000-1024)/512) + 1
        assert_eq!(power.ncols(), 513);
    }

    #[test]
    fn too_short_clip_errors() {
        let clip = clip_of(vec![0.0; 1000]);
        let err = stft_power(&clip, 1024, 512, Window::Hann).unwrap_err();
        assert!(matches!(err, Error::ClipTooShort { .. }));
    }

    #[test]
    fn bin_centered_sinusoid_peaks_in_its_column() {
        // f = k * sr / N with k = 32 -> 500 Hz.
        let k = 32usize;
        let n = 1024usize;
        let samples: Vec<f32> = (0..8192)
            .map(|i| (2.0 * std::f64::consts::PI * k as f64 * i as f64 / n as f64).sin() as f32)
            .collect();
        let clip = clip_of(samples.clone());
        let power = stft_power(&clip, n, 512, Window::Hann).unwrap();
        for (t, row) in power.rows().into_iter().enumerate() {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, k, "frame {t} peaked at {argmax}");

            // Cross-check the whole frame against the brute-force DFT.
            let start = t * 512;
            let oracle = brute_force_power(&samples[start..start + n], Window::Hann);
            let max = oracle.iter().cloned().fold(0.0f64, f64::max);
            for (bin, (&fast, &slow)) in row.iter().zip(&oracle).enumerate() {
                assert!(
                    (fast as f64 - slow).abs() <= 1e-4 * max,
                    "frame {t} bin {bin}: fft {fast} vs dft {slow}"
                );
            }
        }
    }

    #[test]
    fn hop_shift_moves_power_by_one_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<f32> = (0..8000).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let full = stft_power(&clip_of(samples.clone()), 1024, 512, Window::Hann).unwrap();
        let shifted = stft_power(&clip_of(samples[512..].to_vec()), 1024, 512, Window::Hann).unwrap();
        for t in 0..shifted.nrows() {
            for k in 0..full.ncols() {
                let a = full[[t + 1, k]];
                let b = shifted[[t, k]];
                assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn filterbank_shape_and_rows() {
        let bank = mel_filterbank(16000, 1024, 64).unwrap();
        assert_eq!(bank.dim(), (64, 513));
        for row in bank.rows() {
            let sum: f32 = row.sum();
            assert!(sum > 0.0);
            assert!(row.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn filter_peaks_strictly_increase_and_match_centers() {
        let bank = mel_filterbank(16000, 1024, 64).unwrap();
        let mel_max = hz_to_mel(8000.0);
        let bin_hz = 16000.0 / 1024.0;
        let mut prev = 0usize;
        for (m, row) in bank.rows().into_iter().enumerate() {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if m > 0 {
                assert!(argmax > prev, "filter {m}: peak {argmax} <= previous {prev}");
            }
            let center_hz = mel_to_hz(mel_max * (m + 1) as f64 / 65.0);
            assert!(
                (argmax as f64 * bin_hz - center_hz).abs() <= bin_hz,
                "filter {m}: peak bin {argmax} too far from center {center_hz:.1} Hz"
            );
            prev = argmax;
        }
    }

    #[test]
    fn interior_bins_are_covered() {
        let bank = mel_filterbank(16000, 1024, 64).unwrap();
        for k in 1..512 {
            let covered = (0..64).any(|m| bank[[m, k]] > 0.0);
            assert!(covered, "bin {k} not covered by any filter");
        }
    }

    #[test]
    fn too_many_filters_error() {
        let err = mel_filterbank(16000, 64, 40).unwrap_err();
        assert!(matches!(err, Error::FilterbankTooFine { .. }));
    }

    #[test]
    fn log_mel_floor_saturation() {
        let params = FeatureParams::default();
        let power = Array2::<f32>::zeros((3, 513));
        let bank = mel_filterbank(16000, 1024, 64).unwrap();
        let spec = log_mel(&power, &bank, &params).unwrap();
        let expected = (1e-10f64).ln() as f32;
        assert!(spec.frames.iter().all(|&v| v == expected));
    }

    #[test]
    fn scaling_power_by_e_adds_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<f32> = (0..4096).map(|_| rng.gen_range(-0.5f32..0.5)).collect();
        let params = FeatureParams::default();
        let power = stft_power(&clip_of(samples), 1024, 512, Window::Hann).unwrap();
        let bank = mel_filterbank(16000, 1024, 64).unwrap();
        let base = log_mel(&power, &bank, &params).unwrap();
        let scaled_power = power.mapv(|p| p * std::f32::consts::E);
        let scaled = log_mel(&scaled_power, &bank, &params).unwrap();
        for (a, b) in base.frames.iter().zip(scaled.frames.iter()) {
            assert!((b - a - 1.0).abs() < 1e-4, "{a} -> {b}");
        }
    }

    #[test]
    fn single_filter_single_frame_matches_hand_computation() {
        // 1x2 power, 1x2 filter of ones: entry = ln(p0 + p1).
        let power = ndarray::arr2(&[[0.5f32, 0.25]]);
        let bank = ndarray::arr2(&[[1.0f32, 1.0]]);
        let params = FeatureParams {
            frame_size: 2,
            hop_size: 1,
            n_mels: 1,
            log_floor: 1e-10,
            window: Window::Hann,
        };
        let spec = log_mel(&power, &bank, &params).unwrap();
        assert!((spec.frames[[0, 0]] - 0.75f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn log_mel_dimension_mismatch_errors() {
        let power = Array2::<f32>::zeros((2, 100));
        let bank = mel_filterbank(16000, 1024, 64).unwrap();
        let err = log_mel(&power, &bank, &FeatureParams::default()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn power_is_nonnegative(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<f32> = (0..2048).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            let power = stft_power(&clip_of(samples), 256, 128, Window::Hann).unwrap();
            prop_assert!(power.iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn log_mel_always_finite(seed in 0u64..1000, scale in 0.0f32..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<f32> = (0..2048)
                .map(|_| rng.gen_range(-1.0f32..1.0) * scale)
                .collect();
            let clip = clip_of(samples);
            let params = FeatureParams {
                frame_size: 256,
                hop_size: 128,
                n_mels: 24,
                log_floor: 1e-10,
                window: Window::Hann,
            };
            let spec = extract_log_mel(&clip, &params).unwrap();
            prop_assert!(spec.frames.iter().all(|v| v.is_finite()));
        }
    }
}
