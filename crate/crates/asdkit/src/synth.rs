//! Synthetic machine-sound corpus: stationary hums and non-stationary burst
//! sounds, with normal/anomalous variants, mixed with broadband noise at
//! requested SNRs.
//!
//! Stationary clips are built from a 512-sample periodic buffer, so with the
//! pipeline's frame size of 1024 and hop of 512 every analysis frame sees
//! identical signal content. Non-stationary clips are near-silence with short
//! enveloped noise-band bursts at jittered intervals. Anomalies change the
//! spectral and temporal shape, never the overall level: every generated clip
//! is normalized to the same RMS before mixing.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::audio::{write_wav, AudioClip};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Label, ManifestEntry, Split};
use crate::seeding::derive_seed;

/// Every generated clip is scaled to this RMS before SNR mixing.
const CLIP_RMS: f64 = 0.05;

/// Frequency grid of the periodic stationary buffer: 16 kHz / 512.
const LINE_HZ: f64 = 31.25;

/// Spectral change applied to anomalous stationary clips.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryAnomaly {
    /// Extra tones, (Hz, amplitude); frequencies snap to the line grid.
    pub added_tones: Vec<(f64, f64)>,
    /// Additional tilt of the buzz spectrum in dB per octave around 1 kHz.
    pub tilt_db_per_octave: f64,
}

/// Broadband hum with tonal components, constant across frames.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryProfile {
    /// Tonal components, (Hz, amplitude); frequencies snap to the line grid.
    pub tones: Vec<(f64, f64)>,
    /// RMS of the buzz (periodic shaped noise) component.
    pub buzz_level: f64,
    /// Buzz spectral envelope knee in Hz; energy rolls off above it.
    pub buzz_knee_hz: f64,
    /// Roll-off steepness exponent.
    pub buzz_rolloff: f64,
    /// Level of the non-periodic white hiss.
    pub hiss_level: f64,
    /// Per-clip tilt jitter (uniform in +- this, dB per octave).
    pub tilt_jitter_db_per_octave: f64,
    pub anomaly: StationaryAnomaly,
}

/// Spectral and temporal change applied to anomalous bursts.
#[derive(Debug, Clone, PartialEq)]
pub struct BurstAnomaly {
    /// Multiplier on the noise-band center frequency.
    pub band_center_factor: f64,
    /// Multiplier on the band Q (smaller = wider).
    pub band_q_factor: f64,
    /// Multiplier on tonal component frequencies.
    pub tone_freq_factor: f64,
    /// Amplitude-modulation depth added inside bursts (0 = none).
    pub flutter_depth: f64,
    pub flutter_hz: f64,
    /// Onset gap range replacing the normal one, seconds.
    pub gap_range: (f64, f64),
    /// Multiplier on burst duration.
    pub duration_factor: f64,
}

/// Near-silence with short enveloped bursts at jittered intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct BurstProfile {
    /// Uniform range of onset-to-onset gaps, seconds.
    pub gap_range: (f64, f64),
    /// Burst duration in seconds.
    pub duration: f64,
    pub attack: f64,
    pub release: f64,
    /// Center of the burst noise band, Hz.
    pub band_center_hz: f64,
    pub band_q: f64,
    /// Octaves the band center sweeps across the burst (negative = downward).
    pub sweep_octaves: f64,
    /// Tonal components inside bursts, (Hz, amplitude).
    pub tones: Vec<(f64, f64)>,
    /// Per-burst level jitter, uniform in +- this many dB.
    pub level_jitter_db: f64,
    /// Amplitude of the inter-burst noise floor relative to burst scale.
    pub floor_level: f64,
    pub anomaly: BurstAnomaly,
}

/// What a machine kind sounds like, normal and anomalous.
#[derive(Debug, Clone, PartialEq)]
pub enum ProfileKind {
    Stationary(StationaryProfile),
    NonStationary(BurstProfile),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoundProfile {
    pub name: &'static str,
    pub kind: ProfileKind,
}

/// The four shipped machine kinds: two stationary (fan/pump analogues) and
/// two non-stationary (valve/slider analogues).
pub fn shipped_kinds() -> [&'static str; 4] {
    ["stationary_a", "stationary_b", "nonstat_a", "nonstat_b"]
}

/// The profile for a shipped kind name.
pub fn profile_for(kind: &str) -> Option<SoundProfile> {
    let profile = match kind {
        "stationary_a" => SoundProfile {
            name: "stationary_a",
            kind: ProfileKind::Stationary(StationaryProfile {
                tones: vec![(187.5, 1.0), (375.0, 0.55), (562.5, 0.3), (750.0, 0.18)],
                buzz_level: 0.9,
                buzz_knee_hz: 600.0,
                buzz_rolloff: 1.1,
                hiss_level: 0.002,
                tilt_jitter_db_per_octave: 0.35,
                anomaly: StationaryAnomaly {
                    added_tones: vec![(2343.75, 0.28)],
                    tilt_db_per_octave: 0.8,
                },
            }),
        },
        "stationary_b" => SoundProfile {
            name: "stationary_b",
            kind: ProfileKind::Stationary(StationaryProfile {
                tones: vec![(93.75, 0.8), (281.25, 0.5), (468.75, 0.35)],
                buzz_level: 1.0,
                buzz_knee_hz: 350.0,
                buzz_rolloff: 1.4,
                hiss_level: 0.002,
                tilt_jitter_db_per_octave: 0.35,
                anomaly: StationaryAnomaly {
                    added_tones: vec![(1531.25, 0.2), (3062.5, 0.1)],
                    tilt_db_per_octave: -0.9,
                },
            }),
        },
        "nonstat_a" => SoundProfile {
            name: "nonstat_a",
            kind: ProfileKind::NonStationary(BurstProfile {
                gap_range: (0.35, 0.80),
                duration: 0.14,
                attack: 0.006,
                release: 0.030,
                band_center_hz: 2000.0,
                band_q: 2.2,
                sweep_octaves: 0.0,
                tones: vec![(1218.75, 0.5), (2437.5, 0.35)],
                level_jitter_db: 4.0,
                floor_level: 0.012,
                anomaly: BurstAnomaly {
                    band_center_factor: 1.06,
                    band_q_factor: 0.9,
                    tone_freq_factor: 1.03,
                    flutter_depth: 0.35,
                    flutter_hz: 19.0,
                    gap_range: (0.30, 0.85),
                    duration_factor: 1.05,
                },
            }),
        },
        "nonstat_b" => SoundProfile {
            name: "nonstat_b",
            kind: ProfileKind::NonStationary(BurstProfile {
                gap_range: (0.70, 1.20),
                duration: 0.50,
                attack: 0.015,
                release: 0.060,
                band_center_hz: 3200.0,
                band_q: 1.8,
                sweep_octaves: -1.0,
                tones: vec![(1875.0, 0.3)],
                level_jitter_db: 3.0,
                floor_level: 0.012,
                anomaly: BurstAnomaly {
                    band_center_factor: 1.05,
                    band_q_factor: 0.9,
                    tone_freq_factor: 1.02,
                    flutter_depth: 0.30,
                    flutter_hz: 13.0,
                    gap_range: (0.60, 1.25),
                    duration_factor: 0.95,
                },
            }),
        },
        _ => return None,
    };
    Some(profile)
}

fn validate_profile(profile: &SoundProfile, sample_rate: u32) -> Result<()> {
    let nyquist = sample_rate as f64 / 2.0;
    let check_tone = |f: f64| -> Result<()> {
        if f <= 0.0 || f >= nyquist {
            return Err(Error::InvalidProfile(format!(
                "tone frequency {f} Hz outside (0, {nyquist})"
            )));
        }
        Ok(())
    };
    match &profile.kind {
        ProfileKind::Stationary(p) => {
            for &(f, _) in p.tones.iter().chain(p.anomaly.added_tones.iter()) {
                check_tone(f)?;
            }
        }
        ProfileKind::NonStationary(p) => {
            for &(f, _) in &p.tones {
                check_tone(f)?;
                check_tone(f * p.anomaly.tone_freq_factor)?;
            }
            check_tone(p.band_center_hz)?;
            check_tone(p.band_center_hz * p.anomaly.band_center_factor)?;
            let max_duration = p.duration * p.anomaly.duration_factor.max(1.0);
            for (lo, hi) in [p.gap_range, p.anomaly.gap_range] {
                if !(0.0 < lo && lo < hi) {
                    return Err(Error::InvalidProfile(format!("bad gap range ({lo}, {hi})")));
                }
                if lo <= max_duration {
                    return Err(Error::InvalidProfile(format!(
                        "burst duration {max_duration}s reaches minimum gap {lo}s"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Deterministic burst schedule: (start sample, length in samples) per burst.
///
/// Recomputable independently of [`gen_clip`], which uses the identical draw
/// order; tests use it to find burst-free regions.
pub fn burst_schedule(
    profile: &BurstProfile,
    duration_s: f64,
    sample_rate: u32,
    anomalous: bool,
    seed: u64,
) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_schedule(profile, duration_s, sample_rate, anomalous, &mut rng)
}

fn draw_schedule(
    profile: &BurstProfile,
    duration_s: f64,
    sample_rate: u32,
    anomalous: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let (gap_lo, gap_hi) = if anomalous {
        profile.anomaly.gap_range
    } else {
        profile.gap_range
    };
    let burst_s = if anomalous {
        profile.duration * profile.anomaly.duration_factor
    } else {
        profile.duration
    };
    let burst_len = (burst_s * sample_rate as f64).round() as usize;
    let total = (duration_s * sample_rate as f64).round() as usize;

    let mut onsets = Vec::new();
    let mut t = rng.gen_range(gap_lo..gap_hi) * 0.5;
    loop {
        let start = (t * sample_rate as f64).round() as usize;
        if start + burst_len >= total {
            break;
        }
        onsets.push((start, burst_len));
        t += rng.gen_range(gap_lo..gap_hi);
    }
    onsets
}

/// RBJ constant-peak-gain bandpass coefficients.
fn bandpass_coeffs(center_hz: f64, q: f64, sample_rate: u32) -> ([f64; 3], [f64; 2]) {
    let w0 = 2.0 * PI * center_hz / sample_rate as f64;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    (
        [alpha / a0, 0.0, -alpha / a0],
        [-2.0 * w0.cos() / a0, (1.0 - alpha) / a0],
    )
}

/// Generate one labeled clip. Deterministic per (profile, seed); the clip is
/// normalized to a fixed RMS so anomalies never change the overall level.
pub fn gen_clip(
    profile: &SoundProfile,
    duration_s: f64,
    sample_rate: u32,
    anomalous: bool,
    seed: u64,
) -> Result<AudioClip> {
    if duration_s <= 0.0 {
        return Err(Error::InvalidProfile("duration must be positive".into()));
    }
    validate_profile(profile, sample_rate)?;
    let n = (duration_s * sample_rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut samples = match &profile.kind {
        ProfileKind::Stationary(p) => stationary_samples(p, n, sample_rate, anomalous, &mut rng),
        ProfileKind::NonStationary(p) => {
            burst_samples(p, duration_s, n, sample_rate, anomalous, &mut rng)
        }
    };

    // Fixed output RMS; the anomaly must be spectral/temporal, not a volume
    // giveaway.
    let power: f64 = samples.iter().map(|&s| s as f64 * s as f64).sum::<f64>() / n as f64;
    if power <= 0.0 {
        return Err(Error::InvalidProfile("profile generated silence".into()));
    }
    let scale = (CLIP_RMS / power.sqrt()) as f32;
    for s in samples.iter_mut() {
        *s *= scale;
    }
    AudioClip::new(samples, sample_rate)
}

fn stationary_samples(
    p: &StationaryProfile,
    n: usize,
    sample_rate: u32,
    anomalous: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<f32> {
    // Period of 512 samples = one hop; at frame size 1024 every frame sees
    // two identical periods, so the framewise spectrum is exactly constant.
    let period = 512usize;
    let n_lines = period / 2;
    let tilt = rng.gen_range(-p.tilt_jitter_db_per_octave..p.tilt_jitter_db_per_octave)
        + if anomalous { p.anomaly.tilt_db_per_octave } else { 0.0 };

    let mut spectrum = vec![Complex::new(0.0f32, 0.0); period];
    let mut buzz_power = 0.0f64;
    let mut line_mags = vec![0.0f64; n_lines];
    for k in 1..n_lines {
        let f = k as f64 * LINE_HZ * (sample_rate as f64 / 16000.0);
        let envelope = 1.0 / (1.0 + (f / p.buzz_knee_hz).powf(2.0 * p.buzz_rolloff)).sqrt();
        let tilt_gain = 10f64.powf(tilt * (f / 1000.0).log2() / 20.0);
        let mag = envelope * tilt_gain;
        line_mags[k] = mag;
        buzz_power += mag * mag / 2.0;
    }
    let buzz_scale = p.buzz_level / buzz_power.sqrt();
    for k in 1..n_lines {
        let phase = rng.gen_range(0.0..2.0 * PI);
        let amp = (line_mags[k] * buzz_scale) as f32;
        // Sine of amplitude A at bin k: X[k] = A * period / 2 * e^{i phase}.
        let mag = amp * period as f32 / 2.0;
        spectrum[k] = Complex::from_polar(mag, phase as f32);
        spectrum[period - k] = spectrum[k].conj();
    }

    let mut tones: Vec<(f64, f64)> = p.tones.clone();
    if anomalous {
        tones.extend(p.anomaly.added_tones.iter().copied());
    }
    for &(f, a) in &tones {
        // Snap to the line grid so the component is exactly periodic.
        let k = ((f / (LINE_HZ * sample_rate as f64 / 16000.0)).round() as usize)
            .clamp(1, n_lines - 1);
        let phase = rng.gen_range(0.0..2.0 * PI);
        let add = Complex::from_polar(a as f32 * period as f32 / 2.0, phase as f32);
        spectrum[k] += add;
        spectrum[period - k] = spectrum[k].conj();
    }

    let ifft = FftPlanner::<f32>::new().plan_fft_inverse(period);
    ifft.process(&mut spectrum);
    let base: Vec<f32> = spectrum.iter().map(|c| c.re / period as f32).collect();

    (0..n)
        .map(|i| base[i % period] + p.hiss_level as f32 * rng.sample::<f32, _>(StandardNormal))
        .collect()
}

fn burst_samples(
    p: &BurstProfile,
    duration_s: f64,
    n: usize,
    sample_rate: u32,
    anomalous: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<f32> {
    let schedule = draw_schedule(p, duration_s, sample_rate, anomalous, rng);

    // Inter-burst noise floor.
    let mut samples: Vec<f32> = (0..n)
        .map(|_| p.floor_level as f32 * rng.sample::<f32, _>(StandardNormal))
        .collect();

    let band_center = p.band_center_hz * if anomalous { p.anomaly.band_center_factor } else { 1.0 };
    let band_q = p.band_q * if anomalous { p.anomaly.band_q_factor } else { 1.0 };
    let tone_factor = if anomalous { p.anomaly.tone_freq_factor } else { 1.0 };
    let sr = sample_rate as f64;

    for &(start, len) in &schedule {
        let level = 10f64.powf(rng.gen_range(-p.level_jitter_db..p.level_jitter_db) / 20.0);
        let tone_phases: Vec<f64> = p.tones.iter().map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        let flutter_phase = rng.gen_range(0.0..2.0 * PI);

        // Band-limited noise via a biquad; the center may sweep across the
        // burst, with coefficients refreshed every 32 samples.
        let mut state = [0.0f64; 4];
        let (mut b, mut a) = bandpass_coeffs(band_center, band_q, sample_rate);
        let attack_len = (p.attack * sr).max(1.0);
        let release_len = (p.release * sr).max(1.0);

        for i in 0..len {
            if start + i >= n {
                break;
            }
            let progress = i as f64 / len as f64;
            if p.sweep_octaves != 0.0 && i % 32 == 0 {
                let center = band_center * 2f64.powf(p.sweep_octaves * progress);
                (b, a) = bandpass_coeffs(center, band_q, sample_rate);
            }
            let white: f64 = rng.sample::<f32, _>(StandardNormal) as f64;
            let filtered = b[0] * white + b[1] * state[0] + b[2] * state[1]
                - a[0] * state[2]
                - a[1] * state[3];
            state = [white, state[0], filtered, state[2]];

            let t = i as f64 / sr;
            let mut tone_sum = 0.0f64;
            for (&(f, amp), &phase) in p.tones.iter().zip(&tone_phases) {
                tone_sum += amp * (2.0 * PI * f * tone_factor * t + phase).sin();
            }

            let env = if (i as f64) < attack_len {
                0.5 * (1.0 - (PI * i as f64 / attack_len).cos())
            } else if (i as f64) > len as f64 - release_len {
                let back = len as f64 - i as f64;
                0.5 * (1.0 - (PI * back / release_len).cos())
            } else {
                1.0
            };
            let flutter = if anomalous && p.anomaly.flutter_depth > 0.0 {
                (1.0 + p.anomaly.flutter_depth
                    * (2.0 * PI * p.anomaly.flutter_hz * t + flutter_phase).sin())
                .max(0.0)
            } else {
                1.0
            };

            samples[start + i] += ((3.0 * filtered + tone_sum) * env * level * flutter) as f32;
        }
    }
    samples
}

/// Generate the broadband background noise used for SNR mixing.
pub fn gen_noise(duration_s: f64, sample_rate: u32, seed: u64) -> AudioClip {
    let n = (duration_s * sample_rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| 0.05 * rng.sample::<f32, _>(StandardNormal))
        .collect();
    AudioClip { samples, sample_rate }
}

/// Rescale `noise` so that `10*log10(P_signal / P_noise)` equals `snr_db`
/// (RMS power over the whole clip) and return `signal + noise`.
pub fn mix_at_snr(signal: &AudioClip, noise: &AudioClip, snr_db: f64) -> Result<AudioClip> {
    if signal.sample_rate != noise.sample_rate {
        return Err(Error::ClipMismatch(format!(
            "sample rates differ: {} vs {}",
            signal.sample_rate, noise.sample_rate
        )));
    }
    if signal.len() != noise.len() {
        return Err(Error::ClipMismatch(format!(
            "lengths differ: {} vs {}",
            signal.len(),
            noise.len()
        )));
    }
    let power = |clip: &AudioClip| -> f64 {
        clip.samples.iter().map(|&s| s as f64 * s as f64).sum::<f64>() / clip.len() as f64
    };
    let p_signal = power(signal);
    let p_noise = power(noise);
    if p_signal <= 0.0 {
        return Err(Error::ZeroPower("signal"));
    }
    if p_noise <= 0.0 {
        return Err(Error::ZeroPower("noise"));
    }
    let scale = (p_signal / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt() as f32;
    let samples = signal
        .samples
        .iter()
        .zip(noise.samples.iter())
        .map(|(&s, &n)| s + scale * n)
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate: signal.sample_rate,
    })
}

/// Counts and geometry of a generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub kinds: Vec<String>,
    pub snrs_db: Vec<i32>,
    pub train_count: usize,
    pub test_normal: usize,
    pub test_anomalous: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            kinds: shipped_kinds().iter().map(|s| s.to_string()).collect(),
            snrs_db: vec![-6, 0, 6],
            train_count: 40,
            test_normal: 20,
            test_anomalous: 20,
            duration_s: 10.0,
            sample_rate: 16000,
            seed: 0,
        }
    }
}

impl GenConfig {
    /// Line-oriented key=value form, also written next to generated corpora.
    pub fn to_key_values(&self) -> String {
        format!(
            "kinds={}\nsnrs_db={}\ntrain_count={}\ntest_normal={}\ntest_anomalous={}\nduration_s={}\nsample_rate={}\nseed={}\n",
            self.kinds.join(";"),
            self.snrs_db.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";"),
            self.train_count,
            self.test_normal,
            self.test_anomalous,
            self.duration_s,
            self.sample_rate,
            self.seed,
        )
    }
}

/// Signal seed for one file. Independent of SNR: the same underlying machine
/// sound appears at every SNR, only the mixed noise level changes.
pub fn clip_seed(master: u64, kind: &str, split: Split, label: Label, index: usize) -> u64 {
    derive_seed(
        master,
        &[kind, split.name(), label.name(), &index.to_string()],
    )
}

/// Noise seed for one file.
pub fn noise_seed(master: u64, kind: &str, split: Split, label: Label, index: usize) -> u64 {
    derive_seed(
        master,
        &[kind, split.name(), label.name(), &index.to_string(), "noise"],
    )
}

/// Generate one fully mixed clip of a shipped kind.
pub fn gen_mixed_clip(
    kind: &str,
    snr_db: i32,
    label: Label,
    split: Split,
    index: usize,
    cfg: &GenConfig,
) -> Result<AudioClip> {
    let profile = profile_for(kind)
        .ok_or_else(|| Error::InvalidProfile(format!("unknown machine kind '{kind}'")))?;
    let signal = gen_clip(
        &profile,
        cfg.duration_s,
        cfg.sample_rate,
        label == Label::Anomalous,
        clip_seed(cfg.seed, kind, split, label, index),
    )?;
    let noise = gen_noise(
        cfg.duration_s,
        cfg.sample_rate,
        noise_seed(cfg.seed, kind, split, label, index),
    );
    mix_at_snr(&signal, &noise, snr_db as f64)
}

/// Generate the whole corpus under `out_dir`: WAV files, `manifest.csv`, and
/// the effective generation config as `generation.txt`.
pub fn make_dataset(cfg: &GenConfig, out_dir: &Path) -> Result<DatasetManifest> {
    std::fs::create_dir_all(out_dir)?;
    let mut entries = Vec::new();
    let groups = [
        (Split::Train, Label::Normal, cfg.train_count),
        (Split::Test, Label::Normal, cfg.test_normal),
        (Split::Test, Label::Anomalous, cfg.test_anomalous),
    ];
    for kind in &cfg.kinds {
        for &snr_db in &cfg.snrs_db {
            for &(split, label, count) in &groups {
                let dir = out_dir
                    .join(kind)
                    .join(format!("{snr_db}dB"))
                    .join(split.name());
                std::fs::create_dir_all(&dir)?;
                for index in 0..count {
                    let clip = gen_mixed_clip(kind, snr_db, label, split, index, cfg)?;
                    let rel = Path::new(kind)
                        .join(format!("{snr_db}dB"))
                        .join(split.name())
                        .join(format!("{}_{index:04}.wav", label.name()));
                    write_wav(&out_dir.join(&rel), &clip)?;
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
    let manifest = DatasetManifest::new(out_dir.to_path_buf(), entries, cfg.seed)?;
    manifest.write_csv(&out_dir.join("manifest.csv"))?;
    std::fs::write(out_dir.join("generation.txt"), cfg.to_key_values())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{extract_log_mel, FeatureParams};

    fn nonstat_profile() -> (SoundProfile, BurstProfile) {
        let profile = profile_for("nonstat_a").unwrap();
        let burst = match &profile.kind {
            ProfileKind::NonStationary(p) => p.clone(),
            _ => unreachable!(),
        };
        (profile, burst)
    }

    #[test]
    fn ten_seconds_at_16k_gives_160k_samples() {
        let profile = profile_for("stationary_a").unwrap();
        let clip = gen_clip(&profile, 10.0, 16000, false, 1).unwrap();
        assert_eq!(clip.len(), 160_000);
        assert_eq!(clip.sample_rate, 16000);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        for kind in shipped_kinds() {
            let profile = profile_for(kind).unwrap();
            let a = gen_clip(&profile, 2.0, 16000, true, 7).unwrap();
            let b = gen_clip(&profile, 2.0, 16000, true, 7).unwrap();
            assert_eq!(a.samples, b.samples, "kind {kind}");
        }
    }

    #[test]
    fn normal_and_anomalous_differ_but_share_rms() {
        for kind in shipped_kinds() {
            let profile = profile_for(kind).unwrap();
            let normal = gen_clip(&profile, 4.0, 16000, false, 3).unwrap();
            let anomalous = gen_clip(&profile, 4.0, 16000, true, 3).unwrap();
            let max_diff = normal
                .samples
                .iter()
                .zip(&anomalous.samples)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            assert!(max_diff > 0.0, "kind {kind}: clips identical");
            let db = 20.0 * (normal.rms() / anomalous.rms()).log10().abs();
            assert!(db < 3.0, "kind {kind}: RMS differs by {db} dB");
        }
    }

    #[test]
    fn stationary_frames_are_five_times_steadier() {
        // Median frame-to-frame log-Mel distance: the generator's design
        // target is a factor of at least 5 between the two families.
        let params = FeatureParams::default();
        let median_dist = |kind: &str| -> f64 {
            let profile = profile_for(kind).unwrap();
            let clip = gen_clip(&profile, 10.0, 16000, false, 11).unwrap();
            let spec = extract_log_mel(&clip, &params).unwrap();
            let mut dists: Vec<f64> = (1..spec.n_frames())
                .map(|t| {
                    let prev = spec.frames.row(t - 1);
                    let cur = spec.frames.row(t);
                    prev.iter()
                        .zip(cur.iter())
                        .map(|(&a, &b)| ((a - b) as f64).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            dists[dists.len() / 2]
        };
        for stationary in ["stationary_a", "stationary_b"] {
            for nonstat in ["nonstat_a", "nonstat_b"] {
                let s = median_dist(stationary);
                let ns = median_dist(nonstat);
                assert!(
                    s * 5.0 <= ns,
                    "{stationary} median {s:.3} vs {nonstat} median {ns:.3}"
                );
            }
        }
    }

    #[test]
    fn burst_free_frames_sit_on_the_noise_floor() {
        let (profile, burst) = nonstat_profile();
        let clip = gen_clip(&profile, 10.0, 16000, false, 5).unwrap();
        let schedule = burst_schedule(&burst, 10.0, 16000, false, 5);
        assert!(!schedule.is_empty());
        let params = FeatureParams::default();
        let spec = extract_log_mel(&clip, &params).unwrap();

        // Frame energy in dB, and which frames overlap a burst (with margin).
        let frame_db: Vec<f64> = spec
            .frames
            .rows()
            .into_iter()
            .map(|row| {
                let linear: f64 = row.iter().map(|&v| (v as f64).exp()).sum();
                10.0 * linear.log10()
            })
            .collect();
        let margin = params.frame_size;
        let is_burst_free = |t: usize| {
            let lo = t * params.hop_size;
            let hi = lo + params.frame_size;
            schedule
                .iter()
                .all(|&(start, len)| hi + margin <= start || lo >= start + len + margin)
        };
        let free: Vec<usize> = (0..spec.n_frames()).filter(|&t| is_burst_free(t)).collect();
        assert!(free.len() > 50, "too few burst-free frames: {}", free.len());

        let mut free_db: Vec<f64> = free.iter().map(|&t| frame_db[t]).collect();
        free_db.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let floor = free_db[free_db.len() / 10];
        let within = free_db.iter().filter(|&&db| (db - floor).abs() <= 3.0).count();
        assert!(
            within as f64 >= 0.9 * free_db.len() as f64,
            "{} of {} burst-free frames within 3 dB of floor {floor:.2}",
            within,
            free_db.len()
        );
    }

    #[test]
    fn equal_rms_at_zero_snr_keeps_noise_unscaled() {
        let signal = AudioClip::new(vec![0.1; 1000], 16000).unwrap();
        let noise = AudioClip::new(vec![-0.1; 1000], 16000).unwrap();
        let mixed = mix_at_snr(&signal, &noise, 0.0).unwrap();
        for &s in &mixed.samples {
            assert!(s.abs() < 1e-7); // 0.1 + 1.0 * (-0.1)
        }
    }

    #[test]
    fn six_db_snr_scales_equal_rms_noise_by_half() {
        let signal = AudioClip::new(vec![0.1; 1000], 16000).unwrap();
        let noise = AudioClip::new(vec![0.1; 1000], 16000).unwrap();
        let mixed = mix_at_snr(&signal, &noise, 6.0).unwrap();
        let expected = 0.1 + 0.1 * 10f32.powf(-6.0 / 20.0); // ~0.1501
        for &s in &mixed.samples {
            assert!((s - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn measured_snr_matches_request_to_hundredth_db() {
        for snr_db in [-6.0, 0.0, 6.0, 13.7] {
            let profile = profile_for("nonstat_b").unwrap();
            let signal = gen_clip(&profile, 3.0, 16000, false, 9).unwrap();
            let noise = gen_noise(3.0, 16000, 10);
            let mixed = mix_at_snr(&signal, &noise, snr_db).unwrap();
            // Recover the scaled noise and measure the actual ratio.
            let scaled: Vec<f64> = mixed
                .samples
                .iter()
                .zip(&signal.samples)
                .map(|(&m, &s)| (m - s) as f64)
                .collect();
            let p_noise = scaled.iter().map(|&x| x * x).sum::<f64>() / scaled.len() as f64;
            let p_signal = signal.samples.iter().map(|&s| (s as f64).powi(2)).sum::<f64>()
                / signal.len() as f64;
            let measured = 10.0 * (p_signal / p_noise).log10();
            assert!(
                (measured - snr_db).abs() < 0.01,
                "requested {snr_db} dB, measured {measured} dB"
            );
        }
    }

    #[test]
    fn zero_power_inputs_are_rejected() {
        let silence = AudioClip::new(vec![0.0; 100], 16000).unwrap();
        let noise = AudioClip::new(vec![0.1; 100], 16000).unwrap();
        assert!(matches!(
            mix_at_snr(&silence, &noise, 0.0),
            Err(Error::ZeroPower("signal"))
        ));
        assert!(matches!(
            mix_at_snr(&noise, &silence, 0.0),
            Err(Error::ZeroPower("noise"))
        ));
    }

    #[test]
    fn mismatched_clips_are_rejected() {
        let a = AudioClip::new(vec![0.1; 100], 16000).unwrap();
        let b = AudioClip::new(vec![0.1; 99], 16000).unwrap();
        assert!(matches!(mix_at_snr(&a, &b, 0.0), Err(Error::ClipMismatch(_))));
        let c = AudioClip::new(vec![0.1; 100], 8000).unwrap();
        assert!(matches!(mix_at_snr(&a, &c, 0.0), Err(Error::ClipMismatch(_))));
    }

    #[test]
    fn dataset_counts_and_splits() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenConfig {
            train_count: 2,
            test_normal: 1,
            test_anomalous: 1,
            duration_s: 0.5,
            ..GenConfig::default()
        };
        let manifest = make_dataset(&cfg, dir.path()).unwrap();
        // 4 kinds x 3 SNRs x (2 + 1 + 1).
        assert_eq!(manifest.entries.len(), 48);
        assert!(manifest
            .entries
            .iter()
            .filter(|e| e.split == Split::Train)
            .all(|e| e.label == Label::Normal));
        for e in &manifest.entries {
            assert!(manifest.resolve(e).exists(), "{} missing", e.path.display());
        }
        assert!(dir.path().join("manifest.csv").exists());
        assert!(dir.path().join("generation.txt").exists());
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let cfg = GenConfig {
            kinds: vec!["nonstat_a".into()],
            snrs_db: vec![0],
            train_count: 1,
            test_normal: 1,
            test_anomalous: 1,
            duration_s: 0.5,
            ..GenConfig::default()
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let ma = make_dataset(&cfg, dir_a.path()).unwrap();
        let mb = make_dataset(&cfg, dir_b.path()).unwrap();
        assert_eq!(ma.to_csv(), mb.to_csv());
        for (ea, eb) in ma.entries.iter().zip(&mb.entries) {
            let bytes_a = std::fs::read(ma.resolve(ea)).unwrap();
            let bytes_b = std::fs::read(mb.resolve(eb)).unwrap();
            assert_eq!(bytes_a, bytes_b, "{}", ea.path.display());
        }
    }
}
