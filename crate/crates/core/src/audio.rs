//! Waveform I/O and deterministic signal generators.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono signal at [`SAMPLE_RATE`].
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
}

impl Waveform {
    /// Rejects non-finite samples.
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "Waveform::new",
                format!("sample {i} is not finite ({})", samples[i]),
            ));
        }
        Ok(Self { samples })
    }

    pub(crate) fn from_finite(samples: Vec<f64>) -> Self {
        debug_assert!(samples.iter().all(|v| v.is_finite()));
        Self { samples }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            (self.energy() / self.samples.len() as f64).sqrt()
        }
    }
}

fn wav_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Wav {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Reads a mono 16 kHz WAV file stored as 16-bit PCM or 32-bit float.
///
/// Integer samples are scaled by 1/32768; float samples pass through unchanged.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(wav_err(
            path,
            format!("unsupported channel count {} (expected mono)", spec.channels),
        ));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(wav_err(
            path,
            format!(
                "unsupported sample rate {} Hz (expected {SAMPLE_RATE})",
                spec.sample_rate
            ),
        ));
    }
    let truncated = |e: hound::Error| wav_err(path, format!("truncated or corrupt data: {e}"));
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(truncated)?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(truncated)?,
        (fmt, bits) => {
            return Err(wav_err(
                path,
                format!("unsupported encoding {fmt:?} {bits}-bit (expected PCM16 or float32)"),
            ))
        }
    };
    Waveform::new(samples).map_err(|e| wav_err(path, e.to_string()))
}

/// Quantizes to the nearest 16-bit code after clamping to `[−1, 1 − 2⁻¹⁵]`.
pub fn quantize_pcm16(v: f64) -> i16 {
    let max = 1.0 - 1.0 / 32768.0;
    (v.clamp(-1.0, max) * 32768.0).round() as i16
}

/// Writes 16-bit PCM mono at 16 kHz.
pub fn write_wav(w: &Waveform, path: &Path) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let ctx = |e: hound::Error| wav_err(path, format!("write failed: {e}"));
    let mut writer = hound::WavWriter::create(path, spec).map_err(ctx)?;
    for &v in w.samples() {
        writer.write_sample(quantize_pcm16(v)).map_err(ctx)?;
    }
    writer.finalize().map_err(ctx)
}

fn normalize_rms(mut x: Vec<f64>) -> Vec<f64> {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    x
}

/// Gaussian noise with power spectral density ∝ f^alpha, scaled to unit RMS.
///
/// White noise is shaped in the frequency domain: bin magnitude at frequency
/// `f` is multiplied by `f^(alpha/2)` and the DC bin is zeroed.
pub fn colored_noise(alpha: f64, n: usize, seed: u64) -> Result<Waveform> {
    if n == 0 {
        return Err(Error::invalid("colored_noise", "sample count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        *c *= if bin == 0 { 0.0 } else { (bin as f64).powf(alpha / 2.0) };
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let x = buf.iter().map(|c| c.re).collect();
    Ok(Waveform::from_finite(normalize_rms(x)))
}

/// Families of synthetic clean signals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CleanKind {
    /// Harmonic stack with a slowly varying pitch contour, gated into syllables.
    Harmonic,
    /// Linear chirps with a second harmonic, gated into syllables.
    Chirp,
    /// Amplitude-modulated tones.
    AmTone,
}

impl CleanKind {
    pub const ALL: [CleanKind; 3] = [CleanKind::Harmonic, CleanKind::Chirp, CleanKind::AmTone];
}

/// Upper frequency of synthesized harmonics.
const HARMONIC_CEILING_HZ: f64 = 5000.0;

/// Sum of harmonics of `f0`, amplitude `1/h`, pitch wobbling by ±3 %, unit RMS.
pub fn harmonic_stack(f0: f64, n: usize, seed: u64) -> Result<Waveform> {
    if n == 0 {
        return Err(Error::invalid("harmonic_stack", "sample count must be positive"));
    }
    if !(f0 > 0.0 && f0 < HARMONIC_CEILING_HZ) {
        return Err(Error::invalid("harmonic_stack", format!("f0 {f0} Hz out of range")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = rng.random_range(2.0..5.0);
    let start = rng.random_range(0.0..2.0 * PI);
    let count = (HARMONIC_CEILING_HZ / (f0 * 1.03)).floor().max(1.0) as usize;
    let amps: Vec<f64> = (1..=count).map(|h| rng.random_range(0.6..1.0) / h as f64).collect();
    let fs = SAMPLE_RATE as f64;
    let mut phase = 0.0f64;
    let mut x = Vec::with_capacity(n);
    for t in 0..n {
        let f = f0 * (1.0 + 0.03 * (2.0 * PI * rate * t as f64 / fs + start).sin());
        phase = (phase + 2.0 * PI * f / fs) % (2.0 * PI);
        let z1 = Complex64::from_polar(1.0, phase);
        let mut z = z1;
        let mut s = 0.0;
        for a in &amps {
            s += a * z.im;
            z *= z1;
        }
        x.push(s);
    }
    Ok(Waveform::from_finite(normalize_rms(x)))
}

/// On/off gate of 60–250 ms segments with 10 ms raised-cosine edges.
fn syllable_gate(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let ramp = (0.010 * fs) as usize;
    let mut gate = vec![0.0; n];
    let mut pos = 0;
    let mut on = rng.random_bool(0.8);
    let mut any_on = false;
    while pos < n {
        let len = (rng.random_range(0.06..0.25) * fs) as usize;
        let end = (pos + len).min(n);
        if on {
            any_on = true;
            let seg = end - pos;
            for (i, g) in gate[pos..end].iter_mut().enumerate() {
                let edge = i.min(seg - 1 - i);
                *g = if edge < ramp {
                    0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
                } else {
                    1.0
                };
            }
        }
        pos = end;
        on = if on { rng.random_bool(0.35) } else { true };
    }
    if !any_on {
        gate.fill(1.0);
    }
    gate
}

fn tone(f: f64, t: usize) -> f64 {
    (2.0 * PI * f * t as f64 / SAMPLE_RATE as f64).sin()
}

/// Deterministic clean signal with time-varying spectral structure, unit RMS.
pub fn synth_clean(kind: CleanKind, n: usize, seed: u64) -> Result<Waveform> {
    if n == 0 {
        return Err(Error::invalid("synth_clean", "sample count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c1ea);
    let fs = SAMPLE_RATE as f64;
    let x: Vec<f64> = match kind {
        CleanKind::Harmonic => {
            let f0 = rng.random_range(100.0..260.0);
            let stack = harmonic_stack(f0, n, rng.random())?;
            let gate = syllable_gate(n, &mut rng);
            stack.samples().iter().zip(&gate).map(|(s, g)| s * g).collect()
        }
        CleanKind::Chirp => {
            let f_start = rng.random_range(200.0..1500.0);
            let f_end = rng.random_range(300.0..3000.0);
            let dur = n as f64 / fs;
            let slope = (f_end - f_start) / dur;
            let gate = syllable_gate(n, &mut rng);
            (0..n)
                .map(|t| {
                    let tt = t as f64 / fs;
                    let ph = 2.0 * PI * (f_start * tt + 0.5 * slope * tt * tt);
                    gate[t] * (ph.sin() + 0.5 * (2.0 * ph).sin())
                })
                .collect()
        }
        CleanKind::AmTone => {
            let parts: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(2..=3))
                .map(|_| {
                    (
                        rng.random_range(300.0..3000.0),
                        rng.random_range(2.0..8.0),
                        rng.random_range(0.5..1.0),
                        rng.random_range(0.0..2.0 * PI),
                    )
                })
                .collect();
            (0..n)
                .map(|t| {
                    parts
                        .iter()
                        .map(|&(f, fm, depth, ph)| {
                            let env = 1.0 + depth * (2.0 * PI * fm * t as f64 / fs + ph).sin();
                            env * tone(f, t)
                        })
                        .sum()
                })
                .collect()
        }
    };
    Ok(Waveform::from_finite(normalize_rms(x)))
}

/// Noise recordings the data pipeline draws from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseKind {
    /// Power-law noise with PSD ∝ f^alpha.
    Colored { alpha: f64 },
    /// Several overlapping synthetic talkers.
    Babble,
}

impl NoiseKind {
    /// α grid of the colored-noise family: −2 to 2 in steps of 0.25.
    pub fn alpha_grid() -> Vec<f64> {
        (0..=16).map(|i| -2.0 + 0.25 * i as f64).collect()
    }

    /// Short stable label, e.g. `colored-1.00` or `babble`.
    pub fn label(&self) -> String {
        match self {
            NoiseKind::Colored { alpha } => format!("colored{alpha:+.2}"),
            NoiseKind::Babble => "babble".to_string(),
        }
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<Waveform> {
        match *self {
            NoiseKind::Colored { alpha } => colored_noise(alpha, n, seed),
            NoiseKind::Babble => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbabb1e);
                let mut acc = vec![0.0; n];
                for _ in 0..4 {
                    let talker = synth_clean(CleanKind::Harmonic, n, rng.random())?;
                    acc.iter_mut().zip(talker.samples()).for_each(|(a, s)| *a += s);
                }
                if acc.iter().all(|v| *v == 0.0) {
                    return colored_noise(0.0, n, seed);
                }
                Ok(Waveform::from_finite(normalize_rms(acc)))
            }
        }
    }
}

/// How a clean utterance is combined with a noise recording.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixSpec {
    pub snr_db: f64,
    /// First noise sample used.
    pub noise_offset: usize,
    /// Seed the mixture was drawn with (bookkeeping only).
    pub seed: u64,
}

/// `10·log10(‖signal‖² / ‖noise‖²)`.
pub fn snr_db(signal: &Waveform, noise: &Waveform) -> f64 {
    10.0 * (signal.energy() / noise.energy()).log10()
}

/// Adds a gain-adjusted noise segment to `clean` so the mixture has `spec.snr_db`.
///
/// Returns the noisy mixture and the scaled noise segment that was added.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, spec: &MixSpec) -> Result<(Waveform, Waveform)> {
    let n = clean.len();
    if noise.len() < n + spec.noise_offset {
        return Err(Error::invalid(
            "mix_at_snr",
            format!(
                "noise has {} samples, need {} (clean) + {} (offset)",
                noise.len(),
                n,
                spec.noise_offset
            ),
        ));
    }
    let segment = &noise.samples()[spec.noise_offset..spec.noise_offset + n];
    let clean_energy = clean.energy();
    let noise_energy: f64 = segment.iter().map(|v| v * v).sum();
    if clean_energy == 0.0 || noise_energy == 0.0 {
        return Err(Error::invalid(
            "mix_at_snr",
            "SNR undefined for an all-zero clean signal or noise segment",
        ));
    }
    let gain = (clean_energy / (noise_energy * 10f64.powf(spec.snr_db / 10.0))).sqrt();
    let used: Vec<f64> = segment.iter().map(|v| v * gain).collect();
    let noisy = clean.samples().iter().zip(&used).map(|(c, d)| c + d).collect();
    Ok((Waveform::from_finite(noisy), Waveform::from_finite(used)))
}
