//! Objective enhancement metrics and per-condition evaluation reports.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{NoiseKind, Waveform};
use crate::data::{
    mixture_with_noise, tagged_seed, target_mask, Mixture, MixtureConfig, Stream, TargetKind, RECORDING_LEN,
};
use crate::error::{Error, Result};
use crate::masks::{enhance, enhance_with_mask};
use crate::restcn::EnhancementModel;
use crate::stft::{magnitude, stft, FRAME_LEN, FRAME_SHIFT};

/// Bound applied to SI-SDR in both directions, in dB.
pub const SI_SDR_CAP_DB: f64 = 100.0;
pub const SEG_SNR_FLOOR_DB: f64 = -10.0;
pub const SEG_SNR_CEIL_DB: f64 = 35.0;
/// Reference frames at or below this energy are skipped by segmental SNR.
pub const ACTIVE_FRAME_ENERGY: f64 = 1e-8;

fn check_lengths(op: &'static str, reference: &Waveform, estimate: &Waveform) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(Error::invalid(
            op,
            format!("reference has {} samples, estimate {}", reference.len(), estimate.len()),
        ));
    }
    Ok(())
}

fn ratio_db(signal: f64, noise: f64) -> f64 {
    if noise == 0.0 {
        f64::INFINITY
    } else if signal == 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * (signal / noise).log10()
    }
}

/// Scale-invariant signal-to-distortion ratio in dB, bounded to ±100 dB.
pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_lengths("si_sdr", reference, estimate)?;
    let ref_energy = reference.energy();
    if ref_energy == 0.0 {
        return Err(Error::invalid("si_sdr", "reference is all zeros"));
    }
    let s = reference.samples();
    let e = estimate.samples();
    let alpha = s.iter().zip(e).map(|(a, b)| a * b).sum::<f64>() / ref_energy;
    let (mut target, mut residual) = (0.0, 0.0);
    for (a, b) in s.iter().zip(e) {
        let t = alpha * a;
        target += t * t;
        residual += (b - t) * (b - t);
    }
    Ok(ratio_db(target, residual).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

/// Mean per-frame SNR over active reference frames, each clamped to [−10, 35] dB.
///
/// Frames are 512 samples with a 256-sample hop; a signal shorter than one
/// frame is scored as a single frame.
pub fn seg_snr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_lengths("seg_snr", reference, estimate)?;
    let s = reference.samples();
    let e = estimate.samples();
    let n = s.len();
    let starts: Vec<usize> = if n <= FRAME_LEN {
        vec![0]
    } else {
        (0..=(n - FRAME_LEN) / FRAME_SHIFT).map(|i| i * FRAME_SHIFT).collect()
    };
    let (mut sum, mut active) = (0.0, 0usize);
    for start in starts {
        let end = (start + FRAME_LEN).min(n);
        let (mut sig, mut err) = (0.0, 0.0);
        for (a, b) in s[start..end].iter().zip(&e[start..end]) {
            sig += a * a;
            err += (a - b) * (a - b);
        }
        if sig > ACTIVE_FRAME_ENERGY {
            sum += ratio_db(sig, err).clamp(SEG_SNR_FLOOR_DB, SEG_SNR_CEIL_DB);
            active += 1;
        }
    }
    if active == 0 {
        return Err(Error::invalid("seg_snr", "reference has no active frames"));
    }
    Ok(sum / active as f64)
}

/// Mean squared difference of STFT magnitudes.
pub fn spectral_mse(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_lengths("spectral_mse", reference, estimate)?;
    let a = magnitude(&stft(reference)?);
    let b = magnitude(&stft(estimate)?);
    let n = a.data().len();
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    SiSdr,
    SegSnr,
    SpectralMse,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::SiSdr, Metric::SegSnr, Metric::SpectralMse];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::SiSdr => "si_sdr",
            Metric::SegSnr => "seg_snr",
            Metric::SpectralMse => "spectral_mse",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Frozen test conditions: every noise at every SNR.
#[derive(Clone, Debug, PartialEq)]
pub struct TestSpec {
    pub noises: Vec<NoiseKind>,
    pub snrs_db: Vec<f64>,
    pub per_condition: usize,
    pub seed: u64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for TestSpec {
    fn default() -> Self {
        let mix = MixtureConfig::default();
        Self {
            noises: vec![
                NoiseKind::Colored { alpha: -2.0 },
                NoiseKind::Colored { alpha: -1.0 },
                NoiseKind::Colored { alpha: 0.0 },
                NoiseKind::Colored { alpha: 1.0 },
                NoiseKind::Babble,
            ],
            snrs_db: vec![-5.0, 0.0, 5.0, 10.0, 15.0],
            per_condition: 10,
            seed: 0,
            min_len: mix.min_len,
            max_len: mix.max_len,
        }
    }
}

/// One test mixture with its condition.
#[derive(Clone, Debug)]
pub struct TestItem {
    pub noise: String,
    pub snr_db: f64,
    pub mixture: Mixture,
}

/// Test mixtures in condition order, built from held-out generator seeds.
pub fn test_set(spec: &TestSpec) -> Result<Vec<TestItem>> {
    if spec.noises.is_empty() || spec.snrs_db.is_empty() || spec.per_condition == 0 {
        return Err(Error::invalid(
            "test_set",
            "need at least one noise, SNR and utterance per condition",
        ));
    }
    let cfg = MixtureConfig {
        min_len: spec.min_len,
        max_len: spec.max_len,
        ..MixtureConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(tagged_seed(spec.seed, Stream::Test));
    let mut items = Vec::new();
    for noise in &spec.noises {
        let recording = noise.generate(RECORDING_LEN, tagged_seed(rng.random::<u64>() >> 2, Stream::Test))?;
        for &snr in &spec.snrs_db {
            for _ in 0..spec.per_condition {
                let seed = tagged_seed(rng.random::<u64>() >> 2, Stream::Test);
                items.push(TestItem {
                    noise: noise.label(),
                    snr_db: snr,
                    mixture: mixture_with_noise(&cfg, seed, *noise, &recording, snr)?,
                });
            }
        }
    }
    Ok(items)
}

/// What produces the enhanced waveform under evaluation.
#[derive(Clone, Copy, Debug)]
pub enum System<'a> {
    /// Mask ≡ 1: the noisy input passed through unchanged.
    Identity,
    /// Ground-truth mask of the given kind.
    Oracle(TargetKind),
    Model(&'a EnhancementModel),
}

impl System<'_> {
    pub fn label(&self) -> String {
        match self {
            System::Identity => "noisy".to_string(),
            System::Oracle(k) => format!("oracle_{k}"),
            System::Model(m) => m.config().variant.to_string(),
        }
    }

    pub fn enhance(&self, m: &Mixture) -> Result<Waveform> {
        match self {
            System::Identity => Ok(m.noisy.clone()),
            System::Oracle(kind) => enhance_with_mask(&m.noisy, &target_mask(m, *kind)?),
            System::Model(model) => enhance(&m.noisy, model),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceScore {
    pub index: usize,
    pub seed: u64,
    pub noise: String,
    pub snr_db: f64,
    pub values: [f64; 3],
}

pub fn score(reference: &Waveform, estimate: &Waveform) -> Result<[f64; 3]> {
    Ok([
        si_sdr(reference, estimate)?,
        seg_snr(reference, estimate)?,
        spectral_mse(reference, estimate)?,
    ])
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub noise: String,
    pub snr_db: f64,
    pub metric: Metric,
    pub mean: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    /// Per-condition means in first-seen condition order, metrics in fixed order.
    pub fn aggregate(scores: &[UtteranceScore]) -> Self {
        let mut conditions: Vec<(String, f64)> = Vec::new();
        for s in scores {
            if !conditions.iter().any(|(n, v)| *n == s.noise && *v == s.snr_db) {
                conditions.push((s.noise.clone(), s.snr_db));
            }
        }
        let mut rows = Vec::new();
        for (noise, snr) in conditions {
            let group: Vec<&UtteranceScore> = scores.iter().filter(|s| s.noise == noise && s.snr_db == snr).collect();
            for (i, metric) in Metric::ALL.into_iter().enumerate() {
                let mean = group.iter().map(|s| s.values[i]).sum::<f64>() / group.len() as f64;
                rows.push(ReportRow {
                    noise: noise.clone(),
                    snr_db: snr,
                    metric,
                    mean,
                    count: group.len(),
                });
            }
        }
        Self { rows }
    }

    pub fn get(&self, noise: &str, snr_db: f64, metric: Metric) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.noise == noise && r.snr_db == snr_db && r.metric == metric)
    }

    /// `condition_noise,condition_snr_db,metric,mean,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("condition_noise,condition_snr_db,metric,mean,count\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.noise, r.snr_db, r.metric, r.mean, r.count
            ));
        }
        out
    }
}

/// `index,seed,condition_noise,condition_snr_db,si_sdr,seg_snr,spectral_mse`.
pub fn utterance_csv(scores: &[UtteranceScore]) -> String {
    let mut out = String::from("index,seed,condition_noise,condition_snr_db");
    for m in Metric::ALL {
        out.push(',');
        out.push_str(m.as_str());
    }
    out.push('\n');
    for s in scores {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.index, s.seed, s.noise, s.snr_db, s.values[0], s.values[1], s.values[2]
        ));
    }
    out
}

/// Scores a system on every test item against the clean reference.
pub fn evaluate(system: System<'_>, items: &[TestItem]) -> Result<(EvalReport, Vec<UtteranceScore>)> {
    let scores = items
        .iter()
        .enumerate()
        .map(|(index, item)| {
            let estimate = system.enhance(&item.mixture)?;
            Ok(UtteranceScore {
                index,
                seed: item.mixture.seed,
                noise: item.noise.clone(),
                snr_db: item.snr_db,
                values: score(&item.mixture.clean, &estimate)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((EvalReport::aggregate(&scores), scores))
}
