//! On-the-fly synthetic mixtures and their training targets.
//!
//! Every utterance is a pure function of its own seed. Seeds carry a stream
//! tag in their low bits so training, validation and test material never share
//! a generator seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::audio::{mix_at_snr, synth_clean, CleanKind, MixSpec, NoiseKind, Waveform};
use crate::error::{Error, Result};
pub use crate::masks::TargetKind;
use crate::masks::{oracle_mask, Mask};
use crate::stft::{magnitude, stft, MagnitudeSpectrum};

/// Which generator stream a seed belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Train = 0,
    Validation = 1,
    Test = 2,
}

/// Mixes a raw seed into a tagged seed of the given stream.
pub fn tagged_seed(raw: u64, stream: Stream) -> u64 {
    (raw << 2) | stream as u64
}

pub fn stream_of(seed: u64) -> Stream {
    match seed & 3 {
        0 => Stream::Train,
        1 => Stream::Validation,
        _ => Stream::Test,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixtureConfig {
    /// Utterance length range in samples, inclusive.
    pub min_len: usize,
    pub max_len: usize,
    /// Integer SNR range in dB, inclusive.
    pub snr_min_db: i32,
    pub snr_max_db: i32,
    /// Probability that an utterance uses babble rather than colored noise.
    pub babble_prob: f64,
    pub target: TargetKind,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self {
            min_len: 8000,
            max_len: 16000,
            snr_min_db: -10,
            snr_max_db: 20,
            babble_prob: 0.25,
            target: TargetKind::Irm,
        }
    }
}

impl MixtureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::invalid(
                "MixtureConfig",
                format!("length range [{}, {}] is empty", self.min_len, self.max_len),
            ));
        }
        if self.snr_min_db > self.snr_max_db {
            return Err(Error::invalid(
                "MixtureConfig",
                format!("SNR range [{}, {}] is empty", self.snr_min_db, self.snr_max_db),
            ));
        }
        if !(0.0..=1.0).contains(&self.babble_prob) {
            return Err(Error::invalid("MixtureConfig", "babble probability outside [0, 1]"));
        }
        Ok(())
    }
}

/// Length of every synthetic noise recording, in samples (about 4 s).
pub const RECORDING_LEN: usize = 1 << 16;

/// Fixed set of noise recordings that mixtures take random sections from.
#[derive(Clone, Debug)]
pub struct NoiseBank {
    colored: Vec<(NoiseKind, Waveform)>,
    babble: Vec<(NoiseKind, Waveform)>,
}

impl NoiseBank {
    /// One recording per colored-noise α plus four babble recordings.
    pub fn synthesize(seed: u64, stream: Stream) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(tagged_seed(seed, stream));
        let mut make = |kind: NoiseKind| -> Result<(NoiseKind, Waveform)> {
            Ok((kind, kind.generate(RECORDING_LEN, rng.random())?))
        };
        let colored = NoiseKind::alpha_grid()
            .into_iter()
            .map(|alpha| make(NoiseKind::Colored { alpha }))
            .collect::<Result<Vec<_>>>()?;
        let babble = (0..4).map(|_| make(NoiseKind::Babble)).collect::<Result<Vec<_>>>()?;
        Ok(Self { colored, babble })
    }

    pub fn recordings(&self) -> impl Iterator<Item = &(NoiseKind, Waveform)> {
        self.colored.iter().chain(&self.babble)
    }

    fn draw(&self, babble_prob: f64, rng: &mut impl Rng) -> &(NoiseKind, Waveform) {
        let pool = if rng.random_bool(babble_prob) {
            &self.babble
        } else {
            &self.colored
        };
        &pool[rng.random_range(0..pool.len())]
    }
}

/// A clean utterance, the noise actually added to it, and the mixture.
#[derive(Clone, Debug)]
pub struct Mixture {
    pub seed: u64,
    pub clean_kind: CleanKind,
    pub noise: NoiseKind,
    pub spec: MixSpec,
    pub clean: Waveform,
    pub noise_used: Waveform,
    pub noisy: Waveform,
}

fn mix_section(
    cfg: &MixtureConfig,
    seed: u64,
    rng: &mut ChaCha8Rng,
    noise: (NoiseKind, &Waveform),
    snr_db: f64,
) -> Result<Mixture> {
    let len = rng.random_range(cfg.min_len..=cfg.max_len);
    if noise.1.len() < len {
        return Err(Error::invalid(
            "mixture",
            format!(
                "noise recording of {} samples is shorter than a {len}-sample utterance",
                noise.1.len()
            ),
        ));
    }
    let clean_kind = CleanKind::ALL[rng.random_range(0..CleanKind::ALL.len())];
    let clean = synth_clean(clean_kind, len, rng.random())?;
    let spec = MixSpec {
        snr_db,
        noise_offset: rng.random_range(0..=noise.1.len() - len),
        seed,
    };
    let (noisy, noise_used) = mix_at_snr(&clean, noise.1, &spec)?;
    Ok(Mixture {
        seed,
        clean_kind,
        noise: noise.0,
        spec,
        clean,
        noise_used,
        noisy,
    })
}

/// Clean utterance mixed with a random section of a random bank recording at
/// a random integer SNR from the configured range.
pub fn synth_mixture(cfg: &MixtureConfig, bank: &NoiseBank, seed: u64) -> Result<Mixture> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let snr = rng.random_range(cfg.snr_min_db..=cfg.snr_max_db) as f64;
    let (kind, recording) = bank.draw(cfg.babble_prob, &mut rng);
    mix_section(cfg, seed, &mut rng, (*kind, recording), snr)
}

/// Clean utterance mixed with a random section of a given recording at a fixed SNR.
pub fn mixture_with_noise(
    cfg: &MixtureConfig,
    seed: u64,
    noise: NoiseKind,
    recording: &Waveform,
    snr_db: f64,
) -> Result<Mixture> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    mix_section(cfg, seed, &mut rng, (noise, recording), snr_db)
}

/// Network input and training target for one mixture.
#[derive(Clone, Debug)]
pub struct Example {
    pub seed: u64,
    pub noisy_mag: MagnitudeSpectrum,
    pub target: Mask,
}

impl Example {
    pub fn frames(&self) -> usize {
        self.noisy_mag.frames()
    }
}

/// Target mask of a mixture; the IRM uses the scaled noise that was added.
pub fn target_mask(m: &Mixture, kind: TargetKind) -> Result<Mask> {
    oracle_mask(kind, &m.clean, &m.noise_used, &m.noisy)
}

pub fn make_example(m: &Mixture, kind: TargetKind) -> Result<Example> {
    let noisy_mag = magnitude(&stft(&m.noisy)?);
    Ok(Example {
        seed: m.seed,
        noisy_mag,
        target: target_mask(m, kind)?,
    })
}

/// `size` training examples with seeds drawn from `rng`.
pub fn make_batch(cfg: &MixtureConfig, bank: &NoiseBank, size: usize, rng: &mut impl Rng) -> Result<Vec<Example>> {
    let seeds: Vec<u64> = (0..size)
        .map(|_| tagged_seed(rng.random::<u64>() >> 2, Stream::Train))
        .collect();
    seeds
        .into_iter()
        .map(|seed| make_example(&synth_mixture(cfg, bank, seed)?, cfg.target))
        .collect()
}

/// Fixed validation examples for a run seed, drawn from their own noise bank.
pub fn validation_set(cfg: &MixtureConfig, size: usize, run_seed: u64) -> Result<Vec<Example>> {
    let bank = NoiseBank::synthesize(run_seed, Stream::Validation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tagged_seed(run_seed, Stream::Validation));
    (0..size)
        .map(|_| {
            let seed = tagged_seed(rng.random::<u64>() >> 2, Stream::Validation);
            make_example(&synth_mixture(cfg, &bank, seed)?, cfg.target)
        })
        .collect()
}

/// SHA-256 over the inputs and targets of a batch, as lowercase hex.
pub fn batch_digest(batch: &[Example]) -> String {
    let mut h = Sha256::new();
    for ex in batch {
        h.update(ex.seed.to_le_bytes());
        h.update((ex.frames() as u64).to_le_bytes());
        for v in ex.noisy_mag.data().iter().chain(ex.target.values()) {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
