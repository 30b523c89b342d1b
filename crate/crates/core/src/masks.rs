//! Training targets and mask application.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::restcn::EnhancementModel;
use crate::stft::{istft, magnitude, stft, ComplexSpectrum, Grid, MagnitudeSpectrum};

/// Training target family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetKind {
    Irm,
    Psm,
}

impl TargetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetKind::Irm => "irm",
            TargetKind::Psm => "psm",
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "irm" => Ok(TargetKind::Irm),
            "psm" => Ok(TargetKind::Psm),
            _ => Err(Error::invalid(
                "target",
                format!("unknown target {s:?} (expected irm or psm)"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    Irm,
    Psm,
    Predicted,
}

/// Real-valued `[L × K]` mask with entries in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    grid: Grid<f64>,
    kind: MaskKind,
}

impl Mask {
    pub fn new(grid: Grid<f64>, kind: MaskKind) -> Result<Self> {
        if let Some(v) = grid.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid("Mask", format!("value {v} outside [0, 1]")));
        }
        Ok(Self { grid, kind })
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        self.grid.data()
    }

    pub fn frames(&self) -> usize {
        self.grid.frames()
    }

    pub fn bins(&self) -> usize {
        self.grid.bins()
    }
}

fn check_shapes<A, B>(op: &'static str, a: &Grid<A>, b: &Grid<B>) -> Result<()>
where
    A: Copy,
    B: Copy,
{
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::invalid(
            op,
            format!("shape {}×{} vs {}×{}", a.frames(), a.bins(), b.frames(), b.bins()),
        ))
    }
}

/// `sqrt(|S|² / (|S|² + |D|²))`, with silent bins mapped to 0.
pub fn irm(clean_mag: &MagnitudeSpectrum, noise_mag: &MagnitudeSpectrum) -> Result<Mask> {
    check_shapes("irm", clean_mag, noise_mag)?;
    let data = clean_mag
        .data()
        .iter()
        .zip(noise_mag.data())
        .map(|(&s, &d)| {
            let (s2, d2) = (s * s, d * d);
            if s2 + d2 > 0.0 {
                (s2 / (s2 + d2)).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    Mask::new(
        Grid::from_vec(clean_mag.frames(), clean_mag.bins(), data)?,
        MaskKind::Irm,
    )
}

/// `(|S|/|X|) · cos(θ_S − θ_X)` before truncation; 0 where `|X| = 0`.
pub fn psm_unclamped(clean: &ComplexSpectrum, noisy: &ComplexSpectrum) -> Result<Grid<f64>> {
    check_shapes("psm", clean, noisy)?;
    let data = clean
        .data()
        .iter()
        .zip(noisy.data())
        .map(|(s, x)| {
            // Re(S·X̄)/|X|² = |S|/|X| · cos(θ_S − θ_X).
            let x2 = x.norm_sqr();
            if x2 > 0.0 {
                (s * x.conj()).re / x2
            } else {
                0.0
            }
        })
        .collect();
    Grid::from_vec(clean.frames(), clean.bins(), data)
}

/// Phase-sensitive mask truncated to `[0, 1]`.
pub fn psm(clean: &ComplexSpectrum, noisy: &ComplexSpectrum) -> Result<Mask> {
    let raw = psm_unclamped(clean, noisy)?;
    Mask::new(raw.map(|v| v.clamp(0.0, 1.0)), MaskKind::Psm)
}

/// Scales each noisy bin by the mask, keeping its phase.
pub fn apply_mask(noisy: &ComplexSpectrum, m: &Mask) -> Result<ComplexSpectrum> {
    check_shapes("apply_mask", noisy, m.grid())?;
    let data: Vec<Complex64> = noisy.data().iter().zip(m.values()).map(|(x, &w)| x * w).collect();
    Grid::from_vec(noisy.frames(), noisy.bins(), data)
}

/// Ground-truth mask from the clean signal, the noise added to it and their sum.
pub fn oracle_mask(kind: TargetKind, clean: &Waveform, noise: &Waveform, noisy: &Waveform) -> Result<Mask> {
    let s = stft(clean)?;
    match kind {
        TargetKind::Irm => irm(&magnitude(&s), &magnitude(&stft(noise)?)),
        TargetKind::Psm => psm(&s, &stft(noisy)?),
    }
}

/// Resynthesises `noisy` with a given mask, truncated to the input length.
pub fn enhance_with_mask(noisy: &Waveform, m: &Mask) -> Result<Waveform> {
    let spec = stft(noisy)?;
    istft(&apply_mask(&spec, m)?, noisy.len())
}

/// Mask predicted by the model for a noisy waveform.
pub fn predict_mask(noisy: &Waveform, model: &EnhancementModel) -> Result<Mask> {
    let mag = magnitude(&stft(noisy)?);
    let grid = model.predict(&mag)?;
    // Sigmoid outputs can round to exactly 0 or 1 in single precision but never beyond.
    Mask::new(grid.map(|v| v.clamp(0.0, 1.0)), MaskKind::Predicted)
}

/// STFT → magnitude → network → mask → ISTFT with the noisy phase.
pub fn enhance(noisy: &Waveform, model: &EnhancementModel) -> Result<Waveform> {
    let spec = stft(noisy)?;
    let mag = magnitude(&spec);
    let grid = model.predict(&mag)?;
    let m = Mask::new(grid.map(|v| v.clamp(0.0, 1.0)), MaskKind::Predicted)?;
    istft(&apply_mask(&spec, &m)?, noisy.len())
}
