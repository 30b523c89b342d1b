//! Square-root-Hann STFT analysis and overlap-add synthesis.
//!
//! Frames are 512 samples (32 ms at 16 kHz) with a 256-sample hop. The first
//! frame starts at sample 0 and the tail is zero-padded to complete the last
//! frame, so a signal of `n` samples yields `ceil(n / 256)` frames. Analysis and
//! synthesis windows are both the square root of the periodic Hann window,
//! whose square sums to exactly one at 50 % overlap.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::audio::Waveform;
use crate::error::{Error, Result};

pub const FRAME_LEN: usize = 512;
pub const FRAME_SHIFT: usize = 256;
/// DC through Nyquist.
pub const NUM_BINS: usize = FRAME_LEN / 2 + 1;

/// Row-major `frames × bins` time-frequency grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    frames: usize,
    bins: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn from_vec(frames: usize, bins: usize, data: Vec<T>) -> Result<Self> {
        if frames * bins != data.len() {
            return Err(Error::invalid(
                "Grid::from_vec",
                format!("{} values do not fill {frames}×{bins}", data.len()),
            ));
        }
        Ok(Self { frames, bins, data })
    }

    pub fn filled(frames: usize, bins: usize, value: T) -> Self {
        Self {
            frames,
            bins,
            data: vec![value; frames * bins],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, l: usize, k: usize) -> T {
        self.data[l * self.bins + k]
    }

    pub fn frame(&self, l: usize) -> &[T] {
        &self.data[l * self.bins..(l + 1) * self.bins]
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.frames == other.frames && self.bins == other.bins
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            frames: self.frames,
            bins: self.bins,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }
}

/// STFT coefficients, `L × 257`.
pub type ComplexSpectrum = Grid<Complex64>;
/// Non-negative spectral magnitudes.
pub type MagnitudeSpectrum = Grid<f64>;
/// Per-bin phase angles in `(−π, π]`.
pub type PhaseSpectrum = Grid<f64>;

/// `sqrt` of the periodic Hann window of length `n`.
pub fn sqrt_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).sqrt())
        .collect()
}

struct Plan {
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

thread_local! {
    static PLAN: RefCell<Option<Plan>> = const { RefCell::new(None) };
}

fn with_plan<R>(f: impl FnOnce(&Plan) -> R) -> R {
    PLAN.with(|cell| {
        let mut slot = cell.borrow_mut();
        let plan = slot.get_or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Plan {
                window: sqrt_hann(FRAME_LEN),
                forward: planner.plan_fft_forward(FRAME_LEN),
                inverse: planner.plan_fft_inverse(FRAME_LEN),
            }
        });
        f(plan)
    })
}

pub fn num_frames(len: usize) -> usize {
    len.div_ceil(FRAME_SHIFT)
}

/// Forward STFT keeping bins `0..=256`.
pub fn stft(w: &Waveform) -> Result<ComplexSpectrum> {
    let x = w.samples();
    if x.is_empty() {
        return Err(Error::invalid("stft", "empty waveform"));
    }
    let frames = num_frames(x.len());
    let mut data = Vec::with_capacity(frames * NUM_BINS);
    with_plan(|plan| {
        let mut buf = vec![Complex64::default(); FRAME_LEN];
        for l in 0..frames {
            let start = l * FRAME_SHIFT;
            for (i, b) in buf.iter_mut().enumerate() {
                let v = x.get(start + i).copied().unwrap_or(0.0);
                *b = Complex64::new(v * plan.window[i], 0.0);
            }
            plan.forward.process(&mut buf);
            data.extend_from_slice(&buf[..NUM_BINS]);
        }
    });
    Ok(Grid {
        frames,
        bins: NUM_BINS,
        data,
    })
}

/// Inverse STFT by windowed overlap-add, truncated to `out_len` samples.
///
/// Each frame's full 512-point spectrum is rebuilt from the single-sided half by
/// conjugate symmetry; the imaginary parts of DC and Nyquist are ignored.
pub fn istft(spec: &ComplexSpectrum, out_len: usize) -> Result<Waveform> {
    if spec.bins != NUM_BINS || spec.frames == 0 {
        return Err(Error::invalid(
            "istft",
            format!("expected L×{NUM_BINS} with L ≥ 1, got {}×{}", spec.frames, spec.bins),
        ));
    }
    let capacity = spec.frames * FRAME_SHIFT + FRAME_SHIFT;
    if out_len > capacity {
        return Err(Error::invalid(
            "istft",
            format!(
                "{out_len} samples requested from {} frames (max {capacity})",
                spec.frames
            ),
        ));
    }
    let mut out = vec![0.0; capacity];
    with_plan(|plan| {
        let mut buf = vec![Complex64::default(); FRAME_LEN];
        let scale = 1.0 / FRAME_LEN as f64;
        for l in 0..spec.frames {
            let half = spec.frame(l);
            buf[0] = Complex64::new(half[0].re, 0.0);
            buf[FRAME_LEN / 2] = Complex64::new(half[FRAME_LEN / 2].re, 0.0);
            for k in 1..FRAME_LEN / 2 {
                buf[k] = half[k];
                buf[FRAME_LEN - k] = half[k].conj();
            }
            plan.inverse.process(&mut buf);
            let start = l * FRAME_SHIFT;
            for (i, b) in buf.iter().enumerate() {
                out[start + i] += b.re * scale * plan.window[i];
            }
        }
    });
    out.truncate(out_len);
    Ok(Waveform::from_finite(out))
}

/// Elementwise modulus.
pub fn magnitude(spec: &ComplexSpectrum) -> MagnitudeSpectrum {
    spec.map(|c| c.norm_sqr().sqrt())
}

/// Elementwise modulus and argument. The phase of an exactly-zero bin is 0.
pub fn mag_phase(spec: &ComplexSpectrum) -> (MagnitudeSpectrum, PhaseSpectrum) {
    let mag = magnitude(spec);
    let phase = spec.map(|c| {
        if c.re == 0.0 && c.im == 0.0 {
            0.0
        } else {
            let p = c.im.atan2(c.re);
            if p <= -PI {
                PI
            } else {
                p
            }
        }
    });
    (mag, phase)
}

/// Rebuilds complex coefficients from magnitude and phase.
pub fn from_mag_phase(mag: &MagnitudeSpectrum, phase: &PhaseSpectrum) -> Result<ComplexSpectrum> {
    if !mag.same_shape(phase) {
        return Err(Error::invalid("from_mag_phase", "magnitude and phase shapes differ"));
    }
    let data = mag
        .data
        .iter()
        .zip(&phase.data)
        .map(|(m, p)| Complex64::from_polar(*m, *p))
        .collect();
    Grid::from_vec(mag.frames, mag.bins, data)
}
