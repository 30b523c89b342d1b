use std::f64::consts::PI;

use proptest::prelude::*;
use tfa_core::audio::{
    colored_noise, harmonic_stack, mix_at_snr, quantize_pcm16, read_wav, snr_db, synth_clean, write_wav, CleanKind,
    MixSpec, NoiseKind, Waveform,
};

/// Least-squares slope of log power against log frequency, one point per
/// octave band, each band averaging a direct DFT over a subset of its bins.
fn octave_slope(x: &[f64]) -> f64 {
    let n = x.len();
    let mut pts = Vec::new();
    let mut lo = 32usize;
    while lo * 2 <= n / 4 {
        let hi = lo * 2;
        let step = ((hi - lo) / 48).max(1);
        let (mut acc, mut cnt) = (0.0, 0usize);
        let mut k = lo;
        while k < hi {
            let w = 2.0 * PI * k as f64 / n as f64;
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let a = w * t as f64;
                re += v * a.cos();
                im -= v * a.sin();
            }
            acc += re * re + im * im;
            cnt += 1;
            k += step;
        }
        let centre = ((lo * hi) as f64).sqrt();
        pts.push((centre.log10(), (acc / cnt as f64).log10()));
        lo = hi;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[test]
fn white_noise_spectrum_is_flat() {
    let x = colored_noise(0.0, 1 << 16, 3).unwrap();
    let slope = octave_slope(x.samples());
    assert!(slope.abs() < 0.3, "slope {slope}");
}

#[test]
fn brown_noise_slope_is_minus_two() {
    let x = colored_noise(-2.0, 1 << 16, 4).unwrap();
    let slope = octave_slope(x.samples());
    assert!((slope + 2.0).abs() < 0.3, "slope {slope}");
}

#[test]
fn colored_noise_unit_rms_and_deterministic() {
    for alpha in NoiseKind::alpha_grid() {
        let a = colored_noise(alpha, 5000, 9).unwrap();
        assert!((a.rms() - 1.0).abs() < 1e-9, "alpha {alpha}");
        let b = colored_noise(alpha, 5000, 9).unwrap();
        assert_eq!(a, b);
    }
    assert!(colored_noise(1.0, 0, 0).is_err());
}

/// Average magnitude of 512-point Hann-windowed frames via a direct DFT.
fn averaged_spectrum(x: &[f64]) -> Vec<f64> {
    let n = 512;
    let mut acc = vec![0.0; n / 2 + 1];
    let mut frames = 0;
    let mut start = 0;
    while start + n <= x.len() {
        for (k, a) in acc.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for t in 0..n {
                let w = 0.5 - 0.5 * (2.0 * PI * t as f64 / n as f64).cos();
                let ang = 2.0 * PI * (k * t) as f64 / n as f64;
                re += w * x[start + t] * ang.cos();
                im -= w * x[start + t] * ang.sin();
            }
            *a += (re * re + im * im).sqrt();
        }
        frames += 1;
        start += n;
    }
    acc.iter().map(|v| v / frames as f64).collect()
}

#[test]
fn harmonic_stack_peaks_at_harmonics() {
    let x = harmonic_stack(200.0, 8192, 1).unwrap();
    let spec = averaged_spectrum(x.samples());
    for f in [200.0, 400.0, 600.0] {
        let k = (f / 16000.0 * 512.0_f64).round() as usize;
        assert!(
            spec[k] > spec[k - 1] && spec[k] > spec[k + 1],
            "no peak at {f} Hz (bin {k})"
        );
    }
}

#[test]
fn clean_generators_contract() {
    for kind in CleanKind::ALL {
        let a = synth_clean(kind, 512, 11).unwrap();
        assert_eq!(a.len(), 512);
        assert_eq!(a, synth_clean(kind, 512, 11).unwrap());
        let long = synth_clean(kind, 16000, 2).unwrap();
        assert!((long.rms() - 1.0).abs() < 1e-9, "{kind:?}");
        assert!(synth_clean(kind, 0, 0).is_err());
    }
}

#[test]
fn babble_is_deterministic_unit_rms() {
    let a = NoiseKind::Babble.generate(8000, 5).unwrap();
    assert_eq!(a, NoiseKind::Babble.generate(8000, 5).unwrap());
    assert!((a.rms() - 1.0).abs() < 1e-9);
}

#[test]
fn pcm16_reading_scales_by_two_to_the_fifteen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 16000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&path, spec).unwrap();
    for v in [16384i16, 0, -32768] {
        w.write_sample(v).unwrap();
    }
    w.finalize().unwrap();
    assert_eq!(read_wav(&path).unwrap().samples(), &[0.5, 0.0, -1.0]);
}

#[test]
fn float_wav_passes_through() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 16000,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(&path, spec).unwrap();
    for v in [0.25f32, -0.125, 0.1] {
        w.write_sample(v).unwrap();
    }
    w.finalize().unwrap();
    assert_eq!(read_wav(&path).unwrap().samples(), &[0.25, -0.125, 0.1f32 as f64]);
}

#[test]
fn stereo_and_wrong_rate_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for (channels, rate, needle) in [(2, 16000, "unsupported channel count"), (1, 44100, "sample rate")] {
        let path = dir.path().join(format!("{channels}_{rate}.wav"));
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..channels * 4 {
            w.write_sample(1i16).unwrap();
        }
        w.finalize().unwrap();
        let err = read_wav(&path).unwrap_err().to_string();
        assert!(err.contains(needle), "{err}");
    }
}

#[test]
fn truncated_file_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.wav");
    write_wav(&Waveform::new(vec![0.1; 100]).unwrap(), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 51]).unwrap();
    assert!(read_wav(&path).is_err());
    std::fs::write(&path, &bytes[..20]).unwrap();
    assert!(read_wav(&path).is_err());
}

#[test]
fn write_clamps_and_quantizes() {
    assert_eq!(quantize_pcm16(1.7), i16::MAX);
    assert_eq!(quantize_pcm16(-3.0), i16::MIN);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.wav");
    let w = Waveform::new(vec![0.0, 0.5, -0.5, 1.7]).unwrap();
    write_wav(&w, &path).unwrap();
    let mut r = hound::WavReader::open(&path).unwrap();
    assert_eq!(r.spec().bits_per_sample, 16);
    let codes: Vec<i16> = r.samples::<i16>().map(|s| s.unwrap()).collect();
    assert_eq!(codes, vec![0, 16384, -16384, 32767]);
}

#[test]
fn empty_waveform_writes_valid_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.wav");
    write_wav(&Waveform::new(vec![]).unwrap(), &path).unwrap();
    assert!(read_wav(&path).unwrap().is_empty());
}

#[test]
fn non_finite_samples_rejected() {
    assert!(Waveform::new(vec![0.0, f64::NAN]).is_err());
    assert!(Waveform::new(vec![f64::INFINITY]).is_err());
}

fn spec(snr_db: f64, noise_offset: usize) -> MixSpec {
    MixSpec {
        snr_db,
        noise_offset,
        seed: 0,
    }
}

#[test]
fn equal_power_mix_has_unit_gain() {
    let clean = colored_noise(0.0, 4000, 1).unwrap();
    let noise = colored_noise(0.0, 4000, 2).unwrap();
    let (noisy, used) = mix_at_snr(&clean, &noise, &spec(0.0, 0)).unwrap();
    assert!(snr_db(&clean, &used).abs() < 1e-9);
    for ((x, s), d) in noisy.samples().iter().zip(clean.samples()).zip(used.samples()) {
        assert!((x - s - d).abs() < 1e-15);
    }
    // Both are unit RMS over the same length, so the gain is 1.
    for (a, b) in used.samples().iter().zip(noise.samples()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn mix_reaches_target_snr() {
    let clean = synth_clean(CleanKind::Harmonic, 6000, 1).unwrap();
    let noise = NoiseKind::Colored { alpha: -1.0 }.generate(9000, 2).unwrap();
    for target in [20.0, -10.0] {
        let (_, used) = mix_at_snr(&clean, &noise, &spec(target, 1234)).unwrap();
        assert!((snr_db(&clean, &used) - target).abs() < 1e-6);
    }
}

#[test]
fn mix_rejects_short_or_silent_noise() {
    let clean = Waveform::new(vec![1.0; 100]).unwrap();
    assert!(mix_at_snr(&clean, &Waveform::new(vec![1.0; 120]).unwrap(), &spec(0.0, 30)).is_err());
    assert!(mix_at_snr(&clean, &Waveform::new(vec![0.0; 200]).unwrap(), &spec(0.0, 0)).is_err());
    assert!(mix_at_snr(&Waveform::new(vec![0.0; 100]).unwrap(), &clean, &spec(0.0, 0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn any_mix_reproduces_its_snr(snr in -10i32..=20, offset in 0usize..2000, seed in 0u64..1000) {
        let clean = synth_clean(CleanKind::ALL[(seed % 3) as usize], 3000, seed).unwrap();
        let noise = colored_noise(0.5, 5000, seed + 1).unwrap();
        let (_, used) = mix_at_snr(&clean, &noise, &spec(snr as f64, offset)).unwrap();
        prop_assert!((snr_db(&clean, &used) - snr as f64).abs() < 1e-6);
    }

    #[test]
    fn wav_roundtrip_within_one_step(v in prop::collection::vec(-1.0f64..1.0, 0..200)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.wav");
        write_wav(&Waveform::new(v.clone()).unwrap(), &path).unwrap();
        let back = read_wav(&path).unwrap();
        prop_assert_eq!(back.len(), v.len());
        for (a, b) in back.samples().iter().zip(&v) {
            prop_assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }
}
