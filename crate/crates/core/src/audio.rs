//! Waveform front-end: sliding-window magnitude spectrograms and a fixed
//! 512-value reduction usable as an audio clip embedding.
//!
//! The analysis expects 16 kHz mono input and applies a 400-sample
//! (25 ms) periodic Hamming window every 160 samples (10 ms), zero-pads
//! each frame to 512 points and keeps the 257 non-redundant magnitude
//! bins of the discrete Fourier transform.

use ndarray::{Array2, Axis};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::model::Embedding;

pub const CANONICAL_SAMPLE_RATE: u32 = 16_000;
pub const WINDOW_SIZE: usize = 400;
pub const STEP_SIZE: usize = 160;
pub const FFT_SIZE: usize = 512;
/// Bins 0..=256 of the 512-point transform (the rest mirror them).
pub const SPECTRUM_BINS: usize = FFT_SIZE / 2 + 1;
pub const AUDIO_EMBED_DIM: usize = 512;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AudioError {
    #[error("waveform has {len} samples; at least {min} are required for one window")]
    TooShort { len: usize, min: usize },
    #[error("sample rate {found} Hz unsupported; expected {expected} Hz")]
    WrongSampleRate { found: u32, expected: u32 },
    #[error("spectrogram is empty")]
    EmptyInput,
    #[error("spectrogram has {cols} frequency bins; expected {expected}")]
    BadShape { cols: usize, expected: usize },
    #[error("PCM byte stream length {len} is not a multiple of 2")]
    MalformedPcm { len: usize },
    #[error("waveform contains a non-finite sample")]
    NonFiniteSample,
}

/// Mono waveform with samples scaled to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(AudioError::NonFiniteSample);
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Decodes raw little-endian signed 16-bit mono PCM.
    pub fn from_pcm16le(bytes: &[u8], sample_rate: u32) -> Result<Self, AudioError> {
        if bytes.len() % 2 != 0 {
            return Err(AudioError::MalformedPcm { len: bytes.len() });
        }
        let samples = bytes
            .chunks_exact(2)
            .map(|pair| i16::from_le_bytes([pair[0], pair[1]]) as f64 / 32768.0)
            .collect();
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Periodic Hamming window coefficient for position `n` of `N`.
fn hamming(n: usize, size: usize) -> f64 {
    0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / size as f64).cos()
}

/// Number of analysis frames for a sample count, if at least one fits.
pub fn frame_count(samples: usize) -> Option<usize> {
    if samples < WINDOW_SIZE {
        None
    } else {
        Some((samples - WINDOW_SIZE) / STEP_SIZE + 1)
    }
}

/// Windows `WINDOW_SIZE` samples starting at `start` and zero-pads to the
/// transform length.
pub(crate) fn windowed_frame(samples: &[f64], start: usize) -> Vec<f64> {
    let mut frame = vec![0.0; FFT_SIZE];
    for n in 0..WINDOW_SIZE {
        frame[n] = samples[start + n] * hamming(n, WINDOW_SIZE);
    }
    frame
}

/// Full 512-bin magnitude spectrum of one already-windowed frame.
#[cfg(test)]
pub(crate) fn magnitude_spectrum(frame: &[f64]) -> Vec<f64> {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(FFT_SIZE);
    let mut buffer: Vec<Complex<f64>> = frame.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.process(&mut buffer);
    buffer.into_iter().map(|c| c.norm()).collect()
}

/// Sliding-window magnitude spectrogram, one row per frame, 257 columns.
pub fn spectrogram(waveform: &Waveform) -> Result<Array2<f64>, AudioError> {
    if waveform.sample_rate != CANONICAL_SAMPLE_RATE {
        return Err(AudioError::WrongSampleRate {
            found: waveform.sample_rate,
            expected: CANONICAL_SAMPLE_RATE,
        });
    }
    if waveform.samples.iter().any(|s| !s.is_finite()) {
        return Err(AudioError::NonFiniteSample);
    }
    let n_frames = frame_count(waveform.samples.len()).ok_or(AudioError::TooShort {
        len: waveform.samples.len(),
        min: WINDOW_SIZE,
    })?;

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(FFT_SIZE);
    let mut out = Array2::zeros((n_frames, SPECTRUM_BINS));
    let mut buffer = vec![Complex::new(0.0, 0.0); FFT_SIZE];
    for frame_idx in 0..n_frames {
        let frame = windowed_frame(&waveform.samples, frame_idx * STEP_SIZE);
        for (slot, &v) in buffer.iter_mut().zip(&frame) {
            *slot = Complex::new(v, 0.0);
        }
        fft.process(&mut buffer);
        for bin in 0..SPECTRUM_BINS {
            out[[frame_idx, bin]] = buffer[bin].norm();
        }
    }
    Ok(out)
}

/// Fixed-size reduction of a spectrogram: per-bin mean then per-bin
/// population standard deviation over time, concatenated (514 values) and
/// truncated to 512. A stand-in for a learned embedding; deterministic
/// and order-free over frames.
pub fn embed_audio(spec: &Array2<f64>) -> Result<Embedding, AudioError> {
    if spec.nrows() == 0 {
        return Err(AudioError::EmptyInput);
    }
    if spec.ncols() != SPECTRUM_BINS {
        return Err(AudioError::BadShape {
            cols: spec.ncols(),
            expected: SPECTRUM_BINS,
        });
    }
    let n = spec.nrows() as f64;
    let mean = spec.mean_axis(Axis(0)).expect("non-empty");
    let centered = spec - &mean;
    let std = (centered.mapv(|v| v * v).sum_axis(Axis(0)) / n).mapv(f64::sqrt);

    let mut values = Vec::with_capacity(AUDIO_EMBED_DIM);
    values.extend(mean.iter().copied());
    values.extend(std.iter().copied());
    values.truncate(AUDIO_EMBED_DIM);
    Ok(Embedding { values })
}

/// Spectrogram followed by the embedding reduction.
pub fn embed_waveform(waveform: &Waveform) -> Result<Embedding, AudioError> {
    embed_audio(&spectrogram(waveform)?)
}
