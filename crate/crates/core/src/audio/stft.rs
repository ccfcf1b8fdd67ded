//! Short-time Fourier magnitudes: 2048-sample symmetric Hamming window,
//! hop 512, no padding, 1025 non-redundant bins.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::{frame_count, AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const WINDOW: usize = 2048;
pub const HOP: usize = 512;
pub const FFT_BINS: usize = WINDOW / 2 + 1;

/// w[n] = 0.54 - 0.46 cos(2 pi n / (N - 1)).
pub fn hamming_window() -> Vec<f32> {
    (0..WINDOW)
        .map(|n| {
            let phase = 2.0 * std::f64::consts::PI * n as f64 / (WINDOW - 1) as f64;
            (0.54 - 0.46 * phase.cos()) as f32
        })
        .collect()
}

/// Row-major frames x 1025 magnitude matrix.
#[derive(Debug, Clone)]
pub struct StftMagnitude {
    pub data: Vec<f32>,
    pub frames: usize,
}

impl StftMagnitude {
    pub fn frame(&self, f: usize) -> &[f32] {
        &self.data[f * FFT_BINS..(f + 1) * FFT_BINS]
    }
}

pub fn stft_magnitude(clip: &AudioClip) -> Result<StftMagnitude> {
    if clip.sample_rate() != SAMPLE_RATE {
        return Err(Error::Audio(format!(
            "stft expects {SAMPLE_RATE} Hz input, got {}",
            clip.sample_rate()
        )));
    }
    if clip.len() < WINDOW {
        return Err(Error::Audio(format!(
            "clip of {} samples shorter than the {WINDOW}-sample window",
            clip.len()
        )));
    }
    let frames = frame_count(clip.len());
    let window = hamming_window();
    let fft = FftPlanner::<f32>::new().plan_fft_forward(WINDOW);
    let samples = clip.samples();

    let mut data = vec![0.0f32; frames * FFT_BINS];
    let mut buf = vec![Complex::new(0.0f32, 0.0); WINDOW];
    let mut scratch = vec![Complex::new(0.0f32, 0.0); fft.get_inplace_scratch_len()];
    for f in 0..frames {
        let start = f * HOP;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(samples[start + i] * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        let row = &mut data[f * FFT_BINS..(f + 1) * FFT_BINS];
        for (b, out) in row.iter_mut().enumerate() {
            *out = buf[b].norm();
        }
    }
    Ok(StftMagnitude { data, frames })
}
