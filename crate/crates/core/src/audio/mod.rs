//! Audio ingestion and the log-mel front end.
//!
//! Pipeline: WAV -> mono 22050 Hz -> Hamming STFT (2048 window, hop 512) ->
//! 128-bin log-mel -> per-bin z-score against training-corpus statistics.

pub mod mel;
pub mod resample;
pub mod stats;
pub mod stft;
pub mod wav;

pub use mel::{log_mel, MelSpectrogram, MEL_BINS};
pub use resample::resample;
pub use stats::{compute_stats, zscore, CorpusStats};
pub use stft::{hamming_window, stft_magnitude, StftMagnitude, FFT_BINS, HOP, WINDOW};
pub use wav::{load_wav, write_wav};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 22050;

/// Mono audio in [-1, 1].
#[derive(Debug, Clone)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    /// Clamps into [-1, 1]; rejects empty or non-finite input.
    pub fn new(mut samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Audio("empty clip".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Audio("zero sample rate".into()));
        }
        for s in samples.iter_mut() {
            if !s.is_finite() {
                return Err(Error::Audio("non-finite sample".into()));
            }
            *s = s.clamp(-1.0, 1.0);
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_sec(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Copy of the sample range [start, end).
    pub fn slice(&self, start: usize, end: usize) -> Result<AudioClip> {
        if start >= end || end > self.samples.len() {
            return Err(Error::Audio(format!(
                "slice {}..{} out of range {}",
                start,
                end,
                self.samples.len()
            )));
        }
        Ok(AudioClip {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        })
    }
}

/// Frames in a hop-aligned analysis of `samples` with no padding.
pub fn frame_count(samples: usize) -> usize {
    if samples < WINDOW {
        0
    } else {
        (samples - WINDOW) / HOP + 1
    }
}
