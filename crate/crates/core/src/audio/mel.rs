//! 128-bin log-mel projection of STFT magnitudes.
//!
//! Triangular filters are spaced on the HTK mel scale
//! (m = 2595 log10(1 + f/700)) from 0 Hz to Nyquist and normalized to unit
//! weight sum. Compression is ln(x + 1e-10).

use serde::{Deserialize, Serialize};

use crate::audio::stft::{StftMagnitude, FFT_BINS, HOP, WINDOW};
use crate::audio::SAMPLE_RATE;
use crate::error::{Error, Result};

pub const MEL_BINS: usize = 128;
pub const LOG_FLOOR: f32 = 1e-10;

/// Frames x 128 matrix of (optionally normalized) log-mel energies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MelSpectrogram {
    pub data: Vec<f32>,
    pub frames: usize,
    pub frame_rate: f32,
    pub normalized: bool,
}

impl MelSpectrogram {
    pub fn new(data: Vec<f32>, frames: usize, normalized: bool) -> Result<Self> {
        if data.len() != frames * MEL_BINS {
            return Err(Error::Shape(format!(
                "mel data length {} does not match {frames} x {MEL_BINS}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Audio("non-finite mel entry".into()));
        }
        Ok(MelSpectrogram {
            data,
            frames,
            frame_rate: SAMPLE_RATE as f32 / HOP as f32,
            normalized,
        })
    }

    pub fn frame(&self, f: usize) -> &[f32] {
        &self.data[f * MEL_BINS..(f + 1) * MEL_BINS]
    }

    /// Copy of the frame range [start, end).
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<MelSpectrogram> {
        if start >= end || end > self.frames {
            return Err(Error::Shape(format!(
                "frame slice {start}..{end} out of range {}",
                self.frames
            )));
        }
        Ok(MelSpectrogram {
            data: self.data[start * MEL_BINS..end * MEL_BINS].to_vec(),
            frames: end - start,
            frame_rate: self.frame_rate,
            normalized: self.normalized,
        })
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10.0f64.powf(mel / 2595.0) - 1.0)
}

/// One triangular filter: weights for FFT bins [start, start + len).
#[derive(Debug, Clone)]
pub struct MelFilter {
    pub start: usize,
    pub weights: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub filters: Vec<MelFilter>,
}

impl MelFilterbank {
    pub fn new() -> Self {
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        let top_mel = hz_to_mel(nyquist);
        let edges_hz: Vec<f64> = (0..MEL_BINS + 2)
            .map(|i| mel_to_hz(top_mel * i as f64 / (MEL_BINS + 1) as f64))
            .collect();
        let bin_hz = SAMPLE_RATE as f64 / WINDOW as f64;

        let mut filters = Vec::with_capacity(MEL_BINS);
        for k in 0..MEL_BINS {
            let (lo, center, hi) = (edges_hz[k], edges_hz[k + 1], edges_hz[k + 2]);
            let mut start = None;
            let mut weights = Vec::new();
            for bin in 0..FFT_BINS {
                let f = bin as f64 * bin_hz;
                let w = if f <= lo || f >= hi {
                    0.0
                } else if f <= center {
                    (f - lo) / (center - lo)
                } else {
                    (hi - f) / (hi - center)
                };
                if w > 0.0 {
                    if start.is_none() {
                        start = Some(bin);
                    }
                    weights.push(w);
                } else if start.is_some() {
                    break;
                }
            }
            let total: f64 = weights.iter().sum();
            if total > 0.0 {
                for w in weights.iter_mut() {
                    *w /= total;
                }
            }
            filters.push(MelFilter {
                start: start.unwrap_or(0),
                weights: weights.iter().map(|w| *w as f32).collect(),
            });
        }
        MelFilterbank { filters }
    }

    pub fn apply_frame(&self, magnitudes: &[f32], out: &mut [f32]) {
        for (filter, o) in self.filters.iter().zip(out.iter_mut()) {
            let mut acc = 0.0f64;
            for (w, m) in filter
                .weights
                .iter()
                .zip(&magnitudes[filter.start..filter.start + filter.weights.len()])
            {
                acc += *w as f64 * *m as f64;
            }
            *o = (acc as f32 + LOG_FLOOR).ln();
        }
    }
}

impl Default for MelFilterbank {
    fn default() -> Self {
        Self::new()
    }
}

/// Unnormalized log-mel spectrogram of an STFT magnitude matrix.
pub fn log_mel(mag: &StftMagnitude) -> Result<MelSpectrogram> {
    let bank = MelFilterbank::new();
    let mut data = vec![0.0f32; mag.frames * MEL_BINS];
    for f in 0..mag.frames {
        bank.apply_frame(mag.frame(f), &mut data[f * MEL_BINS..(f + 1) * MEL_BINS]);
    }
    MelSpectrogram::new(data, mag.frames, false)
}
