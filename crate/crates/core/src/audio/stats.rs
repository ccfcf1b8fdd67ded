//! Per-bin corpus statistics and z-score normalization.

use crate::audio::mel::{MelSpectrogram, MEL_BINS};
use crate::error::{Error, Result};

pub const STD_FLOOR: f32 = 1e-6;

/// Training-split mean and standard deviation per mel bin. These travel with
/// every checkpoint so inference normalizes exactly like training did.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl CorpusStats {
    pub fn identity() -> Self {
        CorpusStats {
            mean: vec![0.0; MEL_BINS],
            std: vec![1.0; MEL_BINS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != MEL_BINS || self.std.len() != MEL_BINS {
            return Err(Error::Shape("stats must have 128 entries per vector".into()));
        }
        if self.std.iter().any(|s| !(*s > 0.0)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Data("corpus stats must be finite with positive std".into()));
        }
        Ok(())
    }
}

/// Population statistics over every frame of every spectrogram, accumulated
/// in double precision so the result is independent of iteration order used
/// by callers that parallelize per file.
pub fn compute_stats<'a>(corpus: impl IntoIterator<Item = &'a MelSpectrogram>) -> Result<CorpusStats> {
    let mut sum = [0.0f64; MEL_BINS];
    let mut sumsq = [0.0f64; MEL_BINS];
    let mut frames = 0u64;
    for mel in corpus {
        for f in 0..mel.frames {
            for (b, v) in mel.frame(f).iter().enumerate() {
                let v = *v as f64;
                sum[b] += v;
                sumsq[b] += v * v;
            }
        }
        frames += mel.frames as u64;
    }
    if frames == 0 {
        return Err(Error::Data("cannot compute stats over an empty corpus".into()));
    }
    let n = frames as f64;
    let mut mean = Vec::with_capacity(MEL_BINS);
    let mut std = Vec::with_capacity(MEL_BINS);
    for b in 0..MEL_BINS {
        let m = sum[b] / n;
        let var = (sumsq[b] / n - m * m).max(0.0);
        mean.push(m as f32);
        std.push((var.sqrt() as f32).max(STD_FLOOR));
    }
    Ok(CorpusStats { mean, std })
}

pub fn zscore(mel: &MelSpectrogram, stats: &CorpusStats) -> Result<MelSpectrogram> {
    stats.validate()?;
    let mut data = Vec::with_capacity(mel.data.len());
    for f in 0..mel.frames {
        for (b, v) in mel.frame(f).iter().enumerate() {
            data.push((v - stats.mean[b]) / stats.std[b]);
        }
    }
    let mut out = MelSpectrogram::new(data, mel.frames, true)?;
    out.frame_rate = mel.frame_rate;
    Ok(out)
}
