//! WAV ingestion and rendering via hound.

use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// Accepts 16-bit integer or 32-bit float PCM with one or two channels.
/// Stereo is downmixed by channel mean; 16-bit samples scale by 1/32768.
pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(Error::Wav(format!(
            "{}: unsupported channel count {}",
            path.display(),
            spec.channels
        )));
    }
    let mono: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => {
            let samples: std::result::Result<Vec<i16>, _> = reader.samples::<i16>().collect();
            let samples = samples.map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
            downmix(&samples, spec.channels, |s| s as f32 / 32768.0)
        }
        (SampleFormat::Float, 32) => {
            let samples: std::result::Result<Vec<f32>, _> = reader.samples::<f32>().collect();
            let samples = samples.map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
            downmix(&samples, spec.channels, |s| s)
        }
        (fmt, bits) => {
            return Err(Error::Wav(format!(
                "{}: unsupported encoding {fmt:?}/{bits}-bit (want 16-bit int or 32-bit float)",
                path.display()
            )))
        }
    };
    if mono.is_empty() {
        return Err(Error::Wav(format!("{}: zero-length audio", path.display())));
    }
    AudioClip::new(mono, spec.sample_rate)
}

fn downmix<S: Copy>(samples: &[S], channels: u16, to_f32: impl Fn(S) -> f32) -> Vec<f32> {
    if channels == 1 {
        return samples.iter().map(|s| to_f32(*s)).collect();
    }
    samples
        .chunks_exact(channels as usize)
        .map(|frame| frame.iter().map(|s| to_f32(*s)).sum::<f32>() / channels as f32)
        .collect()
}

/// Writes 16-bit PCM mono.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer =
        WavWriter::create(path, spec).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    for s in clip.samples() {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn silence_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("silence.wav");
        let clip = AudioClip::new(vec![0.0; 44100], 44100).unwrap();
        write_wav(&path, &clip).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.len(), 44100);
        assert_eq!(back.sample_rate(), 44100);
        assert!(back.samples().iter().all(|s| *s == 0.0));
    }

    #[test]
    fn stereo_downmix_is_channel_mean() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 22050,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(16384i16).unwrap(); // +0.5
            w.write_sample(-16384i16).unwrap(); // -0.5
        }
        w.finalize().unwrap();
        let clip = load_wav(&path).unwrap();
        assert_eq!(clip.len(), 100);
        assert!(clip.samples().iter().all(|s| *s == 0.0));
    }

    #[test]
    fn full_scale_sixteen_bit_convention() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("full.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 22050,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(32767i16).unwrap();
        w.write_sample(-32768i16).unwrap();
        w.finalize().unwrap();
        let clip = load_wav(&path).unwrap();
        assert!((clip.samples()[0] - 32767.0 / 32768.0).abs() < 1e-7);
        assert_eq!(clip.samples()[1], -1.0);
    }

    #[test]
    fn float_wav_loads() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("float.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 22050,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for i in 0..64 {
            w.write_sample(i as f32 / 64.0).unwrap();
        }
        w.finalize().unwrap();
        let clip = load_wav(&path).unwrap();
        assert_eq!(clip.len(), 64);
        assert!((clip.samples()[32] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(load_wav(Path::new("/nonexistent/nope.wav")).is_err());
    }
}
