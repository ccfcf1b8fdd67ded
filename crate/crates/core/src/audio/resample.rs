//! Band-limited sample-rate conversion with a 64-tap Kaiser-windowed sinc.

use crate::audio::AudioClip;
use crate::error::Result;

const HALF_TAPS: isize = 32;
const KAISER_BETA: f64 = 8.6;

/// Zeroth-order modified Bessel function of the first kind, by power series.
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-14 {
            break;
        }
    }
    sum
}

fn kaiser(t: f64) -> f64 {
    // t in [-1, 1] across the kernel support.
    let arg = 1.0 - t * t;
    if arg <= 0.0 {
        return 0.0;
    }
    bessel_i0(KAISER_BETA * arg.sqrt()) / bessel_i0(KAISER_BETA)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Resamples to `target_rate`. A clip already at the target rate is returned
/// unchanged. Output length is the input duration rounded to the nearest
/// output sample; the low-pass cutoff sits at 90% of the narrower Nyquist.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if clip.sample_rate() == target_rate {
        return Ok(clip.clone());
    }
    let src = clip.sample_rate() as f64;
    let dst = target_rate as f64;
    let in_len = clip.len();
    let out_len = ((in_len as f64 * dst / src).round() as usize).max(1);
    let step = src / dst;
    let cutoff = 0.9 * (dst / src).min(1.0);
    let x = clip.samples();

    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let pos = i as f64 * step;
        let center = pos.floor() as isize;
        let mut acc = 0.0f64;
        let mut norm = 0.0f64;
        for j in (center - HALF_TAPS + 1)..=(center + HALF_TAPS) {
            let t = pos - j as f64;
            let h = cutoff * sinc(cutoff * t) * kaiser(t / HALF_TAPS as f64);
            norm += h;
            if j >= 0 && (j as usize) < in_len {
                acc += h * x[j as usize] as f64;
            }
        }
        // Normalizing by the kernel sum keeps DC exact despite truncation.
        out.push(if norm.abs() > 1e-12 { (acc / norm) as f32 } else { 0.0 });
    }
    AudioClip::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{stft_magnitude, SAMPLE_RATE};

    fn sine(freq: f64, rate: u32, len: usize, amp: f32) -> AudioClip {
        let samples = (0..len)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin() as f32)
            .collect();
        AudioClip::new(samples, rate).unwrap()
    }

    #[test]
    fn identity_rate_returns_clone() {
        let clip = sine(440.0, SAMPLE_RATE, 4096, 0.5);
        let out = resample(&clip, SAMPLE_RATE).unwrap();
        assert_eq!(out.samples(), clip.samples());
    }

    #[test]
    fn two_to_one_length() {
        let clip = AudioClip::new(vec![0.1; 529200 * 2], 44100).unwrap();
        let out = resample(&clip, 22050).unwrap();
        assert!((out.len() as i64 - 529200).unsigned_abs() <= 1);
        assert_eq!(out.sample_rate(), 22050);
    }

    #[test]
    fn dc_preserved() {
        let clip = AudioClip::new(vec![0.25; 8000], 44100).unwrap();
        let out = resample(&clip, 22050).unwrap();
        // Away from the edges the constant must survive exactly.
        for s in &out.samples()[100..out.len() - 100] {
            assert!((s - 0.25).abs() < 1e-4, "{s}");
        }
    }

    #[test]
    fn sine_peak_survives_decimation() {
        let clip = sine(440.0, 44100, 44100 * 2, 0.5);
        let out = resample(&clip, SAMPLE_RATE).unwrap();
        let mag = stft_magnitude(&out).unwrap();
        // Average the spectrum over frames, find the peak bin.
        let frames = mag.frames;
        let mut avg = vec![0.0f64; crate::audio::FFT_BINS];
        for f in 0..frames {
            for (b, v) in avg.iter_mut().enumerate() {
                *v += mag.data[f * crate::audio::FFT_BINS + b] as f64;
            }
        }
        let peak = avg
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let bin_hz = SAMPLE_RATE as f64 / 2048.0;
        let peak_hz = peak as f64 * bin_hz;
        assert!((peak_hz - 440.0).abs() <= bin_hz, "peak at {peak_hz} Hz");
    }

    #[test]
    fn upsampling_preserves_duration() {
        let clip = sine(440.0, 22050, 22050, 0.5);
        let out = resample(&clip, 44100).unwrap();
        assert!((out.duration_sec() - 1.0).abs() < 1e-4);
    }
}
