//! Seed-indexed synthetic corpus: spectrogram songs, sinusoidal audio songs,
//! and cross-faded medley trials with a known ground-truth order.
//!
//! Every song is a smoothed walk toward a periodic schedule of per-song
//! random motif targets, so consecutive fragments are continuous at their
//! boundary while unrelated fragments are not — the property the
//! order-verification task needs to be learnable.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::{
    frame_count, log_mel, stft_magnitude, AudioClip, MelSpectrogram, HOP, MEL_BINS, SAMPLE_RATE,
};
use crate::error::{Error, Result};

/// Fewest frames a third of a song may span, so n=3 jigsaw fragments stay
/// comfortably above the model minimum.
pub const MIN_THIRD_FRAMES: usize = 120;

/// Oscillator count for audio-domain songs.
pub const WAV_OSCILLATORS: usize = 8;

/// Largest per-frame frequency step of a wav-song oscillator.
pub const MAX_FREQ_STEP_HZ: f64 = 2.0;

/// Generation knobs. One instance describes a whole corpus; individual songs
/// are addressed by `song_index` and are independent of each other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub seed: u64,
    pub n_songs: usize,
    pub duration_sec: f64,
    /// Frame-to-frame AR coefficient in (0, 1); higher is smoother.
    pub alpha: f64,
    pub motif_count: usize,
    pub motif_period_frames: usize,
    pub noise_std: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 0,
            n_songs: 1,
            duration_sec: 24.0,
            alpha: 0.98,
            motif_count: 4,
            motif_period_frames: 344,
            noise_std: 0.05,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_songs == 0 {
            return Err(Error::Config("n_songs must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha {} outside the open interval (0, 1)",
                self.alpha
            )));
        }
        if !self.duration_sec.is_finite() || self.duration_sec <= 0.0 {
            return Err(Error::Config(format!("bad duration {}", self.duration_sec)));
        }
        if self.motif_count == 0 {
            return Err(Error::Config("motif_count must be at least 1".into()));
        }
        if self.motif_period_frames < self.motif_count {
            return Err(Error::Config(format!(
                "motif period of {} frames cannot schedule {} motifs",
                self.motif_period_frames, self.motif_count
            )));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(Error::Config(format!("bad noise_std {}", self.noise_std)));
        }
        let third = self.song_frames() / 3;
        if third < MIN_THIRD_FRAMES {
            return Err(Error::Config(format!(
                "duration {} s gives {} frames per n=3 fragment, below the {MIN_THIRD_FRAMES} minimum",
                self.duration_sec, third
            )));
        }
        Ok(())
    }

    pub fn song_samples(&self) -> usize {
        (self.duration_sec * SAMPLE_RATE as f64).round() as usize
    }

    /// Frames the audio front end would produce for one song.
    pub fn song_frames(&self) -> usize {
        frame_count(self.song_samples())
    }
}

/// Stable id for song `i` of a synthetic corpus.
pub fn song_id(i: usize) -> String {
    format!("synth{i:05}")
}

// Streams for the same song never collide across domains (mel / wav /
// medley shuffle) because the domain byte is part of the rng seed.
fn song_rng(seed: u64, song_index: usize, domain: u8) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&(song_index as u64).to_le_bytes());
    bytes[16] = domain;
    ChaCha8Rng::from_seed(bytes)
}

// Periodic block schedule: each period splits into `count` equal runs, one
// motif per run.
fn motif_index(frame: usize, period: usize, count: usize) -> usize {
    ((frame % period) * count) / period
}

/// Spectrogram-domain song: x_t = alpha * x_{t-1} + (1 - alpha) * m_sched(t)
/// + noise, over per-song random 128-bin motif vectors. Output is an
/// unnormalized spectrogram ready for the cache.
pub fn gen_mel_song(params: &SynthParams, song_index: usize) -> Result<MelSpectrogram> {
    params.validate()?;
    let mut rng = song_rng(params.seed, song_index, 0);
    let frames = params.song_frames();
    let motifs: Vec<Vec<f64>> = (0..params.motif_count)
        .map(|_| (0..MEL_BINS).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let noise = Normal::new(0.0, params.noise_std)
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;

    let sched = |t: usize| motif_index(t, params.motif_period_frames, params.motif_count);
    // Start on the first scheduled motif so there is no warm-up transient.
    let mut state = motifs[sched(0)].clone();
    let mut data = Vec::with_capacity(frames * MEL_BINS);
    for t in 0..frames {
        let m = &motifs[sched(t)];
        for (s, mv) in state.iter_mut().zip(m) {
            *s = params.alpha * *s + (1.0 - params.alpha) * mv + noise.sample(&mut rng);
        }
        data.extend(state.iter().map(|v| *v as f32));
    }
    MelSpectrogram::new(data, frames, false)
}

fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        2.0 * lo - x
    } else if x > hi {
        2.0 * hi - x
    } else {
        x
    }
}

/// Audio-domain song: 8 phase-continuous sinusoids on log-spaced bands.
/// Frequencies random-walk at most 2 Hz per hop inside their band;
/// amplitudes follow the same smoothed motif schedule as the spectrogram
/// route. A -54 dB noise floor keeps every mel bin off the log floor.
pub fn gen_wav_song(params: &SynthParams, song_index: usize) -> Result<AudioClip> {
    params.validate()?;
    let mut rng = song_rng(params.seed, song_index, 1);
    let samples = params.song_samples();
    let motifs: Vec<Vec<f64>> = (0..params.motif_count)
        .map(|_| {
            (0..WAV_OSCILLATORS)
                .map(|_| rng.random_range(0.05..1.0))
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, 0.002).expect("constant std");

    let base: Vec<f64> = (0..WAV_OSCILLATORS)
        .map(|j| 110.0 * 1.55f64.powi(j as i32))
        .collect();
    let mut freq = base.clone();
    let mut phase = vec![0.0f64; WAV_OSCILLATORS];
    let sched = |b: usize| motif_index(b, params.motif_period_frames, params.motif_count);
    let mut amp = motifs[sched(0)].clone();

    let two_pi = 2.0 * std::f64::consts::PI;
    let mut out = Vec::with_capacity(samples);
    let blocks = samples.div_ceil(HOP);
    for b in 0..blocks {
        let m = &motifs[sched(b)];
        let prev_amp = amp.clone();
        for j in 0..WAV_OSCILLATORS {
            amp[j] = params.alpha * amp[j] + (1.0 - params.alpha) * m[j];
            freq[j] = reflect(
                freq[j] + rng.random_range(-MAX_FREQ_STEP_HZ..MAX_FREQ_STEP_HZ),
                base[j] * 0.85,
                base[j] / 0.85,
            );
        }
        let start = b * HOP;
        let end = (start + HOP).min(samples);
        for i in start..end {
            let frac = (i - start) as f64 / HOP as f64;
            let mut acc = 0.0;
            for j in 0..WAV_OSCILLATORS {
                let a = prev_amp[j] + (amp[j] - prev_amp[j]) * frac;
                phase[j] += two_pi * freq[j] / SAMPLE_RATE as f64;
                if phase[j] > two_pi {
                    phase[j] -= two_pi;
                }
                acc += a * phase[j].sin();
            }
            out.push((0.11 * acc + noise.sample(&mut rng)) as f32);
        }
    }
    AudioClip::new(out, SAMPLE_RATE)
}

/// Single fixed-frequency sinusoid at half scale, the degenerate audio case.
pub fn gen_static_tone(duration_sec: f64, freq_hz: f64) -> Result<AudioClip> {
    if !(duration_sec.is_finite() && duration_sec > 0.0) {
        return Err(Error::Config(format!("bad duration {duration_sec}")));
    }
    if !(freq_hz > 0.0 && freq_hz < SAMPLE_RATE as f64 / 2.0) {
        return Err(Error::Config(format!("frequency {freq_hz} outside (0, Nyquist)")));
    }
    let n = (duration_sec * SAMPLE_RATE as f64).round() as usize;
    let two_pi = 2.0 * std::f64::consts::PI;
    let samples: Vec<f32> = (0..n)
        .map(|i| (0.5 * (two_pi * freq_hz * i as f64 / SAMPLE_RATE as f64).sin()) as f32)
        .collect();
    AudioClip::new(samples, SAMPLE_RATE)
}

/// An ordering puzzle over cross-faded clips cut from distinct songs.
#[derive(Debug, Clone)]
pub struct MedleyTrial {
    /// Clips in shuffled presentation order.
    pub clips: Vec<AudioClip>,
    /// Presentation indices in correct play order: concatenating
    /// `clips[truth[0]], clips[truth[1]], ...` reproduces `master`.
    pub truth: Vec<usize>,
    /// The continuous cross-faded sequence the clips were cut from.
    pub master: AudioClip,
}

/// Cross-fades one clip from each of `n_clips` distinct songs into a master
/// track, then cuts the master at fade midpoints. Every cut lands inside a
/// fade, so each true boundary is continuous audio and the play order is
/// recoverable from boundary continuity alone.
pub fn gen_medley_trial(
    seed: u64,
    n_clips: usize,
    clip_sec: f64,
    fade_sec: f64,
) -> Result<MedleyTrial> {
    if n_clips < 2 {
        return Err(Error::Config(format!("need at least 2 clips, got {n_clips}")));
    }
    if !(clip_sec.is_finite() && clip_sec <= 30.0) || !(fade_sec > 0.0) {
        return Err(Error::Config(format!("bad clip/fade lengths {clip_sec}/{fade_sec}")));
    }
    // Cut parts span clip_sec - fade_sec; keep them inside the 5..=30 s
    // envelope downstream ordering jobs accept.
    if clip_sec - fade_sec < 5.0 || fade_sec > clip_sec / 4.0 {
        return Err(Error::Config(format!(
            "clip {clip_sec} s with {fade_sec} s fades leaves parts shorter than 5 s"
        )));
    }

    let src = SynthParams {
        seed,
        n_songs: n_clips,
        // Source songs must satisfy corpus validation; clips slice their head.
        duration_sec: clip_sec.max(8.6),
        ..SynthParams::default()
    };
    let clip_samples = (clip_sec * SAMPLE_RATE as f64).round() as usize;
    let fade_samples = (fade_sec * SAMPLE_RATE as f64).round() as usize;
    let master_len = n_clips * clip_samples - (n_clips - 1) * fade_samples;

    let mut master = vec![0.0f32; master_len];
    for k in 0..n_clips {
        let clip = gen_wav_song(&src, k)?.slice(0, clip_samples)?;
        let offset = k * (clip_samples - fade_samples);
        for (i, s) in clip.samples().iter().enumerate() {
            let mut w = 1.0f32;
            if k > 0 && i < fade_samples {
                w *= i as f32 / fade_samples as f32;
            }
            if k + 1 < n_clips && i >= clip_samples - fade_samples {
                w *= (clip_samples - i) as f32 / fade_samples as f32;
            }
            master[offset + i] += s * w;
        }
    }

    let mut edges = vec![0usize];
    for k in 1..n_clips {
        edges.push(k * (clip_samples - fade_samples) + fade_samples / 2);
    }
    edges.push(master_len);
    let parts: Vec<Vec<f32>> = edges
        .windows(2)
        .map(|w| master[w[0]..w[1]].to_vec())
        .collect();

    let mut order: Vec<usize> = (0..n_clips).collect();
    order.shuffle(&mut song_rng(seed, 0, 2));
    let mut truth = vec![0usize; n_clips];
    for (slot, part) in order.iter().enumerate() {
        truth[*part] = slot;
    }
    let clips = order
        .iter()
        .map(|p| AudioClip::new(parts[*p].clone(), SAMPLE_RATE))
        .collect::<Result<Vec<_>>>()?;
    Ok(MedleyTrial {
        clips,
        truth,
        master: AudioClip::new(master, SAMPLE_RATE)?,
    })
}

fn edge_l2(tail: &[f32], head: &[f32]) -> f64 {
    tail.iter()
        .zip(head)
        .map(|(a, b)| {
            let d = (*a - *b) as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Fraction of sampled fragments whose true successor sits closer (L2 between
/// the facing edge frames) than a randomly drawn other fragment. Songs are
/// split into `n_fragments` equal parts.
pub fn continuity_win_rate(mels: &[MelSpectrogram], n_fragments: usize, seed: u64) -> Result<f64> {
    if mels.is_empty() || n_fragments < 2 {
        return Err(Error::Data("need songs and at least 2 fragments".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wins = 0usize;
    let mut total = 0usize;
    for (s, mel) in mels.iter().enumerate() {
        let per = mel.frames / n_fragments;
        if per == 0 {
            return Err(Error::Data(format!("song {s} too short for {n_fragments} fragments")));
        }
        for i in 0..n_fragments - 1 {
            let tail = mel.frame((i + 1) * per - 1);
            let head = mel.frame((i + 1) * per);
            let d_true = edge_l2(tail, head);
            // Any fragment start other than the true successor.
            let (oj, ok) = loop {
                let oj = rng.random_range(0..mels.len());
                let ok = rng.random_range(0..n_fragments);
                if (oj, ok) != (s, i + 1) {
                    break (oj, ok);
                }
            };
            let other_per = mels[oj].frames / n_fragments;
            let d_rand = edge_l2(tail, mels[oj].frame(ok * other_per));
            wins += usize::from(d_true < d_rand);
            total += 1;
        }
    }
    Ok(wins as f64 / total as f64)
}

/// Mean absolute frame-to-frame delta within songs versus between random
/// frames of different songs.
pub fn frame_delta_stats(mels: &[MelSpectrogram], seed: u64) -> Result<(f64, f64)> {
    if mels.len() < 2 {
        return Err(Error::Data("need at least 2 songs".into()));
    }
    let mut within_sum = 0.0f64;
    let mut within_n = 0usize;
    for mel in mels {
        for t in 1..mel.frames {
            let (a, b) = (mel.frame(t - 1), mel.frame(t));
            within_sum += a
                .iter()
                .zip(b)
                .map(|(x, y)| (*x - *y).abs() as f64)
                .sum::<f64>()
                / MEL_BINS as f64;
            within_n += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cross_sum = 0.0f64;
    for _ in 0..within_n {
        let a = rng.random_range(0..mels.len());
        let b = loop {
            let b = rng.random_range(0..mels.len());
            if b != a {
                break b;
            }
        };
        let fa = mels[a].frame(rng.random_range(0..mels[a].frames));
        let fb = mels[b].frame(rng.random_range(0..mels[b].frames));
        cross_sum += fa
            .iter()
            .zip(fb)
            .map(|(x, y)| (*x - *y).abs() as f64)
            .sum::<f64>()
            / MEL_BINS as f64;
    }
    Ok((within_sum / within_n as f64, cross_sum / within_n as f64))
}

/// Full front-end pass for one audio-domain song.
pub fn wav_song_mel(params: &SynthParams, song_index: usize) -> Result<MelSpectrogram> {
    let clip = gen_wav_song(params, song_index)?;
    log_mel(&stft_magnitude(&clip)?)
}

/// Writes a whole synthetic corpus into a spectrogram cache, parallel over
/// songs. With `wav`, each song is rendered as audio, stored as
/// `<id>.wav` beside the cache entries, and run through the full front end;
/// otherwise the spectrogram route generates the cache directly.
pub fn write_corpus(params: &SynthParams, dir: &std::path::Path, wav: bool) -> Result<()> {
    use rayon::prelude::*;
    params.validate()?;
    std::fs::create_dir_all(dir)?;
    (0..params.n_songs).into_par_iter().try_for_each(|i| {
        let id = song_id(i);
        if wav {
            let clip = gen_wav_song(params, i)?;
            let wav_path = dir.join(format!("{id}.wav"));
            crate::audio::write_wav(&wav_path, &clip)?;
            let mel = log_mel(&stft_magnitude(&clip)?)?;
            crate::corpus::write_mel(dir, &id, &mel, &format!("{id}.wav"))
        } else {
            crate::corpus::write_mel(dir, &id, &gen_mel_song(params, i)?, "synth")
        }
    })
}
