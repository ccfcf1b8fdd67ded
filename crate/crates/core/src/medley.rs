//! Cross-song medley game: order one clip from each source song with a
//! trained model, then render the result as a single audio file.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{
    load_wav, log_mel, resample, stft_magnitude, write_wav, zscore, AudioClip, CorpusStats,
    SAMPLE_RATE,
};
use crate::corpus::Fragment;
use crate::error::{Error, Result};
use crate::eval::ModelPairScorer;
use crate::models::{mel_tensor, Model};
use crate::solver::{global_accuracy, pairwise_accuracy, score_all_pairs, solve_heldkarp};
use crate::tensor::Tensor;

/// Accepted clip length envelope after trimming, in seconds.
pub const MIN_CLIP_SEC: f64 = 5.0;
pub const MAX_CLIP_SEC: f64 = 30.0;

/// Linear fade applied to each end of every clip when rendering, so clip
/// joins don't click.
pub const RENDER_FADE_SEC: f64 = 0.010;

/// One source clip: an audio file plus optional trim points in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MedleyClipSpec {
    pub file: PathBuf,
    #[serde(default)]
    pub in_sec: Option<f64>,
    #[serde(default)]
    pub out_sec: Option<f64>,
}

/// A medley ordering job. `reference` lists clip indices in true play order
/// when one is known, enabling PA/GA scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MedleyJob {
    pub clips: Vec<MedleyClipSpec>,
    #[serde(default)]
    pub reference: Option<Vec<usize>>,
}

impl MedleyJob {
    pub fn read_json(path: &Path) -> Result<MedleyJob> {
        let job: MedleyJob = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        job.validate()?;
        Ok(job)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clips.len() < 2 {
            return Err(Error::Data(format!(
                "a medley needs at least 2 clips, got {}",
                self.clips.len()
            )));
        }
        for (i, c) in self.clips.iter().enumerate() {
            for t in [c.in_sec, c.out_sec].into_iter().flatten() {
                if !t.is_finite() || t < 0.0 {
                    return Err(Error::Data(format!("clip {i}: bad trim point {t}")));
                }
            }
            if let (Some(a), Some(b)) = (c.in_sec, c.out_sec) {
                if b <= a {
                    return Err(Error::Data(format!("clip {i}: trim {a}..{b} s is empty")));
                }
            }
        }
        if let Some(r) = &self.reference {
            validate_order(r, self.clips.len())?;
        }
        Ok(())
    }
}

fn validate_order(order: &[usize], n: usize) -> Result<()> {
    if order.len() != n {
        return Err(Error::Data(format!(
            "ordering over {} clips, expected {n}",
            order.len()
        )));
    }
    let mut seen = vec![false; n];
    for i in order {
        if *i >= n || seen[*i] {
            return Err(Error::Data(format!("invalid clip ordering {order:?}")));
        }
        seen[*i] = true;
    }
    Ok(())
}

/// Loads, downmixes, resamples to 22050 Hz, trims, and length-checks a clip.
pub fn load_clip(spec: &MedleyClipSpec) -> Result<AudioClip> {
    let clip = resample(&load_wav(&spec.file)?, SAMPLE_RATE)?;
    let rate = SAMPLE_RATE as f64;
    let start = (spec.in_sec.unwrap_or(0.0) * rate).round() as usize;
    let end = match spec.out_sec {
        Some(o) => (o * rate).round() as usize,
        None => clip.len(),
    };
    if start >= end || end > clip.len() {
        return Err(Error::Data(format!(
            "{}: trim window {start}..{end} samples outside clip of {} samples",
            spec.file.display(),
            clip.len()
        )));
    }
    let clip = clip.slice(start, end)?;
    let dur = clip.duration_sec();
    if !(MIN_CLIP_SEC..=MAX_CLIP_SEC).contains(&dur) {
        return Err(Error::Data(format!(
            "{}: clip of {dur:.2} s outside the accepted {MIN_CLIP_SEC}-{MAX_CLIP_SEC} s range",
            spec.file.display()
        )));
    }
    Ok(clip)
}

/// Result of ordering one medley job.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MedleyOutcome {
    /// Clip indices (job order) in predicted play order.
    pub perm: Vec<usize>,
    pub fitness: f64,
    /// Present when the job carries a reference ordering.
    pub pa: Option<f64>,
    pub ga: Option<f64>,
}

/// Scores every ordered clip pair with the model and solves for the best
/// play order. Returns the loaded clips alongside so callers can render.
pub fn order_medley(
    model: &Model,
    stats: &CorpusStats,
    job: &MedleyJob,
) -> Result<(MedleyOutcome, Vec<AudioClip>)> {
    job.validate()?;
    let clips: Vec<AudioClip> =
        job.clips.par_iter().map(load_clip).collect::<Result<Vec<_>>>()?;
    let tensors: Vec<Tensor<f32>> = clips
        .par_iter()
        .map(|c| mel_tensor(&zscore(&log_mel(&stft_magnitude(c)?)?, stats)?))
        .collect::<Result<Vec<_>>>()?;
    // Each clip is one fragment; index = position in the job.
    let frags: Vec<Fragment> = clips
        .iter()
        .enumerate()
        .map(|(i, c)| Fragment {
            song_id: job.clips[i].file.display().to_string(),
            index: i,
            frame_start: 0,
            frame_end: tensors[i].dim(0),
            sec_start: 0.0,
            sec_end: c.duration_sec(),
        })
        .collect();
    let scorer = ModelPairScorer::new(model, tensors);
    let scores = score_all_pairs(&scorer, &frags)?;
    let best = solve_heldkarp(&scores)?;
    let (pa, ga) = match &job.reference {
        Some(r) => (
            Some(pairwise_accuracy(&best.perm, r)?),
            Some(global_accuracy(&best.perm, r)?),
        ),
        None => (None, None),
    };
    Ok((
        MedleyOutcome {
            perm: best.perm,
            fitness: best.fitness,
            pa,
            ga,
        },
        clips,
    ))
}

/// Concatenates the clips in `order` at 22050 Hz with a 10 ms linear
/// fade-in/out on each clip, writes the WAV, and returns the rendered clip.
/// Output length is exactly the sum of the clip lengths.
pub fn render_medley(clips: &[AudioClip], order: &[usize], path: &Path) -> Result<AudioClip> {
    if clips.is_empty() {
        return Err(Error::Data("no clips to render".into()));
    }
    validate_order(order, clips.len())?;
    for (i, c) in clips.iter().enumerate() {
        if c.sample_rate() != SAMPLE_RATE {
            return Err(Error::Data(format!(
                "clip {i} at {} Hz; rendering expects {SAMPLE_RATE} Hz",
                c.sample_rate()
            )));
        }
    }
    let fade = (RENDER_FADE_SEC * SAMPLE_RATE as f64).round() as usize;
    let total: usize = clips.iter().map(|c| c.len()).sum();
    let mut out = Vec::with_capacity(total);
    for idx in order {
        let c = &clips[*idx];
        let n = c.len();
        let f = fade.min(n / 2);
        for (i, s) in c.samples().iter().enumerate() {
            let mut w = 1.0f32;
            if f > 0 {
                // Mirror-image ramps: exactly 0 at the first and last sample.
                if i < f {
                    w *= i as f32 / f as f32;
                }
                if i >= n - f {
                    w *= (n - 1 - i) as f32 / f as f32;
                }
            }
            out.push(s * w);
        }
    }
    let rendered = AudioClip::new(out, SAMPLE_RATE)?;
    write_wav(path, &rendered)?;
    Ok(rendered)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::compute_stats;
    use crate::models::sim::SimilarityKernel;
    use crate::models::SenModel;
    use crate::synth::{gen_wav_song, SynthParams};
    use crate::tensor::ops::GlobalPoolMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn sen(seed: u64) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Model::Sen(
            SenModel::new(1, SimilarityKernel::Cosine, GlobalPoolMode::Concat, &mut rng).unwrap(),
        )
    }

    // Writes gen_wav_song output to disk and returns specs plus stats over
    // the clips' own spectrograms.
    fn wav_fixture(dir: &Path, n: usize, seed: u64) -> (Vec<MedleyClipSpec>, CorpusStats) {
        let p = SynthParams {
            seed,
            n_songs: n,
            duration_sec: 8.6,
            ..SynthParams::default()
        };
        let mut specs = Vec::new();
        let mut mels = Vec::new();
        for i in 0..n {
            let clip = gen_wav_song(&p, i).unwrap();
            let path = dir.join(format!("clip{i}.wav"));
            write_wav(&path, &clip).unwrap();
            mels.push(log_mel(&stft_magnitude(&clip).unwrap()).unwrap());
            specs.push(MedleyClipSpec {
                file: path,
                in_sec: None,
                out_sec: None,
            });
        }
        (specs, compute_stats(&mels).unwrap())
    }

    #[test]
    fn job_json_round_trips_and_validates() {
        let json = r#"{
            "clips": [
                {"file": "a.wav", "in_sec": 1.0, "out_sec": 9.0},
                {"file": "b.wav"}
            ],
            "reference": [1, 0]
        }"#;
        let job: MedleyJob = serde_json::from_str(json).unwrap();
        job.validate().unwrap();
        assert_eq!(job.clips[0].out_sec, Some(9.0));
        assert_eq!(job.clips[1].in_sec, None);
        assert_eq!(job.reference, Some(vec![1, 0]));

        let one = MedleyJob {
            clips: job.clips[..1].to_vec(),
            reference: None,
        };
        assert!(one.validate().is_err());

        let mut bad_ref = job.clone();
        bad_ref.reference = Some(vec![0, 0]);
        assert!(bad_ref.validate().is_err());
        bad_ref.reference = Some(vec![0]);
        assert!(bad_ref.validate().is_err());

        let mut bad_trim = job.clone();
        bad_trim.clips[0].in_sec = Some(9.0);
        bad_trim.clips[0].out_sec = Some(1.0);
        assert!(bad_trim.validate().is_err());

        assert!(serde_json::from_str::<MedleyJob>(r#"{"clips": [], "extra": 1}"#).is_err());
    }

    #[test]
    fn clip_loading_trims_resamples_and_checks_length() {
        let dir = tempdir().unwrap();
        let p = SynthParams {
            seed: 3,
            n_songs: 1,
            duration_sec: 12.0,
            ..SynthParams::default()
        };
        let clip = gen_wav_song(&p, 0).unwrap();
        let path = dir.path().join("song.wav");
        write_wav(&path, &clip).unwrap();

        let spec = |a: Option<f64>, b: Option<f64>| MedleyClipSpec {
            file: path.clone(),
            in_sec: a,
            out_sec: b,
        };
        let full = load_clip(&spec(None, None)).unwrap();
        assert_eq!(full.len(), clip.len());
        let trimmed = load_clip(&spec(Some(1.0), Some(7.0))).unwrap();
        assert!((trimmed.duration_sec() - 6.0).abs() < 1e-6);
        // 3 s is below the envelope; a window past the end is out of range.
        assert!(load_clip(&spec(Some(0.0), Some(3.0))).is_err());
        assert!(load_clip(&spec(Some(10.0), Some(20.0))).is_err());

        // A 44100 Hz source resamples down to the model rate.
        let hi = AudioClip::new(clip.samples().to_vec(), 44100).unwrap();
        let hi_path = dir.path().join("hi.wav");
        write_wav(&hi_path, &hi).unwrap();
        let loaded = load_clip(&MedleyClipSpec {
            file: hi_path,
            in_sec: None,
            out_sec: None,
        })
        .unwrap();
        assert_eq!(loaded.sample_rate(), SAMPLE_RATE);
        assert!((loaded.duration_sec() - hi.duration_sec()).abs() < 0.01);
    }

    #[test]
    fn two_clip_job_is_the_argmax_of_cross_scores() {
        let dir = tempdir().unwrap();
        let (specs, stats) = wav_fixture(dir.path(), 2, 5);
        let model = sen(1);
        let job = MedleyJob {
            clips: specs,
            reference: None,
        };
        let (outcome, clips) = order_medley(&model, &stats, &job).unwrap();
        assert_eq!(clips.len(), 2);
        let t: Vec<Tensor<f32>> = clips
            .iter()
            .map(|c| {
                mel_tensor(&zscore(&log_mel(&stft_magnitude(c).unwrap()).unwrap(), &stats).unwrap())
                    .unwrap()
            })
            .collect();
        let p01 = model.prob(&t[0], &t[1]).unwrap();
        let p10 = model.prob(&t[1], &t[0]).unwrap();
        let expect = if p10 > p01 { vec![1, 0] } else { vec![0, 1] };
        assert_eq!(outcome.perm, expect);
        assert!((outcome.fitness - p01.max(p10)).abs() < 1e-12);
        assert!(outcome.pa.is_none() && outcome.ga.is_none());
    }

    #[test]
    fn self_reference_scores_perfectly_and_reruns_identically() {
        let dir = tempdir().unwrap();
        let (specs, stats) = wav_fixture(dir.path(), 3, 8);
        let model = sen(2);
        let mut job = MedleyJob {
            clips: specs,
            reference: None,
        };
        let (first, _) = order_medley(&model, &stats, &job).unwrap();
        job.reference = Some(first.perm.clone());
        let (second, _) = order_medley(&model, &stats, &job).unwrap();
        assert_eq!(second.perm, first.perm);
        assert_eq!(second.fitness.to_bits(), first.fitness.to_bits());
        assert_eq!(second.pa, Some(1.0));
        assert_eq!(second.ga, Some(1.0));
    }

    #[test]
    fn render_keeps_length_fades_ends_and_round_trips() {
        let dir = tempdir().unwrap();
        let tone = |seed: u64| {
            let p = SynthParams {
                seed,
                n_songs: 1,
                duration_sec: 8.6,
                ..SynthParams::default()
            };
            gen_wav_song(&p, 0).unwrap()
        };
        let clips = [tone(1), tone(2)];
        let out = dir.path().join("medley.wav");
        let rendered = render_medley(&clips, &[1, 0], &out).unwrap();
        let expect: usize = clips.iter().map(|c| c.len()).sum();
        assert_eq!(rendered.len(), expect);
        assert_eq!(rendered.samples()[0], 0.0);
        assert_eq!(rendered.samples()[expect - 1], 0.0);
        // Fade-weighted start of the second clip at the join boundary.
        assert_eq!(rendered.samples()[clips[1].len()], 0.0);
        // Middle of each clip passes through untouched.
        let mid = clips[1].len() / 2;
        assert_eq!(rendered.samples()[mid], clips[1].samples()[mid]);

        let back = load_wav(&out).unwrap();
        assert_eq!(back.len(), expect);
        assert_eq!(back.sample_rate(), SAMPLE_RATE);
        assert!((back.duration_sec() - rendered.duration_sec()).abs() < 0.025);

        // A single clip renders as itself with only the end fades applied.
        let solo = render_medley(&clips[..1], &[0], &dir.path().join("solo.wav")).unwrap();
        assert_eq!(solo.len(), clips[0].len());
        let m = clips[0].len() / 2;
        assert_eq!(solo.samples()[m], clips[0].samples()[m]);

        assert!(render_medley(&clips, &[0, 0], &out).is_err());
        assert!(render_medley(&clips, &[0], &out).is_err());
    }
}
