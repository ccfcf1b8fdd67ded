//! Ordering games against a trained checkpoint: jigsaw puzzles over cached
//! songs, whole-song sequencing from section annotations, and pair-embedding
//! export.
//!
//! Every game shuffles the fragments' presentation order with a seeded rng
//! before scoring, then decodes the solved permutation back to chronological
//! indices — the solvers' lexicographic tie rule prefers low presentation
//! slots, which must not coincide with the answer.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::audio::{compute_stats, zscore, CorpusStats, MelSpectrogram};
use crate::corpus::{
    make_pairs, read_boundaries, read_mel, read_section_csv, segment_at_boundaries, segment_fixed,
    BoundaryList, Fragment, FragmentPair, NegativeClasses, PairClass, Section, MIN_FRAGMENT_FRAMES,
};
use crate::error::{Error, Result};
use crate::models::{mel_tensor, Model, TrainData, EMBED_DIM};
use crate::solver::{
    global_accuracy, pairwise_accuracy, score_all_pairs, solve_heldkarp, summarize,
    OrderingReport, OrderingSummary, PairScorer,
};
use crate::tensor::Tensor;

/// Sequencing games use at most the first ten sections of a song.
pub const MAX_SEQUENCING_SECTIONS: usize = 10;

// FNV-1a; the std hasher is not stable across releases.
fn stable_hash(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

fn shuffle_rng(seed: u64, song_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stable_hash(song_id))
}

/// Scores ordered fragment pairs with a trained model. `Fragment::index`
/// addresses the pre-extracted input tensors, so fragments may be handed to
/// the solver in any presentation order.
pub struct ModelPairScorer<'a> {
    model: &'a Model,
    tensors: Vec<Tensor<f32>>,
}

impl<'a> ModelPairScorer<'a> {
    /// `tensors[i]` is the model input for the fragment with index `i`.
    pub fn new(model: &'a Model, tensors: Vec<Tensor<f32>>) -> ModelPairScorer<'a> {
        ModelPairScorer { model, tensors }
    }

    /// Extracts one tensor per fragment from a normalized spectrogram.
    pub fn from_fragments(
        model: &'a Model,
        mel: &MelSpectrogram,
        frags: &[Fragment],
    ) -> Result<ModelPairScorer<'a>> {
        let mut tensors: Vec<Option<Tensor<f32>>> = vec![None; frags.len()];
        for f in frags {
            let slot = tensors.get_mut(f.index).ok_or_else(|| {
                Error::Data(format!(
                    "fragment index {} outside 0..{}",
                    f.index,
                    frags.len()
                ))
            })?;
            if slot.is_some() {
                return Err(Error::Data(format!("duplicate fragment index {}", f.index)));
            }
            *slot = Some(mel_tensor(&mel.slice_frames(f.frame_start, f.frame_end)?)?);
        }
        let tensors = tensors.into_iter().map(|t| t.expect("every index filled")).collect();
        Ok(ModelPairScorer::new(model, tensors))
    }
}

impl PairScorer for ModelPairScorer<'_> {
    fn score(&self, a: &Fragment, b: &Fragment) -> Result<f64> {
        let get = |f: &Fragment| {
            self.tensors.get(f.index).ok_or_else(|| {
                Error::Data(format!("no tensor for fragment index {}", f.index))
            })
        };
        self.model.prob(get(a)?, get(b)?)
    }
}

/// Presents the fragments in a seeded shuffled order, scores all ordered
/// pairs, solves, and reports the ordering decoded back to chronological
/// indices (truth = 0..n).
pub fn order_presented<S: PairScorer>(
    scorer: &S,
    frags: &[Fragment],
    song_id: &str,
    shuffle_seed: u64,
) -> Result<OrderingReport> {
    let n = frags.len();
    let mut seen = vec![false; n];
    for f in frags {
        if f.index >= n || seen[f.index] {
            return Err(Error::Data(format!(
                "fragment indices of song {song_id:?} do not form 0..{n}"
            )));
        }
        seen[f.index] = true;
    }
    let mut presented: Vec<Fragment> = frags.to_vec();
    presented.shuffle(&mut shuffle_rng(shuffle_seed, song_id));
    let scores = score_all_pairs(scorer, &presented)?;
    let best = solve_heldkarp(&scores)?;
    let perm: Vec<usize> = best.perm.iter().map(|slot| presented[*slot].index).collect();
    let truth: Vec<usize> = (0..n).collect();
    Ok(OrderingReport {
        song_id: song_id.to_string(),
        pa: pairwise_accuracy(&perm, &truth)?,
        ga: global_accuracy(&perm, &truth)?,
        perm,
        fitness: best.fitness,
    })
}

/// Which cut points a jigsaw game uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segmentation {
    Fixed,
    Boundary,
}

impl std::str::FromStr for Segmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Segmentation::Fixed),
            "boundary" => Ok(Segmentation::Boundary),
            other => Err(Error::Config(format!(
                "unknown segmentation {other:?} (want fixed or boundary)"
            ))),
        }
    }
}

/// One jigsaw game on an unnormalized cached spectrogram.
pub fn order_song_puzzle(
    model: &Model,
    stats: &CorpusStats,
    mel: &MelSpectrogram,
    song_id: &str,
    n: usize,
    boundaries: Option<&BoundaryList>,
    shuffle_seed: u64,
) -> Result<OrderingReport> {
    let normed = zscore(mel, stats)?;
    let frags = match boundaries {
        None => segment_fixed(&normed, song_id, n)?,
        Some(b) => segment_at_boundaries(&normed, song_id, b, n)?,
    };
    let scorer = ModelPairScorer::from_fragments(model, &normed, &frags)?;
    order_presented(&scorer, &frags, song_id, shuffle_seed)
}

/// Jigsaw evaluation over cached songs, parallel across songs.
pub fn eval_puzzle_cache(
    model: &Model,
    stats: &CorpusStats,
    cache: &Path,
    ids: &[String],
    n: usize,
    segmentation: Segmentation,
    shuffle_seed: u64,
) -> Result<(Vec<OrderingReport>, OrderingSummary)> {
    if ids.is_empty() {
        return Err(Error::Data("no songs to evaluate".into()));
    }
    let reports: Result<Vec<OrderingReport>> = ids
        .par_iter()
        .map(|id| {
            let (mel, _) = read_mel(cache, id)?;
            let bounds = match segmentation {
                Segmentation::Fixed => None,
                Segmentation::Boundary => {
                    Some(read_boundaries(cache, id)?.ok_or_else(|| {
                        Error::Data(format!("song {id:?} has no boundary file in the cache"))
                    })?)
                }
            };
            order_song_puzzle(model, stats, &mel, id, n, bounds.as_ref(), shuffle_seed)
        })
        .collect();
    let reports = reports?;
    let summary = summarize(&reports)?;
    Ok((reports, summary))
}

/// Per-bin normalization statistics over a set of cached songs.
pub fn stats_from_cache(cache: &Path, ids: &[String]) -> Result<CorpusStats> {
    let mels: Result<Vec<MelSpectrogram>> =
        ids.par_iter().map(|id| Ok(read_mel(cache, id)?.0)).collect();
    compute_stats(&mels?)
}

/// Normalized whole-song tensors plus labeled pairs for the n-fragment
/// ordering game, ready for the trainer. Song order follows `ids`.
pub fn build_train_data(
    cache: &Path,
    ids: &[String],
    stats: &CorpusStats,
    n_fragments: usize,
    negatives: &NegativeClasses,
) -> Result<TrainData<f32>> {
    let songs: Result<Vec<(Tensor<f32>, Vec<FragmentPair>)>> = ids
        .par_iter()
        .map(|id| {
            let (mel, _) = read_mel(cache, id)?;
            let normed = zscore(&mel, stats)?;
            let frags = segment_fixed(&normed, id, n_fragments)?;
            let pairs = make_pairs(&frags, negatives)?;
            Ok((mel_tensor(&normed)?, pairs))
        })
        .collect();
    let mut data = TrainData::default();
    for (song, pairs) in songs? {
        data.push_song(song, &pairs);
    }
    Ok(data)
}

/// One fragment per labeled section, chronological, capped at the first ten
/// sections. Sections shorter than the model minimum are an error.
pub fn sequencing_fragments(
    mel: &MelSpectrogram,
    song_id: &str,
    sections: &[Section],
) -> Result<Vec<Fragment>> {
    if sections.len() < 2 {
        return Err(Error::Data(format!(
            "song {song_id:?}: need at least 2 sections, got {}",
            sections.len()
        )));
    }
    let take = sections.len().min(MAX_SEQUENCING_SECTIONS);
    let rate = mel.frame_rate as f64;
    let mut frags = Vec::with_capacity(take);
    for (i, s) in sections[..take].iter().enumerate() {
        let start = (s.start_sec * rate).round() as usize;
        let end = ((s.end_sec * rate).round() as usize).min(mel.frames);
        if start >= end {
            return Err(Error::Data(format!(
                "song {song_id:?}: section {i} ({:.2}..{:.2} s) lies outside the song's {} frames",
                s.start_sec, s.end_sec, mel.frames
            )));
        }
        if end - start < MIN_FRAGMENT_FRAMES {
            return Err(Error::Data(format!(
                "song {song_id:?}: section {i} ({:.2}..{:.2} s, label {:?}) spans {} frames, \
                 below the {MIN_FRAGMENT_FRAMES}-frame model minimum",
                s.start_sec,
                s.end_sec,
                s.label,
                end - start
            )));
        }
        frags.push(Fragment {
            song_id: song_id.to_string(),
            index: i,
            frame_start: start,
            frame_end: end,
            sec_start: start as f64 / rate,
            sec_end: end as f64 / rate,
        });
    }
    Ok(frags)
}

/// Sequencing games for every `<song_id>.csv` under `sections_dir`; each song
/// must have a cached spectrogram.
pub fn eval_sequencing(
    model: &Model,
    stats: &CorpusStats,
    cache: &Path,
    sections_dir: &Path,
    shuffle_seed: u64,
) -> Result<(Vec<OrderingReport>, OrderingSummary)> {
    let mut jobs: Vec<(String, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(sections_dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("csv") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                jobs.push((stem.to_string(), path.clone()));
            }
        }
    }
    jobs.sort();
    if jobs.is_empty() {
        return Err(Error::Data(format!(
            "no section CSVs in {}",
            sections_dir.display()
        )));
    }
    let reports: Result<Vec<OrderingReport>> = jobs
        .par_iter()
        .map(|(id, csv)| {
            let (mel, _) = read_mel(cache, id)?;
            let normed = zscore(&mel, stats)?;
            let sections = read_section_csv(csv)?;
            let frags = sequencing_fragments(&normed, id, &sections)?;
            let scorer = ModelPairScorer::from_fragments(model, &normed, &frags)?;
            order_presented(&scorer, &frags, id, shuffle_seed)
        })
        .collect();
    let reports = reports?;
    let summary = summarize(&reports)?;
    Ok((reports, summary))
}

/// Writes one CSV row per labeled pair: `class,dim0..dim1023`. Pairs come
/// from the training game (three fragments per song, all four classes).
/// Returns the number of data rows.
pub fn export_embeddings(
    model: &Model,
    stats: &CorpusStats,
    cache: &Path,
    ids: &[String],
    out: &Path,
) -> Result<usize> {
    if ids.is_empty() {
        return Err(Error::Data("no songs to export".into()));
    }
    let per_song: Result<Vec<Vec<(PairClass, Vec<f32>)>>> = ids
        .par_iter()
        .map(|id| {
            let (mel, _) = read_mel(cache, id)?;
            let normed = zscore(&mel, stats)?;
            let frags = segment_fixed(&normed, id, 3)?;
            let pairs = make_pairs(&frags, &NegativeClasses::default())?;
            pairs
                .iter()
                .map(|p| {
                    let xa = mel_tensor(&normed.slice_frames(p.a.frame_start, p.a.frame_end)?)?;
                    let xb = mel_tensor(&normed.slice_frames(p.b.frame_start, p.b.frame_end)?)?;
                    let e = model.embedding(&xa, &xb)?;
                    if e.len() != EMBED_DIM {
                        return Err(Error::Shape(format!(
                            "embedding of dim {} (want {EMBED_DIM})",
                            e.len()
                        )));
                    }
                    Ok((p.class, e))
                })
                .collect()
        })
        .collect();
    let per_song = per_song?;

    let mut w = std::io::BufWriter::new(std::fs::File::create(out)?);
    write!(w, "class")?;
    for d in 0..EMBED_DIM {
        write!(w, ",dim{d}")?;
    }
    writeln!(w)?;
    let mut rows = 0usize;
    for song_rows in per_song {
        for (class, e) in song_rows {
            write!(w, "{class}")?;
            for v in e {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
            rows += 1;
        }
    }
    w.flush()?;
    Ok(rows)
}
