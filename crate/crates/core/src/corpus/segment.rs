//! Fragmenting songs: fixed equal frame counts or boundary-informed cuts.

use crate::audio::MelSpectrogram;
use crate::corpus::{BoundaryList, Fragment, MIN_FRAGMENT_FRAMES};
use crate::error::{Error, Result};

fn fragment(mel: &MelSpectrogram, song_id: &str, index: usize, start: usize, end: usize) -> Fragment {
    let rate = mel.frame_rate as f64;
    Fragment {
        song_id: song_id.to_string(),
        index,
        frame_start: start,
        frame_end: end,
        sec_start: start as f64 / rate,
        sec_end: end as f64 / rate,
    }
}

/// n contiguous fragments of exactly floor(frames/n) frames; the remainder at
/// the end of the clip is dropped.
pub fn segment_fixed(mel: &MelSpectrogram, song_id: &str, n: usize) -> Result<Vec<Fragment>> {
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 fragments, got {n}")));
    }
    let per = mel.frames / n;
    if per < MIN_FRAGMENT_FRAMES {
        return Err(Error::Data(format!(
            "song {song_id:?}: {} frames / {n} fragments = {per} frames each, below the {MIN_FRAGMENT_FRAMES}-frame minimum",
            mel.frames
        )));
    }
    Ok((0..n)
        .map(|i| fragment(mel, song_id, i, i * per, (i + 1) * per))
        .collect())
}

/// Picks n-1 cut points from the boundary list, each greedily nearest to the
/// equally-spaced target times, then validates that every resulting fragment
/// is within 30% of the uniform length and meets the frame minimum.
pub fn segment_at_boundaries(
    mel: &MelSpectrogram,
    song_id: &str,
    bounds: &BoundaryList,
    n: usize,
) -> Result<Vec<Fragment>> {
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 fragments, got {n}")));
    }
    let rate = mel.frame_rate as f64;
    let duration = mel.frames as f64 / rate;
    bounds.validate(duration)?;
    if bounds.boundaries_sec.len() < n - 1 {
        return Err(Error::Data(format!(
            "song {song_id:?}: {} boundaries cannot yield {n} fragments",
            bounds.boundaries_sec.len()
        )));
    }

    let mut chosen: Vec<usize> = Vec::with_capacity(n - 1);
    for k in 1..n {
        let target = duration * k as f64 / n as f64;
        let pick = bounds
            .boundaries_sec
            .iter()
            .enumerate()
            .filter(|(i, _)| !chosen.contains(i))
            .min_by(|(_, a), (_, b)| {
                (*a - target)
                    .abs()
                    .partial_cmp(&(*b - target).abs())
                    .expect("finite boundaries")
            })
            .map(|(i, _)| i)
            .expect("candidate count checked");
        chosen.push(pick);
    }
    chosen.sort_unstable();
    let mut cuts: Vec<usize> = chosen
        .iter()
        .map(|i| (bounds.boundaries_sec[*i] * rate).round() as usize)
        .collect();
    cuts.dedup();
    if cuts.len() != n - 1 || cuts[0] == 0 || *cuts.last().expect("nonempty") >= mel.frames {
        return Err(Error::Data(format!(
            "song {song_id:?}: selected cut points collapse after frame rounding"
        )));
    }

    let mut edges = Vec::with_capacity(n + 1);
    edges.push(0);
    edges.extend_from_slice(&cuts);
    edges.push(mel.frames);

    let target_frames = mel.frames as f64 / n as f64;
    for w in edges.windows(2) {
        let len = w[1] - w[0];
        if (len as f64) < 0.7 * target_frames || (len as f64) > 1.3 * target_frames {
            return Err(Error::Data(format!(
                "song {song_id:?}: fragment of {len} frames outside 30% of target {target_frames:.1}"
            )));
        }
        if len < MIN_FRAGMENT_FRAMES {
            return Err(Error::Data(format!(
                "song {song_id:?}: fragment of {len} frames below the {MIN_FRAGMENT_FRAMES}-frame minimum"
            )));
        }
    }
    Ok(edges
        .windows(2)
        .enumerate()
        .map(|(i, w)| fragment(mel, song_id, i, w[0], w[1]))
        .collect())
}
