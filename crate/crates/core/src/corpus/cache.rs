//! On-disk spectrogram cache.
//!
//! Each song stores `<id>.mel` (the binary tensor container with key "mel"),
//! `<id>.json` (source file, sample rate, frame count), and optionally
//! `<id>.boundaries.json`. Cached spectrograms are unnormalized; z-score
//! statistics live in model checkpoints, not here.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::audio::{MelSpectrogram, SAMPLE_RATE};
use crate::checkpoint::Container;
use crate::corpus::BoundaryList;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelSidecar {
    pub source: String,
    pub sample_rate: u32,
    pub frames: usize,
}

pub fn mel_path(dir: &Path, song_id: &str) -> PathBuf {
    dir.join(format!("{song_id}.mel"))
}

pub fn sidecar_path(dir: &Path, song_id: &str) -> PathBuf {
    dir.join(format!("{song_id}.json"))
}

pub fn boundary_path(dir: &Path, song_id: &str) -> PathBuf {
    dir.join(format!("{song_id}.boundaries.json"))
}

pub fn write_mel(dir: &Path, song_id: &str, mel: &MelSpectrogram, source: &str) -> Result<()> {
    if mel.normalized {
        return Err(Error::Data(format!(
            "song {song_id:?}: refusing to cache a normalized spectrogram"
        )));
    }
    std::fs::create_dir_all(dir)?;
    let mut container = Container::new(json!({"kind": "mel"}));
    container.insert(
        "mel",
        Tensor::from_vec(&[mel.frames, crate::audio::MEL_BINS], mel.data.clone())?,
    );
    container.save(&mel_path(dir, song_id))?;
    let sidecar = MelSidecar {
        source: source.to_string(),
        sample_rate: SAMPLE_RATE,
        frames: mel.frames,
    };
    std::fs::write(
        sidecar_path(dir, song_id),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}

pub fn read_mel(dir: &Path, song_id: &str) -> Result<(MelSpectrogram, MelSidecar)> {
    let container = Container::load(&mel_path(dir, song_id))?;
    let tensor = container.require("mel")?;
    if tensor.shape().len() != 2 || tensor.dim(1) != crate::audio::MEL_BINS {
        return Err(Error::Checkpoint(format!(
            "song {song_id:?}: mel tensor has shape {:?}",
            tensor.shape()
        )));
    }
    let mel = MelSpectrogram::new(tensor.data().to_vec(), tensor.dim(0), false)?;
    let sidecar: MelSidecar =
        serde_json::from_str(&std::fs::read_to_string(sidecar_path(dir, song_id))?)?;
    if sidecar.frames != mel.frames {
        return Err(Error::Data(format!(
            "song {song_id:?}: sidecar says {} frames, tensor has {}",
            sidecar.frames, mel.frames
        )));
    }
    Ok((mel, sidecar))
}

pub fn write_boundaries(dir: &Path, bounds: &BoundaryList) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    bounds.write_json(&boundary_path(dir, &bounds.song_id))
}

pub fn read_boundaries(dir: &Path, song_id: &str) -> Result<Option<BoundaryList>> {
    let path = boundary_path(dir, song_id);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(BoundaryList::read_json(&path)?))
}

/// Song ids with a cached spectrogram, sorted for determinism.
pub fn list_song_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("mel") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}
