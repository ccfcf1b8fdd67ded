//! Song segmentation, labeled pair generation, corpus splits, and the
//! spectrogram cache.

pub mod boundaries;
pub mod cache;
pub mod pairs;
pub mod segment;

pub use boundaries::{boundaries_from_section_csv, read_section_csv, BoundaryList, Section};
pub use cache::{list_song_ids, read_boundaries, read_mel, write_boundaries, write_mel, MelSidecar};
pub use pairs::{make_pairs, FragmentPair, NegativeClasses, PairClass, PairRecord};
pub use segment::{segment_at_boundaries, segment_fixed};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shortest fragment the models accept; the induced similarity matrix is
/// 30x30, which survives the full convolution/pooling head.
pub const MIN_FRAGMENT_FRAMES: usize = 39;

/// Contiguous frame range of one song, chronological index included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fragment {
    pub song_id: String,
    pub index: usize,
    pub frame_start: usize,
    pub frame_end: usize,
    pub sec_start: f64,
    pub sec_end: f64,
}

impl Fragment {
    pub fn frames(&self) -> usize {
        self.frame_end - self.frame_start
    }
}

/// Song-level train/validation/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Deterministic shuffle-and-cut split. Fractions apply to train and
/// validation; the remainder is the test set.
pub fn split_corpus(ids: &[String], seed: u64, train_frac: f64, val_frac: f64) -> Result<Splits> {
    if !(0.0..=1.0).contains(&train_frac)
        || !(0.0..=1.0).contains(&val_frac)
        || train_frac + val_frac > 1.0 + 1e-9
    {
        return Err(Error::Config(format!(
            "invalid split fractions {train_frac}/{val_frac}"
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::Data(format!("duplicate song id {id:?} in split input")));
        }
    }
    let mut shuffled: Vec<String> = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let n = shuffled.len();
    let n_train = ((n as f64 * train_frac).round() as usize).min(n);
    let n_val = ((n as f64 * val_frac).round() as usize).min(n - n_train);
    let validation = shuffled.split_off(n_train + n_val);
    // split_off leaves train+val in place; peel validation out of the middle.
    let mut train = shuffled;
    let val = train.split_off(n_train);
    Ok(Splits {
        train,
        validation: val,
        test: validation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("song{i:03}")).collect()
    }

    #[test]
    fn split_fractions_and_disjointness() {
        let s = split_corpus(&ids(10), 7, 0.6, 0.2).unwrap();
        assert_eq!(s.train.len(), 6);
        assert_eq!(s.validation.len(), 2);
        assert_eq!(s.test.len(), 2);
        let mut all: Vec<&String> = s.train.iter().chain(&s.validation).chain(&s.test).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 10);
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_corpus(&ids(50), 42, 0.8, 0.1).unwrap();
        let b = split_corpus(&ids(50), 42, 0.8, 0.1).unwrap();
        assert_eq!(a, b);
        let c = split_corpus(&ids(50), 43, 0.8, 0.1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut v = ids(4);
        v.push("song001".into());
        assert!(split_corpus(&v, 1, 0.5, 0.25).is_err());
    }

    #[test]
    fn bad_fractions_rejected() {
        assert!(split_corpus(&ids(4), 1, 0.8, 0.4).is_err());
        assert!(split_corpus(&ids(4), 1, -0.1, 0.4).is_err());
    }
}
