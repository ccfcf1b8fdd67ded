//! Labeled fragment pairs for order verification.
//!
//! From n chronological fragments: positives pair each fragment with its
//! successor; negatives reverse them or skip one fragment in either
//! direction. Negative classes can be disabled individually for ablations.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Fragment;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairClass {
    R1R2,
    R2R1,
    R1R3,
    R3R1,
}

impl PairClass {
    pub fn is_positive(self) -> bool {
        matches!(self, PairClass::R1R2)
    }

    pub fn all() -> [PairClass; 4] {
        [PairClass::R1R2, PairClass::R2R1, PairClass::R1R3, PairClass::R3R1]
    }
}

impl std::fmt::Display for PairClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PairClass::R1R2 => "R1R2",
            PairClass::R2R1 => "R2R1",
            PairClass::R1R3 => "R1R3",
            PairClass::R3R1 => "R3R1",
        };
        write!(f, "{s}")
    }
}

/// Which negative classes participate in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NegativeClasses {
    pub r2r1: bool,
    pub r1r3: bool,
    pub r3r1: bool,
}

impl Default for NegativeClasses {
    fn default() -> Self {
        NegativeClasses {
            r2r1: true,
            r1r3: true,
            r3r1: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentPair {
    pub a: Fragment,
    pub b: Fragment,
    pub label: u8,
    pub class: PairClass,
}

/// Emits classes in a fixed order: R1R2, then enabled negatives.
pub fn make_pairs(frags: &[Fragment], negatives: &NegativeClasses) -> Result<Vec<FragmentPair>> {
    let n = frags.len();
    if n < 3 {
        return Err(Error::Data(format!("need at least 3 fragments, got {n}")));
    }
    let mk = |a: &Fragment, b: &Fragment, class: PairClass| FragmentPair {
        a: a.clone(),
        b: b.clone(),
        label: class.is_positive() as u8,
        class,
    };
    let mut pairs = Vec::with_capacity(4 * n);
    for i in 0..n - 1 {
        pairs.push(mk(&frags[i], &frags[i + 1], PairClass::R1R2));
    }
    if negatives.r2r1 {
        for i in 0..n - 1 {
            pairs.push(mk(&frags[i + 1], &frags[i], PairClass::R2R1));
        }
    }
    if negatives.r1r3 {
        for i in 0..n - 2 {
            pairs.push(mk(&frags[i], &frags[i + 2], PairClass::R1R3));
        }
    }
    if negatives.r3r1 {
        for i in 0..n - 2 {
            pairs.push(mk(&frags[i + 2], &frags[i], PairClass::R3R1));
        }
    }
    Ok(pairs)
}

/// One manifest line: fragment indices rather than frame ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub song_id: String,
    pub idx_a: usize,
    pub idx_b: usize,
    pub label: u8,
    pub class: PairClass,
}

impl PairRecord {
    pub fn from_pair(p: &FragmentPair) -> PairRecord {
        PairRecord {
            song_id: p.a.song_id.clone(),
            idx_a: p.a.index,
            idx_b: p.b.index,
            label: p.label,
            class: p.class,
        }
    }
}

pub fn write_pair_manifest(path: &Path, pairs: &[FragmentPair]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in pairs {
        serde_json::to_writer(&mut w, &PairRecord::from_pair(p))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pair_manifest(path: &Path) -> Result<Vec<PairRecord>> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
