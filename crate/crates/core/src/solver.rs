//! Global ordering by fitness maximization, plus ordering metrics.
//!
//! Fitness of a permutation is the sum of pairwise scores along its
//! consecutive pairs. Both solvers accumulate each path's score left to
//! right in f64, so the subset-DP solver reproduces brute-force fitness
//! bitwise and ties resolve identically.

use std::io::Write;
use std::path::Path;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::corpus::Fragment;
use crate::error::{Error, Result};

pub const BRUTE_FORCE_MAX: usize = 9;
pub const HELD_KARP_MAX: usize = 24;

/// Anything that turns an ordered fragment pair into a consecutiveness score.
pub trait PairScorer: Sync {
    fn score(&self, a: &Fragment, b: &Fragment) -> Result<f64>;
}

/// Dense n x n score table; the diagonal is never read and dumps as "NA".
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    n: usize,
    scores: Vec<f64>,
}

impl ScoreMatrix {
    pub fn from_rows(scores: Vec<f64>, n: usize) -> Result<ScoreMatrix> {
        if n < 2 || scores.len() != n * n {
            return Err(Error::Solver(format!(
                "score matrix wants n>=2 with n*n entries, got n={n}, len={}",
                scores.len()
            )));
        }
        for a in 0..n {
            for b in 0..n {
                let v = scores[a * n + b];
                if a != b && !(0.0..=1.0).contains(&v) {
                    return Err(Error::Solver(format!(
                        "score[{a}][{b}] = {v} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(ScoreMatrix { n, scores })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        debug_assert_ne!(a, b, "diagonal is undefined");
        self.scores[a * self.n + b]
    }

    /// CSV dump with "NA" on the diagonal.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for a in 0..self.n {
            let row: Vec<String> = (0..self.n)
                .map(|b| {
                    if a == b {
                        "NA".to_string()
                    } else {
                        format!("{}", self.get(a, b))
                    }
                })
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates all n(n-1) ordered pairs. Row-parallel callers get identical
/// results because each slot is filled independently.
pub fn score_all_pairs<S: PairScorer>(scorer: &S, frags: &[Fragment]) -> Result<ScoreMatrix> {
    let n = frags.len();
    if n < 2 {
        return Err(Error::Solver(format!("need at least 2 fragments, got {n}")));
    }
    use rayon::prelude::*;
    let cells: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (0..n).filter(move |b| *b != a).map(move |b| (a, b)))
        .collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|(a, b)| scorer.score(&frags[*a], &frags[*b]))
        .collect::<Result<Vec<f64>>>()?;
    let mut scores = vec![0.0f64; n * n];
    for ((a, b), v) in cells.into_iter().zip(values) {
        scores[a * n + b] = v;
    }
    ScoreMatrix::from_rows(scores, n)
}

/// Sum of scores along consecutive pairs, accumulated left to right.
pub fn fitness(perm: &[usize], scores: &ScoreMatrix) -> Result<f64> {
    validate_perm(perm, scores.n())?;
    let mut acc = 0.0f64;
    for w in perm.windows(2) {
        acc += scores.get(w[0], w[1]);
    }
    Ok(acc)
}

fn validate_perm(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::Solver(format!(
            "permutation length {} does not match n={n}",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for p in perm {
        if *p >= n || seen[*p] {
            return Err(Error::Solver(format!("invalid permutation {perm:?}")));
        }
        seen[*p] = true;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ordering {
    pub perm: Vec<usize>,
    pub fitness: f64,
}

/// Exhaustive search in lexicographic order; strict improvement keeps the
/// lexicographically smallest argmax.
pub fn solve_bruteforce(scores: &ScoreMatrix) -> Result<Ordering> {
    let n = scores.n();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::Solver(format!(
            "brute force capped at n={BRUTE_FORCE_MAX}, got {n}"
        )));
    }
    let mut best: Option<Ordering> = None;
    for perm in (0..n).permutations(n) {
        let mut acc = 0.0f64;
        for w in perm.windows(2) {
            acc += scores.get(w[0], w[1]);
        }
        if best.as_ref().is_none_or(|b| acc > b.fitness) {
            best = Some(Ordering { perm, fitness: acc });
        }
    }
    Ok(best.expect("n >= 2 yields permutations"))
}

/// Open-path subset DP: dp[mask][v] is the best score of a path visiting
/// exactly `mask` and ending at v. O(n^2 2^n) time, O(n 2^n) memory.
///
/// Exact score ties fall back to comparing the reconstructed prefixes, so the
/// result is always the lexicographically smallest argmax, matching brute
/// force even on degenerate matrices. Ties have measure zero for model
/// scores, so the fallback almost never runs.
pub fn solve_heldkarp(scores: &ScoreMatrix) -> Result<Ordering> {
    let n = scores.n();
    if n > HELD_KARP_MAX {
        return Err(Error::Solver(format!(
            "subset DP capped at n={HELD_KARP_MAX}, got {n}"
        )));
    }
    let full = 1usize << n;
    let mut dp = vec![f64::NEG_INFINITY; full * n];
    let mut parent = vec![usize::MAX; full * n];
    for v in 0..n {
        dp[(1 << v) * n + v] = 0.0;
    }

    let reconstruct = |parent: &[usize], mask: usize, v: usize| -> Vec<usize> {
        let mut seq = Vec::with_capacity(mask.count_ones() as usize);
        let (mut mask, mut v) = (mask, v);
        while v != usize::MAX {
            seq.push(v);
            let p = parent[mask * n + v];
            mask &= !(1 << v);
            v = p;
        }
        seq.reverse();
        seq
    };

    for mask in 1..full {
        for last in 0..n {
            let cur = dp[mask * n + last];
            if cur == f64::NEG_INFINITY || mask & (1 << last) == 0 {
                continue;
            }
            for next in 0..n {
                if mask & (1 << next) != 0 {
                    continue;
                }
                // Left-to-right accumulation: extending a path adds one term
                // to its running sum, exactly like the brute-force loop.
                let cand = cur + scores.get(last, next);
                let slot = (mask | (1 << next)) * n + next;
                let better = if cand > dp[slot] {
                    true
                } else if cand == dp[slot] && parent[slot] != usize::MAX {
                    let mut challenger = reconstruct(&parent, mask, last);
                    challenger.push(next);
                    challenger < reconstruct(&parent, mask | (1 << next), next)
                } else {
                    false
                };
                if better {
                    dp[slot] = cand;
                    parent[slot] = last;
                }
            }
        }
    }

    let last_mask = full - 1;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for v in 0..n {
        let score = dp[last_mask * n + v];
        let replace = match &best {
            None => true,
            Some((bs, bp)) => {
                score > *bs || (score == *bs && reconstruct(&parent, last_mask, v) < *bp)
            }
        };
        if replace {
            best = Some((score, reconstruct(&parent, last_mask, v)));
        }
    }
    let (fitness, perm) = best.expect("n >= 2 yields a path");
    Ok(Ordering { perm, fitness })
}

/// Fraction of predicted consecutive pairs that are consecutive (same
/// direction) in the truth ordering.
pub fn pairwise_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let n = truth.len();
    validate_perm(pred, n)?;
    validate_perm(truth, n)?;
    if n < 2 {
        return Err(Error::Solver("need n >= 2 for pairwise accuracy".into()));
    }
    let mut next_in_truth = vec![usize::MAX; n];
    for w in truth.windows(2) {
        next_in_truth[w[0]] = w[1];
    }
    let correct = pred
        .windows(2)
        .filter(|w| next_in_truth[w[0]] == w[1])
        .count();
    Ok(correct as f64 / (n - 1) as f64)
}

/// 1.0 iff the orderings match exactly.
pub fn global_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    validate_perm(pred, truth.len())?;
    validate_perm(truth, truth.len())?;
    Ok((pred == truth) as u8 as f64)
}

/// Per-song ordering result for reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderingReport {
    pub song_id: String,
    pub perm: Vec<usize>,
    pub fitness: f64,
    pub pa: f64,
    pub ga: f64,
}

/// Corpus-level aggregate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderingSummary {
    pub songs: usize,
    pub mean_pa: f64,
    pub mean_ga: f64,
}

pub fn summarize(reports: &[OrderingReport]) -> Result<OrderingSummary> {
    if reports.is_empty() {
        return Err(Error::Solver("no ordering reports to summarize".into()));
    }
    let n = reports.len() as f64;
    Ok(OrderingSummary {
        songs: reports.len(),
        mean_pa: reports.iter().map(|r| r.pa).sum::<f64>() / n,
        mean_ga: reports.iter().map(|r| r.ga).sum::<f64>() / n,
    })
}
