//! Symbol-sequence kernels: edit distance and local alignment discovery.

use std::collections::HashMap;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, FrameSpan, Segment};
use crate::error::{Error, Result};

/// Unit-cost edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `levenshtein(a, b) / max(len(a), len(b))`; undefined when both are empty.
pub fn normalized_levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> Result<f64> {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return Err(Error::Undefined("normalized Levenshtein of two empty sequences"));
    }
    Ok(levenshtein(a, b) as f64 / longest as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignScoring {
    pub match_score: f64,
    pub mismatch_penalty: f64,
    pub gap_penalty: f64,
    pub min_align_score: f64,
    /// Minimum aligned length in symbols, on both sides.
    pub min_length: usize,
}

impl Default for AlignScoring {
    fn default() -> Self {
        AlignScoring {
            match_score: 1.0,
            mismatch_penalty: -1.0,
            gap_penalty: -1.0,
            min_align_score: 3.0,
            min_length: 3,
        }
    }
}

impl AlignScoring {
    pub fn validate(&self) -> Result<()> {
        if !(self.match_score > 0.0) || self.mismatch_penalty > 0.0 || self.gap_penalty > 0.0 {
            return Err(Error::Config(
                "alignment scoring needs match_score > 0 and non-positive penalties".into(),
            ));
        }
        if self.min_length == 0 {
            return Err(Error::Config("min_length must be at least 1".into()));
        }
        Ok(())
    }
}

/// One local alignment: half-open symbol ranges in each sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalAlignment {
    pub a: Range<usize>,
    pub b: Range<usize>,
    pub score: f64,
}

/// Smith-Waterman matrix over `a` (rows) and `b` (columns) with banned symbol positions.
struct SwMatrix<'s, T> {
    a: &'s [T],
    b: &'s [T],
    scoring: &'s AlignScoring,
    h: Vec<f64>,
    cols: usize,
}

impl<'s, T: PartialEq> SwMatrix<'s, T> {
    fn new(a: &'s [T], b: &'s [T], scoring: &'s AlignScoring) -> Self {
        let cols = b.len() + 1;
        SwMatrix {
            a,
            b,
            scoring,
            h: vec![0.0; (a.len() + 1) * cols],
            cols,
        }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.h[i * self.cols + j]
    }

    fn pair_score(&self, i: usize, j: usize) -> f64 {
        if self.a[i - 1] == self.b[j - 1] {
            self.scoring.match_score
        } else {
            self.scoring.mismatch_penalty
        }
    }

    /// Fills the matrix and returns the best cell (first in row-major order on ties).
    fn fill(&mut self, banned: impl Fn(usize, usize) -> bool) -> (f64, usize, usize) {
        let gap = self.scoring.gap_penalty;
        let mut best = (0.0, 0, 0);
        for i in 1..=self.a.len() {
            for j in 1..=self.b.len() {
                let v = if banned(i - 1, j - 1) {
                    0.0
                } else {
                    let diag = self.at(i - 1, j - 1) + self.pair_score(i, j);
                    let up = self.at(i - 1, j) + gap;
                    let left = self.at(i, j - 1) + gap;
                    diag.max(up).max(left).max(0.0)
                };
                self.h[i * self.cols + j] = v;
                if v > best.0 {
                    best = (v, i, j);
                }
            }
        }
        best
    }

    /// Traces back from `(i, j)`, preferring diagonal, then up, then left.
    fn traceback(&self, mut i: usize, mut j: usize) -> (Range<usize>, Range<usize>) {
        let (end_i, end_j) = (i, j);
        let gap = self.scoring.gap_penalty;
        while i > 0 && j > 0 && self.at(i, j) > 0.0 {
            let here = self.at(i, j);
            if here == self.at(i - 1, j - 1) + self.pair_score(i, j) {
                i -= 1;
                j -= 1;
            } else if here == self.at(i - 1, j) + gap {
                i -= 1;
            } else {
                j -= 1;
            }
        }
        (i..end_i, j..end_j)
    }
}

fn align_impl<T: PartialEq>(
    a: &[T],
    b: &[T],
    scoring: &AlignScoring,
    self_pair: bool,
) -> Vec<LocalAlignment> {
    let mut out = Vec::new();
    if a.is_empty() || b.is_empty() {
        return out;
    }
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut m = SwMatrix::new(a, b, scoring);
    loop {
        let (score, i, j) = m.fill(|x, y| {
            used_a[x] || used_b[y] || (self_pair && y <= x)
        });
        if score <= 0.0 || score < scoring.min_align_score {
            break;
        }
        let (ra, rb) = m.traceback(i, j);
        for k in ra.clone() {
            used_a[k] = true;
            if self_pair {
                used_b[k] = true;
            }
        }
        for k in rb.clone() {
            used_b[k] = true;
            if self_pair {
                used_a[k] = true;
            }
        }
        if ra.len() >= scoring.min_length && rb.len() >= scoring.min_length {
            out.push(LocalAlignment { a: ra, b: rb, score });
        }
    }
    out
}

/// All non-overlapping local alignments of `a` and `b` scoring at least
/// `min_align_score` with both sides at least `min_length` long, extracted
/// best first; each extraction bans its symbols from later passes.
pub fn local_align<T: PartialEq>(a: &[T], b: &[T], scoring: &AlignScoring) -> Vec<LocalAlignment> {
    align_impl(a, b, scoring, false)
}

/// Local alignments of a sequence with itself, restricted to pairs of
/// distinct positions (`a` index strictly before `b` index).
pub fn local_align_self<T: PartialEq>(a: &[T], scoring: &AlignScoring) -> Vec<LocalAlignment> {
    align_impl(a, a, scoring, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    pub scoring: AlignScoring,
    /// Upper bound on utterance pairs aligned in one run.
    pub max_pairs: u64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            scoring: AlignScoring::default(),
            max_pairs: 20_000_000,
        }
    }
}

/// Aligns every unordered utterance pair (self-pairs included) and turns each
/// aligned span into a segment. Identical `(utterance, span)` segments are
/// kept once; ids follow discovery order.
pub fn discover_segments(corpus: &Corpus, config: &DiscoveryConfig) -> Result<Vec<Segment>> {
    config.scoring.validate()?;
    let utts = corpus.utterances();
    let n = utts.len() as u64;
    let pairs = n * (n + 1) / 2;
    if pairs > config.max_pairs {
        return Err(Error::Budget(format!(
            "{pairs} utterance pairs exceed max_pairs = {}",
            config.max_pairs
        )));
    }
    let pair_list: Vec<(usize, usize)> = (0..utts.len())
        .flat_map(|i| (i..utts.len()).map(move |j| (i, j)))
        .collect();
    let found: Vec<Vec<(usize, Range<usize>)>> = pair_list
        .par_iter()
        .map(|&(i, j)| {
            let a = &utts[i].transcription;
            let alignments = if i == j {
                local_align_self(a, &config.scoring)
            } else {
                local_align(a, &utts[j].transcription, &config.scoring)
            };
            alignments
                .into_iter()
                .flat_map(|al| [(i, al.a), (j, al.b)])
                .collect()
        })
        .collect();

    let mut seen: HashMap<(usize, FrameSpan), usize> = HashMap::new();
    let mut segments = Vec::new();
    for (u, range) in found.into_iter().flatten() {
        let utt = &utts[u];
        let span = utt.symbol_frames(range.start, range.end);
        if seen.contains_key(&(u, span)) {
            continue;
        }
        let id = segments.len();
        seen.insert((u, span), id);
        segments.push(Segment {
            id,
            utterance: utt.id.clone(),
            span,
            symbols: utt.transcription[range].to_vec(),
            embedding: None,
        });
    }
    log::info!(
        "aligned {} utterance pairs, discovered {} segments",
        pair_list.len(),
        segments.len()
    );
    Ok(segments)
}
