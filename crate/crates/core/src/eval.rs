//! Scores for a discovered cluster set against gold word annotations.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::baseline::Cluster;
use crate::corpus::{Corpus, FrameSpan, GoldAnnotation, GoldUtterance, Segment, SubwordId};
use crate::error::{Error, Result};
use crate::seqmatch::levenshtein;
use crate::synthgen::label_in_utterance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Allowed offset, in frames, per token edge.
    pub token_tolerance: usize,
    /// Allowed offset, in frames, for a boundary hit.
    pub boundary_tolerance: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            token_tolerance: 1,
            boundary_tolerance: 1,
        }
    }
}

/// Precision, recall and F-score; `None` where a denominator is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f_score: Option<f64>,
}

impl Prf {
    /// F is the harmonic mean, 0 when P + R = 0; an undefined side counts as
    /// 0 unless both are undefined.
    pub fn new(precision: Option<f64>, recall: Option<f64>) -> Self {
        let f_score = match (precision, recall) {
            (None, None) => None,
            (p, r) => {
                let (p, r) = (p.unwrap_or(0.0), r.unwrap_or(0.0));
                Some(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
            }
        };
        Prf {
            precision,
            recall,
            f_score,
        }
    }

    fn from_counts(p_num: usize, p_den: usize, r_num: usize, r_den: usize) -> Self {
        let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
        Prf::new(ratio(p_num, p_den), ratio(r_num, r_den))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub grouping: Prf,
    pub token: Prf,
    #[serde(rename = "type")]
    pub type_: Prf,
    pub boundary: Prf,
    pub ned: Option<f64>,
    pub coverage: f64,
    pub n_words: usize,
    pub n_pairs: usize,
}

fn gold_index<'g>(gold: &'g GoldAnnotation, segments: &[Segment]) -> Result<HashMap<&'g str, &'g GoldUtterance>> {
    let index = gold.index();
    if let Some(s) = segments.iter().find(|s| !index.contains_key(s.utterance.as_str())) {
        return Err(Error::corpus(&s.utterance, "no gold annotation for this utterance"));
    }
    Ok(index)
}

/// Gold subword string under each segment span.
pub fn gold_strings(segments: &[Segment], gold: &GoldAnnotation) -> Result<Vec<Vec<SubwordId>>> {
    let index = gold_index(gold, segments)?;
    Ok(segments
        .iter()
        .map(|s| index[s.utterance.as_str()].symbols_in(s.span))
        .collect())
}

/// Gold word label per segment (see [`crate::synthgen::gold_segment_label`]).
pub fn gold_labels(segments: &[Segment], gold: &GoldAnnotation) -> Result<Vec<Option<usize>>> {
    let index = gold_index(gold, segments)?;
    Ok(segments
        .iter()
        .map(|s| label_in_utterance(index[s.utterance.as_str()], s.span))
        .collect())
}

fn ned_pair(a: &[SubwordId], b: &[SubwordId]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        0.0
    } else {
        levenshtein(a, b) as f64 / longest as f64
    }
}

/// Mean normalized edit distance between the gold strings of every
/// within-cluster segment pair. Two empty gold strings count as identical.
pub fn ned(clusters: &[Cluster], gold_strings: &[Vec<SubwordId>]) -> Option<f64> {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for c in clusters {
        for (i, &a) in c.members.iter().enumerate() {
            for &b in &c.members[i + 1..] {
                total += ned_pair(&gold_strings[a], &gold_strings[b]);
                pairs += 1;
            }
        }
    }
    (pairs > 0).then(|| total / pairs as f64)
}

/// Members of any cluster, ascending.
fn clustered(clusters: &[Cluster]) -> BTreeSet<usize> {
    clusters.iter().flat_map(|c| c.members.iter().copied()).collect()
}

/// Fraction of corpus frames covered by the union of clustered segment spans.
pub fn coverage(clusters: &[Cluster], segments: &[Segment], corpus: &Corpus) -> f64 {
    let total = corpus.total_frames();
    if total == 0 {
        return 0.0;
    }
    let mut spans: BTreeMap<&str, Vec<FrameSpan>> = BTreeMap::new();
    for id in clustered(clusters) {
        let s = &segments[id];
        spans.entry(&s.utterance).or_default().push(s.span);
    }
    let mut covered = 0;
    for list in spans.values_mut() {
        list.sort_by_key(|s| (s.start, s.end));
        let mut reach = 0;
        for s in list.iter() {
            let start = s.start.max(reach);
            if s.end > start {
                covered += s.end - start;
            }
            reach = reach.max(s.end);
        }
    }
    covered as f64 / total as f64
}

/// Pairwise grouping scores over clustered segments with a gold label.
pub fn grouping_prf(clusters: &[Cluster], labels: &[Option<usize>]) -> Prf {
    let mut within = 0usize;
    let mut within_same = 0usize;
    for c in clusters {
        let mut by_word: BTreeMap<usize, usize> = BTreeMap::new();
        let mut n = 0usize;
        for &m in &c.members {
            if let Some(w) = labels[m] {
                *by_word.entry(w).or_insert(0) += 1;
                n += 1;
            }
        }
        within += n * n.saturating_sub(1) / 2;
        within_same += by_word.values().map(|k| k * (k - 1) / 2).sum::<usize>();
    }
    let mut by_word: BTreeMap<usize, usize> = BTreeMap::new();
    for id in clustered(clusters) {
        if let Some(w) = labels[id] {
            *by_word.entry(w).or_insert(0) += 1;
        }
    }
    let same_word: usize = by_word.values().map(|k| k * (k - 1) / 2).sum();
    Prf::from_counts(within_same, within, within_same, same_word)
}

fn within(a: usize, b: usize, tol: usize) -> bool {
    a.abs_diff(b) <= tol
}

/// Token and type scores. A clustered segment matches a gold token when both
/// edges agree within `tolerance` frames.
pub fn token_type_prf(
    clusters: &[Cluster],
    segments: &[Segment],
    labels: &[Option<usize>],
    gold: &GoldAnnotation,
    tolerance: usize,
) -> Result<(Prf, Prf)> {
    let index = gold_index(gold, segments)?;
    let discovered = clustered(clusters);
    let mut by_utt: BTreeMap<&str, Vec<FrameSpan>> = BTreeMap::new();
    let mut seg_hits = 0;
    for &id in &discovered {
        let s = &segments[id];
        by_utt.entry(&s.utterance).or_default().push(s.span);
        let hit = index[s.utterance.as_str()].tokens().any(|t| {
            within(t.span.start, s.span.start, tolerance) && within(t.span.end, s.span.end, tolerance)
        });
        seg_hits += usize::from(hit);
    }
    let mut n_tokens = 0;
    let mut token_hits = 0;
    let mut gold_types = BTreeSet::new();
    let mut found_types = BTreeSet::new();
    for u in &gold.utterances {
        let spans = by_utt.get(u.id.as_str());
        for t in u.tokens() {
            n_tokens += 1;
            gold_types.insert(t.word);
            let hit = spans.is_some_and(|v| {
                v.iter()
                    .any(|s| within(t.span.start, s.start, tolerance) && within(t.span.end, s.end, tolerance))
            });
            if hit {
                token_hits += 1;
                found_types.insert(t.word);
            }
        }
    }
    let token = Prf::from_counts(seg_hits, discovered.len(), token_hits, n_tokens);

    // each cluster proposes its majority gold word; unlabelled clusters
    // propose a type of their own that is never correct
    let mut proposed = BTreeSet::new();
    let mut junk = 0;
    for c in clusters.iter().filter(|c| !c.is_empty()) {
        match majority(c, labels) {
            Some(w) => {
                proposed.insert(w);
            }
            None => junk += 1,
        }
    }
    let correct = proposed.intersection(&found_types).count();
    let ty = Prf::from_counts(correct, proposed.len() + junk, found_types.len(), gold_types.len());
    Ok((token, ty))
}

/// Most frequent gold word among a cluster's labelled members, smallest id on ties.
pub fn majority(c: &Cluster, labels: &[Option<usize>]) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &m in &c.members {
        if let Some(w) = labels[m] {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(w, _)| w)
}

/// Boundary scores. Discovered boundaries are the deduplicated edges of
/// clustered segments; gold boundaries are the edges of gold word tokens.
pub fn boundary_prf(clusters: &[Cluster], segments: &[Segment], gold: &GoldAnnotation, tolerance: usize) -> Result<Prf> {
    gold_index(gold, segments)?;
    let mut found: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    for id in clustered(clusters) {
        let s = &segments[id];
        let e = found.entry(&s.utterance).or_default();
        e.insert(s.span.start);
        e.insert(s.span.end);
    }
    let empty = BTreeSet::new();
    let mut n_found = 0;
    let mut found_hits = 0;
    let mut n_gold = 0;
    let mut gold_hits = 0;
    for u in &gold.utterances {
        let truth: BTreeSet<usize> = u.tokens().flat_map(|t| [t.span.start, t.span.end]).collect();
        let disc = found.get(u.id.as_str()).unwrap_or(&empty);
        let near = |set: &BTreeSet<usize>, x: usize| set.range(x.saturating_sub(tolerance)..=x + tolerance).next().is_some();
        n_found += disc.len();
        found_hits += disc.iter().filter(|&&b| near(&truth, b)).count();
        n_gold += truth.len();
        gold_hits += truth.iter().filter(|&&b| near(disc, b)).count();
    }
    Ok(Prf::from_counts(found_hits, n_found, gold_hits, n_gold))
}

/// Cluster count and within-cluster pair count.
pub fn n_words_n_pairs(clusters: &[Cluster]) -> (usize, usize) {
    let pairs = clusters.iter().map(|c| c.len() * c.len().saturating_sub(1) / 2).sum();
    (clusters.len(), pairs)
}

pub fn report(
    system: &str,
    clusters: &[Cluster],
    segments: &[Segment],
    corpus: &Corpus,
    gold: &GoldAnnotation,
    config: &EvalConfig,
) -> Result<EvalReport> {
    if let Some(bad) = clusters.iter().flat_map(|c| &c.members).find(|&&m| m >= segments.len()) {
        return Err(Error::Config(format!("cluster member {bad} is not a known segment")));
    }
    let strings = gold_strings(segments, gold)?;
    let labels = gold_labels(segments, gold)?;
    let (token, type_) = token_type_prf(clusters, segments, &labels, gold, config.token_tolerance)?;
    let (n_words, n_pairs) = n_words_n_pairs(clusters);
    Ok(EvalReport {
        system: system.to_string(),
        grouping: grouping_prf(clusters, &labels),
        token,
        type_,
        boundary: boundary_prf(clusters, segments, gold, config.boundary_tolerance)?,
        ned: ned(clusters, &strings),
        coverage: coverage(clusters, segments, corpus),
        n_words,
        n_pairs,
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{:.1}", 100.0 * x))
}

/// Aligned text table, one row per report; scores in percent, `NA` where undefined.
pub fn render_table(reports: &[EvalReport]) -> String {
    let header = [
        "system", "NED", "Cov", "Words", "Pairs", "Grp P", "Grp R", "Grp F", "Tok P", "Tok R", "Tok F", "Typ P",
        "Typ R", "Typ F", "Bnd P", "Bnd R", "Bnd F",
    ];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in reports {
        let mut row = vec![
            r.system.clone(),
            pct(r.ned),
            pct(Some(r.coverage)),
            r.n_words.to_string(),
            r.n_pairs.to_string(),
        ];
        for prf in [&r.grouping, &r.token, &r.type_, &r.boundary] {
            row.extend([pct(prf.precision), pct(prf.recall), pct(prf.f_score)]);
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].len()).max().unwrap())
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, w))| if i == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}
