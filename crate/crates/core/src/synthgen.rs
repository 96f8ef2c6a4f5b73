//! Ground-truthed synthetic corpora.
//!
//! Each subword owns a fixed prototype vector; a symbol's frames are its
//! prototype plus Gaussian noise. Features are always generated from the true
//! subwords, while the emitted transcription carries substitution noise, so a
//! feature-based model can recover what symbol matching loses.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    Corpus, FeatureMatrix, FrameSpan, GoldAnnotation, GoldUtterance, Segment, SubwordId, Utterance,
};
use crate::error::{Error, Result};
use crate::rng;

const VOCAB_STREAM: u64 = 0;
const PROTOTYPE_STREAM: u64 = 1;
const LAYOUT_STREAM: u64 = 2;
const SUBSTITUTION_STREAM: u64 = 3;
const FEATURE_STREAM: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub vocabulary_size: usize,
    /// Inclusive range of word lengths in subwords.
    pub word_length_range: (usize, usize),
    pub occurrences_per_word: usize,
    pub alphabet_size: usize,
    pub feature_dim: usize,
    /// Inclusive range of frames emitted per subword.
    pub frames_per_subword_range: (usize, usize),
    pub symbol_substitution_rate: f64,
    pub feature_noise_sigma: f64,
    /// Probability that a run of filler subwords separates two adjacent words.
    pub filler_rate: f64,
    /// Inclusive range of the length of one filler run.
    pub filler_length_range: (usize, usize),
    /// Inclusive range of words per utterance.
    pub words_per_utterance_range: (usize, usize),
    /// Per-symbol probability of an insertion or deletion in the transcription.
    /// Off by default; when on, transcription spans no longer match the gold spans.
    pub indel_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocabulary_size: 10,
            word_length_range: (4, 6),
            occurrences_per_word: 30,
            alphabet_size: 55,
            feature_dim: 40,
            frames_per_subword_range: (2, 4),
            symbol_substitution_rate: 0.0,
            feature_noise_sigma: 0.0,
            filler_rate: 0.5,
            filler_length_range: (1, 3),
            words_per_utterance_range: (3, 6),
            indel_rate: 0.0,
            seed: 0,
        }
    }
}

fn check_range(name: &str, (lo, hi): (usize, usize), min: usize) -> Result<()> {
    if lo < min || lo > hi {
        return Err(Error::Config(format!(
            "{name} must satisfy {min} <= min <= max, got ({lo}, {hi})"
        )));
    }
    Ok(())
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        check_range("word_length_range", self.word_length_range, 1)?;
        check_range("frames_per_subword_range", self.frames_per_subword_range, 1)?;
        check_range("filler_length_range", self.filler_length_range, 1)?;
        check_range("words_per_utterance_range", self.words_per_utterance_range, 1)?;
        check_rate("symbol_substitution_rate", self.symbol_substitution_rate)?;
        check_rate("filler_rate", self.filler_rate)?;
        check_rate("indel_rate", self.indel_rate)?;
        if !(self.feature_noise_sigma >= 0.0 && self.feature_noise_sigma.is_finite()) {
            return Err(Error::Config("feature_noise_sigma must be finite and >= 0".into()));
        }
        if self.alphabet_size < 2 || self.alphabet_size > u16::MAX as usize {
            return Err(Error::Config("alphabet_size must lie in [2, 65535]".into()));
        }
        if self.feature_dim == 0 || self.vocabulary_size == 0 || self.occurrences_per_word == 0 {
            return Err(Error::Config(
                "feature_dim, vocabulary_size and occurrences_per_word must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn distinct_word_capacity(alphabet: usize, (lo, hi): (usize, usize)) -> u128 {
    let mut total: u128 = 0;
    for len in lo..=hi {
        let count = (alphabet as u128).checked_pow(len as u32).unwrap_or(u128::MAX);
        total = total.saturating_add(count);
    }
    total
}

fn draw_symbol(rng: &mut ChaCha8Rng, alphabet: usize) -> SubwordId {
    SubwordId(rng.random_range(0..alphabet as u32) as u16)
}

fn draw_len(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo as u64..=hi as u64) as usize
}

fn draw_vocabulary(config: &SynthConfig) -> Result<Vec<Vec<SubwordId>>> {
    let capacity = distinct_word_capacity(config.alphabet_size, config.word_length_range);
    if (config.vocabulary_size as u128) > capacity {
        return Err(Error::Config(format!(
            "cannot build {} distinct words: only {capacity} strings exist for lengths {:?} over {} symbols",
            config.vocabulary_size, config.word_length_range, config.alphabet_size
        )));
    }
    let mut rng = rng::stream(config.seed, VOCAB_STREAM);
    let mut seen = HashSet::new();
    let mut words = Vec::with_capacity(config.vocabulary_size);
    let max_attempts = 1000 * config.vocabulary_size + 1000;
    for _ in 0..max_attempts {
        if words.len() == config.vocabulary_size {
            break;
        }
        let len = draw_len(&mut rng, config.word_length_range);
        let word: Vec<SubwordId> = (0..len)
            .map(|_| draw_symbol(&mut rng, config.alphabet_size))
            .collect();
        if seen.insert(word.clone()) {
            words.push(word);
        }
    }
    if words.len() < config.vocabulary_size {
        return Err(Error::Config(format!(
            "could not draw {} distinct words after {max_attempts} attempts",
            config.vocabulary_size
        )));
    }
    Ok(words)
}

/// Substitutes each symbol independently with probability `rate` by a
/// different, uniformly chosen symbol.
fn substitute(
    symbols: &[SubwordId],
    rate: f64,
    alphabet: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<SubwordId> {
    symbols
        .iter()
        .map(|&s| {
            let u: f64 = rng.random();
            if u < rate {
                let shift = 1 + rng.random_range(0..(alphabet - 1) as u32) as usize;
                SubwordId(((s.0 as usize + shift) % alphabet) as u16)
            } else {
                s
            }
        })
        .collect()
}

/// Applies insertions and deletions on top of a substituted transcription.
fn apply_indels(
    symbols: Vec<SubwordId>,
    spans: Vec<FrameSpan>,
    rate: f64,
    alphabet: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<SubwordId>, Vec<FrameSpan>) {
    let mut out_sym: Vec<SubwordId> = Vec::with_capacity(symbols.len());
    let mut out_span: Vec<FrameSpan> = Vec::with_capacity(spans.len());
    for (sym, span) in symbols.into_iter().zip(spans) {
        let u: f64 = rng.random();
        if u < rate / 2.0 && !out_span.is_empty() {
            // deletion: the previous symbol absorbs these frames
            out_span.last_mut().unwrap().end = span.end;
        } else if u < rate && span.len() >= 2 {
            let mid = span.start + span.len() / 2;
            out_sym.push(sym);
            out_span.push(FrameSpan::new(span.start, mid));
            out_sym.push(draw_symbol(rng, alphabet));
            out_span.push(FrameSpan::new(mid, span.end));
        } else {
            out_sym.push(sym);
            out_span.push(span);
        }
    }
    (out_sym, out_span)
}

/// Generates a synthetic corpus and its gold annotation.
pub fn generate(config: &SynthConfig) -> Result<(Corpus, GoldAnnotation)> {
    config.validate()?;
    let lexicon = draw_vocabulary(config)?;
    let alphabet = config.alphabet_size;
    let dim = config.feature_dim;

    let mut proto_rng = rng::stream(config.seed, PROTOTYPE_STREAM);
    let prototypes: Vec<Vec<f64>> = (0..alphabet)
        .map(|_| (0..dim).map(|_| proto_rng.sample(StandardNormal)).collect())
        .collect();

    let mut layout = rng::stream(config.seed, LAYOUT_STREAM);
    let mut tokens: Vec<usize> = (0..lexicon.len())
        .flat_map(|w| std::iter::repeat_n(w, config.occurrences_per_word))
        .collect();
    tokens.shuffle(&mut layout);

    let mut sub_rng = rng::stream(config.seed, SUBSTITUTION_STREAM);
    let mut feat_rng = rng::stream(config.seed, FEATURE_STREAM);

    let mut utterances = Vec::new();
    let mut gold_utts = Vec::new();
    let mut cursor = 0;
    while cursor < tokens.len() {
        let n_words = draw_len(&mut layout, config.words_per_utterance_range).min(tokens.len() - cursor);
        let words = &tokens[cursor..cursor + n_words];
        cursor += n_words;
        let id = format!("utt{:04}", utterances.len());

        // true symbols, grouped into gold intervals
        let mut true_symbols = Vec::new();
        let mut intervals: Vec<(Option<usize>, usize)> = Vec::new(); // (word, n symbols)
        for (i, &w) in words.iter().enumerate() {
            if i > 0 && layout.random::<f64>() < config.filler_rate {
                let n = draw_len(&mut layout, config.filler_length_range);
                for _ in 0..n {
                    true_symbols.push(draw_symbol(&mut layout, alphabet));
                }
                intervals.push((None, n));
            }
            true_symbols.extend_from_slice(&lexicon[w]);
            intervals.push((Some(w), lexicon[w].len()));
        }

        let mut spans = Vec::with_capacity(true_symbols.len());
        let mut frame = 0;
        for _ in &true_symbols {
            let n = draw_len(&mut layout, config.frames_per_subword_range);
            spans.push(FrameSpan::new(frame, frame + n));
            frame += n;
        }
        let frames = frame;

        let mut boundaries = vec![0];
        let mut labels = Vec::with_capacity(intervals.len());
        let mut sym_cursor = 0;
        for (word, n) in intervals {
            sym_cursor += n;
            boundaries.push(spans[sym_cursor - 1].end);
            labels.push(word);
        }

        let mut features = FeatureMatrix::zeros(frames, dim);
        for (sym, span) in true_symbols.iter().zip(&spans) {
            let proto = &prototypes[sym.0 as usize];
            for f in span.start..span.end {
                let row = features.row_mut(f);
                for (v, p) in row.iter_mut().zip(proto) {
                    let noise: f64 = feat_rng.sample(StandardNormal);
                    *v = (p + config.feature_noise_sigma * noise) as f32;
                }
            }
        }

        let noisy = substitute(&true_symbols, config.symbol_substitution_rate, alphabet, &mut sub_rng);
        let (transcription, frame_spans) = if config.indel_rate > 0.0 {
            apply_indels(noisy, spans.clone(), config.indel_rate, alphabet, &mut sub_rng)
        } else {
            (noisy, spans.clone())
        };

        utterances.push(Utterance {
            id: id.clone(),
            features,
            transcription,
            frame_spans,
        });
        gold_utts.push(GoldUtterance {
            id,
            boundaries,
            words: labels,
            symbols: true_symbols,
            symbol_spans: spans,
        });
    }

    let corpus = Corpus::new(dim, alphabet, utterances)?;
    Ok((
        corpus,
        GoldAnnotation {
            lexicon,
            utterances: gold_utts,
        },
    ))
}

/// The gold word whose token overlaps `segment` by at least half of the
/// token's frames and at least half of the segment's frames. When more than
/// one token qualifies the segment is ambiguous and gets no label.
pub fn gold_segment_label(gold: &GoldAnnotation, segment: &Segment) -> Option<usize> {
    gold.utterance(&segment.utterance)
        .and_then(|u| label_in_utterance(u, segment.span))
}

pub(crate) fn label_in_utterance(u: &GoldUtterance, span: FrameSpan) -> Option<usize> {
    let mut found = None;
    for tok in u.tokens() {
        let ov = tok.span.overlap(&span);
        if ov > 0 && 2 * ov >= tok.span.len() && 2 * ov >= span.len() {
            if found.is_some() {
                return None;
            }
            found = Some(tok.word);
        }
    }
    found
}
