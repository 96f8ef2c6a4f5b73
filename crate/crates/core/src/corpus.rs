//! Utterances, segments and gold annotations, plus their on-disk formats.
//!
//! A corpus directory holds:
//!
//! - `manifest.json`: `{ "feature_dim", "alphabet_size", "utterances": [ids] }`
//! - `<id>.feat`: `u64 frames`, `u64 dim`, then `frames * dim` little-endian
//!   `f32` values in row-major order.
//! - `<id>.sym`: three lines of space-separated integers: symbols, span
//!   starts, span ends.
//! - `gold.json` (optional): see [`GoldAnnotation`].

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One discovered subword unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubwordId(pub u16);

impl fmt::Display for SubwordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Half-open frame interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct FrameSpan {
    pub start: usize,
    pub end: usize,
}

impl FrameSpan {
    pub fn new(start: usize, end: usize) -> Self {
        FrameSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlap(&self, other: &FrameSpan) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        hi.saturating_sub(lo)
    }
}

impl From<[usize; 2]> for FrameSpan {
    fn from(v: [usize; 2]) -> Self {
        FrameSpan::new(v[0], v[1])
    }
}

impl From<FrameSpan> for [usize; 2] {
    fn from(s: FrameSpan) -> Self {
        [s.start, s.end]
    }
}

/// Frames x dim matrix of per-frame features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(frames: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != frames * dim {
            return Err(Error::Shape(format!(
                "feature payload has {} values, expected {frames} x {dim}",
                data.len()
            )));
        }
        Ok(FeatureMatrix { frames, dim, data })
    }

    pub fn zeros(frames: usize, dim: usize) -> Self {
        FeatureMatrix {
            frames,
            dim,
            data: vec![0.0; frames * dim],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, frame: usize) -> &[f32] {
        &self.data[frame * self.dim..(frame + 1) * self.dim]
    }

    pub fn row_mut(&mut self, frame: usize) -> &mut [f32] {
        &mut self.data[frame * self.dim..(frame + 1) * self.dim]
    }

    /// Rows `[start, end)` as a new matrix.
    pub fn slice_rows(&self, span: FrameSpan) -> Result<FeatureMatrix> {
        if span.end <= span.start || span.end > self.frames {
            return Err(Error::Shape(format!(
                "span [{}, {}) outside 0..{} frames",
                span.start, span.end, self.frames
            )));
        }
        Ok(FeatureMatrix {
            frames: span.len(),
            dim: self.dim,
            data: self.data[span.start * self.dim..span.end * self.dim].to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub features: FeatureMatrix,
    pub transcription: Vec<SubwordId>,
    pub frame_spans: Vec<FrameSpan>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.frames()
    }

    /// Frame span covered by transcription symbols `[first, last)`.
    pub fn symbol_frames(&self, first: usize, last: usize) -> FrameSpan {
        FrameSpan::new(self.frame_spans[first].start, self.frame_spans[last - 1].end)
    }

    fn validate(&self, feature_dim: usize, alphabet_size: usize) -> Result<()> {
        let frames = self.frames();
        if frames == 0 {
            return Err(Error::corpus(&self.id, "empty utterance"));
        }
        if self.features.dim() != feature_dim {
            return Err(Error::corpus(
                &self.id,
                format!(
                    "feature dimension {} does not match corpus feature_dim {feature_dim}",
                    self.features.dim()
                ),
            ));
        }
        if self.transcription.len() != self.frame_spans.len() {
            return Err(Error::corpus(
                &self.id,
                format!(
                    "span/symbol length mismatch: {} symbols, {} spans",
                    self.transcription.len(),
                    self.frame_spans.len()
                ),
            ));
        }
        if let Some(s) = self
            .transcription
            .iter()
            .find(|s| s.0 as usize >= alphabet_size)
        {
            return Err(Error::corpus(
                &self.id,
                format!("symbol {s} outside alphabet of size {alphabet_size}"),
            ));
        }
        let mut prev_end = 0;
        for span in &self.frame_spans {
            if span.is_empty() || span.start < prev_end {
                return Err(Error::corpus(
                    &self.id,
                    format!("span [{}, {}) is empty, unsorted or overlapping", span.start, span.end),
                ));
            }
            if span.end > frames {
                return Err(Error::corpus(
                    &self.id,
                    format!("span [{}, {}) overflows {frames} frames", span.start, span.end),
                ));
            }
            prev_end = span.end;
        }
        Ok(())
    }
}

/// A validated, immutable set of utterances sharing one feature dimension and alphabet.
#[derive(Debug, Clone)]
pub struct Corpus {
    feature_dim: usize,
    alphabet_size: usize,
    utterances: Vec<Utterance>,
    index: HashMap<String, usize>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.feature_dim == other.feature_dim
            && self.alphabet_size == other.alphabet_size
            && self.utterances == other.utterances
    }
}

impl Corpus {
    pub fn new(feature_dim: usize, alphabet_size: usize, utterances: Vec<Utterance>) -> Result<Self> {
        let mut index = HashMap::with_capacity(utterances.len());
        for (i, u) in utterances.iter().enumerate() {
            u.validate(feature_dim, alphabet_size)?;
            if index.insert(u.id.clone(), i).is_some() {
                return Err(Error::corpus(&u.id, "duplicate utterance id"));
            }
        }
        Ok(Corpus {
            feature_dim,
            alphabet_size,
            utterances,
            index,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn utterance(&self, id: &str) -> Option<&Utterance> {
        self.index.get(id).map(|&i| &self.utterances[i])
    }

    pub fn total_frames(&self) -> usize {
        self.utterances.iter().map(Utterance::frames).sum()
    }
}

/// A hypothesized term occurrence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: usize,
    pub utterance: String,
    pub span: FrameSpan,
    pub symbols: Vec<SubwordId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

/// Rows `[start, end)` of the segment's utterance features.
pub fn slice_features(corpus: &Corpus, segment: &Segment) -> Result<FeatureMatrix> {
    let utt = corpus.utterance(&segment.utterance).ok_or_else(|| {
        Error::corpus(&segment.utterance, format!("segment {} references unknown utterance", segment.id))
    })?;
    utt.features.slice_rows(segment.span)
}

/// Gold truth for one utterance. `boundaries` tile `[0, frames)` and `words[i]`
/// labels the interval `[boundaries[i], boundaries[i+1])`; `None` marks filler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldUtterance {
    pub id: String,
    pub boundaries: Vec<usize>,
    pub words: Vec<Option<usize>>,
    /// True (pre-noise) subword sequence and its frame spans.
    pub symbols: Vec<SubwordId>,
    pub symbol_spans: Vec<FrameSpan>,
}

/// One gold word token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoldToken {
    pub word: usize,
    pub span: FrameSpan,
}

impl GoldUtterance {
    pub fn frames(&self) -> usize {
        self.boundaries.last().copied().unwrap_or(0)
    }

    /// Word tokens (fillers excluded) in time order.
    pub fn tokens(&self) -> impl Iterator<Item = GoldToken> + '_ {
        self.words.iter().enumerate().filter_map(|(i, w)| {
            w.map(|word| GoldToken {
                word,
                span: FrameSpan::new(self.boundaries[i], self.boundaries[i + 1]),
            })
        })
    }

    /// True subwords of which at least half the frames fall inside `span`.
    pub fn symbols_in(&self, span: FrameSpan) -> Vec<SubwordId> {
        self.symbols
            .iter()
            .zip(&self.symbol_spans)
            .filter(|(_, s)| 2 * s.overlap(&span) >= s.len())
            .map(|(sym, _)| *sym)
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let ok = self.boundaries.first() == Some(&0)
            && self.boundaries.windows(2).all(|w| w[0] < w[1])
            && self.words.len() + 1 == self.boundaries.len()
            && self.symbols.len() == self.symbol_spans.len();
        if ok {
            Ok(())
        } else {
            Err(Error::corpus(&self.id, "malformed gold annotation"))
        }
    }
}

/// Gold annotation for a corpus: the lexicon (word id to true subword string)
/// and per-utterance word boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub lexicon: Vec<Vec<SubwordId>>,
    pub utterances: Vec<GoldUtterance>,
}

impl GoldAnnotation {
    pub fn utterance(&self, id: &str) -> Option<&GoldUtterance> {
        self.utterances.iter().find(|u| u.id == id)
    }

    /// Index from utterance id to position in `utterances`.
    pub fn index(&self) -> HashMap<&str, &GoldUtterance> {
        self.utterances.iter().map(|u| (u.id.as_str(), u)).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    feature_dim: usize,
    alphabet_size: usize,
    utterances: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GOLD_FILE: &str = "gold.json";

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn feat_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.feat"))
}

fn sym_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.sym"))
}

/// Encodes a feature matrix in the `.feat` layout.
pub fn encode_features(m: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * m.data.len());
    out.extend_from_slice(&(m.frames as u64).to_le_bytes());
    out.extend_from_slice(&(m.dim as u64).to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<FeatureMatrix> {
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 16 {
        return Err(bad("truncated header".into()));
    }
    let frames = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let dim = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let payload = &bytes[16..];
    let expected = frames
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("header dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(bad(format!(
            "payload has {} bytes, header promises {frames} x {dim} f32",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureMatrix::new(frames, dim, data)
}

fn join_ints<I: IntoIterator<Item = T>, T: fmt::Display>(items: I) -> String {
    items
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_ints(line: &str, path: &Path) -> Result<Vec<usize>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<usize>().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                message: format!("not a non-negative integer: {tok:?}"),
            })
        })
        .collect()
}

fn read_sym(path: &Path, id: &str) -> Result<(Vec<SubwordId>, Vec<FrameSpan>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::with_capacity(3);
    for line in BufReader::new(file).lines() {
        lines.push(line.map_err(|e| Error::io(path, e))?);
    }
    while lines.len() < 3 {
        lines.push(String::new());
    }
    if lines.len() > 3 && lines[3..].iter().any(|l| !l.trim().is_empty()) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "expected exactly three lines".into(),
        });
    }
    let symbols = parse_ints(&lines[0], path)?;
    let starts = parse_ints(&lines[1], path)?;
    let ends = parse_ints(&lines[2], path)?;
    if starts.len() != ends.len() || symbols.len() != starts.len() {
        return Err(Error::corpus(
            id,
            format!(
                "span/symbol length mismatch: {} symbols, {} starts, {} ends",
                symbols.len(),
                starts.len(),
                ends.len()
            ),
        ));
    }
    let symbols = symbols
        .into_iter()
        .map(|s| u16::try_from(s).map(SubwordId))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::corpus(id, "symbol id exceeds u16"))?;
    let spans = starts
        .into_iter()
        .zip(ends)
        .map(|(s, e)| FrameSpan::new(s, e))
        .collect();
    Ok((symbols, spans))
}

/// Loads and validates a corpus directory.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    let mut utterances = Vec::with_capacity(manifest.utterances.len());
    for id in &manifest.utterances {
        let fpath = feat_path(dir, id);
        let features = decode_features(&read_file(&fpath)?, &fpath)?;
        if features.frames() == 0 {
            return Err(Error::corpus(id, "empty utterance"));
        }
        if features.dim() != manifest.feature_dim {
            return Err(Error::corpus(
                id,
                format!(
                    "feature file dimension {} does not match manifest feature_dim {}",
                    features.dim(),
                    manifest.feature_dim
                ),
            ));
        }
        let (transcription, frame_spans) = read_sym(&sym_path(dir, id), id)?;
        utterances.push(Utterance {
            id: id.clone(),
            features,
            transcription,
            frame_spans,
        });
    }
    Corpus::new(manifest.feature_dim, manifest.alphabet_size, utterances)
}

/// Writes `corpus` into `dir` (created if needed).
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let manifest = Manifest {
        feature_dim: corpus.feature_dim,
        alphabet_size: corpus.alphabet_size,
        utterances: corpus.utterances.iter().map(|u| u.id.clone()).collect(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    for u in &corpus.utterances {
        let fpath = feat_path(dir, &u.id);
        fs::write(&fpath, encode_features(&u.features)).map_err(|e| Error::io(&fpath, e))?;
        let spath = sym_path(dir, &u.id);
        let text = format!(
            "{}\n{}\n{}\n",
            join_ints(&u.transcription),
            join_ints(u.frame_spans.iter().map(|s| s.start)),
            join_ints(u.frame_spans.iter().map(|s| s.end)),
        );
        fs::write(&spath, text).map_err(|e| Error::io(&spath, e))?;
    }
    Ok(())
}

pub fn write_gold(gold: &GoldAnnotation, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_json(&dir.join(GOLD_FILE), gold)
}

/// Loads `gold.json` if the corpus directory has one.
pub fn load_gold(dir: &Path) -> Result<Option<GoldAnnotation>> {
    let path = dir.join(GOLD_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let gold: GoldAnnotation = read_json(&path)?;
    for u in &gold.utterances {
        u.validate()?;
    }
    Ok(Some(gold))
}

/// Writes segments as JSON lines.
pub fn write_segments(segments: &[Segment], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in segments {
        serde_json::to_writer(&mut w, s).map_err(|e| Error::json(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a `segments.jsonl` file; ids must be dense and in order.
pub fn read_segments(path: &Path) -> Result<Vec<Segment>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let seg: Segment = serde_json::from_str(&line).map_err(|e| Error::json(path, e))?;
        if seg.id != out.len() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("segment id {} at position {}", seg.id, out.len()),
            });
        }
        out.push(seg);
    }
    Ok(out)
}
