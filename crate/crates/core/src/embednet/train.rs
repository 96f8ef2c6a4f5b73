use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{contrastive_grad, triplet_grad};
use super::net::{backward, forward, forward_trace, NetworkParams};
use crate::corpus::{slice_features, Corpus, FeatureMatrix, Segment};
use crate::error::{Error, Result};
use crate::mining::PairManifest;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Siamese,
    Triplet,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Siamese => "siamese",
            TrainMode::Triplet => "triplet",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once the epoch-mean loss improves by less than this.
    pub min_improvement: f64,
    pub l_max: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 1.0,
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 20,
            min_improvement: 1e-4,
            l_max: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) || !(self.learning_rate >= 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "training needs margin > 0, learning_rate >= 0, batch_size >= 1, max_epochs >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Zero-pads or truncates to exactly `l_max` frames, widening to f64.
pub fn pad_or_truncate(features: &FeatureMatrix, l_max: usize) -> Vec<f64> {
    let dim = features.dim();
    let keep = features.frames().min(l_max);
    let mut out = vec![0.0; l_max * dim];
    for (o, v) in out.iter_mut().zip(&features.as_slice()[..keep * dim]) {
        *o = f64::from(*v);
    }
    out
}

/// One training term; indices point into an input table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Example {
    Pair { a: usize, b: usize, y: u8 },
    Triplet { anchor: usize, positive: usize, negative: usize },
}

const CHUNK: usize = 8;

fn example_grad(params: &NetworkParams, inputs: &[Vec<f64>], ex: &Example, margin: f64, grad: &mut [f64]) -> Result<f64> {
    match *ex {
        Example::Pair { a, b, y } => {
            let ta = forward_trace(params, &inputs[a])?;
            let tb = forward_trace(params, &inputs[b])?;
            let (loss, g0) = contrastive_grad(ta.output(), tb.output(), y, margin);
            if g0.iter().any(|v| *v != 0.0) {
                let g1: Vec<f64> = g0.iter().map(|v| -v).collect();
                backward(params, &ta, &g0, grad);
                backward(params, &tb, &g1, grad);
            }
            Ok(loss)
        }
        Example::Triplet { anchor, positive, negative } => {
            let traces = [
                forward_trace(params, &inputs[anchor])?,
                forward_trace(params, &inputs[positive])?,
                forward_trace(params, &inputs[negative])?,
            ];
            let (loss, grads) = triplet_grad(traces[0].output(), traces[1].output(), traces[2].output(), margin);
            if loss > 0.0 {
                for (t, g) in traces.iter().zip(&grads) {
                    backward(params, t, g, grad);
                }
            }
            Ok(loss)
        }
    }
}

/// Mean loss over `batch` and its gradient. Examples are processed in fixed
/// chunks whose partial sums are reduced in order, so the result does not
/// depend on the thread count.
pub fn batch_loss_grad(params: &NetworkParams, inputs: &[Vec<f64>], batch: &[Example], margin: f64) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Ok((0.0, vec![0.0; params.len()]));
    }
    let partials: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; params.len()];
            let mut loss = 0.0;
            for ex in chunk {
                loss += example_grad(params, inputs, ex, margin, &mut g)?;
            }
            Ok((loss, g))
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for part in partials {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|v| *v *= scale);
    Ok((loss * scale, grad))
}

/// Mean loss over `batch` without gradients.
pub fn batch_loss(params: &NetworkParams, inputs: &[Vec<f64>], batch: &[Example], margin: f64) -> Result<f64> {
    let mut total = 0.0;
    for ex in batch {
        total += match *ex {
            Example::Pair { a, b, y } => {
                super::loss::contrastive_loss(&forward(params, &inputs[a])?, &forward(params, &inputs[b])?, y, margin)
            }
            Example::Triplet { anchor, positive, negative } => super::loss::triplet_loss(
                &forward(params, &inputs[anchor])?,
                &forward(params, &inputs[positive])?,
                &forward(params, &inputs[negative])?,
                margin,
            ),
        };
    }
    Ok(total / batch.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    /// Epoch-mean loss, one entry per completed epoch.
    pub loss_curve: Vec<f64>,
    pub stopped_early: bool,
}

/// Maps the manifest entries for `mode` onto dense input indices and builds
/// the padded input table for every referenced segment.
pub fn training_set(
    manifest: &PairManifest,
    mode: TrainMode,
    segments: &[Segment],
    corpus: &Corpus,
    l_max: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Example>)> {
    let mut local: BTreeMap<usize, usize> = BTreeMap::new();
    let mut ids = Vec::new();
    let mut slot = |id: usize| -> Result<usize> {
        if id >= segments.len() {
            return Err(Error::Config(format!("manifest references unknown segment {id}")));
        }
        Ok(*local.entry(id).or_insert_with(|| {
            ids.push(id);
            ids.len() - 1
        }))
    };
    let mut examples = Vec::new();
    match mode {
        TrainMode::Siamese => {
            for p in &manifest.siamese_pairs {
                examples.push(Example::Pair {
                    a: slot(p.a)?,
                    b: slot(p.b)?,
                    y: p.label,
                });
            }
        }
        TrainMode::Triplet => {
            for t in &manifest.triplets {
                examples.push(Example::Triplet {
                    anchor: slot(t.anchor)?,
                    positive: slot(t.positive)?,
                    negative: slot(t.negative)?,
                });
            }
        }
    }
    let inputs = ids
        .par_iter()
        .map(|&id| Ok(pad_or_truncate(&slice_features(corpus, &segments[id])?, l_max)))
        .collect::<Result<Vec<_>>>()?;
    Ok((inputs, examples))
}

/// Mini-batch gradient descent over `examples`, reshuffled every epoch.
pub fn train(params: NetworkParams, inputs: &[Vec<f64>], examples: &[Example], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Config("no training examples for the chosen mode".into()));
    }
    let mut params = params;
    let mut rng = rng::stream(config.seed, 0);
    let mut order: Vec<Example> = examples.to_vec();
    let mut loss_curve: Vec<f64> = Vec::new();
    let mut stopped_early = false;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grad) = batch_loss_grad(&params, inputs, batch, config.margin)?;
            total += loss * batch.len() as f64;
            if config.learning_rate != 0.0 {
                for (p, g) in params.data.iter_mut().zip(&grad) {
                    *p -= config.learning_rate * g;
                }
            }
        }
        let mean = total / order.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        log::info!("epoch {epoch}: mean loss {mean:.6}");
        let prev = loss_curve.last().copied();
        loss_curve.push(mean);
        if let Some(prev) = prev {
            if prev - mean < config.min_improvement {
                stopped_early = epoch < config.max_epochs;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params,
        loss_curve,
        stopped_early,
    })
}

/// Embedding of every segment, in segment order.
pub fn embed_all(params: &NetworkParams, segments: &[Segment], corpus: &Corpus) -> Result<Vec<Vec<f64>>> {
    let l_max = params.arch.input_frames;
    segments
        .par_iter()
        .map(|s| forward(params, &pad_or_truncate(&slice_features(corpus, s)?, l_max)))
        .collect()
}
