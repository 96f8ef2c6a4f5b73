//! Leader clustering of discovered segments by normalized edit distance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Segment;
use crate::error::{Error, Result};
use crate::seqmatch::normalized_levenshtein;

/// What happens to a segment that is neither within the radius of a leader
/// nor far enough from every leader to found a new cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AmbiguousPolicy {
    #[default]
    Nearest,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeaderParams {
    /// Cluster radius `T` in normalized-Levenshtein units.
    pub radius: f64,
    /// Leader separation multiplier `a`: a new leader must be at least
    /// `separation * radius` away from every existing leader.
    pub separation: f64,
    /// Minimum segment length `R` in symbols.
    pub min_length: usize,
    pub ambiguous: AmbiguousPolicy,
}

impl Default for LeaderParams {
    fn default() -> Self {
        LeaderParams {
            radius: 0.4,
            separation: 1.8,
            min_length: 3,
            ambiguous: AmbiguousPolicy::Nearest,
        }
    }
}

impl LeaderParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius <= 1.0) || !(self.separation > 0.0) || self.min_length == 0 {
            return Err(Error::Config(
                "leader clustering needs 0 < radius <= 1, separation > 0, min_length >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// A group of segments hypothesized to be the same term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: usize,
    pub leader: usize,
    /// Segment ids, ascending.
    pub members: Vec<usize>,
    /// Mean symbol-sequence length of the members.
    pub mean_len: f64,
}

impl Cluster {
    pub fn new(id: usize, leader: usize, mut members: Vec<usize>, segments: &[Segment]) -> Self {
        members.sort_unstable();
        let mean_len = mean_symbol_len(&members, segments);
        Cluster {
            id,
            leader,
            members,
            mean_len,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Segment ids must equal their position in the slice.
pub fn check_dense(segments: &[Segment]) -> Result<()> {
    match segments.iter().enumerate().find(|(i, s)| s.id != *i) {
        Some((i, s)) => Err(Error::Config(format!(
            "segment ids must be dense: id {} at position {i}",
            s.id
        ))),
        None => Ok(()),
    }
}

pub(crate) fn mean_symbol_len(members: &[usize], segments: &[Segment]) -> f64 {
    if members.is_empty() {
        return 0.0;
    }
    let total: usize = members.iter().map(|&m| segments[m].symbols.len()).sum();
    total as f64 / members.len() as f64
}

/// How a segment entered its cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    Founder,
    WithinRadius,
    Nearest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderClustering {
    pub clusters: Vec<Cluster>,
    /// `(segment id, cluster id, how)` in processing order.
    pub assignments: Vec<(usize, usize, Assignment)>,
    pub dropped: Vec<usize>,
}

/// Single pass over segments in ascending id order. Segments shorter than
/// `min_length` are skipped.
pub fn leader_cluster(segments: &[Segment], params: &LeaderParams) -> Result<LeaderClustering> {
    params.validate()?;
    check_dense(segments)?;
    let mut order: Vec<&Segment> = segments
        .iter()
        .filter(|s| s.symbols.len() >= params.min_length)
        .collect();
    order.sort_by_key(|s| s.id);

    let found_dist = params.separation * params.radius;
    let mut leaders: Vec<usize> = Vec::new(); // segment index by cluster id
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut assignments = Vec::with_capacity(order.len());
    let mut dropped = Vec::new();

    for seg in order {
        let mut nearest: Option<(f64, usize)> = None;
        let mut within = None;
        for (c, &leader) in leaders.iter().enumerate() {
            let d = normalized_levenshtein(&seg.symbols, &segments[leader].symbols)?;
            if d <= params.radius {
                within = Some(c);
                break;
            }
            if nearest.is_none_or(|(best, _)| d < best) {
                nearest = Some((d, c));
            }
        }
        let (cluster, how) = match (within, nearest) {
            (Some(c), _) => (c, Assignment::WithinRadius),
            (None, None) => {
                leaders.push(seg.id);
                members.push(Vec::new());
                (leaders.len() - 1, Assignment::Founder)
            }
            (None, Some((d, c))) => {
                if d >= found_dist {
                    leaders.push(seg.id);
                    members.push(Vec::new());
                    (leaders.len() - 1, Assignment::Founder)
                } else if params.ambiguous == AmbiguousPolicy::Nearest {
                    (c, Assignment::Nearest)
                } else {
                    dropped.push(seg.id);
                    continue;
                }
            }
        };
        members[cluster].push(seg.id);
        assignments.push((seg.id, cluster, how));
    }

    let clusters = leaders
        .into_iter()
        .zip(members)
        .enumerate()
        .map(|(id, (leader, m))| Cluster::new(id, leader, m, segments))
        .collect();
    Ok(LeaderClustering {
        clusters,
        assignments,
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSetStats {
    pub count: usize,
    /// cluster size -> number of clusters of that size
    pub size_histogram: BTreeMap<usize, usize>,
    pub mean_len: Vec<f64>,
}

pub fn cluster_set_stats(clusters: &[Cluster]) -> ClusterSetStats {
    let mut size_histogram = BTreeMap::new();
    for c in clusters {
        *size_histogram.entry(c.len()).or_insert(0) += 1;
    }
    ClusterSetStats {
        count: clusters.len(),
        size_histogram,
        mean_len: clusters.iter().map(|c| c.mean_len).collect(),
    }
}
