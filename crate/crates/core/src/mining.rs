//! Weak supervision from baseline clusters.
//!
//! Cluster purity is measured by the mean and standard deviation of pairwise
//! (unnormalized) Levenshtein distances among members; contrast between two
//! clusters by the same moments over cross pairs. Pure clusters supply
//! matched pairs, contrasting cluster pairs supply mismatched ones.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::Cluster;
use crate::corpus::{Segment, SubwordId};
use crate::error::{Error, Result};
use crate::rng;
use crate::seqmatch::levenshtein;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PurityStats {
    pub mu_s: f64,
    pub sigma_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastStats {
    pub mu_d: f64,
    pub sigma_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningThresholds {
    pub thres_mu_s: f64,
    pub thres_sigma_s: f64,
    pub thres_mu_d: f64,
    pub thres_sigma_d: f64,
}

impl Default for MiningThresholds {
    fn default() -> Self {
        MiningThresholds {
            thres_mu_s: 0.2,
            thres_sigma_s: 0.2,
            thres_mu_d: 0.4,
            thres_sigma_d: 0.2,
        }
    }
}

impl MiningThresholds {
    pub fn validate(&self) -> Result<()> {
        let all = [self.thres_mu_s, self.thres_sigma_s, self.thres_mu_d, self.thres_sigma_d];
        if all.iter().all(|t| *t > 0.0 && t.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("mining thresholds must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    pub thresholds: MiningThresholds,
    /// Drop the `|C|` self-pairs from the purity statistics.
    pub exclude_self: bool,
    pub n_siamese: usize,
    pub n_triplet: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            thresholds: MiningThresholds::default(),
            exclude_self: false,
            n_siamese: 10_000,
            n_triplet: 10_000,
        }
    }
}

/// Distinct symbol strings of a member set with their multiplicities.
fn string_counts<'a>(members: &[usize], segments: &'a [Segment]) -> Vec<(&'a [SubwordId], u64)> {
    let mut map: BTreeMap<&[SubwordId], u64> = BTreeMap::new();
    for &m in members {
        *map.entry(segments[m].symbols.as_slice()).or_insert(0) += 1;
    }
    map.into_iter().collect()
}

/// Sum and sum of squares of `lev` over all ordered cross pairs.
fn moments(x: &[(&[SubwordId], u64)], y: &[(&[SubwordId], u64)]) -> (u128, u128) {
    let mut sum = 0u128;
    let mut sq = 0u128;
    for (a, wa) in x {
        for (b, wb) in y {
            let d = levenshtein(a, b) as u128;
            let w = (*wa as u128) * (*wb as u128);
            sum += w * d;
            sq += w * d * d;
        }
    }
    (sum, sq)
}

/// Mean and population standard deviation from exact integer moments over `pairs` terms.
fn mean_std(sum: u128, sq: u128, pairs: u128) -> (f64, f64) {
    if pairs == 0 {
        return (0.0, 0.0);
    }
    let mean = sum as f64 / pairs as f64;
    // sum((d - mean)^2) * pairs = pairs*sq - sum^2, exact in integers
    let centered = pairs * sq - sum * sum;
    let var = centered as f64 / (pairs as f64 * pairs as f64);
    (mean, var.sqrt())
}

/// Purity over all `|C|^2` ordered member pairs, self-pairs
/// included; with `exclude_self` the `|C|` self-pairs are dropped.
pub fn purity_stats(cluster: &Cluster, segments: &[Segment], exclude_self: bool) -> PurityStats {
    let counts = string_counts(&cluster.members, segments);
    let (sum, sq) = moments(&counts, &counts);
    let n = cluster.members.len() as u128;
    let pairs = if exclude_self { n * n.saturating_sub(1) } else { n * n };
    let (mu_s, sigma_s) = mean_std(sum, sq, pairs);
    PurityStats { mu_s, sigma_s }
}

/// Mean and standard deviation of `lev` over all `|C1||C2|` cross pairs.
pub fn contrast_stats(c1: &Cluster, c2: &Cluster, segments: &[Segment]) -> ContrastStats {
    let x = string_counts(&c1.members, segments);
    let y = string_counts(&c2.members, segments);
    let (sum, sq) = moments(&x, &y);
    let pairs = (c1.members.len() as u128) * (c2.members.len() as u128);
    let (mu_d, sigma_d) = mean_std(sum, sq, pairs);
    ContrastStats { mu_d, sigma_d }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedCluster {
    pub cluster: usize,
    pub stats: PurityStats,
    pub mean_len: f64,
}

/// Clusters with `mu_s < thres_mu_s * C̄` and `sigma_s < thres_sigma_s * C̄`.
pub fn select_pure_clusters(
    clusters: &[Cluster],
    segments: &[Segment],
    thresholds: &MiningThresholds,
    exclude_self: bool,
) -> Vec<RetainedCluster> {
    clusters
        .par_iter()
        .filter(|c| !c.is_empty())
        .map(|c| RetainedCluster {
            cluster: c.id,
            stats: purity_stats(c, segments, exclude_self),
            mean_len: c.mean_len,
        })
        .filter(|r| is_pure(&r.stats, r.mean_len, thresholds))
        .collect()
}

pub fn is_pure(stats: &PurityStats, mean_len: f64, t: &MiningThresholds) -> bool {
    stats.mu_s < t.thres_mu_s * mean_len && stats.sigma_s < t.thres_sigma_s * mean_len
}

pub fn is_contrasting(stats: &ContrastStats, mean_len_a: f64, mean_len_b: f64, t: &MiningThresholds) -> bool {
    let avg = (mean_len_a + mean_len_b) / 2.0;
    stats.mu_d > t.thres_mu_d * avg && stats.sigma_d < t.thres_sigma_d * avg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastingPair {
    pub a: usize,
    pub b: usize,
    pub stats: ContrastStats,
}

/// All unordered pairs of retained clusters that satisfy both contrast rules.
/// `clusters` is indexed by cluster id.
pub fn select_contrasting_pairs(
    retained: &[RetainedCluster],
    clusters: &[Cluster],
    segments: &[Segment],
    thresholds: &MiningThresholds,
) -> Vec<ContrastingPair> {
    let counts: Vec<Vec<(&[SubwordId], u64)>> = retained
        .iter()
        .map(|r| string_counts(&clusters[r.cluster].members, segments))
        .collect();
    (0..retained.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let counts = &counts;
            (i + 1..retained.len()).filter_map(move |j| {
                let (ra, rb) = (&retained[i], &retained[j]);
                let (sum, sq) = moments(&counts[i], &counts[j]);
                let pairs = (clusters[ra.cluster].len() as u128) * (clusters[rb.cluster].len() as u128);
                let (mu_d, sigma_d) = mean_std(sum, sq, pairs);
                let stats = ContrastStats { mu_d, sigma_d };
                is_contrasting(&stats, ra.mean_len, rb.mean_len, thresholds).then_some(ContrastingPair {
                    a: ra.cluster,
                    b: rb.cluster,
                    stats,
                })
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiamesePair {
    pub a: usize,
    pub b: usize,
    /// 1 = matched, 0 = mismatched.
    pub label: u8,
    pub cluster_a: usize,
    pub cluster_b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub anchor_cluster: usize,
    pub negative_cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairManifest {
    pub siamese_pairs: Vec<SiamesePair>,
    pub triplets: Vec<Triplet>,
    pub sample_seed: u64,
}

/// Draws an index with probability proportional to `weights` (cumulative, last = total).
fn weighted_pick(rng: &mut ChaCha8Rng, cumulative: &[u128]) -> usize {
    let total = *cumulative.last().unwrap();
    let r = if total <= u64::MAX as u128 {
        rng.random_range(0..total as u64) as u128
    } else {
        rng.random_range(0..total)
    };
    cumulative.partition_point(|&c| c <= r)
}

fn cumulative(weights: impl IntoIterator<Item = u128>) -> Vec<u128> {
    let mut acc = 0u128;
    weights
        .into_iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn pick(rng: &mut ChaCha8Rng, n: usize) -> usize {
    rng.random_range(0..n as u64) as usize
}

/// Two distinct members of `c`, uniformly over ordered pairs.
fn member_pair(rng: &mut ChaCha8Rng, c: &Cluster) -> (usize, usize) {
    let n = c.members.len();
    let i = pick(rng, n);
    let mut j = pick(rng, n - 1);
    if j >= i {
        j += 1;
    }
    (c.members[i], c.members[j])
}

/// Samples matched/mismatched pairs and triplets with replacement.
///
/// Positive pairs are uniform over (retained cluster, ordered member pair);
/// negatives are uniform over (contrasting pair, cross member pair). The
/// Siamese list alternates positive and negative entries. A triplet draws a
/// positive pair from a retained cluster that has at least one contrasting
/// partner and a negative uniformly from the members of its partners.
pub fn sample_manifest(
    retained: &[RetainedCluster],
    contrasting: &[ContrastingPair],
    clusters: &[Cluster],
    n_siamese: usize,
    n_triplet: usize,
    seed: u64,
) -> Result<PairManifest> {
    let mut manifest = PairManifest {
        siamese_pairs: Vec::with_capacity(n_siamese),
        triplets: Vec::with_capacity(n_triplet),
        sample_seed: seed,
    };
    if n_siamese == 0 && n_triplet == 0 {
        return Ok(manifest);
    }

    let positives: Vec<&Cluster> = retained
        .iter()
        .map(|r| &clusters[r.cluster])
        .filter(|c| c.len() >= 2)
        .collect();
    if positives.is_empty() {
        return Err(Error::NoPositiveSource);
    }
    if contrasting.is_empty() {
        return Err(Error::NoNegativeSource);
    }

    if n_siamese > 0 {
        let mut rng = rng::stream(seed, 0);
        let pos_cum = cumulative(positives.iter().map(|c| (c.len() * (c.len() - 1)) as u128));
        let neg_cum = cumulative(
            contrasting
                .iter()
                .map(|p| (clusters[p.a].len() * clusters[p.b].len()) as u128),
        );
        for k in 0..n_siamese {
            if k % 2 == 0 {
                let c = positives[weighted_pick(&mut rng, &pos_cum)];
                let (a, b) = member_pair(&mut rng, c);
                manifest.siamese_pairs.push(SiamesePair {
                    a,
                    b,
                    label: 1,
                    cluster_a: c.id,
                    cluster_b: c.id,
                });
            } else {
                let p = &contrasting[weighted_pick(&mut rng, &neg_cum)];
                let (ca, cb) = (&clusters[p.a], &clusters[p.b]);
                let a = ca.members[pick(&mut rng, ca.len())];
                let b = cb.members[pick(&mut rng, cb.len())];
                manifest.siamese_pairs.push(SiamesePair {
                    a,
                    b,
                    label: 0,
                    cluster_a: ca.id,
                    cluster_b: cb.id,
                });
            }
        }
    }

    if n_triplet > 0 {
        let mut partners: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for p in contrasting {
            partners.entry(p.a).or_default().push(p.b);
            partners.entry(p.b).or_default().push(p.a);
        }
        let anchors: Vec<&Cluster> = positives
            .iter()
            .copied()
            .filter(|c| partners.contains_key(&c.id))
            .collect();
        if anchors.is_empty() {
            return Err(Error::NoPositiveSource);
        }
        let mut rng = rng::stream(seed, 1);
        let anchor_cum = cumulative(anchors.iter().map(|c| (c.len() * (c.len() - 1)) as u128));
        for _ in 0..n_triplet {
            let c = anchors[weighted_pick(&mut rng, &anchor_cum)];
            let (anchor, positive) = member_pair(&mut rng, c);
            let others = &partners[&c.id];
            let neg_cum = cumulative(others.iter().map(|&o| clusters[o].len() as u128));
            let nc = &clusters[others[weighted_pick(&mut rng, &neg_cum)]];
            let negative = nc.members[pick(&mut rng, nc.len())];
            manifest.triplets.push(Triplet {
                anchor,
                positive,
                negative,
                anchor_cluster: c.id,
                negative_cluster: nc.id,
            });
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FrameSpan;

    fn segs(strings: &[&[u16]]) -> Vec<Segment> {
        strings
            .iter()
            .enumerate()
            .map(|(i, s)| Segment {
                id: i,
                utterance: "u".into(),
                span: FrameSpan::new(i, i + 1),
                symbols: s.iter().map(|&v| SubwordId(v)).collect(),
                embedding: None,
            })
            .collect()
    }

    #[test]
    fn identical_members_are_perfectly_pure() {
        let s = segs(&[&[1, 2, 3], &[1, 2, 3], &[1, 2, 3]]);
        let c = Cluster::new(0, 0, vec![0, 1, 2], &s);
        assert_eq!(purity_stats(&c, &s, false), PurityStats { mu_s: 0.0, sigma_s: 0.0 });
    }

    #[test]
    fn two_member_hand_example() {
        let s = segs(&[&[1, 2, 3], &[1, 2, 4]]);
        let c = Cluster::new(0, 0, vec![0, 1], &s);
        let p = purity_stats(&c, &s, false);
        assert_eq!(p.mu_s, 0.5);
        assert_eq!(p.sigma_s, 0.5);
        let t = MiningThresholds::default();
        assert_eq!(select_pure_clusters(std::slice::from_ref(&c), &s, &t, false).len(), 1);
        let strict = MiningThresholds {
            thres_mu_s: 0.1,
            ..t
        };
        assert!(select_pure_clusters(&[c], &s, &strict, false).is_empty());
    }

    #[test]
    fn exclude_self_changes_denominator() {
        let s = segs(&[&[1, 2, 3], &[1, 2, 4]]);
        let c = Cluster::new(0, 0, vec![0, 1], &s);
        let p = purity_stats(&c, &s, true);
        assert_eq!(p, PurityStats { mu_s: 1.0, sigma_s: 0.0 });
        let single = Cluster::new(0, 0, vec![0], &s);
        assert_eq!(purity_stats(&single, &s, true), PurityStats { mu_s: 0.0, sigma_s: 0.0 });
        assert_eq!(purity_stats(&single, &s, false), PurityStats { mu_s: 0.0, sigma_s: 0.0 });
    }

    #[test]
    fn contrast_singletons_and_self() {
        let s = segs(&[&[1, 2, 3, 4], &[5, 6, 7, 8], &[1, 2, 3, 5]]);
        let a = Cluster::new(0, 0, vec![0], &s);
        let b = Cluster::new(1, 1, vec![1], &s);
        assert_eq!(contrast_stats(&a, &b, &s), ContrastStats { mu_d: 4.0, sigma_d: 0.0 });
        let ac = Cluster::new(2, 0, vec![0, 2], &s);
        let self_contrast = contrast_stats(&ac, &ac, &s);
        assert_eq!(self_contrast.mu_d, purity_stats(&ac, &s, false).mu_s);

        let t = MiningThresholds::default();
        let retained = select_pure_clusters(&[a.clone(), b.clone()], &s, &t, false);
        assert_eq!(retained.len(), 2);
        let pairs = select_contrasting_pairs(&retained, &[a, b], &s, &t);
        assert_eq!(pairs.len(), 1);
        assert!(select_contrasting_pairs(&[], &[], &s, &t).is_empty());
    }

    #[test]
    fn identical_content_is_not_contrasting() {
        let s = segs(&[&[1, 2, 3, 4], &[1, 2, 3, 4]]);
        let a = Cluster::new(0, 0, vec![0], &s);
        let b = Cluster::new(1, 1, vec![1], &s);
        let t = MiningThresholds::default();
        let retained = select_pure_clusters(&[a.clone(), b.clone()], &s, &t, false);
        assert!(select_contrasting_pairs(&retained, &[a, b], &s, &t).is_empty());
    }

    fn sampling_fixture() -> (Vec<Segment>, Vec<Cluster>) {
        let s = segs(&[&[1, 2, 3], &[1, 2, 3], &[1, 2, 3], &[7, 8, 9], &[7, 8, 9]]);
        let clusters = vec![
            Cluster::new(0, 0, vec![0, 1, 2], &s),
            Cluster::new(1, 3, vec![3, 4], &s),
        ];
        (s, clusters)
    }

    #[test]
    fn sampling_is_deterministic_and_balanced() {
        let (s, clusters) = sampling_fixture();
        let t = MiningThresholds::default();
        let retained = select_pure_clusters(&clusters, &s, &t, false);
        let contrasting = select_contrasting_pairs(&retained, &clusters, &s, &t);
        let m1 = sample_manifest(&retained, &contrasting, &clusters, 101, 50, 9).unwrap();
        let m2 = sample_manifest(&retained, &contrasting, &clusters, 101, 50, 9).unwrap();
        assert_eq!(m1, m2);
        let pos = m1.siamese_pairs.iter().filter(|p| p.label == 1).count() as i64;
        let neg = m1.siamese_pairs.len() as i64 - pos;
        assert!((pos - neg).abs() <= 1);
        for p in &m1.siamese_pairs {
            let same = clusters[0].members.contains(&p.a) == clusters[0].members.contains(&p.b);
            assert_eq!(same, p.label == 1);
            assert_ne!(p.a, p.b);
        }
        for t in &m1.triplets {
            assert_ne!(t.anchor, t.positive);
            assert_ne!(t.anchor_cluster, t.negative_cluster);
        }
        let empty = sample_manifest(&[], &[], &clusters, 0, 0, 1).unwrap();
        assert!(empty.siamese_pairs.is_empty() && empty.triplets.is_empty());
    }

    #[test]
    fn missing_sources_are_reported() {
        let (s, clusters) = sampling_fixture();
        let t = MiningThresholds::default();
        let retained = select_pure_clusters(&clusters, &s, &t, false);
        assert!(matches!(
            sample_manifest(&retained, &[], &clusters, 4, 0, 1),
            Err(Error::NoNegativeSource)
        ));
        assert!(matches!(
            sample_manifest(&[], &[], &clusters, 4, 0, 1),
            Err(Error::NoPositiveSource)
        ));
    }
}
