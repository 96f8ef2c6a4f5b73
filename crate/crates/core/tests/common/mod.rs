//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use termforge_core::baseline::Cluster;
use termforge_core::corpus::{FrameSpan, Segment, SubwordId};
use termforge_core::recluster::{Dendrogram, Edge};

pub fn rng(seed: u64) -> ChaCha8Rng {
    termforge_core::rng::stream(seed, 0)
}

pub fn syms(v: &[u16]) -> Vec<SubwordId> {
    v.iter().map(|&s| SubwordId(s)).collect()
}

pub fn segment(id: usize, symbols: Vec<SubwordId>) -> Segment {
    Segment {
        id,
        utterance: format!("u{id}"),
        span: FrameSpan::new(0, symbols.len().max(1)),
        symbols,
        embedding: None,
    }
}

pub fn random_string(rng: &mut ChaCha8Rng, max_len: usize, alphabet: u16) -> Vec<SubwordId> {
    let len = rng.random_range(1..=max_len);
    (0..len).map(|_| SubwordId(rng.random_range(0..alphabet))).collect()
}

/// Segments drawn from a small pool of base strings with random edits, so
/// clusters contain repeated and near-repeated strings.
pub fn random_segments(rng: &mut ChaCha8Rng, n: usize, max_len: usize) -> Vec<Segment> {
    let alphabet = rng.random_range(2..6);
    let pool: Vec<Vec<SubwordId>> = (0..4).map(|_| random_string(rng, max_len, alphabet)).collect();
    (0..n)
        .map(|id| {
            let s = if rng.random_bool(0.3) {
                random_string(rng, max_len, alphabet)
            } else {
                let mut s = pool[rng.random_range(0..pool.len())].clone();
                if rng.random_bool(0.5) {
                    let i = rng.random_range(0..s.len());
                    s[i] = SubwordId(rng.random_range(0..alphabet));
                }
                s
            };
            segment(id, s)
        })
        .collect()
}

pub fn cluster(id: usize, members: Vec<usize>, segments: &[Segment]) -> Cluster {
    Cluster::new(id, members[0], members, segments)
}

/// Random disjoint clusters over a random subset of `0..n`.
pub fn random_partition(rng: &mut ChaCha8Rng, n: usize, max_size: usize, segments: &[Segment]) -> Vec<Cluster> {
    let mut ids: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.8)).collect();
    for i in (1..ids.len()).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    let mut out = Vec::new();
    while !ids.is_empty() {
        let k = rng.random_range(1..=max_size.min(ids.len()));
        let members: Vec<usize> = ids.drain(..k).collect();
        out.push(cluster(out.len(), members, segments));
    }
    out
}

/// Edit distance by memoized recursion over suffixes.
pub fn lev_oracle<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            1 + go(a, b, i + 1, j, memo)
                .min(go(a, b, i, j + 1, memo))
                .min(go(a, b, i + 1, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// Mean and population standard deviation of `ds`. The variance numerator
/// is accumulated as centered integers `sum (P d - S)^2`, which equals
/// `P (P sum d^2 - S^2)`.
pub fn mean_std_oracle(ds: &[usize]) -> (f64, f64) {
    let p = ds.len() as i128;
    if p == 0 {
        return (0.0, 0.0);
    }
    let s: i128 = ds.iter().map(|&d| d as i128).sum();
    let centered: i128 = ds.iter().map(|&d| (p * d as i128 - s).pow(2)).sum();
    assert_eq!(centered % p, 0);
    let var = (centered / p) as f64 / (p as f64 * p as f64);
    (s as f64 / p as f64, var.sqrt())
}

pub fn purity_oracle(c: &Cluster, segments: &[Segment], exclude_self: bool) -> (f64, f64) {
    let mut ds = Vec::new();
    for &i in &c.members {
        for &j in &c.members {
            if exclude_self && i == j {
                continue;
            }
            ds.push(lev_oracle(&segments[i].symbols, &segments[j].symbols));
        }
    }
    mean_std_oracle(&ds)
}

pub fn contrast_oracle(a: &Cluster, b: &Cluster, segments: &[Segment]) -> (f64, f64) {
    let mut ds = Vec::new();
    for &i in &a.members {
        for &j in &b.members {
            ds.push(lev_oracle(&segments[i].symbols, &segments[j].symbols));
        }
    }
    mean_std_oracle(&ds)
}

pub fn ned_oracle(clusters: &[Cluster], gold: &[Vec<SubwordId>]) -> Option<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for c in clusters {
        for x in 0..c.members.len() {
            for y in x + 1..c.members.len() {
                let (a, b) = (&gold[c.members[x]], &gold[c.members[y]]);
                let longest = a.len().max(b.len());
                total += if longest == 0 {
                    0.0
                } else {
                    lev_oracle(a, b) as f64 / longest as f64
                };
                n += 1;
            }
        }
    }
    (n > 0).then(|| total / n as f64)
}

/// `(P, R)` by enumerating every unordered pair of clustered, labelled segments.
pub fn grouping_oracle(clusters: &[Cluster], labels: &[Option<usize>]) -> (Option<f64>, Option<f64>) {
    let mut owner: HashMap<usize, usize> = HashMap::new();
    for c in clusters {
        for &m in &c.members {
            owner.insert(m, c.id);
        }
    }
    let mut ids: Vec<usize> = owner.keys().copied().filter(|&m| labels[m].is_some()).collect();
    ids.sort_unstable();
    let (mut same_c, mut same_w, mut both) = (0usize, 0usize, 0usize);
    for x in 0..ids.len() {
        for y in x + 1..ids.len() {
            let (i, j) = (ids[x], ids[y]);
            let c = owner[&i] == owner[&j];
            let w = labels[i] == labels[j];
            same_c += usize::from(c);
            same_w += usize::from(w);
            both += usize::from(c && w);
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    (ratio(both, same_c), ratio(both, same_w))
}

pub fn pairs_oracle(clusters: &[Cluster]) -> (usize, usize) {
    let mut pairs = 0;
    for c in clusters {
        for x in 0..c.members.len() {
            for _ in x + 1..c.members.len() {
                pairs += 1;
            }
        }
    }
    (clusters.len(), pairs)
}

/// Smallest spanning-tree weight by trying every `(n-1)`-subset of edges.
pub fn mst_weight_bruteforce(n: usize, d: &[f64]) -> f64 {
    let edges: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let mut best = f64::INFINITY;
    let mut pick = Vec::with_capacity(n - 1);
    fn rec(
        start: usize,
        n: usize,
        edges: &[(usize, usize)],
        d: &[f64],
        pick: &mut Vec<usize>,
        best: &mut f64,
    ) {
        if pick.len() == n - 1 {
            let mut comp: Vec<usize> = (0..n).collect();
            let mut w = 0.0;
            for &e in pick.iter() {
                let (a, b) = edges[e];
                let (ca, cb) = (comp[a], comp[b]);
                if ca == cb {
                    return;
                }
                for c in comp.iter_mut() {
                    if *c == cb {
                        *c = ca;
                    }
                }
                w += d[a * n + b];
            }
            *best = best.min(w);
            return;
        }
        for e in start..edges.len() {
            pick.push(e);
            rec(e + 1, n, edges, d, pick, best);
            pick.pop();
        }
    }
    rec(0, n, &edges, d, &mut pick, &mut best);
    best
}

pub fn tree_weight(edges: &[Edge]) -> f64 {
    edges.iter().map(|e| e.weight).sum()
}

/// Cophenetic matrix of naive agglomerative single linkage on a dense matrix.
pub fn single_linkage_cophenetic(n: usize, d: &[f64]) -> Vec<f64> {
    let mut groups: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut coph = vec![0.0; n * n];
    while groups.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for x in 0..groups.len() {
            for y in x + 1..groups.len() {
                for &i in &groups[x] {
                    for &j in &groups[y] {
                        if d[i * n + j] < best.0 {
                            best = (d[i * n + j], x, y);
                        }
                    }
                }
            }
        }
        let (h, x, y) = best;
        let gy = groups.remove(y);
        for &i in &groups[x] {
            for &j in &gy {
                coph[i * n + j] = h;
                coph[j * n + i] = h;
            }
        }
        groups[x].extend(gy);
    }
    coph
}

/// Cophenetic matrix read off a dendrogram.
pub fn dendrogram_cophenetic(dg: &Dendrogram) -> Vec<f64> {
    let n = dg.n_points;
    let mut coph = vec![0.0; n * n];
    for m in &dg.merges {
        let (l, r) = (dg.leaves(m.left), dg.leaves(m.right));
        for &i in &l {
            for &j in &r {
                coph[i * n + j] = m.distance;
                coph[j * n + i] = m.distance;
            }
        }
    }
    coph
}

/// Gaussian blobs around random centres in `dim` dimensions.
pub fn blobs(rng: &mut ChaCha8Rng, k: usize, per: usize, dim: usize, spread: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    use rand_distr::{Distribution, Normal};
    let noise = Normal::new(0.0, spread).unwrap();
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for c in 0..k {
        let centre: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
        for _ in 0..per {
            pts.push(centre.iter().map(|x| x + noise.sample(rng)).collect());
            labels.push(c);
        }
    }
    (pts, labels)
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(0.0..1.0)).collect()).collect()
}

pub fn dense(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
        }
    }
    d
}

fn patterns(
    params: &termforge_core::embednet::NetworkParams,
    inputs: &[Vec<f64>],
    used: &[usize],
) -> Vec<(Vec<bool>, Vec<usize>)> {
    used.iter()
        .map(|&i| termforge_core::embednet::forward_trace(params, &inputs[i]).unwrap().activation_pattern())
        .collect()
}

/// Largest relative error between analytic gradients and central differences
/// (step 1e-3) over `samples` random coordinates. Coordinates whose step
/// moves any ReLU or pool decision are redrawn, since a difference across a
/// kink is not a derivative. `None` if too few smooth coordinates exist.
pub fn gradient_check(
    params: &termforge_core::embednet::NetworkParams,
    inputs: &[Vec<f64>],
    batch: &[termforge_core::embednet::Example],
    margin: f64,
    samples: usize,
    seed: u64,
) -> Option<f64> {
    use termforge_core::embednet::{batch_loss, batch_loss_grad, Example};
    let mut used: Vec<usize> = batch
        .iter()
        .flat_map(|e| match *e {
            Example::Pair { a, b, .. } => vec![a, b],
            Example::Triplet { anchor, positive, negative } => vec![anchor, positive, negative],
        })
        .collect();
    used.sort_unstable();
    used.dedup();
    let base = patterns(params, inputs, &used);
    let (_, grad) = batch_loss_grad(params, inputs, batch, margin).unwrap();
    let mut r = rng(seed);
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    let (mut done, mut tries) = (0, 0);
    while done < samples {
        tries += 1;
        if tries > 50 * samples {
            return None;
        }
        let k = r.random_range(0..params.len());
        let mut p = params.clone();
        p.data[k] = params.data[k] + h;
        if patterns(&p, inputs, &used) != base {
            continue;
        }
        let up = batch_loss(&p, inputs, batch, margin).unwrap();
        p.data[k] = params.data[k] - h;
        if patterns(&p, inputs, &used) != base {
            continue;
        }
        let down = batch_loss(&p, inputs, batch, margin).unwrap();
        let numeric = (up - down) / (2.0 * h);
        let scale = grad[k].abs().max(numeric.abs());
        if scale > 1e-8 {
            worst = worst.max((grad[k] - numeric).abs() / scale);
        }
        done += 1;
    }
    Some(worst)
}
