//! HDBSCAN over segment embeddings: core distances, mutual reachability,
//! Prim MST, single-linkage dendrogram, condensed tree, and excess-of-mass
//! selection with an optional epsilon floor on cluster birth distance.

use std::collections::{BTreeSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HdbscanParams {
    pub min_cluster_size: usize,
    /// Neighbour count `k` for core distances.
    pub min_samples: usize,
    /// Birth-distance floor for selected clusters; 0 gives plain EOM.
    pub cluster_selection_epsilon: f64,
    /// Let EOM select the root when nothing below it is better.
    pub allow_single_cluster: bool,
    pub max_points: usize,
}

impl Default for HdbscanParams {
    fn default() -> Self {
        HdbscanParams {
            min_cluster_size: 5,
            min_samples: 5,
            cluster_selection_epsilon: 0.2,
            allow_single_cluster: false,
            max_points: 20_000,
        }
    }
}

impl HdbscanParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_cluster_size < 2 || self.min_samples < 1 || !(self.cluster_selection_epsilon >= 0.0) {
            return Err(Error::Config(
                "hdbscan needs min_cluster_size >= 2, min_samples >= 1, epsilon >= 0".into(),
            ));
        }
        Ok(())
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_points(points: &[Vec<f64>]) -> Result<()> {
    let dim = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("embeddings have differing dimensions".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Shape("embeddings contain non-finite values".into()));
    }
    Ok(())
}

/// Distance from each point to its `k`-th nearest other point.
pub fn core_distances(points: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    check_points(points)?;
    let n = points.len();
    if k == 0 || n <= k {
        return Err(Error::TooFewPoints(format!("{n} points for k = {k}")));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| euclidean(&points[i], &points[j]))
                .collect();
            let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect())
}

/// Dense row-major `n x n` mutual reachability matrix.
pub fn mutual_reachability(points: &[Vec<f64>], core: &[f64]) -> Result<Vec<f64>> {
    check_points(points)?;
    let n = points.len();
    if core.len() != n {
        return Err(Error::Shape(format!("{} core distances for {n} points", core.len())));
    }
    let mut m = vec![0.0; n * n];
    m.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            if i != j {
                *v = euclidean(&points[i], &points[j]).max(core[i]).max(core[j]);
            }
        }
    });
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Prim's algorithm from vertex 0 over an implicit complete graph. The next
/// vertex is the cheapest outside the tree, smaller index on ties.
pub fn mst_by(n: usize, dist: impl Fn(usize, usize) -> f64) -> Vec<Edge> {
    if n < 2 {
        return Vec::new();
    }
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0; n];
    in_tree[0] = true;
    for (j, b) in best.iter_mut().enumerate().skip(1) {
        *b = dist(0, j);
    }
    let mut edges = Vec::with_capacity(n - 1);
    for _ in 1..n {
        let mut next = usize::MAX;
        for j in 0..n {
            if !in_tree[j] && (next == usize::MAX || best[j] < best[next]) {
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push(Edge {
            a: from[next],
            b: next,
            weight: best[next],
        });
        for j in 0..n {
            if !in_tree[j] {
                let d = dist(next, j);
                if d < best[j] {
                    best[j] = d;
                    from[j] = next;
                }
            }
        }
    }
    edges
}

/// MST of a dense symmetric `n x n` matrix.
pub fn mst(matrix: &[f64], n: usize) -> Result<Vec<Edge>> {
    if matrix.len() != n * n {
        return Err(Error::Shape(format!("matrix of {} entries is not {n} x {n}", matrix.len())));
    }
    if n < 2 {
        return Err(Error::TooFewPoints(format!("MST needs at least 2 points, got {n}")));
    }
    Ok(mst_by(n, |i, j| matrix[i * n + j]))
}

/// One agglomeration: node ids below `n_points` are points, merge `i`
/// creates node `n_points + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n_points: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    fn size(&self, node: usize) -> usize {
        if node < self.n_points {
            1
        } else {
            self.merges[node - self.n_points].size
        }
    }

    /// Points under `node`, ascending.
    pub fn leaves(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < self.n_points {
                out.push(x);
            } else {
                let m = &self.merges[x - self.n_points];
                stack.push(m.left);
                stack.push(m.right);
            }
        }
        out.sort_unstable();
        out
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Single-linkage dendrogram from spanning-tree edges merged in ascending
/// `(weight, input position)` order.
pub fn build_hierarchy(n_points: usize, edges: &[Edge]) -> Result<Dendrogram> {
    if n_points == 0 || edges.len() + 1 != n_points {
        return Err(Error::NotATree(format!("{} edges for {n_points} points", edges.len())));
    }
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_by(|&x, &y| edges[x].weight.total_cmp(&edges[y].weight).then(x.cmp(&y)));
    let mut parent: Vec<usize> = (0..n_points).collect();
    let mut node: Vec<usize> = (0..n_points).collect();
    let mut size = vec![1usize; n_points];
    let mut merges = Vec::with_capacity(edges.len());
    for i in order {
        let e = edges[i];
        if e.a >= n_points || e.b >= n_points || !(e.weight >= 0.0) || !e.weight.is_finite() {
            return Err(Error::NotATree(format!("edge {i} is out of range or has a bad weight")));
        }
        let (ra, rb) = (find(&mut parent, e.a), find(&mut parent, e.b));
        if ra == rb {
            return Err(Error::NotATree(format!("edge {i} closes a cycle")));
        }
        let merged = size[ra] + size[rb];
        merges.push(Merge {
            left: node[ra],
            right: node[rb],
            distance: e.weight,
            size: merged,
        });
        parent[rb] = ra;
        size[ra] = merged;
        node[ra] = n_points + merges.len() - 1;
    }
    Ok(Dendrogram { n_points, merges })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CondensedEdge {
    pub parent: usize,
    /// A point id (`< n_points`) or a cluster id (`>= n_points`).
    pub child: usize,
    pub lambda: f64,
    pub child_size: usize,
}

/// Condensed cluster tree. Cluster ids start at `n_points` (the root).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondensedTree {
    pub n_points: usize,
    pub edges: Vec<CondensedEdge>,
    /// Indexed by `cluster - n_points`.
    pub stability: Vec<f64>,
    /// Birth lambda per cluster, same indexing; the root is born at 0.
    pub birth: Vec<f64>,
    /// Parent per cluster, same indexing; `None` for the root.
    pub parent: Vec<Option<usize>>,
}

impl CondensedTree {
    pub fn root(&self) -> usize {
        self.n_points
    }

    pub fn n_clusters(&self) -> usize {
        self.stability.len()
    }

    pub fn children(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .filter(move |e| e.parent == cluster && e.child >= self.n_points)
            .map(|e| e.child)
    }
}

/// Lambda of a merge distance. Zero distances (exact duplicates) map to the
/// largest finite lambda in the hierarchy so they merge first.
fn lambda_of(distance: f64, cap: f64) -> f64 {
    if distance > 0.0 {
        (1.0 / distance).min(cap)
    } else {
        cap
    }
}

pub fn condense(dendrogram: &Dendrogram, min_cluster_size: usize) -> CondensedTree {
    let n = dendrogram.n_points;
    let cap = dendrogram
        .merges
        .iter()
        .filter(|m| m.distance > 0.0)
        .map(|m| 1.0 / m.distance)
        .filter(|l| l.is_finite())
        .fold(None, |acc: Option<f64>, l| Some(acc.map_or(l, |a| a.max(l))))
        .unwrap_or(1.0);
    let mut edges = Vec::new();
    let mut birth = vec![0.0];
    let mut parent = vec![None];
    if n >= 2 {
        let root = 2 * n - 2;
        let mut queue = VecDeque::from([(root, n)]);
        while let Some((node, label)) = queue.pop_front() {
            let m = dendrogram.merges[node - n];
            let lambda = lambda_of(m.distance, cap);
            let (l, r) = (m.left, m.right);
            let (lc, rc) = (dendrogram.size(l), dendrogram.size(r));
            let big_l = lc >= min_cluster_size;
            let big_r = rc >= min_cluster_size;
            let fall_out = |child: usize, edges: &mut Vec<CondensedEdge>| {
                for p in dendrogram.leaves(child) {
                    edges.push(CondensedEdge {
                        parent: label,
                        child: p,
                        lambda,
                        child_size: 1,
                    });
                }
            };
            match (big_l, big_r) {
                (true, true) => {
                    for (child, size) in [(l, lc), (r, rc)] {
                        let id = n + birth.len();
                        birth.push(lambda);
                        parent.push(Some(label));
                        edges.push(CondensedEdge {
                            parent: label,
                            child: id,
                            lambda,
                            child_size: size,
                        });
                        queue.push_back((child, id));
                    }
                }
                (false, false) => {
                    fall_out(l, &mut edges);
                    fall_out(r, &mut edges);
                }
                (true, false) => {
                    fall_out(r, &mut edges);
                    queue.push_back((l, label));
                }
                (false, true) => {
                    fall_out(l, &mut edges);
                    queue.push_back((r, label));
                }
            }
        }
    }
    let mut stability = vec![0.0; birth.len()];
    for e in &edges {
        let c = e.parent - n;
        stability[c] += (e.lambda - birth[c]) * e.child_size as f64;
    }
    CondensedTree {
        n_points: n,
        edges,
        stability,
        birth,
        parent,
    }
}

fn descendants(tree: &CondensedTree, cluster: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack: Vec<usize> = tree.children(cluster).collect();
    while let Some(c) = stack.pop() {
        out.push(c);
        stack.extend(tree.children(c));
    }
    out
}

/// Excess-of-mass selection; returns selected cluster ids ascending. A
/// cluster beats its descendants on ties.
pub fn select_eom(tree: &CondensedTree, allow_single_cluster: bool) -> Vec<usize> {
    let n = tree.n_points;
    let k = tree.n_clusters();
    let root_ok = allow_single_cluster && n >= 2;
    let first = if root_ok { 0 } else { 1 };
    let mut stab = tree.stability.clone();
    let mut selected = vec![false; k];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); k];
    for e in &tree.edges {
        if e.child >= n {
            children[e.parent - n].push(e.child - n);
        }
    }
    selected[first..k].fill(true);
    for c in (first..k).rev() {
        let subtree: f64 = children[c].iter().map(|&ch| stab[ch]).sum();
        if subtree > stab[c] {
            selected[c] = false;
            stab[c] = subtree;
        } else {
            for d in descendants(tree, n + c) {
                selected[d - n] = false;
            }
        }
    }
    (0..k).filter(|&c| selected[c]).map(|c| n + c).collect()
}

fn birth_distance(tree: &CondensedTree, cluster: usize) -> f64 {
    let b = tree.birth[cluster - tree.n_points];
    if b > 0.0 {
        1.0 / b
    } else {
        f64::INFINITY
    }
}

/// EOM selection followed by the epsilon floor: a selected cluster born
/// below `epsilon` is replaced by its nearest ancestor born at or above it
/// (the root at the latest), absorbing everything beneath that ancestor.
pub fn select_hybrid(tree: &CondensedTree, epsilon: f64, allow_single_cluster: bool) -> Vec<usize> {
    let eom = select_eom(tree, allow_single_cluster);
    if epsilon <= 0.0 {
        return eom;
    }
    let mut chosen = BTreeSet::new();
    for &c in &eom {
        let mut cur = c;
        while birth_distance(tree, cur) < epsilon {
            match tree.parent[cur - tree.n_points] {
                Some(p) => cur = p,
                None => break,
            }
        }
        chosen.insert(cur);
    }
    // drop anything nested under another choice
    let nested: BTreeSet<usize> = chosen.iter().flat_map(|&c| descendants(tree, c)).collect();
    chosen.difference(&nested).copied().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalCluster {
    /// Point indices, ascending.
    pub members: Vec<usize>,
    pub stability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdbscanResult {
    /// Cluster index per point, -1 for noise.
    pub labels: Vec<i64>,
    /// Ordered by decreasing size, then by smallest member.
    pub clusters: Vec<FinalCluster>,
    pub noise: Vec<usize>,
}

/// Labels points by their nearest selected ancestor. Points that fall out of
/// a selected root join it only if they do so within `epsilon` (any point
/// when `epsilon` is 0).
pub fn label_points(tree: &CondensedTree, selected: &[usize], epsilon: f64) -> HdbscanResult {
    let n = tree.n_points;
    let mut is_sel = vec![false; tree.n_clusters()];
    for &c in selected {
        is_sel[c - n] = true;
    }
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for e in tree.edges.iter().filter(|e| e.child < n) {
        let mut cur = Some(e.parent);
        while let Some(c) = cur {
            if is_sel[c - n] {
                break;
            }
            cur = tree.parent[c - n];
        }
        if let Some(c) = cur {
            let keep = c != tree.root() || epsilon <= 0.0 || e.lambda >= 1.0 / epsilon;
            if keep {
                owner[e.child] = Some(c);
            }
        }
    }
    let mut groups: Vec<(usize, Vec<usize>)> = selected
        .iter()
        .map(|&c| (c, (0..n).filter(|&p| owner[p] == Some(c)).collect::<Vec<_>>()))
        .filter(|(_, m)| !m.is_empty())
        .collect();
    groups.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.1[0].cmp(&b.1[0])));
    let mut labels = vec![-1i64; n];
    let clusters = groups
        .into_iter()
        .enumerate()
        .map(|(label, (c, members))| {
            for &m in &members {
                labels[m] = label as i64;
            }
            FinalCluster {
                members,
                stability: tree.stability[c - n],
            }
        })
        .collect();
    let noise = (0..n).filter(|&p| labels[p] < 0).collect();
    HdbscanResult {
        labels,
        clusters,
        noise,
    }
}

/// Full pipeline on raw embeddings.
pub fn hdbscan(points: &[Vec<f64>], params: &HdbscanParams) -> Result<HdbscanResult> {
    params.validate()?;
    let n = points.len();
    if n > params.max_points {
        return Err(Error::Budget(format!(
            "{n} points exceed max_points = {}; subsample first",
            params.max_points
        )));
    }
    let need = params.min_samples.max(params.min_cluster_size);
    if n <= need {
        return Err(Error::TooFewPoints(format!("{n} points, need more than {need}")));
    }
    let core = core_distances(points, params.min_samples)?;
    let edges = mst_by(n, |i, j| euclidean(&points[i], &points[j]).max(core[i]).max(core[j]));
    let dendrogram = build_hierarchy(n, &edges)?;
    let tree = condense(&dendrogram, params.min_cluster_size);
    let selected = select_hybrid(&tree, params.cluster_selection_epsilon, params.allow_single_cluster);
    log::info!(
        "hdbscan: {n} points, {} condensed clusters, {} selected",
        tree.n_clusters(),
        selected.len()
    );
    Ok(label_points(&tree, &selected, params.cluster_selection_epsilon))
}
