//! Connected components, preclusters and the percolation estimators.

use std::collections::VecDeque;

use petgraph::unionfind::UnionFind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;
use crate::error::{param, Result};
use crate::graph::GeoGraph;
use crate::model::ModelConfig;
use crate::rng::{derive_seed, Purpose};

/// Component labels `0..count` (numbered by smallest member) and sizes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
    sizes: Vec<usize>,
}

impl Partition {
    fn from_union_find(n: usize, uf: &UnionFind<usize>) -> Self {
        let mut root_label = vec![usize::MAX; n];
        let mut labels = vec![0; n];
        let mut sizes = Vec::new();
        for (i, label) in labels.iter_mut().enumerate() {
            let r = uf.find(i);
            if root_label[r] == usize::MAX {
                root_label[r] = sizes.len();
                sizes.push(0);
            }
            *label = root_label[r];
            sizes[root_label[r]] += 1;
        }
        Partition { labels, sizes }
    }

    pub fn vertex_count(&self) -> usize {
        self.labels.len()
    }

    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn size_of(&self, i: usize) -> usize {
        self.sizes[self.labels[i]]
    }

    pub fn same(&self, i: usize, j: usize) -> bool {
        self.labels[i] == self.labels[j]
    }

    /// Label and size of a largest component (smallest label among ties).
    pub fn largest(&self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize)> = None;
        for (l, &s) in self.sizes.iter().enumerate() {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((l, s));
            }
        }
        best
    }

    pub fn members(&self, label: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == label).collect()
    }

    /// All components as sorted vertex lists, ordered by label.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

/// Connected components of the whole graph.
pub fn components(graph: &GeoGraph) -> Partition {
    let n = graph.vertex_count();
    let mut uf = UnionFind::new(n);
    for e in graph.edges() {
        uf.union(e.a, e.b);
    }
    Partition::from_union_find(n, &uf)
}

/// Components of the subgraph induced by `vertices` (given as original
/// indices). The partition is indexed by position in `vertices`.
pub fn components_of_subset(graph: &GeoGraph, vertices: &[usize]) -> Partition {
    let mut pos = vec![usize::MAX; graph.vertex_count()];
    for (k, &v) in vertices.iter().enumerate() {
        pos[v] = k;
    }
    let mut uf = UnionFind::new(vertices.len());
    for (k, &v) in vertices.iter().enumerate() {
        for &w in graph.neighbors(v) {
            if pos[w] != usize::MAX && pos[w] > k {
                uf.union(k, pos[w]);
            }
        }
    }
    Partition::from_union_find(vertices.len(), &uf)
}

/// Vertices of the component of `v` (breadth-first search).
pub fn component_of(graph: &GeoGraph, v: usize) -> Vec<usize> {
    let mut seen = vec![false; graph.vertex_count()];
    let mut queue = VecDeque::from([v]);
    seen[v] = true;
    let mut out = Vec::new();
    while let Some(x) = queue.pop_front() {
        out.push(x);
        for &y in graph.neighbors(x) {
            if !seen[y] {
                seen[y] = true;
                queue.push_back(y);
            }
        }
    }
    out.sort_unstable();
    out
}

/// Size of the largest component of the subgraph induced by `region`.
pub fn largest_component_size(graph: &GeoGraph, region: &BoxDomain) -> usize {
    let inside = graph.vertices_in_box(region);
    components_of_subset(graph, &inside).largest().map_or(0, |(_, s)| s)
}

/// Preclusters of a cube together with a flag set when the reach region
/// had to be clipped at the domain boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct Preclusters {
    pub sets: Vec<Vec<usize>>,
    pub clipped: bool,
}

/// Intersections with `cube` of the components of the graph induced on the
/// sup-norm `k`-neighbourhood of `cube`.
pub fn preclusters(graph: &GeoGraph, cube: &BoxDomain, k: f64) -> Preclusters {
    let reach = cube.expand(k);
    let clipped = !graph.domain().contains_box(&reach);
    let region = reach.intersect(graph.domain());
    let inside = graph.vertices_in_box(&region);
    let part = components_of_subset(graph, &inside);
    let mut sets = vec![Vec::new(); part.count()];
    for (pos, &v) in inside.iter().enumerate() {
        if cube.contains(graph.cloud().point(v)) {
            sets[part.label(pos)].push(v);
        }
    }
    sets.retain(|s| !s.is_empty());
    Preclusters { sets, clipped }
}

fn min_mark(graph: &GeoGraph, set: &[usize]) -> f64 {
    set.iter().map(|&v| graph.mark(v)).fold(f64::INFINITY, f64::min)
}

/// The largest set; size ties go to the set holding the smallest mark, and
/// a tie in both gives the empty set.
pub fn select_maximal(graph: &GeoGraph, sets: &[Vec<usize>]) -> Vec<usize> {
    let mut best: Option<(usize, f64, usize)> = None;
    let mut tied = false;
    for (idx, s) in sets.iter().enumerate() {
        let key = (s.len(), min_mark(graph, s));
        match best {
            None => best = Some((key.0, key.1, idx)),
            Some((len, m, _)) => {
                if key.0 > len || (key.0 == len && key.1 < m) {
                    best = Some((key.0, key.1, idx));
                    tied = false;
                } else if key.0 == len && key.1 == m {
                    tied = true;
                }
            }
        }
    }
    match best {
        Some((_, _, idx)) if !tied => sets[idx].clone(),
        _ => Vec::new(),
    }
}

pub fn maximal_precluster(graph: &GeoGraph, cube: &BoxDomain, k: f64) -> Vec<usize> {
    select_maximal(graph, &preclusters(graph, cube, k).sets)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaEstimator {
    /// Origin joined to a vertex within `k_reach` of the box boundary.
    OriginToBoundary,
    /// Origin in a largest component.
    LargestComponentFraction,
}

impl ThetaEstimator {
    pub fn name(&self) -> &'static str {
        match self {
            ThetaEstimator::OriginToBoundary => "origin_to_boundary",
            ThetaEstimator::LargestComponentFraction => "largest_component_fraction",
        }
    }
}

impl std::str::FromStr for ThetaEstimator {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "origin_to_boundary" => Ok(ThetaEstimator::OriginToBoundary),
            "largest_component_fraction" => Ok(ThetaEstimator::LargestComponentFraction),
            other => param(format!("unknown estimator `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub estimator: ThetaEstimator,
    pub p: f64,
    pub n: f64,
    pub value: f64,
    pub ci: f64,
    pub replicas: usize,
    pub seed: u64,
}

impl ThetaEstimate {
    pub const CSV_HEADER: &'static str = "estimator,p,n,value,ci,replicas,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.estimator.name(),
            self.p,
            self.n,
            self.value,
            self.ci,
            self.replicas,
            self.seed
        )
    }
}

/// A frequency with its normal-approximation 95% half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frequency {
    pub value: f64,
    pub ci: f64,
    pub replicas: usize,
}

impl Frequency {
    pub fn from_hits(hits: usize, replicas: usize) -> Self {
        let v = hits as f64 / replicas as f64;
        Frequency { value: v, ci: 1.96 * (v * (1.0 - v) / replicas as f64).sqrt(), replicas }
    }
}

/// Seed of replica `r`; shared across all grid points of a sweep.
pub fn replica_seed(seed: u64, r: usize) -> u64 {
    derive_seed(seed, Purpose::Replica, r as u64)
}

/// Evaluate the chosen proxy on one (Palm) graph.
pub fn theta_indicator(graph: &GeoGraph, estimator: ThetaEstimator, k_reach: f64) -> bool {
    let Some(o) = graph.cloud().origin_index() else {
        return false;
    };
    match estimator {
        ThetaEstimator::OriginToBoundary => {
            let dom = graph.domain();
            component_of(graph, o)
                .into_iter()
                .any(|v| dom.sup_distance_to_boundary(graph.cloud().point(v)) <= k_reach)
        }
        ThetaEstimator::LargestComponentFraction => {
            let part = components(graph);
            let (_, big) = part.largest().unwrap();
            part.size_of(o) == big
        }
    }
}

fn check_replicas(replicas: usize) -> Result<()> {
    if replicas == 0 {
        return param("at least one replica is required");
    }
    Ok(())
}

/// One estimate per retention `p`, every replica graph built once and
/// thinned with the same percolation seed, so the per-replica indicators are
/// coupled monotonically in `p`.
#[allow(clippy::too_many_arguments)]
pub fn theta_sweep(
    model: &ModelConfig,
    ps: &[f64],
    n: f64,
    k_reach: f64,
    replicas: usize,
    seed: u64,
    estimator: ThetaEstimator,
) -> Result<Vec<ThetaEstimate>> {
    check_replicas(replicas)?;
    if let Some(p) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return param(format!("retention must lie in [0, 1], got {p}"));
    }
    let hits: Vec<Vec<bool>> = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<bool>> {
            let rs = replica_seed(seed, r);
            let g = model.sample_graph(n, rs, true)?;
            let pseed = derive_seed(rs, Purpose::Percolation, 0);
            ps.iter()
                .map(|&p| Ok(theta_indicator(&g.bond_percolate(p, pseed)?, estimator, k_reach)))
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(ps
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let f = Frequency::from_hits(hits.iter().filter(|h| h[i]).count(), replicas);
            ThetaEstimate { estimator, p, n, value: f.value, ci: f.ci, replicas, seed }
        })
        .collect())
}

pub fn estimate_theta(
    model: &ModelConfig,
    p: f64,
    n: f64,
    k_reach: f64,
    replicas: usize,
    seed: u64,
    estimator: ThetaEstimator,
) -> Result<ThetaEstimate> {
    Ok(theta_sweep(model, &[p], n, k_reach, replicas, seed, estimator)?.remove(0))
}

/// Proxy value per truncation length (`f64::INFINITY` means no truncation).
pub fn truncation_sweep(
    model: &ModelConfig,
    ells: &[f64],
    n: f64,
    k_reach: f64,
    replicas: usize,
    seed: u64,
    estimator: ThetaEstimator,
) -> Result<Vec<(f64, Frequency)>> {
    check_replicas(replicas)?;
    let hits: Vec<Vec<bool>> = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<bool>> {
            let g = model.sample_graph(n, replica_seed(seed, r), true)?;
            ells.iter().map(|&l| Ok(theta_indicator(&g.truncate(l)?, estimator, k_reach))).collect()
        })
        .collect::<Result<_>>()?;
    Ok(ells
        .iter()
        .enumerate()
        .map(|(i, &l)| (l, Frequency::from_hits(hits.iter().filter(|h| h[i]).count(), replicas)))
        .collect())
}

/// Frequency of `|C_max(G[box of side n])| > n^(lambda d)`.
pub fn sublinear_cluster_prob(model: &ModelConfig, lambda: f64, n: f64, replicas: usize, seed: u64) -> Result<Frequency> {
    check_replicas(replicas)?;
    if !(lambda > 0.0 && lambda < 1.0) {
        return param(format!("lambda must lie in (0, 1), got {lambda}"));
    }
    let threshold = n.powf(lambda * model.dim() as f64);
    let hits = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<bool> {
            let g = model.sample_graph(n, replica_seed(seed, r), false)?;
            let big = components(&g).largest().map_or(0, |(_, s)| s);
            Ok(big as f64 > threshold)
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(Frequency::from_hits(hits.iter().filter(|&&h| h).count(), replicas))
}
