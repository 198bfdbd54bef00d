//! The random geometric graph on a marked cloud, its samplers and the graph
//! operators (bond percolation, truncation, induced subgraphs).
//!
//! Every potential edge `{x, y}` owns one uniform drawn from a key built on
//! the location hashes of its endpoints (in lexicographic location order).
//! The naive builder thresholds that uniform against the edge probability,
//! so graphs built from related clouds are coupled exactly: the same pair of
//! locations sees the same uniform whatever else is in the box.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::OnceLock;

use rand::Rng;
use rayon::prelude::*;

use crate::domain::{Boundary, BoxDomain};
use crate::error::{param, Result};
use crate::kernels::KernelSpec;
use crate::point_process::MarkedCloud;
use crate::rng::{location_hash, open_unit, pair_uniform, Purpose, StreamKey};

/// Above this dominating probability the cell builder tests pairs one by one.
const EXHAUSTIVE_ABOVE: f64 = 0.25;

/// An undirected edge `a < b` with its (torus-aware) Euclidean length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
}

#[derive(Clone, Debug)]
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct GeoGraph {
    cloud: MarkedCloud,
    edges: Vec<Edge>,
    seed: u64,
    adjacency: OnceLock<Csr>,
    hashes: OnceLock<Vec<u64>>,
}

impl PartialEq for GeoGraph {
    fn eq(&self, other: &Self) -> bool {
        self.cloud == other.cloud && self.edges == other.edges && self.seed == other.seed
    }
}

impl GeoGraph {
    fn assemble(cloud: MarkedCloud, mut edges: Vec<Edge>, seed: u64) -> Self {
        edges.sort_unstable_by_key(|e| (e.a, e.b));
        GeoGraph { cloud, edges, seed, adjacency: OnceLock::new(), hashes: OnceLock::new() }
    }

    /// A graph with the given vertex pairs as edges; lengths are computed.
    pub fn from_pairs(cloud: MarkedCloud, pairs: &[(usize, usize)], seed: u64) -> Result<Self> {
        let n = cloud.len();
        let mut edges = Vec::with_capacity(pairs.len());
        for &(i, j) in pairs {
            if i >= n || j >= n {
                return param(format!("edge ({i}, {j}) refers to a missing vertex"));
            }
            if i == j {
                return param(format!("self-loop at vertex {i}"));
            }
            let (a, b) = (i.min(j), i.max(j));
            edges.push(Edge { a, b, length: cloud.domain().distance(cloud.point(a), cloud.point(b)) });
        }
        let g = Self::assemble(cloud, edges, seed);
        if g.edges.windows(2).any(|w| (w[0].a, w[0].b) == (w[1].a, w[1].b)) {
            return param("duplicate edge");
        }
        Ok(g)
    }

    pub fn cloud(&self) -> &MarkedCloud {
        &self.cloud
    }

    pub fn domain(&self) -> &BoxDomain {
        self.cloud.domain()
    }

    pub fn vertex_count(&self) -> usize {
        self.cloud.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mark(&self, i: usize) -> f64 {
        self.cloud.mark(i)
    }

    fn csr(&self) -> &Csr {
        self.adjacency.get_or_init(|| {
            let n = self.vertex_count();
            let mut deg = vec![0usize; n + 1];
            for e in &self.edges {
                deg[e.a + 1] += 1;
                deg[e.b + 1] += 1;
            }
            for i in 0..n {
                deg[i + 1] += deg[i];
            }
            let mut fill = deg.clone();
            let mut targets = vec![0usize; deg[n]];
            for e in &self.edges {
                targets[fill[e.a]] = e.b;
                fill[e.a] += 1;
                targets[fill[e.b]] = e.a;
                fill[e.b] += 1;
            }
            Csr { offsets: deg, targets }
        })
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        let c = self.csr();
        &c.targets[c.offsets[i]..c.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).len()
    }

    pub fn location_hashes(&self) -> &[u64] {
        self.hashes.get_or_init(|| hashes_of(&self.cloud))
    }

    /// Keep each edge independently with probability `p`, one uniform per
    /// location pair, so that `p1 <= p2` gives nested edge sets.
    pub fn bond_percolate(&self, p: f64, seed: u64) -> Result<GeoGraph> {
        if !(0.0..=1.0).contains(&p) {
            return param(format!("retention must lie in [0, 1], got {p}"));
        }
        let key = StreamKey::new(seed, Purpose::Bond);
        let h = self.location_hashes();
        let edges = self
            .edges
            .iter()
            .filter(|e| pair_uniform(key, h[e.a], h[e.b]) < p)
            .copied()
            .collect();
        Ok(GeoGraph::assemble(self.cloud.clone(), edges, self.seed))
    }

    /// Remove all edges longer than `ell`.
    pub fn truncate(&self, ell: f64) -> Result<GeoGraph> {
        if !(ell > 0.0) {
            return param(format!("truncation length must be positive, got {ell}"));
        }
        let edges = self.edges.iter().filter(|e| e.length <= ell).copied().collect();
        Ok(GeoGraph::assemble(self.cloud.clone(), edges, self.seed))
    }

    /// Indices of vertices inside `region`.
    pub fn vertices_in_box(&self, region: &BoxDomain) -> Vec<usize> {
        (0..self.vertex_count()).filter(|&i| region.contains(self.cloud.point(i))).collect()
    }

    /// The subgraph induced by the vertices inside `region`, together with
    /// the original index of every kept vertex.
    pub fn induced_subgraph_with_map(&self, region: &BoxDomain) -> Result<(GeoGraph, Vec<usize>)> {
        if !self.domain().contains_box(region) {
            return param(format!("box {region} is not contained in the domain {}", self.domain()));
        }
        let (cloud, kept) = self.cloud.restrict(region);
        let mut new_index = vec![usize::MAX; self.vertex_count()];
        for (k, &i) in kept.iter().enumerate() {
            new_index[i] = k;
        }
        let edges = self
            .edges
            .iter()
            .filter(|e| new_index[e.a] != usize::MAX && new_index[e.b] != usize::MAX)
            .map(|e| Edge { a: new_index[e.a], b: new_index[e.b], length: e.length })
            .collect();
        let g = GeoGraph::assemble(cloud, edges, self.seed);
        if self.hashes.get().is_some() {
            let h = self.location_hashes();
            let _ = g.hashes.set(kept.iter().map(|&i| h[i]).collect());
        }
        Ok((g, kept))
    }

    pub fn induced_subgraph(&self, region: &BoxDomain) -> Result<GeoGraph> {
        Ok(self.induced_subgraph_with_map(region)?.0)
    }

    /// Edge list CSV `i,j,length`.
    pub fn write_edges_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "i,j,length")?;
        for e in &self.edges {
            writeln!(out, "{},{},{}", e.a, e.b, e.length)?;
        }
        Ok(())
    }
}

fn hashes_of(cloud: &MarkedCloud) -> Vec<u64> {
    (0..cloud.len()).map(|i| location_hash(cloud.point(i))).collect()
}

fn check_dims(cloud: &MarkedCloud, kernel: &KernelSpec) -> Result<()> {
    if cloud.dim() != kernel.dim {
        return param(format!("kernel dimension {} does not match cloud dimension {}", kernel.dim, cloud.dim()));
    }
    Ok(())
}

/// Test every unordered pair.
pub fn build_graph_naive(cloud: &MarkedCloud, kernel: &KernelSpec, seed: u64) -> Result<GeoGraph> {
    check_dims(cloud, kernel)?;
    let n = cloud.len();
    let key = StreamKey::new(seed, Purpose::Edge);
    let h = hashes_of(cloud);
    let dom = cloud.domain();
    let edges: Vec<Edge> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let (pi, si) = (cloud.point(i), cloud.mark(i));
            let h = &h;
            (i + 1..n).filter_map(move |j| {
                let r = dom.distance(pi, cloud.point(j));
                let p = kernel.edge_prob_unchecked(si, cloud.mark(j), r);
                (p > 0.0 && pair_uniform(key, h[i], h[j]) < p).then_some(Edge { a: i, b: j, length: r })
            })
        })
        .collect();
    let g = GeoGraph::assemble(cloud.clone(), edges, seed);
    let _ = g.hashes.set(h);
    Ok(g)
}

struct Cell {
    key: Vec<i64>,
    members: Vec<usize>,
    min_mark: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

/// Smallest per-axis separation between the coordinate intervals of two cells.
fn axis_gap(dom: &BoxDomain, axis: usize, a: &Cell, b: &Cell) -> f64 {
    let g = (b.lo[axis] - a.hi[axis]).max(a.lo[axis] - b.hi[axis]).max(0.0);
    match dom.boundary() {
        Boundary::Free => g,
        Boundary::Torus => {
            let l = dom.side(axis);
            let big = (b.hi[axis] - a.lo[axis]).max(a.hi[axis] - b.lo[axis]);
            let tent = |x: f64| x.min(l - x).max(0.0);
            tent(g).min(tent(big))
        }
    }
}

/// Cell-list builder with dominated geometric skipping.
///
/// Pairs of cells whose dominating probability exceeds 1/4 (always the case
/// for a cell with itself and for touching cells) are tested pair by pair
/// with the same uniforms as [`build_graph_naive`]. Other cell pairs draw
/// candidates at rate `p_max` and thin them by `p / p_max`.
pub fn build_graph_cells(cloud: &MarkedCloud, kernel: &KernelSpec, cell_side: f64, seed: u64) -> Result<GeoGraph> {
    check_dims(cloud, kernel)?;
    if !(cell_side > 0.0) || !cell_side.is_finite() {
        return param(format!("cell side must be positive, got {cell_side}"));
    }
    let d = cloud.dim();
    let dom = cloud.domain();
    let mut by_key: BTreeMap<Vec<i64>, Vec<usize>> = BTreeMap::new();
    for i in 0..cloud.len() {
        let k: Vec<i64> = cloud.point(i).iter().map(|x| (x / cell_side).floor() as i64).collect();
        by_key.entry(k).or_default().push(i);
    }
    let cells: Vec<Cell> = by_key
        .into_iter()
        .map(|(key, members)| {
            let mut lo = vec![f64::INFINITY; d];
            let mut hi = vec![f64::NEG_INFINITY; d];
            let mut min_mark = 1.0f64;
            for &i in &members {
                for (a, &x) in cloud.point(i).iter().enumerate() {
                    lo[a] = lo[a].min(x);
                    hi[a] = hi[a].max(x);
                }
                min_mark = min_mark.min(cloud.mark(i));
            }
            Cell { key, members, min_mark, lo, hi }
        })
        .collect();
    let h = hashes_of(cloud);
    let edge_key = StreamKey::new(seed, Purpose::Edge);
    let pair_key = StreamKey::new(seed, Purpose::CellPair);
    let edges: Vec<Edge> = (0..cells.len())
        .into_par_iter()
        .flat_map_iter(|ia| {
            let cells = &cells;
            let h = &h;
            let mut out = Vec::new();
            let a = &cells[ia];
            for ib in ia..cells.len() {
                let b = &cells[ib];
                if ia == ib {
                    for (x, &i) in a.members.iter().enumerate() {
                        for &j in &a.members[x + 1..] {
                            push_if(&mut out, cloud, kernel, edge_key, h, i, j);
                        }
                    }
                    continue;
                }
                let gap = (0..d).map(|ax| axis_gap(dom, ax, a, b).powi(2)).sum::<f64>().sqrt();
                let p_max = kernel.edge_prob_unchecked(a.min_mark, b.min_mark, gap);
                if p_max <= 0.0 {
                    continue;
                }
                if p_max > EXHAUSTIVE_ABOVE {
                    for &i in &a.members {
                        for &j in &b.members {
                            push_if(&mut out, cloud, kernel, edge_key, h, i.min(j), i.max(j));
                        }
                    }
                    continue;
                }
                let mut rng = a.key.iter().chain(&b.key).fold(pair_key, |k, &c| k.with_i64(c)).stream();
                let total = a.members.len() * b.members.len();
                let log_q = (-p_max).ln_1p();
                let mut idx = 0usize;
                loop {
                    let skip = (open_unit(&mut rng).ln() / log_q).floor();
                    if skip >= (total - idx) as f64 {
                        break;
                    }
                    idx += skip as usize;
                    let (i, j) = (a.members[idx / b.members.len()], b.members[idx % b.members.len()]);
                    let (i, j) = (i.min(j), i.max(j));
                    let r = dom.distance(cloud.point(i), cloud.point(j));
                    let p = kernel.edge_prob_unchecked(cloud.mark(i), cloud.mark(j), r);
                    if rng.random::<f64>() * p_max < p {
                        out.push(Edge { a: i, b: j, length: r });
                    }
                    idx += 1;
                    if idx >= total {
                        break;
                    }
                }
            }
            out
        })
        .collect();
    let g = GeoGraph::assemble(cloud.clone(), edges, seed);
    let _ = g.hashes.set(h);
    Ok(g)
}

#[inline]
fn push_if(out: &mut Vec<Edge>, cloud: &MarkedCloud, kernel: &KernelSpec, key: StreamKey, h: &[u64], i: usize, j: usize) {
    let r = cloud.domain().distance(cloud.point(i), cloud.point(j));
    let p = kernel.edge_prob_unchecked(cloud.mark(i), cloud.mark(j), r);
    if p > 0.0 && pair_uniform(key, h[i], h[j]) < p {
        out.push(Edge { a: i, b: j, length: r });
    }
}

/// Default cell side: four times the mean inter-point spacing.
pub fn default_cell_side(intensity: f64, dim: usize) -> f64 {
    4.0 * intensity.powf(-1.0 / dim as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point_process::{attach_marks, sample_poisson};

    fn cloud(side: f64, seed: u64) -> MarkedCloud {
        let dom = BoxDomain::centered_cube(2, side).unwrap();
        attach_marks(sample_poisson(&dom, 1.0, seed).unwrap(), seed + 1)
    }

    #[test]
    fn zero_kernel_gives_no_edges() {
        let c = cloud(8.0, 1);
        let k = KernelSpec::bernoulli_nn(2, 0.0).unwrap();
        assert_eq!(build_graph_naive(&c, &k, 3).unwrap().edge_count(), 0);
        assert_eq!(build_graph_cells(&c, &k, 2.0, 3).unwrap().edge_count(), 0);
    }

    #[test]
    fn certain_edge_between_two_vertices() {
        let dom = BoxDomain::centered_cube(1, 4.0).unwrap();
        let c = MarkedCloud::explicit(dom, &[(vec![0.0], 0.5), (vec![0.5], 0.5)]).unwrap();
        let k = KernelSpec::bernoulli_nn(1, 1.0).unwrap();
        let g = build_graph_naive(&c, &k, 0).unwrap();
        assert_eq!(g.edges(), &[Edge { a: 0, b: 1, length: 0.5 }]);
    }

    #[test]
    fn dimension_mismatch() {
        let c = cloud(4.0, 1);
        let k = KernelSpec::long_range(1, 1.0, 1.0).unwrap();
        assert!(build_graph_naive(&c, &k, 0).is_err());
        assert!(build_graph_cells(&c, &k, 1.0, 0).is_err());
    }

    #[test]
    fn single_cell_matches_naive() {
        let dom = BoxDomain::new(vec![0.0, 0.0], vec![10.0, 10.0], Boundary::Free).unwrap();
        let c = attach_marks(sample_poisson(&dom, 1.0, 4).unwrap(), 5);
        let k = KernelSpec::long_range(2, 2.0, 1.2).unwrap();
        let a = build_graph_naive(&c, &k, 9).unwrap();
        let b = build_graph_cells(&c, &k, 100.0, 9).unwrap();
        assert_eq!(a.edges(), b.edges());
    }

    #[test]
    fn empty_cloud_builds_empty_graph() {
        let c = cloud(0.0, 1);
        let k = KernelSpec::long_range(2, 1.0, 1.0).unwrap();
        assert_eq!(build_graph_cells(&c, &k, 1.0, 0).unwrap().vertex_count(), 0);
    }

    #[test]
    fn edges_are_valid() {
        let c = cloud(12.0, 5);
        let k = KernelSpec::scale_free(2, 1.0, 0.4, 1.5).unwrap();
        for g in [build_graph_naive(&c, &k, 2).unwrap(), build_graph_cells(&c, &k, 1.5, 2).unwrap()] {
            for w in g.edges().windows(2) {
                assert!((w[0].a, w[0].b) < (w[1].a, w[1].b));
            }
            for e in g.edges() {
                assert!(e.a < e.b);
                let r = g.domain().distance(g.cloud().point(e.a), g.cloud().point(e.b));
                assert_eq!(r, e.length);
            }
        }
    }

    #[test]
    fn torus_cells_respect_wrapping() {
        let dom = BoxDomain::centered_cube(1, 20.0).unwrap().with_boundary(Boundary::Torus);
        let c = MarkedCloud::explicit(dom, &[(vec![-9.8], 0.5), (vec![9.8], 0.5)]).unwrap();
        let k = KernelSpec::bernoulli_nn(1, 1.0).unwrap();
        let g = build_graph_cells(&c, &k, 1.0, 0).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert!((g.edges()[0].length - 0.4).abs() < 1e-9);
    }

    #[test]
    fn bond_and_truncate_edge_cases() {
        let c = cloud(10.0, 6);
        let k = KernelSpec::long_range(2, 3.0, 1.0).unwrap();
        let g = build_graph_naive(&c, &k, 1).unwrap();
        assert_eq!(g.bond_percolate(1.0, 5).unwrap().edges(), g.edges());
        assert_eq!(g.bond_percolate(0.0, 5).unwrap().edge_count(), 0);
        assert!(g.bond_percolate(1.5, 5).is_err());
        assert_eq!(g.truncate(g.domain().diameter()).unwrap().edges(), g.edges());
        assert_eq!(g.truncate(1e-9).unwrap().edge_count(), 0);
        assert!(g.truncate(0.0).is_err());
    }

    #[test]
    fn truncate_known_lengths() {
        let dom = BoxDomain::centered_cube(1, 10.0).unwrap();
        let c = MarkedCloud::explicit(dom, &[(vec![0.0], 0.5), (vec![0.5], 0.5), (vec![1.5], 0.5), (vec![2.5], 0.5)])
            .unwrap();
        let g = GeoGraph::from_pairs(c, &[(0, 1), (0, 2), (0, 3)], 0).unwrap();
        assert_eq!(g.truncate(2.0).unwrap().edge_count(), 2);
    }

    #[test]
    fn induced_subgraph_identity_and_errors() {
        let c = cloud(10.0, 7);
        let k = KernelSpec::long_range(2, 3.0, 1.0).unwrap();
        let g = build_graph_naive(&c, &k, 1).unwrap();
        let same = g.induced_subgraph(g.domain()).unwrap();
        assert_eq!(same.edges(), g.edges());
        assert!(g.induced_subgraph(&BoxDomain::centered_cube(2, 12.0).unwrap()).is_err());
        let empty = g.induced_subgraph(&BoxDomain::cube(&[1.0, 1.0], 0.0).unwrap()).unwrap();
        assert_eq!(empty.vertex_count(), 0);
    }

    #[test]
    fn neighbors_match_edges() {
        let c = cloud(8.0, 8);
        let k = KernelSpec::long_range(2, 3.0, 1.0).unwrap();
        let g = build_graph_naive(&c, &k, 1).unwrap();
        let total: usize = (0..g.vertex_count()).map(|i| g.degree(i)).sum();
        assert_eq!(total, 2 * g.edge_count());
    }

    #[test]
    fn edges_csv_format() {
        let dom = BoxDomain::centered_cube(1, 4.0).unwrap();
        let c = MarkedCloud::explicit(dom, &[(vec![0.0], 0.5), (vec![1.5], 0.5)]).unwrap();
        let g = GeoGraph::from_pairs(c, &[(1, 0)], 0).unwrap();
        let mut buf = Vec::new();
        g.write_edges_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "i,j,length\n0,1,1.5\n");
    }
}
