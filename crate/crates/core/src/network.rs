//! Conductance networks, effective conductance and random walks.

use std::collections::VecDeque;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::graph::GeoGraph;
use crate::rng::{Purpose, StreamKey};

/// Relative residual at which the conductance solve stops.
pub const SOLVER_TOL: f64 = 1e-10;

/// Iteration cap of the conductance solve.
pub const SOLVER_MAX_ITER: usize = 100_000;

/// Conductance assigned to each graph edge.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Conductance {
    #[default]
    Unit,
    /// `length^(-exponent)`.
    LengthPower { exponent: f64 },
}

impl Conductance {
    pub fn of_length(&self, length: f64) -> f64 {
        match *self {
            Conductance::Unit => 1.0,
            Conductance::LengthPower { exponent } => length.powf(-exponent),
        }
    }
}

/// A finite network with positive conductances. Parallel edges are allowed,
/// loops are not.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    ids: Vec<usize>,
    edges: Vec<(usize, usize, f64)>,
    sink: Option<usize>,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
    pi: Vec<f64>,
}

/// Result of one conductance solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solve {
    pub conductance: f64,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveFlag {
    Plateau,
    Decaying,
}

impl std::fmt::Display for CurveFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CurveFlag::Plateau => "plateau",
            CurveFlag::Decaying => "decaying",
        })
    }
}

/// Effective conductance from one vertex to the shorted exterior of growing balls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConductanceCurve {
    pub source: usize,
    pub ns: Vec<usize>,
    pub values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub tolerance: f64,
    /// Plateau when the minimum over the last third exceeds half the maximum.
    /// A reporting convention, not a proof of transience.
    pub flag: CurveFlag,
    /// Values are non-increasing up to the solver tolerance.
    pub monotone: bool,
}

impl ConductanceCurve {
    pub const CSV_HEADER: &'static str = "n,conductance,residual";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for i in 0..self.ns.len() {
            s.push_str(&format!("{},{},{}\n", self.ns[i], self.values[i], self.residuals[i]));
        }
        s
    }

    pub fn last(&self) -> Option<f64> {
        self.values.last().copied()
    }
}

/// Plateau test on a sequence of conductances.
pub fn classify_curve(values: &[f64]) -> CurveFlag {
    if values.is_empty() {
        return CurveFlag::Decaying;
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    let tail = values.len().div_ceil(3);
    let min = values[values.len() - tail..].iter().copied().fold(f64::INFINITY, f64::min);
    if max > 0.0 && min > 0.5 * max {
        CurveFlag::Plateau
    } else {
        CurveFlag::Decaying
    }
}

/// Walker statistics from one source.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkStats {
    pub walkers: usize,
    pub steps: usize,
    /// Fraction of walkers that came back to the source.
    pub return_frequency: f64,
    /// Mean number of distinct vertices visited, source included.
    pub mean_range: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeEstimate {
    pub probability: f64,
    pub std_error: f64,
    pub walkers: usize,
    /// Walkers stopped by the step cap, counted as not escaping.
    pub truncated: usize,
}

impl Network {
    pub fn new(vertex_count: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        Self::with_ids((0..vertex_count).collect(), edges, None)
    }

    fn with_ids(ids: Vec<usize>, edges: Vec<(usize, usize, f64)>, sink: Option<usize>) -> Result<Self> {
        let n = ids.len();
        let mut deg = vec![0usize; n];
        for &(a, b, c) in &edges {
            if a >= n || b >= n {
                return param(format!("edge ({a}, {b}) refers to a missing vertex"));
            }
            if a == b {
                return param(format!("loop at vertex {a}"));
            }
            if !(c > 0.0 && c.is_finite()) {
                return param(format!("conductance {c} on edge ({a}, {b}) must be positive and finite"));
            }
            deg[a] += 1;
            deg[b] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + deg[i];
        }
        let mut fill = offsets[..n].to_vec();
        let mut targets = vec![0usize; offsets[n]];
        let mut weights = vec![0.0; offsets[n]];
        let mut pi = vec![0.0; n];
        for &(a, b, c) in &edges {
            targets[fill[a]] = b;
            weights[fill[a]] = c;
            fill[a] += 1;
            targets[fill[b]] = a;
            weights[fill[b]] = c;
            fill[b] += 1;
            pi[a] += c;
            pi[b] += c;
        }
        Ok(Network { ids, edges, sink, offsets, targets, weights, pi })
    }

    /// Network on all vertices of `graph`.
    pub fn from_graph(graph: &GeoGraph, conductance: Conductance) -> Result<Self> {
        Self::from_graph_with(graph, |l| conductance.of_length(l))
    }

    /// Network on all vertices of `graph` with conductance `f(length)`.
    pub fn from_graph_with(graph: &GeoGraph, f: impl Fn(f64) -> f64) -> Result<Self> {
        let edges = graph.edges().iter().map(|e| (e.a, e.b, f(e.length))).collect();
        Self::new(graph.vertex_count(), edges)
    }

    /// Nearest-neighbour lattice `{0..side}^dim` with unit conductances,
    /// vertices numbered with the first coordinate fastest.
    pub fn lattice(side: usize, dim: usize) -> Result<Self> {
        if side == 0 || dim == 0 {
            return param("lattice side and dimension must be positive");
        }
        let total = side
            .checked_pow(dim as u32)
            .ok_or_else(|| Error::Resource(format!("lattice {side}^{dim} is too large")))?;
        let mut edges = Vec::with_capacity(total * dim);
        for x in 0..total {
            let mut stride = 1;
            for _ in 0..dim {
                if (x / stride) % side + 1 < side {
                    edges.push((x, x + stride, 1.0));
                }
                stride *= side;
            }
        }
        Self::new(total, edges)
    }

    /// Sub-network on `vertices` (in the given order) with the edges among them.
    pub fn induced(&self, vertices: &[usize]) -> Result<Network> {
        let mut slot = vec![usize::MAX; self.vertex_count()];
        for (k, &v) in vertices.iter().enumerate() {
            self.check_vertex(v)?;
            if slot[v] != usize::MAX {
                return param(format!("vertex {v} listed twice"));
            }
            slot[v] = k;
        }
        let edges = self
            .edges
            .iter()
            .filter(|&&(a, b, _)| slot[a] != usize::MAX && slot[b] != usize::MAX)
            .map(|&(a, b, c)| (slot[a], slot[b], c))
            .collect();
        let sink = self.sink.and_then(|z| (slot[z] != usize::MAX).then_some(slot[z]));
        Network::with_ids(vertices.iter().map(|&v| self.ids[v]).collect(), edges, sink)
    }

    pub fn vertex_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Original vertex label of each vertex; the merged vertex carries `usize::MAX`.
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// The merged exterior vertex, if this network was shorted.
    pub fn sink(&self) -> Option<usize> {
        self.sink
    }

    pub fn pi(&self, x: usize) -> f64 {
        self.pi[x]
    }

    /// `(neighbour, conductance)` for every incident edge.
    pub fn incident(&self, x: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[x]..self.offsets[x + 1];
        self.targets[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }

    fn check_vertex(&self, v: usize) -> Result<()> {
        if v >= self.vertex_count() {
            return param(format!("vertex {v} is not in a network of {} vertices", self.vertex_count()));
        }
        Ok(())
    }

    /// Hop distances from `v`; unreachable vertices get `usize::MAX`.
    pub fn distances(&self, v: usize) -> Result<Vec<usize>> {
        self.check_vertex(v)?;
        let mut dist = vec![usize::MAX; self.vertex_count()];
        dist[v] = 0;
        let mut queue = VecDeque::from([v]);
        while let Some(x) = queue.pop_front() {
            for (y, _) in self.incident(x) {
                if dist[y] == usize::MAX {
                    dist[y] = dist[x] + 1;
                    queue.push_back(y);
                }
            }
        }
        Ok(dist)
    }

    /// Largest finite distance from `v`.
    pub fn eccentricity(&self, v: usize) -> Result<usize> {
        Ok(self.distances(v)?.into_iter().filter(|&d| d != usize::MAX).max().unwrap_or(0))
    }

    /// Merge every vertex further than `n` from `v` (unreachable ones included)
    /// into a single sink, dropping loops and keeping parallel edges.
    pub fn short_beyond(&self, v: usize, n: usize) -> Result<Network> {
        Ok(self.short_with_index(v, n)?.0)
    }

    fn short_with_index(&self, v: usize, n: usize) -> Result<(Network, usize)> {
        let dist = self.distances(v)?;
        if dist.iter().all(|&d| d <= n) {
            return Ok((self.clone(), v));
        }
        let mut map = vec![usize::MAX; self.vertex_count()];
        let mut ids = Vec::new();
        for (i, &d) in dist.iter().enumerate() {
            if d <= n {
                map[i] = ids.len();
                ids.push(self.ids[i]);
            }
        }
        let z = ids.len();
        ids.push(usize::MAX);
        for m in map.iter_mut().filter(|m| **m == usize::MAX) {
            *m = z;
        }
        let edges = self
            .edges
            .iter()
            .filter_map(|&(a, b, c)| (map[a] != map[b]).then_some((map[a], map[b], c)))
            .collect();
        Ok((Network::with_ids(ids, edges, Some(z))?, map[v]))
    }

    /// Effective conductance between `v` and the sink of `short_beyond(v, n)`;
    /// zero when nothing lies beyond distance `n`.
    pub fn effective_conductance(&self, v: usize, n: usize) -> Result<f64> {
        Ok(self.effective_conductance_solve(v, n)?.conductance)
    }

    pub fn effective_conductance_solve(&self, v: usize, n: usize) -> Result<Solve> {
        let (shorted, nv) = self.short_with_index(v, n)?;
        match shorted.sink {
            Some(z) => shorted.effective_conductance_between(nv, &[z]),
            None => Ok(Solve { conductance: 0.0, residual: 0.0, iterations: 0 }),
        }
    }

    /// Effective conductance between `v` (voltage 1) and `sinks` (voltage 0),
    /// by Jacobi-preconditioned conjugate gradients.
    pub fn effective_conductance_between(&self, v: usize, sinks: &[usize]) -> Result<Solve> {
        self.check_vertex(v)?;
        let n = self.vertex_count();
        // 0 free, 1 source, 2 sink
        let mut kind = vec![0u8; n];
        for &s in sinks {
            self.check_vertex(s)?;
            if s == v {
                return param("the source cannot also be a sink");
            }
            kind[s] = 2;
        }
        kind[v] = 1;
        // Free vertices reachable from v without crossing a sink.
        let mut slot = vec![usize::MAX; n];
        let mut free = Vec::new();
        let mut reaches_sink = false;
        let mut queue = VecDeque::from([v]);
        let mut seen = vec![false; n];
        seen[v] = true;
        while let Some(x) = queue.pop_front() {
            for (y, _) in self.incident(x) {
                if kind[y] == 2 {
                    reaches_sink = true;
                } else if !seen[y] {
                    seen[y] = true;
                    slot[y] = free.len();
                    free.push(y);
                    queue.push_back(y);
                }
            }
        }
        if !reaches_sink {
            return Ok(Solve { conductance: 0.0, residual: 0.0, iterations: 0 });
        }
        let m = free.len();
        let mut b = vec![0.0; m];
        for (i, &x) in free.iter().enumerate() {
            b[i] = self.incident(x).filter(|&(y, _)| y == v).map(|(_, c)| c).sum();
        }
        let apply = |x: &[f64], out: &mut [f64]| {
            out.par_iter_mut().enumerate().for_each(|(i, o)| {
                let u = free[i];
                let mut acc = self.pi[u] * x[i];
                for (w, c) in self.incident(u) {
                    if slot[w] != usize::MAX {
                        acc -= c * x[slot[w]];
                    }
                }
                *o = acc;
            });
        };
        let (x, residual, iterations) = pcg(apply, &b, |i| self.pi[free[i]])?;
        let conductance = self
            .incident(v)
            .map(|(y, c)| {
                let vy = if kind[y] == 2 { 0.0 } else { x[slot[y]] };
                c * (1.0 - vy)
            })
            .sum::<f64>()
            .max(0.0);
        Ok(Solve { conductance, residual, iterations })
    }

    /// Conductance curve over an increasing list of radii. Radii at or past the
    /// eccentricity of `v` are dropped, so the curve ends at the last radius
    /// that leaves a non-empty exterior.
    pub fn transience_probe(&self, v: usize, ns: &[usize]) -> Result<ConductanceCurve> {
        if ns.windows(2).any(|w| w[0] >= w[1]) {
            return param("radii must be strictly increasing");
        }
        let ecc = self.eccentricity(v)?;
        let unreachable = self.distances(v)?.contains(&usize::MAX);
        let kept: Vec<usize> = ns.iter().copied().filter(|&n| n < ecc || unreachable).collect();
        let solves: Vec<Solve> = kept.par_iter().map(|&n| self.effective_conductance_solve(v, n)).collect::<Result<_>>()?;
        let values: Vec<f64> = solves.iter().map(|s| s.conductance).collect();
        let monotone = values.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-6) + 1e-9);
        Ok(ConductanceCurve {
            source: v,
            ns: kept,
            flag: classify_curve(&values),
            residuals: solves.iter().map(|s| s.residual).collect(),
            values,
            tolerance: SOLVER_TOL,
            monotone,
        })
    }

    fn step<R: Rng>(&self, x: usize, rng: &mut R) -> usize {
        let lo = self.offsets[x];
        let hi = self.offsets[x + 1];
        let target = rng.random::<f64>() * self.pi[x];
        let mut acc = 0.0;
        for k in lo..hi {
            acc += self.weights[k];
            if target < acc {
                return self.targets[k];
            }
        }
        self.targets[hi - 1]
    }

    /// Walks with transition probabilities `C(xy)/pi(x)`.
    pub fn random_walk_stats(&self, v: usize, steps: usize, walkers: usize, seed: u64) -> Result<WalkStats> {
        self.check_vertex(v)?;
        if steps == 0 || walkers == 0 {
            return param("steps and walkers must be at least 1");
        }
        if self.pi[v] == 0.0 {
            return param(format!("vertex {v} has no edges, so the walk is undefined"));
        }
        let per: Vec<(bool, usize)> = (0..walkers)
            .into_par_iter()
            .map(|w| {
                let mut rng = StreamKey::new(seed, Purpose::Walker).with(w as u64).stream();
                let mut visited = std::collections::HashSet::from([v]);
                let mut returned = false;
                let mut x = v;
                for _ in 0..steps {
                    x = self.step(x, &mut rng);
                    returned |= x == v;
                    visited.insert(x);
                }
                (returned, visited.len())
            })
            .collect();
        let returns = per.iter().filter(|p| p.0).count();
        let range: usize = per.iter().map(|p| p.1).sum();
        Ok(WalkStats {
            walkers,
            steps,
            return_frequency: returns as f64 / walkers as f64,
            mean_range: range as f64 / walkers as f64,
        })
    }

    /// Probability that a walk from `v` reaches `target` before returning to `v`.
    pub fn escape_probability(&self, v: usize, target: usize, walkers: usize, max_steps: usize, seed: u64) -> Result<EscapeEstimate> {
        self.check_vertex(v)?;
        self.check_vertex(target)?;
        if walkers == 0 || v == target || self.pi[v] == 0.0 {
            return param("need at least one walker, distinct endpoints and edges at the source");
        }
        let per: Vec<u8> = (0..walkers)
            .into_par_iter()
            .map(|w| {
                let mut rng = StreamKey::new(seed, Purpose::Walker).with(w as u64).with(1).stream();
                let mut x = v;
                for _ in 0..max_steps {
                    x = self.step(x, &mut rng);
                    if x == target {
                        return 1;
                    }
                    if x == v {
                        return 0;
                    }
                }
                2
            })
            .collect();
        let hits = per.iter().filter(|&&o| o == 1).count();
        let p = hits as f64 / walkers as f64;
        Ok(EscapeEstimate {
            probability: p,
            std_error: (p * (1.0 - p) / walkers as f64).sqrt(),
            walkers,
            truncated: per.iter().filter(|&&o| o == 2).count(),
        })
    }
}

/// Preconditioned conjugate gradients with diagonal `diag`.
fn pcg(apply: impl Fn(&[f64], &mut [f64]), b: &[f64], diag: impl Fn(usize) -> f64) -> Result<(Vec<f64>, f64, usize)> {
    let m = b.len();
    let bnorm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut x = vec![0.0; m];
    if bnorm == 0.0 {
        return Ok((x, 0.0, 0));
    }
    let inv: Vec<f64> = (0..m).map(|i| 1.0 / diag(i)).collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; m];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut rel = 1.0;
    for it in 1..=SOLVER_MAX_ITER {
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::Numeric(format!("conductance matrix is not positive definite (p'Ap = {pap})")));
        }
        let alpha = rz / pap;
        for i in 0..m {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = r.iter().map(|x| x * x).sum::<f64>().sqrt() / bnorm;
        if rel <= SOLVER_TOL {
            return Ok((x, rel, it));
        }
        for i in 0..m {
            z[i] = r[i] * inv[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..m {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverDiverged { iterations: SOLVER_MAX_ITER, residual: rel })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_and_parallel() {
        let series = Network::new(3, vec![(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let s = series.effective_conductance_between(0, &[2]).unwrap();
        assert!((s.conductance - 0.5).abs() < 1e-12);
        let parallel = Network::new(2, vec![(0, 1, 1.0), (0, 1, 1.0)]).unwrap();
        assert!((parallel.effective_conductance_between(0, &[1]).unwrap().conductance - 2.0).abs() < 1e-12);
    }

    #[test]
    fn shorting_a_path() {
        let path = Network::new(3, vec![(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let s = path.short_beyond(0, 1).unwrap();
        assert_eq!(s.sink(), Some(2));
        assert_eq!(s.edge_count(), 2);
        assert_eq!(path.short_beyond(0, 2).unwrap(), path);
        assert_eq!(path.effective_conductance(0, 2).unwrap(), 0.0);
        assert!((path.effective_conductance(0, 1).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Network::new(2, vec![(0, 1, 0.0)]).is_err());
        assert!(Network::new(2, vec![(1, 1, 1.0)]).is_err());
        let lone = Network::new(1, vec![]).unwrap();
        assert!(lone.random_walk_stats(0, 10, 10, 1).is_err());
        assert!(lone.short_beyond(3, 1).is_err());
    }

    #[test]
    fn two_vertex_walk_returns() {
        let n = Network::new(2, vec![(0, 1, 1.0)]).unwrap();
        let s = n.random_walk_stats(0, 2, 50, 9).unwrap();
        assert_eq!(s.return_frequency, 1.0);
        assert_eq!(s.mean_range, 2.0);
        let once = n.random_walk_stats(0, 1, 50, 9).unwrap();
        assert_eq!(once.return_frequency, 0.0);
    }

    #[test]
    fn curve_flags() {
        assert_eq!(classify_curve(&[3.0, 2.5, 2.0, 1.9, 1.8, 1.8]), CurveFlag::Plateau);
        assert_eq!(classify_curve(&[3.0, 2.0, 1.0, 0.7, 0.5, 0.4]), CurveFlag::Decaying);
    }

    #[test]
    fn lattice_and_induced() {
        let sq = Network::lattice(3, 2).unwrap();
        assert_eq!((sq.vertex_count(), sq.edge_count()), (9, 12));
        assert_eq!(sq.eccentricity(4).unwrap(), 2);
        let corner = sq.induced(&[4, 0, 1, 3]).unwrap();
        assert_eq!(corner.ids(), &[4, 0, 1, 3]);
        assert_eq!(corner.edge_count(), 4);
        assert!(sq.induced(&[1, 1]).is_err());
    }
}
