//! Stationary point sets on boxes, their i.i.d. uniform marks and Palm versions.
//!
//! Poisson points are generated cell by cell on the unit lattice of the
//! rescaled space, each cell keyed by its integer coordinates. Lattice sites
//! and marks are keyed by their own location. Consequently two samples with
//! the same seed on nested boxes agree on the smaller box.

use std::io::{BufRead, Write};

use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Boundary, BoxDomain};
use crate::error::{param, Error, Result};
use crate::rng::{Purpose, StreamKey};

/// How a cloud was produced.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    Poisson { intensity: f64 },
    Lattice { retention: f64 },
    /// Hand-built configurations (tests, imported files).
    Explicit,
}

impl Source {
    /// Mean number of points per unit volume.
    pub fn intensity(&self) -> Option<f64> {
        match *self {
            Source::Poisson { intensity } => Some(intensity),
            Source::Lattice { retention } => Some(retention),
            Source::Explicit => None,
        }
    }
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Source::Poisson { intensity } => write!(f, "poisson({intensity})"),
            Source::Lattice { retention } => write!(f, "lattice({retention})"),
            Source::Explicit => write!(f, "explicit"),
        }
    }
}

impl std::str::FromStr for Source {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "explicit" {
            return Ok(Source::Explicit);
        }
        let (name, rest) = s
            .split_once('(')
            .ok_or_else(|| Error::Parameter(format!("unrecognised source `{s}`")))?;
        let value: f64 = rest
            .trim_end_matches(')')
            .parse()
            .map_err(|_| Error::Parameter(format!("bad source parameter in `{s}`")))?;
        match name {
            "poisson" => Ok(Source::Poisson { intensity: value }),
            "lattice" => Ok(Source::Lattice { retention: value }),
            other => param(format!("unknown source `{other}`")),
        }
    }
}

/// Locations in a box, stored flat and sorted lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    domain: BoxDomain,
    coords: Vec<f64>,
    source: Source,
    seed: u64,
}

impl PointCloud {
    /// Build a cloud from explicit points. Points are sorted; duplicates and
    /// points outside the domain are rejected.
    pub fn from_points(domain: BoxDomain, points: &[Vec<f64>], source: Source, seed: u64) -> Result<Self> {
        let d = domain.dim();
        let mut coords = Vec::with_capacity(points.len() * d);
        for p in points {
            if p.len() != d {
                return param(format!("point {p:?} does not have dimension {d}"));
            }
            if !domain.contains(p) {
                return param(format!("point {p:?} lies outside the domain {domain}"));
            }
            coords.extend_from_slice(p);
        }
        let coords = sort_lexicographic(coords, d);
        if coords.chunks_exact(d).zip(coords.chunks_exact(d).skip(1)).any(|(a, b)| a == b) {
            return param("point cloud contains duplicate locations");
        }
        Ok(PointCloud { domain, coords, source, seed })
    }

    fn from_sorted(domain: BoxDomain, coords: Vec<f64>, source: Source, seed: u64) -> Self {
        PointCloud { domain, coords, source, seed }
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.coords[i * d..(i + 1) * d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim())
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

fn sort_lexicographic(coords: Vec<f64>, d: usize) -> Vec<f64> {
    let n = coords.len() / d;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| {
        let pa = &coords[a * d..(a + 1) * d];
        let pb = &coords[b * d..(b + 1) * d];
        pa.iter()
            .zip(pb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out = Vec::with_capacity(coords.len());
    for i in order {
        out.extend_from_slice(&coords[i * d..(i + 1) * d]);
    }
    out
}

/// Iterate the integer multi-indices of the box `lo..=hi` (inclusive per axis).
fn for_each_index(lo: &[i64], hi: &[i64], mut f: impl FnMut(&[i64])) {
    if lo.iter().zip(hi).any(|(a, b)| a > b) {
        return;
    }
    let mut idx = lo.to_vec();
    loop {
        f(&idx);
        let mut axis = 0;
        loop {
            if axis == idx.len() {
                return;
            }
            idx[axis] += 1;
            if idx[axis] <= hi[axis] {
                break;
            }
            idx[axis] = lo[axis];
            axis += 1;
        }
    }
}

fn collect_indices(lo: &[i64], hi: &[i64]) -> Vec<Vec<i64>> {
    let mut v = Vec::new();
    for_each_index(lo, hi, |i| v.push(i.to_vec()));
    v
}

/// Homogeneous Poisson process of the given intensity on `domain`.
///
/// Space is rescaled by `intensity^(1/d)` so that a unit-intensity process is
/// generated on unit cells, then mapped back.
pub fn sample_poisson(domain: &BoxDomain, intensity: f64, seed: u64) -> Result<PointCloud> {
    if !(intensity > 0.0) || !intensity.is_finite() {
        return param(format!("Poisson intensity must be positive, got {intensity}"));
    }
    let d = domain.dim();
    let source = Source::Poisson { intensity };
    if domain.volume() == 0.0 {
        return Ok(PointCloud::from_sorted(domain.clone(), Vec::new(), source, seed));
    }
    let scale = intensity.powf(1.0 / d as f64);
    let lo: Vec<i64> = domain.lower().iter().map(|a| (a * scale).floor() as i64).collect();
    let hi: Vec<i64> = domain.upper().iter().map(|b| (b * scale).ceil() as i64 - 1).collect();
    let cells = collect_indices(&lo, &hi);
    let key = StreamKey::new(seed, Purpose::PoissonCell);
    let unit = Poisson::new(1.0).expect("unit Poisson");
    let coords: Vec<f64> = cells
        .par_iter()
        .flat_map_iter(|cell| {
            let mut rng = cell.iter().fold(key, |k, &c| k.with_i64(c)).stream();
            let count = unit.sample(&mut rng) as usize;
            let mut out = Vec::with_capacity(count * d);
            let mut p = vec![0.0; d];
            for _ in 0..count {
                for (axis, x) in p.iter_mut().enumerate() {
                    *x = (cell[axis] as f64 + crate::rng::open_unit(&mut rng)) / scale;
                }
                if domain.contains(&p) {
                    out.extend_from_slice(&p);
                }
            }
            out
        })
        .collect();
    let coords = sort_lexicographic(coords, d);
    Ok(PointCloud::from_sorted(domain.clone(), coords, source, seed))
}

/// Sites of `Z^d` inside `domain`, each kept independently with probability `retention`.
pub fn sample_lattice(domain: &BoxDomain, retention: f64, seed: u64) -> Result<PointCloud> {
    if !(0.0..=1.0).contains(&retention) {
        return param(format!("retention must lie in [0, 1], got {retention}"));
    }
    let d = domain.dim();
    let lo: Vec<i64> = domain.lower().iter().map(|a| a.floor() as i64 + 1).collect();
    let hi: Vec<i64> = domain.upper().iter().map(|b| b.floor() as i64).collect();
    let key = StreamKey::new(seed, Purpose::LatticeSite);
    let mut coords = Vec::new();
    for_each_index(&lo, &hi, |site| {
        let u = site.iter().fold(key, |k, &c| k.with_i64(c)).uniform();
        if u < retention {
            coords.extend(site.iter().map(|&c| c as f64));
        }
    });
    let coords = sort_lexicographic(coords, d);
    Ok(PointCloud::from_sorted(domain.clone(), coords, Source::Lattice { retention }, seed))
}

/// A point cloud with one Uniform(0,1) mark per location.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkedCloud {
    base: PointCloud,
    marks: Vec<f64>,
    mark_seed: u64,
}

impl MarkedCloud {
    /// Pair a cloud with explicit marks (all strictly inside `(0, 1)`).
    pub fn from_parts(base: PointCloud, marks: Vec<f64>, mark_seed: u64) -> Result<Self> {
        if marks.len() != base.len() {
            return param(format!("{} marks for {} locations", marks.len(), base.len()));
        }
        if let Some(m) = marks.iter().find(|&&m| !(m > 0.0 && m < 1.0)) {
            return param(format!("mark {m} outside (0, 1)"));
        }
        Ok(MarkedCloud { base, marks, mark_seed })
    }

    /// Convenience constructor for hand-built configurations.
    pub fn explicit(domain: BoxDomain, vertices: &[(Vec<f64>, f64)]) -> Result<Self> {
        let pts: Vec<Vec<f64>> = vertices.iter().map(|(p, _)| p.clone()).collect();
        let base = PointCloud::from_points(domain, &pts, Source::Explicit, 0)?;
        // Marks follow the sorted location order.
        let mut marks = Vec::with_capacity(vertices.len());
        for p in base.points() {
            let m = vertices.iter().find(|(q, _)| q.as_slice() == p).map(|(_, m)| *m).unwrap();
            marks.push(m);
        }
        Self::from_parts(base, marks, 0)
    }

    pub fn base(&self) -> &PointCloud {
        &self.base
    }

    pub fn domain(&self) -> &BoxDomain {
        self.base.domain()
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.base.point(i)
    }

    pub fn mark(&self, i: usize) -> f64 {
        self.marks[i]
    }

    pub fn marks(&self) -> &[f64] {
        &self.marks
    }

    pub fn mark_seed(&self) -> u64 {
        self.mark_seed
    }

    /// Index of the vertex located at the origin, if any.
    pub fn origin_index(&self) -> Option<usize> {
        (0..self.len()).find(|&i| self.point(i).iter().all(|&x| x == 0.0))
    }

    /// Restrict to the vertices inside `region`, returning the new cloud
    /// (with `region` as its domain) and the original indices kept.
    pub fn restrict(&self, region: &BoxDomain) -> (MarkedCloud, Vec<usize>) {
        let d = self.dim();
        let mut kept = Vec::new();
        let mut coords = Vec::new();
        let mut marks = Vec::new();
        for i in 0..self.len() {
            let p = self.point(i);
            if region.contains(p) {
                kept.push(i);
                coords.extend_from_slice(p);
                marks.push(self.marks[i]);
            }
        }
        debug_assert_eq!(coords.len(), kept.len() * d);
        let base = PointCloud::from_sorted(region.clone(), coords, self.base.source, self.base.seed);
        (MarkedCloud { base, marks, mark_seed: self.mark_seed }, kept)
    }

    /// Replace marks (same length); used by coupling experiments.
    pub fn with_marks(&self, marks: Vec<f64>) -> Result<Self> {
        Self::from_parts(self.base.clone(), marks, self.mark_seed)
    }
}

/// Attach i.i.d. Uniform(0,1) marks. Each mark is keyed by its location, so
/// enlarging the domain never changes the marks of existing points.
pub fn attach_marks(cloud: PointCloud, seed: u64) -> MarkedCloud {
    let key = StreamKey::new(seed, Purpose::Mark);
    let marks = cloud.points().map(|p| key.with_point(p).open_uniform()).collect();
    MarkedCloud { base: cloud, marks, mark_seed: seed }
}

/// Palm version: a vertex at the origin with a fresh, independent mark.
///
/// For Poisson (and explicit) clouds the origin is inserted; for lattice
/// clouds the origin site is forced present. An existing origin vertex gets
/// its mark replaced.
pub fn palm_condition(cloud: &MarkedCloud) -> Result<MarkedCloud> {
    let d = cloud.dim();
    let origin = vec![0.0; d];
    if !cloud.domain().contains(&origin) {
        return param(format!("origin lies outside the domain {}", cloud.domain()));
    }
    let fresh = StreamKey::new(cloud.mark_seed, Purpose::PalmMark).open_uniform();
    if let Some(i) = cloud.origin_index() {
        let mut marks = cloud.marks.clone();
        marks[i] = fresh;
        return Ok(MarkedCloud { base: cloud.base.clone(), marks, mark_seed: cloud.mark_seed });
    }
    // insertion point in lexicographic order
    let pos = (0..cloud.len())
        .find(|&i| {
            cloud
                .point(i)
                .iter()
                .zip(&origin)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .map(|o| o.is_gt())
                .unwrap_or(false)
        })
        .unwrap_or(cloud.len());
    let mut coords = cloud.base.coords.clone();
    coords.splice(pos * d..pos * d, origin);
    let mut marks = cloud.marks.clone();
    marks.insert(pos, fresh);
    let base = PointCloud::from_sorted(cloud.domain().clone(), coords, cloud.base.source, cloud.base.seed);
    Ok(MarkedCloud { base, marks, mark_seed: cloud.mark_seed })
}

/// Write the cloud as CSV: `#`-prefixed header lines, a column line, then
/// one row `x1,...,xd,mark` per vertex.
pub fn write_cloud_csv<W: Write>(cloud: &MarkedCloud, mut out: W) -> Result<()> {
    let dom = cloud.domain();
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    writeln!(out, "# dim={}", cloud.dim())?;
    writeln!(out, "# lower={}", join(dom.lower()))?;
    writeln!(out, "# upper={}", join(dom.upper()))?;
    writeln!(out, "# boundary={}", dom.boundary())?;
    writeln!(out, "# source={}", cloud.base.source)?;
    writeln!(out, "# seed={}", cloud.base.seed)?;
    writeln!(out, "# mark_seed={}", cloud.mark_seed)?;
    let cols: Vec<String> = (1..=cloud.dim()).map(|i| format!("x{i}")).chain(["mark".to_string()]).collect();
    writeln!(out, "{}", cols.join(","))?;
    for i in 0..cloud.len() {
        writeln!(out, "{},{}", join(cloud.point(i)), cloud.mark(i))?;
    }
    Ok(())
}

/// Read a cloud written by [`write_cloud_csv`].
pub fn read_cloud_csv<R: BufRead>(input: R) -> Result<MarkedCloud> {
    let mut header = std::collections::BTreeMap::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(h) = line.strip_prefix('#') {
            if let Some((k, v)) = h.trim().split_once('=') {
                header.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        if line.starts_with('x') {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| Error::Parse { line: lineno + 1, message: e.to_string() })?;
        rows.push(row);
    }
    let get = |k: &str| {
        header
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Parse { line: 0, message: format!("missing header `{k}`") })
    };
    let floats = |s: String| -> Result<Vec<f64>> {
        s.split(',')
            .map(|t| t.parse::<f64>().map_err(|e| Error::Parse { line: 0, message: e.to_string() }))
            .collect()
    };
    let parse_u64 = |s: String| s.parse::<u64>().map_err(|e| Error::Parse { line: 0, message: e.to_string() });
    let boundary: Boundary = get("boundary")?.parse()?;
    let domain = BoxDomain::new(floats(get("lower")?)?, floats(get("upper")?)?, boundary)?;
    let source: Source = get("source")?.parse()?;
    let seed = parse_u64(get("seed")?)?;
    let mark_seed = parse_u64(get("mark_seed")?)?;
    let d = domain.dim();
    let mut coords = Vec::with_capacity(rows.len() * d);
    let mut marks = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if r.len() != d + 1 {
            return Err(Error::Parse { line: i + 1, message: format!("expected {} columns", d + 1) });
        }
        coords.extend_from_slice(&r[..d]);
        marks.push(r[d]);
    }
    let base = PointCloud::from_sorted(domain, coords, source, seed);
    MarkedCloud::from_parts(base, marks, mark_seed)
}
