//! Axis-aligned boxes `(lower, upper]` with free or periodic boundaries.

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

const CONTAIN_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Free,
    Torus,
}

impl std::fmt::Display for Boundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Boundary::Free => write!(f, "free"),
            Boundary::Torus => write!(f, "torus"),
        }
    }
}

impl std::str::FromStr for Boundary {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free" => Ok(Boundary::Free),
            "torus" => Ok(Boundary::Torus),
            other => param(format!("unknown boundary mode `{other}`")),
        }
    }
}

/// A half-open box `(lower_1, upper_1] x ... x (lower_d, upper_d]`.
///
/// Side lengths may be zero (a degenerate box holds no points); negative or
/// non-finite sides are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    boundary: Boundary,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, boundary: Boundary) -> Result<Self> {
        if lower.is_empty() {
            return param("box dimension must be at least 1");
        }
        if lower.len() != upper.len() {
            return param("box corners have different dimensions");
        }
        for (a, b) in lower.iter().zip(&upper) {
            if !a.is_finite() || !b.is_finite() {
                return param("box corners must be finite");
            }
            if b < a {
                return param(format!("box side ({a}, {b}] has negative length"));
            }
        }
        Ok(BoxDomain { lower, upper, boundary })
    }

    /// The cube `(-side/2, side/2]^d`.
    pub fn centered_cube(dim: usize, side: f64) -> Result<Self> {
        Self::cube(&vec![0.0; dim], side)
    }

    /// The cube of side `side` centred at `center`, free boundary.
    pub fn cube(center: &[f64], side: f64) -> Result<Self> {
        if !(side >= 0.0) || !side.is_finite() {
            return param(format!("cube side must be a non-negative finite number, got {side}"));
        }
        let h = side / 2.0;
        Self::new(
            center.iter().map(|c| c - h).collect(),
            center.iter().map(|c| c + h).collect(),
            Boundary::Free,
        )
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn sides(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.side(i)).collect()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.side(i)).product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    /// Half-open membership test `lower < x <= upper` on every axis.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&a, &b))| v > a && v <= b)
    }

    /// Whether `other` lies inside `self` (up to rounding).
    pub fn contains_box(&self, other: &BoxDomain) -> bool {
        other.dim() == self.dim()
            && (0..self.dim()).all(|i| {
                other.lower[i] >= self.lower[i] - CONTAIN_TOL && other.upper[i] <= self.upper[i] + CONTAIN_TOL
            })
    }

    /// The sup-norm `k`-neighbourhood of the box, i.e. each side pushed out by `k`.
    pub fn expand(&self, k: f64) -> BoxDomain {
        BoxDomain {
            lower: self.lower.iter().map(|a| a - k).collect(),
            upper: self.upper.iter().map(|b| b + k).collect(),
            boundary: Boundary::Free,
        }
    }

    /// Intersection with `other`; the result may be degenerate.
    pub fn intersect(&self, other: &BoxDomain) -> BoxDomain {
        let lower: Vec<f64> = self.lower.iter().zip(&other.lower).map(|(a, b)| a.max(*b)).collect();
        let upper: Vec<f64> = self
            .upper
            .iter()
            .zip(&other.upper)
            .zip(&lower)
            .map(|((a, b), lo)| a.min(*b).max(*lo))
            .collect();
        BoxDomain { lower, upper, boundary: Boundary::Free }
    }

    /// Per-axis separation of two coordinates, periodic when the box is a torus.
    #[inline]
    pub fn axis_gap(&self, axis: usize, a: f64, b: f64) -> f64 {
        let d = (a - b).abs();
        match self.boundary {
            Boundary::Free => d,
            Boundary::Torus => {
                let l = self.side(axis);
                d.min(l - d).max(0.0)
            }
        }
    }

    /// Euclidean distance, torus-aware.
    #[inline]
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            let g = self.axis_gap(i, a[i], b[i]);
            s += g * g;
        }
        s.sqrt()
    }

    /// Largest Euclidean distance between two points of the box.
    pub fn diameter(&self) -> f64 {
        let f = match self.boundary {
            Boundary::Free => 1.0,
            Boundary::Torus => 0.5,
        };
        self.sides().iter().map(|s| (s * f) * (s * f)).sum::<f64>().sqrt()
    }

    /// Sup-norm distance from `x` to the complement of the box.
    pub fn sup_distance_to_boundary(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&a, &b))| (v - a).min(b - v))
            .fold(f64::INFINITY, f64::min)
    }
}

impl std::fmt::Display for BoxDomain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        write!(f, "({}]..({}] {}", join(&self.lower), join(&self.upper), self.boundary)
    }
}
