//! Multi-scale certificates: the aliveness hierarchy behind sublinear
//! clusters and the goodness hierarchy behind transience.
//!
//! Both are evaluated on a sampled graph, cube by cube, with the recursion
//! running from the smallest cubes upwards.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clusters::{components_of_subset, preclusters};
use crate::config::Section;
use crate::domain::BoxDomain;
use crate::error::{param, Error, Result};
use crate::graph::GeoGraph;
use crate::kernels::{KernelSpec, RGrid};
use crate::regularity::is_mu_v_regular;

/// Grid of candidate `mu*` values.
pub const MU_STAR_GRID: [f64; 9] = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45];

/// Required gap below 2 of the estimated exponent at `mu*`.
pub const WEAK_DECAY_MARGIN: f64 = 0.05;

/// Added to the lower bound on `omega`.
pub const OMEGA_MARGIN: f64 = 0.05;

/// Largest clique size searched exhaustively.
pub const EXHAUSTIVE_CLIQUE_LIMIT: usize = 12;

const GREEDY_RESTARTS: usize = 64;

/// Density sequence: `c / (n + shift)^2`, or explicit values for `n = 1, 2, ...`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityRule {
    Rule { c: f64, shift: f64 },
    List { values: Vec<f64> },
}

impl DensityRule {
    fn value(&self, n: usize) -> Option<f64> {
        match self {
            DensityRule::Rule { c, shift } => Some(c / (n as f64 + shift).powi(2)),
            DensityRule::List { values } => values.get(n - 1).copied(),
        }
    }
}

/// Name of a violated parameter constraint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Constraint {
    /// Every density value must be below 1/4.
    DensityBelowQuarter,
    /// `rho_n n^2` must converge to a value in `(1, inf)`.
    DensityDecay,
    /// Scale factors must be odd.
    ScaleOdd,
    /// `n^omega <= sigma_n <= (1 + n^-2)^(1/d) n^omega` beyond the threshold.
    ScaleWindow,
    /// `1 < nu < 1/(1-mu*)`, and `nu < 2/delta_bar` when `delta_bar > 0`.
    NuRange,
    /// `mu = 1 - nu (1 - mu*)` and `0 < mu < mu*`.
    MuRelation,
    /// `omega > 2 nu / (d (nu - 1))`.
    OmegaBound,
    /// `omega > 2 / (d (1 - lambda))`.
    OmegaLambda,
    /// The stage-0 side must be an even integer.
    EllEven,
    /// `theta` must lie in `(0, 1]`.
    ThetaRange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: Constraint,
    pub message: String,
}

/// Parameters of the aliveness hierarchy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenormParams {
    pub dim: usize,
    pub ell: u64,
    pub k: f64,
    pub theta: f64,
    pub mu_star: f64,
    /// Estimated exponent at `mu*`, when known.
    pub delta_bar: Option<f64>,
    pub nu: f64,
    pub mu: f64,
    pub omega: f64,
    pub lambda: f64,
    pub density: DensityRule,
    /// `sigma_n` for `n = 1..=max_stage`.
    pub sigma: Vec<u64>,
    /// First stage from which the scale window is required to hold.
    pub window_threshold: Option<usize>,
    /// `rho_n` for `n = 1..=max_stage`.
    pub rho: Vec<f64>,
    /// `m_n` for `n = 0..=max_stage`.
    pub m: Vec<f64>,
    /// `v_n` for `n = 0..=max_stage`.
    pub v: Vec<f64>,
    /// `r_n` for `n = 1..=max_stage`.
    pub r: Vec<u64>,
}

/// Upper end of the admissible `nu` interval.
pub fn nu_upper(mu_star: f64, delta_bar: Option<f64>) -> f64 {
    let base = 1.0 / (1.0 - mu_star);
    match delta_bar {
        Some(db) if db > 0.0 => base.min(2.0 / db),
        _ => base,
    }
}

pub fn omega_lower(nu: f64, lambda: f64, dim: usize) -> (f64, f64) {
    let d = dim as f64;
    (2.0 * nu / (d * (nu - 1.0)), 2.0 / (d * (1.0 - lambda)))
}

fn smallest_odd_at_least(x: f64) -> Result<u64> {
    if !(x.is_finite() && x < 9.0e18) {
        return Err(Error::Resource(format!("scale factor {x} does not fit in 64 bits")));
    }
    let mut s = x.ceil().max(1.0) as u64;
    if s % 2 == 0 {
        s += 1;
    }
    Ok(s)
}

fn in_window(n: usize, sigma: u64, omega: f64, dim: usize) -> bool {
    let lo = (n as f64).powf(omega);
    let hi = (1.0 + (n as f64).powi(-2)).powf(1.0 / dim as f64) * lo;
    (sigma as f64) >= lo * (1.0 - 1e-12) && (sigma as f64) <= hi * (1.0 + 1e-12)
}

impl RenormParams {
    /// Fill in `rho`, `m`, `v` and `r` from the primary parameters.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        dim: usize,
        ell: u64,
        k: f64,
        theta: f64,
        mu_star: f64,
        delta_bar: Option<f64>,
        nu: f64,
        mu: f64,
        omega: f64,
        lambda: f64,
        density: DensityRule,
        sigma: Vec<u64>,
        window_threshold: Option<usize>,
    ) -> Result<Self> {
        if dim == 0 {
            return param("dimension must be at least 1");
        }
        if ell == 0 {
            return param("stage-0 side must be positive");
        }
        if !(k >= 0.0) {
            return param(format!("reach k must be non-negative, got {k}"));
        }
        let stages = sigma.len();
        let mut rho = Vec::with_capacity(stages);
        for n in 1..=stages {
            match density.value(n) {
                Some(x) if x > 0.0 && x.is_finite() => rho.push(x),
                Some(x) => return param(format!("density value {x} at stage {n} must be positive")),
                None => return param(format!("density list has no value for stage {n}")),
            }
        }
        let d = dim as i32;
        let mut m = vec![ell as f64];
        let mut side: u128 = ell as u128;
        let mut v = vec![theta / 2.0 * (ell as f64).powi(d)];
        let mut r = Vec::with_capacity(stages);
        let mut rho_prod = 1.0;
        for n in 1..=stages {
            let s = sigma[n - 1];
            if s == 0 {
                return param(format!("scale factor at stage {n} must be positive"));
            }
            side = side
                .checked_mul(s as u128)
                .ok_or_else(|| Error::Resource(format!("cube side overflows at stage {n}")))?;
            m.push(side as f64);
            rho_prod *= rho[n - 1];
            v.push(theta / 2.0 * (side as f64).powi(d) * rho_prod);
            let count = (rho[n - 1] * (s as f64).powi(d)).ceil();
            r.push(if count >= u64::MAX as f64 { u64::MAX } else { count as u64 });
        }
        Ok(RenormParams {
            dim,
            ell,
            k,
            theta,
            mu_star,
            delta_bar,
            nu,
            mu,
            omega,
            lambda,
            density,
            sigma,
            window_threshold,
            rho,
            m,
            v,
            r,
        })
    }

    /// A small parameter set that satisfies every constraint and is cheap to survey.
    pub fn desk_default(dim: usize) -> Result<Self> {
        let (mu_star, delta_bar, lambda) = (0.3, 1.5, 0.75);
        let nu = 9.0 / 7.0;
        let mu = 1.0 - nu * (1.0 - mu_star);
        let (a, b) = omega_lower(nu, lambda, dim);
        Self::assemble(
            dim,
            4,
            1.0,
            0.5,
            mu_star,
            Some(delta_bar),
            nu,
            mu,
            a.max(b) + OMEGA_MARGIN,
            lambda,
            DensityRule::Rule { c: 2.0, shift: 2.0 },
            vec![3, 3],
            None,
        )
    }

    /// Read a `renorm { ... }` section; unspecified values fall back to the desk default.
    pub fn from_section(section: &Section, dim: usize) -> Result<Self> {
        let base = Self::desk_default(dim)?;
        let f = |key: &str, default: f64| -> Result<f64> { Ok(section.get_f64(key)?.unwrap_or(default)) };
        let density = match section.get_f64_list("density")? {
            Some(values) => DensityRule::List { values },
            None => DensityRule::Rule { c: f("density_c", 2.0)?, shift: f("density_shift", 2.0)? },
        };
        let sigma = section.get_u64_list("sigma")?.unwrap_or_else(|| base.sigma.clone());
        let mu_star = f("mu_star", base.mu_star)?;
        let delta_bar = section.get_f64("delta_bar")?.or(base.delta_bar);
        let nu_default = if section.contains("mu_star") || section.contains("delta_bar") {
            0.5 * (1.0 + nu_upper(mu_star, delta_bar))
        } else {
            base.nu
        };
        let nu = f("nu", nu_default)?;
        let lambda = f("lambda", base.lambda)?;
        let (a, b) = omega_lower(nu, lambda, dim);
        Self::assemble(
            dim,
            section.get_u64("ell")?.unwrap_or(base.ell),
            f("k", base.k)?,
            f("theta", base.theta)?,
            mu_star,
            delta_bar,
            nu,
            f("mu", 1.0 - nu * (1.0 - mu_star))?,
            f("omega", a.max(b) + OMEGA_MARGIN)?,
            lambda,
            density,
            sigma,
            section.get_usize("window_threshold")?,
        )
    }

    pub fn max_stage(&self) -> usize {
        self.sigma.len()
    }

    /// Side of a stage-`n` cube.
    pub fn side(&self, n: usize) -> f64 {
        self.m[n]
    }

    /// Required regular size at stage `n`, rounded up.
    pub fn v_required(&self, n: usize) -> usize {
        (self.v[n] - 1e-9).ceil().max(1.0) as usize
    }

    pub fn stage0_threshold(&self) -> usize {
        ((self.ell as f64).powi(self.dim as i32) * self.theta / 2.0 - 1e-9).ceil().max(0.0) as usize
    }

    /// Every violated constraint, by name.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |constraint, message: String| out.push(Violation { constraint, message });
        for (i, &x) in self.rho.iter().enumerate() {
            if x >= 0.25 {
                push(Constraint::DensityBelowQuarter, format!("rho_{} = {x} is not below 1/4", i + 1));
            }
        }
        if let DensityRule::Rule { c, .. } = self.density {
            if !(c > 1.0 && c.is_finite()) {
                push(Constraint::DensityDecay, format!("rho_n n^2 tends to {c}, outside (1, inf)"));
            }
        }
        for (i, &s) in self.sigma.iter().enumerate() {
            let n = i + 1;
            if s % 2 == 0 {
                push(Constraint::ScaleOdd, format!("sigma_{n} = {s} is even"));
            }
            if self.window_threshold.is_some_and(|t| n >= t) && !in_window(n, s, self.omega, self.dim) {
                push(Constraint::ScaleWindow, format!("sigma_{n} = {s} lies outside the window at omega = {}", self.omega));
            }
        }
        let upper = nu_upper(self.mu_star, self.delta_bar);
        if !(self.nu > 1.0 && self.nu < upper) {
            push(Constraint::NuRange, format!("nu = {} outside (1, {upper})", self.nu));
        }
        let expect = 1.0 - self.nu * (1.0 - self.mu_star);
        if (self.mu - expect).abs() > 1e-9 || !(self.mu > 0.0 && self.mu < self.mu_star) {
            push(
                Constraint::MuRelation,
                format!("mu = {} but 1 - nu (1 - mu*) = {expect} with mu* = {}", self.mu, self.mu_star),
            );
        }
        let (a, b) = omega_lower(self.nu, self.lambda, self.dim);
        if !(self.omega > a) {
            push(Constraint::OmegaBound, format!("omega = {} is not above 2 nu / (d (nu - 1)) = {a}", self.omega));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) || !(self.omega > b) {
            push(Constraint::OmegaLambda, format!("omega = {} is not above 2 / (d (1 - lambda)) = {b}", self.omega));
        }
        if self.ell % 2 != 0 {
            push(Constraint::EllEven, format!("ell = {} is odd", self.ell));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            push(Constraint::ThetaRange, format!("theta = {} outside (0, 1]", self.theta));
        }
        out
    }
}

/// Default grid for exponent estimates inside [`derive_params`].
pub fn default_r_grid() -> RGrid {
    RGrid { start: 100.0, ratio: 4.0, count: 6 }
}

/// Choose the whole parameter system from a kernel.
#[allow(clippy::too_many_arguments)]
pub fn derive_params(
    kernel: &KernelSpec,
    theta: f64,
    lambda: f64,
    ell: u64,
    k: f64,
    max_stage: usize,
) -> Result<RenormParams> {
    derive_params_on(kernel, theta, lambda, ell, k, max_stage, &default_r_grid())
}

#[allow(clippy::too_many_arguments)]
pub fn derive_params_on(
    kernel: &KernelSpec,
    theta: f64,
    lambda: f64,
    ell: u64,
    k: f64,
    max_stage: usize,
    grid: &RGrid,
) -> Result<RenormParams> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return param(format!("lambda must lie in (0, 1), got {lambda}"));
    }
    let dim = kernel.dim;
    let mut chosen = None;
    let mut seen = Vec::new();
    for &mu in &MU_STAR_GRID {
        let est = kernel.estimate_delta_eff(mu, grid)?;
        seen.push(format!("{mu}: {:.4}", est.slope));
        if est.slope < 2.0 - WEAK_DECAY_MARGIN {
            chosen = Some((mu, est.slope));
            break;
        }
    }
    let Some((mu_star, delta_bar)) = chosen else {
        return Err(Error::NotWeakDecay(format!("estimated exponents {}", seen.join(", "))));
    };
    let nu = 0.5 * (1.0 + nu_upper(mu_star, Some(delta_bar)));
    let mu = 1.0 - nu * (1.0 - mu_star);
    let (a, b) = omega_lower(nu, lambda, dim);
    let omega = a.max(b) + OMEGA_MARGIN;
    let mut sigma = Vec::with_capacity(max_stage);
    let mut threshold = None;
    for n in 1..=max_stage {
        let s = smallest_odd_at_least((n as f64).powf(omega))?;
        if in_window(n, s, omega, dim) {
            threshold.get_or_insert(n);
        } else {
            threshold = None;
        }
        sigma.push(s);
    }
    RenormParams::assemble(
        dim,
        ell,
        k,
        theta,
        mu_star,
        Some(delta_bar),
        nu,
        mu,
        omega,
        lambda,
        DensityRule::Rule { c: 2.0, shift: 2.0 },
        sigma,
        threshold,
    )
}

/// Parameters of the goodness hierarchy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransienceParams {
    pub dim: usize,
    pub n1: usize,
    pub lambda: f64,
    pub mu: f64,
    /// `alpha_n` for `n = 1..=max_stage`.
    pub alpha: Vec<u64>,
    /// `sigma_n` for `n = 1..=max_stage`.
    pub sigma: Vec<u64>,
}

/// Midpoint of `(max(1/2, 1/nu), 1)`.
pub fn transience_lambda(nu: f64) -> f64 {
    0.5 * (0.5f64.max(1.0 / nu) + 1.0)
}

impl TransienceParams {
    /// `alpha_n = ceil((n+1)^(2 lambda d))`, `sigma_n = (n+1)^2`.
    pub fn new(dim: usize, lambda: f64, mu: f64, n1: usize, max_stage: usize) -> Result<Self> {
        let d = dim as f64;
        let alpha = (1..=max_stage).map(|n| ((n as f64 + 1.0).powf(2.0 * lambda * d)).ceil() as u64).collect();
        let sigma = (1..=max_stage).map(|n| ((n + 1) * (n + 1)) as u64).collect();
        Self::custom(dim, lambda, mu, n1, alpha, sigma)
    }

    pub fn custom(dim: usize, lambda: f64, mu: f64, n1: usize, alpha: Vec<u64>, sigma: Vec<u64>) -> Result<Self> {
        if dim == 0 {
            return param("dimension must be at least 1");
        }
        if n1 == 0 {
            return param("the starting stage must be at least 1");
        }
        if !(mu > 0.0 && mu < 0.5) {
            return param(format!("mu must lie in (0, 1/2), got {mu}"));
        }
        if alpha.len() != sigma.len() || alpha.len() < n1 {
            return param("alpha and sigma need one entry per stage up to at least n1");
        }
        if alpha.contains(&0) || sigma.contains(&0) {
            return param("alpha and sigma entries must be positive");
        }
        Ok(TransienceParams { dim, n1, lambda, mu, alpha, sigma })
    }

    /// Derive from an aliveness parameter set, with `lambda` from [`transience_lambda`].
    pub fn from_renorm(p: &RenormParams, n1: usize, max_stage: usize) -> Result<Self> {
        Self::new(p.dim, transience_lambda(p.nu), p.mu, n1, max_stage)
    }

    pub fn max_stage(&self) -> usize {
        self.sigma.len()
    }

    pub fn alpha(&self, n: usize) -> u64 {
        self.alpha[n - 1]
    }

    /// `prod_{i<=n} alpha_i`, saturating.
    pub fn alpha_product(&self, n: usize) -> u64 {
        self.alpha[..n].iter().fold(1u64, |a, &b| a.saturating_mul(b))
    }

    /// `prod_{i<=n} sigma_i`.
    pub fn side(&self, n: usize) -> f64 {
        self.sigma[..n].iter().map(|&s| s as f64).product()
    }
}

/// Centres of the `sigma^d` subcubes of side `sub` of the cube at `center`.
pub fn subcube_centers(center: &[f64], sigma: u64, sub: f64) -> Vec<Vec<f64>> {
    let d = center.len();
    let half = (sigma as f64 - 1.0) / 2.0;
    let total = (sigma as usize).pow(d as u32);
    (0..total)
        .map(|mut idx| {
            (0..d)
                .map(|axis| {
                    let j = idx % sigma as usize;
                    idx /= sigma as usize;
                    center[axis] + (j as f64 - half) * sub
                })
                .collect()
        })
        .collect()
}

/// For each set, the indices of other sets joined to it by an edge.
/// Sets carrying the same group label are never adjacent.
fn set_adjacency(graph: &GeoGraph, sets: &[&[usize]], group: &[usize]) -> Vec<Vec<bool>> {
    // Sets may overlap, so a vertex can have several owners.
    let mut owner: HashMap<usize, Vec<usize>> = HashMap::new();
    for (s, set) in sets.iter().enumerate() {
        for &v in *set {
            owner.entry(v).or_default().push(s);
        }
    }
    let n = sets.len();
    let mut adj = vec![vec![false; n]; n];
    for (s, set) in sets.iter().enumerate() {
        for &v in *set {
            for w in graph.neighbors(v) {
                for &t in owner.get(w).map(Vec::as_slice).unwrap_or(&[]) {
                    if t != s && group[t] != group[s] {
                        adj[s][t] = true;
                        adj[t][s] = true;
                    }
                }
            }
        }
    }
    adj
}

fn extend_clique(adj: &[Vec<bool>], r: usize, current: &mut Vec<usize>, candidates: &[usize]) -> bool {
    if current.len() >= r {
        return true;
    }
    if current.len() + candidates.len() < r {
        return false;
    }
    for (i, &c) in candidates.iter().enumerate() {
        let next: Vec<usize> = candidates[i + 1..].iter().copied().filter(|&x| adj[c][x]).collect();
        current.push(c);
        if extend_clique(adj, r, current, &next) {
            return true;
        }
        current.pop();
        if current.len() + candidates.len() - i - 1 < r {
            return false;
        }
    }
    false
}

/// Search for a clique of size `r`. Returns the clique (if found) and
/// whether the search was only heuristic.
pub fn find_clique(adj: &[Vec<bool>], r: usize) -> (Option<Vec<usize>>, bool) {
    let n = adj.len();
    if r == 0 {
        return (Some(Vec::new()), false);
    }
    if r <= EXHAUSTIVE_CLIQUE_LIMIT {
        let all: Vec<usize> = (0..n).collect();
        let mut cur = Vec::new();
        let found = extend_clique(adj, r, &mut cur, &all);
        return (found.then_some(cur), false);
    }
    let degree: Vec<usize> = adj.iter().map(|row| row.iter().filter(|&&b| b).count()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(degree[i]));
    for &start in order.iter().take(GREEDY_RESTARTS) {
        let mut clique = vec![start];
        let mut cand: Vec<usize> = (0..n).filter(|&x| adj[start][x]).collect();
        while !cand.is_empty() {
            let &best = cand
                .iter()
                .max_by_key(|&&c| (cand.iter().filter(|&&x| adj[c][x]).count(), std::cmp::Reverse(c)))
                .unwrap();
            clique.push(best);
            cand.retain(|&x| x != best && adj[best][x]);
        }
        if clique.len() >= r {
            clique.truncate(r);
            return (Some(clique), true);
        }
    }
    (None, true)
}

/// All maximal cliques (Bron-Kerbosch with pivoting).
pub fn maximal_cliques(adj: &[Vec<bool>]) -> Vec<Vec<usize>> {
    fn bk(adj: &[Vec<bool>], r: &mut Vec<usize>, p: Vec<usize>, x: Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if p.is_empty() && x.is_empty() {
            let mut c = r.clone();
            c.sort_unstable();
            out.push(c);
            return;
        }
        let pivot = *p
            .iter()
            .chain(&x)
            .max_by_key(|&&u| p.iter().filter(|&&w| adj[u][w]).count())
            .unwrap();
        let mut p = p;
        let mut x = x;
        for v in p.clone().into_iter().filter(|&v| !adj[pivot][v]) {
            r.push(v);
            let np = p.iter().copied().filter(|&w| adj[v][w]).collect();
            let nx = x.iter().copied().filter(|&w| adj[v][w]).collect();
            bk(adj, r, np, nx, out);
            r.pop();
            p.retain(|&w| w != v);
            x.push(v);
        }
    }
    let mut out = Vec::new();
    if adj.is_empty() {
        return out;
    }
    bk(adj, &mut Vec::new(), (0..adj.len()).collect(), Vec::new(), &mut out);
    out.sort();
    out
}

/// Whether there are `a` sets on the left and `a` sets on the right, each
/// side drawn from distinct groups, with every left-right pair adjacent.
pub fn has_biclique(adj: &[Vec<bool>], left: &[(usize, usize)], right: &[(usize, usize)], a: usize) -> bool {
    // (node, group) pairs; adjacency indexed by node.
    fn distinct_groups(items: &[(usize, usize)]) -> usize {
        items.iter().map(|x| x.1).collect::<BTreeSet<_>>().len()
    }
    fn search(
        adj: &[Vec<bool>],
        left: &[(usize, usize)],
        start: usize,
        chosen_groups: &mut Vec<usize>,
        common: Vec<(usize, usize)>,
        a: usize,
    ) -> bool {
        if distinct_groups(&common) < a {
            return false;
        }
        if chosen_groups.len() == a {
            return true;
        }
        for i in start..left.len() {
            let (node, g) = left[i];
            if chosen_groups.contains(&g) {
                continue;
            }
            let next: Vec<(usize, usize)> = common.iter().copied().filter(|&(m, _)| adj[node][m]).collect();
            chosen_groups.push(g);
            if search(adj, left, i + 1, chosen_groups, next, a) {
                return true;
            }
            chosen_groups.pop();
        }
        false
    }
    if a == 0 {
        return true;
    }
    if distinct_groups(left) < a {
        return false;
    }
    search(adj, left, 0, &mut Vec::new(), right.to_vec(), a)
}

/// Outcome of the aliveness test for one cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AliveOutcome {
    pub stage: usize,
    pub center: Vec<f64>,
    pub alive: bool,
    /// Living subcubes (A).
    pub living: usize,
    /// Living subcubes holding a regular precluster (B).
    pub regular_living: usize,
    /// Whether a clique of size `r_n` was found (C).
    pub clique: bool,
    /// The clique search was heuristic, so `clique = false` is inconclusive.
    pub lower_bound_only: bool,
    /// The reach region of this cube left the domain.
    pub clipped: bool,
    pub witness: Vec<usize>,
    /// This cube's preclusters that are `(mu, v_n)`-regular.
    #[serde(skip)]
    pub regular: Vec<Vec<usize>>,
    #[serde(skip)]
    pub children: Vec<AliveOutcome>,
}

fn cube_at(center: &[f64], side: f64) -> BoxDomain {
    BoxDomain::cube(center, side).expect("cube side is finite and non-negative")
}

fn largest_by_size_then_mark(graph: &GeoGraph, sets: &[Vec<usize>]) -> Vec<usize> {
    sets.iter()
        .max_by(|a, b| {
            let ma = a.iter().map(|&v| graph.mark(v)).fold(f64::INFINITY, f64::min);
            let mb = b.iter().map(|&v| graph.mark(v)).fold(f64::INFINITY, f64::min);
            a.len().cmp(&b.len()).then(mb.total_cmp(&ma))
        })
        .cloned()
        .unwrap_or_default()
}

fn regular_sets(graph: &GeoGraph, sets: &[Vec<usize>], mu: f64, v: usize) -> Vec<Vec<usize>> {
    sets.iter()
        .filter(|s| {
            let marks: Vec<f64> = s.iter().map(|&i| graph.mark(i)).collect();
            is_mu_v_regular(&marks, mu, v)
        })
        .cloned()
        .collect()
}

/// Stage-0 test: some precluster has at least `ceil(ell^d theta / 2)` vertices.
pub fn stage0_alive(graph: &GeoGraph, center: &[f64], params: &RenormParams) -> AliveOutcome {
    let cube = cube_at(center, params.side(0));
    let pc = preclusters(graph, &cube, params.k);
    let best = largest_by_size_then_mark(graph, &pc.sets);
    let alive = !best.is_empty() && best.len() >= params.stage0_threshold();
    AliveOutcome {
        stage: 0,
        center: center.to_vec(),
        alive,
        living: 0,
        regular_living: 0,
        clique: false,
        lower_bound_only: false,
        clipped: pc.clipped,
        witness: if alive { best } else { Vec::new() },
        regular: regular_sets(graph, &pc.sets, params.mu, params.v_required(0)),
        children: Vec::new(),
    }
}

/// Aliveness of the stage-`n` cube at `center`, subcubes evaluated recursively.
pub fn stage_alive(graph: &GeoGraph, center: &[f64], n: usize, params: &RenormParams) -> Result<AliveOutcome> {
    if n > params.max_stage() {
        return param(format!("stage {n} exceeds the {} stored stages", params.max_stage()));
    }
    if n == 0 {
        return Ok(stage0_alive(graph, center, params));
    }
    let centers = subcube_centers(center, params.sigma[n - 1], params.side(n - 1));
    let children: Vec<AliveOutcome> = centers
        .par_iter()
        .map(|c| stage_alive(graph, c, n - 1, params))
        .collect::<Result<_>>()?;
    Ok(combine_alive(graph, center, n, params, children))
}

fn combine_alive(graph: &GeoGraph, center: &[f64], n: usize, params: &RenormParams, children: Vec<AliveOutcome>) -> AliveOutcome {
    let r = params.r[n - 1] as usize;
    let living = children.iter().filter(|c| c.alive).count();
    let regular_living = children.iter().filter(|c| c.alive && !c.regular.is_empty()).count();
    let cube = cube_at(center, params.side(n));
    let pc = preclusters(graph, &cube, params.k);
    let mut outcome = AliveOutcome {
        stage: n,
        center: center.to_vec(),
        alive: false,
        living,
        regular_living,
        clique: false,
        lower_bound_only: false,
        clipped: pc.clipped,
        witness: Vec::new(),
        regular: regular_sets(graph, &pc.sets, params.mu, params.v_required(n)),
        children: Vec::new(),
    };
    if living >= r && regular_living >= r {
        let mut sets: Vec<&[usize]> = Vec::new();
        let mut group = Vec::new();
        for (i, c) in children.iter().enumerate() {
            for s in &c.regular {
                sets.push(s);
                group.push(i);
            }
        }
        let adj = set_adjacency(graph, &sets, &group);
        let (found, heuristic) = find_clique(&adj, r);
        outcome.lower_bound_only = heuristic && found.is_none();
        if let Some(clique) = found {
            outcome.clique = true;
            outcome.alive = true;
            let anchor = sets[clique[0]][0];
            outcome.witness = pc.sets.iter().find(|s| s.contains(&anchor)).cloned().unwrap_or_default();
            debug_assert!(outcome.witness.len() as f64 >= params.v[n] - 1e-9);
        }
    }
    outcome.children = children;
    outcome
}

/// Outcome of the goodness test for one cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodOutcome {
    pub stage: usize,
    pub center: Vec<f64>,
    pub good: bool,
    pub lower_bound_only: bool,
    /// The renormalised clusters of this cube.
    pub clusters: Vec<Vec<usize>>,
    #[serde(skip)]
    pub children: Vec<GoodOutcome>,
}

fn is_regular_set(graph: &GeoGraph, set: &[usize], mu: f64, v: u64) -> bool {
    if v > set.len() as u64 {
        return false;
    }
    let marks: Vec<f64> = set.iter().map(|&i| graph.mark(i)).collect();
    is_mu_v_regular(&marks, mu, v as usize)
}

fn dedup_sets(mut sets: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    for s in sets.iter_mut() {
        s.sort_unstable();
    }
    sets.sort();
    sets.dedup();
    sets
}

/// Goodness of the stage-`n` cube at `center` (`n >= n1`).
pub fn stage_good(graph: &GeoGraph, center: &[f64], n: usize, tp: &TransienceParams) -> Result<GoodOutcome> {
    if n < tp.n1 || n > tp.max_stage() {
        return param(format!("stage {n} outside {}..={}", tp.n1, tp.max_stage()));
    }
    let side = tp.side(n);
    let cube = cube_at(center, side);
    let need = tp.alpha_product(n);
    if n == tp.n1 {
        let inside = graph.vertices_in_box(&cube);
        let part = components_of_subset(graph, &inside);
        let clusters: Vec<Vec<usize>> = part
            .groups()
            .into_iter()
            .map(|g| g.into_iter().map(|p| inside[p]).collect::<Vec<usize>>())
            .filter(|c| is_regular_set(graph, c, tp.mu, need))
            .collect();
        return Ok(GoodOutcome {
            stage: n,
            center: center.to_vec(),
            good: !clusters.is_empty(),
            lower_bound_only: false,
            clusters,
            children: Vec::new(),
        });
    }
    let centers = subcube_centers(center, tp.sigma[n - 1], tp.side(n - 1));
    let children: Vec<GoodOutcome> =
        centers.par_iter().map(|c| stage_good(graph, c, n - 1, tp)).collect::<Result<_>>()?;
    let alpha = tp.alpha(n) as usize;
    let mut clusters = Vec::new();
    if n == tp.n1 + 1 {
        let mut sets: Vec<&[usize]> = Vec::new();
        let mut group = Vec::new();
        for (i, c) in children.iter().enumerate() {
            for s in &c.clusters {
                sets.push(s);
                group.push(i);
            }
        }
        let adj = set_adjacency(graph, &sets, &group);
        for clique in maximal_cliques(&adj).into_iter().filter(|c| c.len() >= alpha) {
            let union: Vec<usize> = clique.iter().flat_map(|&i| sets[i].iter().copied()).collect();
            if is_regular_set(graph, &union, tp.mu, need) {
                clusters.push(union);
            }
        }
    } else {
        // Pools of (n-2)-clusters of each good subcube, tagged by grandchild.
        let a = tp.alpha(n - 2) as usize;
        let good: Vec<usize> = (0..children.len()).filter(|&i| children[i].good).collect();
        let mut sets: Vec<&[usize]> = Vec::new();
        let mut group = Vec::new();
        let mut pool: Vec<Vec<(usize, usize)>> = Vec::new();
        let mut grand = 0usize;
        for &i in &good {
            let mut p = Vec::new();
            for gc in &children[i].children {
                for s in &gc.clusters {
                    p.push((sets.len(), grand));
                    sets.push(s);
                    group.push(grand);
                }
                grand += 1;
            }
            pool.push(p);
        }
        let adj = set_adjacency(graph, &sets, &group);
        let g = good.len();
        let mut wc = vec![vec![false; g]; g];
        for x in 0..g {
            for y in x + 1..g {
                let ok = has_biclique(&adj, &pool[x], &pool[y], a);
                wc[x][y] = ok;
                wc[y][x] = ok;
            }
        }
        for family in maximal_cliques(&wc).into_iter().filter(|c| c.len() >= alpha) {
            let vertices: Vec<usize> = family
                .iter()
                .flat_map(|&x| pool[x].iter().flat_map(|p| sets[p.0].iter().copied()))
                .collect::<BTreeSet<usize>>()
                .into_iter()
                .collect();
            for c in components_of_subset(graph, &vertices).groups() {
                let c: Vec<usize> = c.into_iter().map(|p| vertices[p]).collect();
                if is_regular_set(graph, &c, tp.mu, need) {
                    clusters.push(c);
                }
            }
        }
    }
    let clusters = dedup_sets(clusters);
    Ok(GoodOutcome { stage: n, center: center.to_vec(), good: !clusters.is_empty(), lower_bound_only: false, clusters, children })
}

/// One evaluated cube in a survey.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeRecord {
    pub stage: usize,
    pub center: Vec<f64>,
    pub passed: bool,
    pub witness_size: usize,
    pub clipped: bool,
    pub lower_bound_only: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: usize,
    pub examined: usize,
    pub passed: usize,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenormReport {
    /// `alive` or `good`.
    pub kind: String,
    pub max_stage: usize,
    pub records: Vec<CubeRecord>,
    pub stages: Vec<StageSummary>,
}

impl RenormReport {
    fn from_records(kind: &str, max_stage: usize, first: usize, mut records: Vec<CubeRecord>) -> Self {
        records.sort_by(|a, b| {
            a.stage.cmp(&b.stage).then_with(|| {
                a.center.iter().zip(&b.center).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        let stages = (first..=max_stage)
            .map(|s| {
                let examined = records.iter().filter(|r| r.stage == s).count();
                let passed = records.iter().filter(|r| r.stage == s && r.passed).count();
                let fraction = if examined == 0 { 0.0 } else { passed as f64 / examined as f64 };
                StageSummary { stage: s, examined, passed, fraction }
            })
            .collect();
        RenormReport { kind: kind.to_string(), max_stage, records, stages }
    }

    pub fn fraction(&self, stage: usize) -> Option<f64> {
        self.stages.iter().find(|s| s.stage == stage).map(|s| s.fraction)
    }

    /// One JSON object per evaluated cube, then one per stage summary.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serialises"));
            out.push('\n');
        }
        for s in &self.stages {
            out.push_str(&serde_json::to_string(&serde_json::json!({ "summary": s })).expect("summary serialises"));
            out.push('\n');
        }
        out
    }
}

/// Centres on `side * Z^d` whose cube lies inside `domain`.
pub fn cube_centers_inside(domain: &BoxDomain, side: f64) -> Vec<Vec<f64>> {
    let d = domain.dim();
    let ranges: Vec<(i64, i64)> = (0..d)
        .map(|a| {
            let lo = ((domain.lower()[a] + side / 2.0) / side - 1e-9).ceil() as i64;
            let hi = ((domain.upper()[a] - side / 2.0) / side + 1e-9).floor() as i64;
            (lo, hi)
        })
        .collect();
    let mut out = Vec::new();
    if ranges.iter().any(|(lo, hi)| lo > hi) {
        return out;
    }
    let mut idx: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    loop {
        out.push(idx.iter().map(|&j| j as f64 * side).collect());
        let mut a = 0;
        loop {
            if a == d {
                return out;
            }
            idx[a] += 1;
            if idx[a] <= ranges[a].1 {
                break;
            }
            idx[a] = ranges[a].0;
            a += 1;
        }
    }
}

fn flatten_alive(o: &AliveOutcome, out: &mut Vec<CubeRecord>) {
    out.push(CubeRecord {
        stage: o.stage,
        center: o.center.clone(),
        passed: o.alive,
        witness_size: o.witness.len(),
        clipped: o.clipped,
        lower_bound_only: o.lower_bound_only,
    });
    for c in &o.children {
        flatten_alive(c, out);
    }
}

fn flatten_good(o: &GoodOutcome, out: &mut Vec<CubeRecord>) {
    out.push(CubeRecord {
        stage: o.stage,
        center: o.center.clone(),
        passed: o.good,
        witness_size: o.clusters.iter().map(|c| c.len()).max().unwrap_or(0),
        clipped: false,
        lower_bound_only: o.lower_bound_only,
    });
    for c in &o.children {
        flatten_good(c, out);
    }
}

/// Aliveness of every stage-`max_stage` cube inside the graph's domain and of all their subcubes.
pub fn survey_alive(graph: &GeoGraph, params: &RenormParams, max_stage: usize) -> Result<RenormReport> {
    if max_stage > params.max_stage() {
        return param(format!("stage {max_stage} exceeds the {} stored stages", params.max_stage()));
    }
    let tops = cube_centers_inside(graph.domain(), params.side(max_stage));
    if tops.is_empty() {
        return param(format!("domain {} holds no stage-{max_stage} cube", graph.domain()));
    }
    let outcomes: Vec<AliveOutcome> =
        tops.par_iter().map(|c| stage_alive(graph, c, max_stage, params)).collect::<Result<_>>()?;
    let mut records = Vec::new();
    for o in &outcomes {
        flatten_alive(o, &mut records);
    }
    Ok(RenormReport::from_records("alive", max_stage, 0, records))
}

/// Goodness of every stage-`max_stage` cube inside the graph's domain and of all their subcubes.
pub fn survey_good(graph: &GeoGraph, tp: &TransienceParams, max_stage: usize) -> Result<RenormReport> {
    if max_stage < tp.n1 || max_stage > tp.max_stage() {
        return param(format!("stage {max_stage} outside {}..={}", tp.n1, tp.max_stage()));
    }
    let tops = cube_centers_inside(graph.domain(), tp.side(max_stage));
    if tops.is_empty() {
        return param(format!("domain {} holds no stage-{max_stage} cube", graph.domain()));
    }
    let outcomes: Vec<GoodOutcome> =
        tops.par_iter().map(|c| stage_good(graph, c, max_stage, tp)).collect::<Result<_>>()?;
    let mut records = Vec::new();
    for o in &outcomes {
        flatten_good(o, &mut records);
    }
    Ok(RenormReport::from_records("good", max_stage, tp.n1, records))
}
