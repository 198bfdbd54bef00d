//! mu-regularity of mark collections, the two large-deviation bounds built
//! on it, and Monte Carlo harnesses for both.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{param, Error, Result};
use crate::kernels::KernelSpec;
use crate::rng::{open_unit, Purpose, StreamKey};

/// Constant used in the connection bound unless the caller overrides it.
pub const DEFAULT_C: f64 = 1.0 / 9.0;

/// Rejection attempts allowed per regular mark set.
pub const DEFAULT_RETRY_BUDGET: usize = 10_000;

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu < 0.5 {
        Ok(())
    } else {
        param(format!("mu must lie in (0, 1/2), got {mu}"))
    }
}

/// `|I(mu, M)| = floor(n^(1-mu))`, robust to rounding at perfect powers.
pub fn index_count(n: usize, mu: f64) -> usize {
    ((n as f64).powf(1.0 - mu) * (1.0 + 1e-12)).floor() as usize
}

/// Counting state for the regularity test: `counts[i]` holds the number of
/// values in `((i-1)/I, i/I]`.
struct Buckets {
    counts: Vec<u64>,
    index: usize,
}

impl Buckets {
    fn new(n: usize, mu: f64) -> Self {
        let index = index_count(n, mu).max(1);
        Buckets { counts: vec![0; index + 1], index }
    }

    #[inline]
    fn add(&mut self, s: f64) {
        let i = self.index;
        let fi = i as f64;
        let mut b = ((s * fi).ceil() as usize).clamp(1, i);
        while b > 1 && s <= (b - 1) as f64 / fi {
            b -= 1;
        }
        while b < i && s > b as f64 / fi {
            b += 1;
        }
        if s <= b as f64 / fi {
            self.counts[b] += 1;
        }
    }

    /// Whether `2 I N_i >= n i` for every `i` in `1..=I`.
    fn regular(&self, n: usize) -> bool {
        let big_i = self.index as u128;
        let mut cum: u128 = 0;
        for i in 1..=self.index {
            cum += self.counts[i] as u128;
            if 2 * big_i * cum < n as u128 * i as u128 {
                return false;
            }
        }
        true
    }
}

/// The regularity condition on a plain slice of marks (`mu` unchecked).
pub fn is_regular_slice(values: &[f64], mu: f64) -> bool {
    if values.is_empty() {
        return false;
    }
    let mut b = Buckets::new(values.len(), mu);
    for &s in values {
        b.add(s);
    }
    b.regular(values.len())
}

/// Whether some `v` of the given marks form a mu-regular collection.
///
/// The `v` smallest marks maximise every count `N_i`, so testing them alone
/// decides the question exactly.
pub fn is_mu_v_regular(marks: &[f64], mu: f64, v: usize) -> bool {
    if v == 0 || marks.len() < v {
        return false;
    }
    let mut m = marks.to_vec();
    if v < m.len() {
        m.select_nth_unstable_by(v - 1, |a, b| a.total_cmp(b));
        m.truncate(v);
    }
    is_regular_slice(&m, mu)
}

/// A non-empty collection of marks in `(0, 1)` with a regularity exponent.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkCollection {
    values: Vec<f64>,
    mu: f64,
}

impl MarkCollection {
    pub fn new(values: Vec<f64>, mu: f64) -> Result<Self> {
        check_mu(mu)?;
        if values.is_empty() {
            return param("mark collection must not be empty");
        }
        if let Some(s) = values.iter().find(|&&s| !(s > 0.0 && s < 1.0)) {
            return param(format!("mark {s} outside (0, 1)"));
        }
        Ok(MarkCollection { values, mu })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn index_count(&self) -> usize {
        index_count(self.values.len(), self.mu)
    }

    /// `N_i(M)` for `i = 1..=|I|` (entry 0 is `N_0 = 0`).
    pub fn counts(&self) -> Vec<u64> {
        let mut b = Buckets::new(self.values.len(), self.mu);
        for &s in &self.values {
            b.add(s);
        }
        let mut acc = 0;
        b.counts
            .iter()
            .map(|c| {
                acc += c;
                acc
            })
            .collect()
    }

    pub fn is_mu_regular(&self) -> bool {
        is_regular_slice(&self.values, self.mu)
    }
}

/// `n^(1-mu) exp(-n^mu / 8)`, the failure term of the regularity bound.
pub fn regularity_failure_term(n: usize, mu: f64) -> f64 {
    let n = n as f64;
    n.powf(1.0 - mu) * (-n.powf(mu) / 8.0).exp()
}

/// `1 - n^(1-mu) exp(-n^mu / 8)`; non-positive values are vacuous.
pub fn regularity_bound(n: usize, mu: f64) -> f64 {
    1.0 - regularity_failure_term(n, mu)
}

/// `1 - exp(-C v^2 ∫∫ phi(s, t, D))` over `[a, 1-a]^2`, `a = v^(-(1-mu))`.
pub fn connection_bound(kernel: &KernelSpec, v: usize, mu: f64, distance: f64, c: f64) -> Result<f64> {
    check_mu(mu)?;
    if v == 0 {
        return param("v must be positive");
    }
    if !(c > 0.0) {
        return param(format!("C must be positive, got {c}"));
    }
    if !(distance >= 0.0) {
        return param(format!("distance must be non-negative, got {distance}"));
    }
    let a = (v as f64).powf(-(1.0 - mu));
    if !(a < 0.5) {
        return param(format!("integration bounds cross: v^(-(1-mu)) = {a} >= 1/2"));
    }
    let integral = kernel.mark_integral_between(a, 1.0 - a, distance)?;
    let x = c * (v as f64).powi(2) * integral;
    Ok(if x.is_infinite() { 1.0 } else { -(-x).exp_m1() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma: String,
    pub params: serde_json::Value,
    pub bound: f64,
    pub empirical: f64,
    pub sigma: f64,
    pub pass: bool,
    pub vacuous: bool,
    /// Mean of the exact per-trial connection probabilities, when known.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub exact: Option<f64>,
}

impl LemmaReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serialises")
    }
}

/// Draw `trials` collections of `n` uniforms and count non-regular ones.
pub fn mc_check_regularity(n: usize, mu: f64, trials: usize, seed: u64) -> Result<LemmaReport> {
    check_mu(mu)?;
    if n == 0 {
        return param("n must be positive");
    }
    if trials < 100 {
        return param(format!("at least 100 trials are required, got {trials}"));
    }
    let key = StreamKey::new(seed, Purpose::Trial);
    let failures = (0..trials)
        .into_par_iter()
        .filter(|&t| {
            let mut rng = key.with(t as u64).stream();
            let mut b = Buckets::new(n, mu);
            for _ in 0..n {
                b.add(open_unit(&mut rng));
            }
            !b.regular(n)
        })
        .count();
    let bound = regularity_bound(n, mu);
    let q = regularity_failure_term(n, mu).min(1.0);
    let sigma = (q * (1.0 - q) / trials as f64).sqrt();
    let rate = failures as f64 / trials as f64;
    let vacuous = bound <= 0.0;
    Ok(LemmaReport {
        lemma: "regularity".into(),
        params: json!({ "n": n, "mu": mu, "trials": trials, "seed": seed, "failures": failures }),
        bound,
        empirical: rate,
        sigma,
        pass: vacuous || rate <= q + 3.0 * sigma,
        vacuous,
        exact: None,
    })
}

fn regular_sample<R: rand::RngCore>(rng: &mut R, v: usize, mu: f64, budget: usize) -> Result<Vec<f64>> {
    for _ in 0..budget {
        let m: Vec<f64> = (0..v).map(|_| open_unit(rng)).collect();
        if is_regular_slice(&m, mu) {
            return Ok(m);
        }
    }
    Err(Error::Resource(format!("no {mu}-regular sample of size {v} within {budget} attempts")))
}

/// Connection frequency of two independent regular mark sets of size `v`
/// with every pair at distance `distance`.
pub fn mc_check_connection(
    kernel: &KernelSpec,
    v: usize,
    mu: f64,
    distance: f64,
    trials: usize,
    seed: u64,
) -> Result<LemmaReport> {
    mc_check_connection_with(kernel, v, mu, distance, trials, seed, DEFAULT_C, DEFAULT_RETRY_BUDGET)
}

#[allow(clippy::too_many_arguments)]
pub fn mc_check_connection_with(
    kernel: &KernelSpec,
    v: usize,
    mu: f64,
    distance: f64,
    trials: usize,
    seed: u64,
    c: f64,
    budget: usize,
) -> Result<LemmaReport> {
    let bound = connection_bound(kernel, v, mu, distance, c)?;
    if trials == 0 {
        return param("at least one trial is required");
    }
    let key = StreamKey::new(seed, Purpose::Trial);
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<(bool, f64)> {
            let mut rng = key.with(t as u64).stream();
            let s = regular_sample(&mut rng, v, mu, budget)?;
            let u = regular_sample(&mut rng, v, mu, budget)?;
            let mut hit = false;
            let mut phi_sum = 0.0;
            for &a in &s {
                for &b in &u {
                    let phi = kernel.phi_unchecked(a, b, distance);
                    phi_sum += phi;
                    // Once an edge is present the outcome is settled; skip the remaining draws.
                    if !hit && open_unit(&mut rng) < -(-phi).exp_m1() {
                        hit = true;
                    }
                }
            }
            let exact = if phi_sum.is_infinite() { 1.0 } else { -(-phi_sum).exp_m1() };
            Ok((hit, exact))
        })
        .collect::<Result<Vec<_>>>()?;
    let hits = outcomes.iter().filter(|o| o.0).count();
    let freq = hits as f64 / trials as f64;
    let exact = outcomes.iter().map(|o| o.1).sum::<f64>() / trials as f64;
    let sigma = (bound * (1.0 - bound) / trials as f64).sqrt();
    Ok(LemmaReport {
        lemma: "connection".into(),
        params: json!({
            "kernel": kernel, "v": v, "mu": mu, "distance": distance,
            "trials": trials, "seed": seed, "c": c,
        }),
        bound,
        empirical: freq,
        sigma,
        pass: freq >= bound - 3.0 * sigma,
        vacuous: bound <= 0.0,
        exact: Some(exact),
    })
}
