//! Connection functions `phi(s, t, r)`, edge probabilities, mark-integrated
//! connection strength and the effective decay exponent.

use serde::{Deserialize, Serialize};

use crate::config::Section;
use crate::error::{param, Error, Result};
use crate::quadrature;

/// Relative tolerance of the quadrature path.
pub const QUAD_TOL: f64 = 1e-8;

/// The symmetric mark kernel `g(s, t)` of a weight-dependent model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarkKernel {
    /// `(s t)^gamma`
    Product { gamma: f64 },
    /// `(s ∧ t)^gamma (s ∨ t)^gamma2`
    MinMax { gamma: f64, gamma2: f64 },
    /// `(s ∨ t)^gamma`
    Max { gamma: f64 },
}

impl MarkKernel {
    #[inline]
    pub fn eval(&self, s: f64, t: f64) -> f64 {
        match *self {
            MarkKernel::Product { gamma } => (s * t).powf(gamma),
            MarkKernel::MinMax { gamma, gamma2 } => s.min(t).powf(gamma) * s.max(t).powf(gamma2),
            MarkKernel::Max { gamma } => s.max(t).powf(gamma),
        }
    }
}

/// The non-increasing profile `rho` of a weight-dependent model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `beta (x ∨ 1)^(-delta)`
    Clipped,
    /// `min(1, beta x^(-delta))`
    Min,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    /// `-ln(1-p) 1{r <= 1}`
    BernoulliNn { p: f64 },
    /// `beta r^(-delta d)`
    LongRange { beta: f64, delta: f64 },
    /// `beta (s t)^(-gamma delta) r^(-delta d)`
    ScaleFree { beta: f64, gamma: f64, delta: f64 },
    /// `rho(g(s, t) r^d)`
    Wdrcm { g: MarkKernel, rho: Profile, beta: f64, delta: f64 },
}

/// A connection function together with the ambient dimension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub dim: usize,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        param(format!("{name} must be positive and finite, got {v}"))
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        param(format!("{name} must be non-negative and finite, got {v}"))
    }
}

impl KernelSpec {
    pub fn new(family: KernelFamily, dim: usize) -> Result<Self> {
        if dim == 0 {
            return param("kernel dimension must be at least 1");
        }
        match family {
            KernelFamily::BernoulliNn { p } => {
                if !(0.0..=1.0).contains(&p) {
                    return param(format!("bernoulli_nn p must lie in [0, 1], got {p}"));
                }
            }
            KernelFamily::LongRange { beta, delta } => {
                check_positive("beta", beta)?;
                check_positive("delta", delta)?;
            }
            KernelFamily::ScaleFree { beta, gamma, delta } => {
                check_positive("beta", beta)?;
                check_nonneg("gamma", gamma)?;
                check_positive("delta", delta)?;
            }
            KernelFamily::Wdrcm { g, beta, delta, .. } => {
                check_positive("beta", beta)?;
                check_positive("delta", delta)?;
                match g {
                    MarkKernel::Product { gamma } | MarkKernel::Max { gamma } => check_nonneg("gamma", gamma)?,
                    MarkKernel::MinMax { gamma, gamma2 } => {
                        check_nonneg("gamma", gamma)?;
                        check_nonneg("gamma2", gamma2)?;
                    }
                }
            }
        }
        Ok(KernelSpec { family, dim })
    }

    pub fn long_range(dim: usize, beta: f64, delta: f64) -> Result<Self> {
        Self::new(KernelFamily::LongRange { beta, delta }, dim)
    }

    pub fn scale_free(dim: usize, beta: f64, gamma: f64, delta: f64) -> Result<Self> {
        Self::new(KernelFamily::ScaleFree { beta, gamma, delta }, dim)
    }

    pub fn bernoulli_nn(dim: usize, p: f64) -> Result<Self> {
        Self::new(KernelFamily::BernoulliNn { p }, dim)
    }

    pub fn wdrcm(dim: usize, g: MarkKernel, rho: Profile, beta: f64, delta: f64) -> Result<Self> {
        Self::new(KernelFamily::Wdrcm { g, rho, beta, delta }, dim)
    }

    /// Parse a `kernel { family=..., beta=..., ... }` section.
    pub fn from_section(section: &Section, dim: usize) -> Result<Self> {
        let dim = section.get_usize("dim")?.unwrap_or(dim);
        let family = section.require_str("family")?;
        let f = |k: &str| section.require_f64(k);
        let fam = match family {
            "bernoulli_nn" => KernelFamily::BernoulliNn { p: f("p")? },
            "long_range" => KernelFamily::LongRange { beta: f("beta")?, delta: f("delta")? },
            "scale_free" => KernelFamily::ScaleFree { beta: f("beta")?, gamma: f("gamma")?, delta: f("delta")? },
            "wdrcm" => {
                let g = match section.get_str("g").unwrap_or("product") {
                    "product" => MarkKernel::Product { gamma: f("gamma")? },
                    "minmax" => MarkKernel::MinMax { gamma: f("gamma")?, gamma2: f("gamma2")? },
                    "max" => MarkKernel::Max { gamma: f("gamma")? },
                    other => return param(format!("unknown mark kernel g=`{other}`")),
                };
                let rho = match section.get_str("rho").unwrap_or("clipped") {
                    "clipped" => Profile::Clipped,
                    "min" => Profile::Min,
                    other => return param(format!("unknown profile rho=`{other}`")),
                };
                KernelFamily::Wdrcm { g, rho, beta: f("beta")?, delta: f("delta")? }
            }
            other => return param(format!("unknown kernel family `{other}`")),
        };
        Self::new(fam, dim)
    }

    pub fn name(&self) -> &'static str {
        match self.family {
            KernelFamily::BernoulliNn { .. } => "bernoulli_nn",
            KernelFamily::LongRange { .. } => "long_range",
            KernelFamily::ScaleFree { .. } => "scale_free",
            KernelFamily::Wdrcm { .. } => "wdrcm",
        }
    }

    /// Every family shipped here is non-increasing in `s`, `t` and `r`.
    pub fn is_monotone(&self) -> bool {
        true
    }

    /// `phi` without argument checks. `r = 0` maps to infinity.
    #[inline]
    pub fn phi_unchecked(&self, s: f64, t: f64, r: f64) -> f64 {
        if r == 0.0 {
            return f64::INFINITY;
        }
        let d = self.dim as f64;
        match self.family {
            KernelFamily::BernoulliNn { p } => {
                if r <= 1.0 {
                    -(-p).ln_1p()
                } else {
                    0.0
                }
            }
            KernelFamily::LongRange { beta, delta } => beta * r.powf(-delta * d),
            KernelFamily::ScaleFree { beta, gamma, delta } => {
                beta * (s * t).powf(-gamma * delta) * r.powf(-delta * d)
            }
            KernelFamily::Wdrcm { g, rho, beta, delta } => {
                let x = g.eval(s, t) * r.powf(d);
                match rho {
                    Profile::Clipped => beta * x.max(1.0).powf(-delta),
                    Profile::Min => (beta * x.powf(-delta)).min(1.0),
                }
            }
        }
    }

    /// `1 - exp(-phi)` without argument checks.
    #[inline]
    pub fn edge_prob_unchecked(&self, s: f64, t: f64, r: f64) -> f64 {
        let phi = self.phi_unchecked(s, t, r);
        if phi == f64::INFINITY {
            1.0
        } else {
            -(-phi).exp_m1()
        }
    }

    fn check_args(s: f64, t: f64, r: f64) -> Result<()> {
        if !(s > 0.0 && s < 1.0) || !(t > 0.0 && t < 1.0) {
            return param(format!("marks must lie in (0, 1), got s={s}, t={t}"));
        }
        if !(r >= 0.0) {
            return param(format!("distance must be non-negative, got {r}"));
        }
        Ok(())
    }

    pub fn eval_phi(&self, s: f64, t: f64, r: f64) -> Result<f64> {
        Self::check_args(s, t, r)?;
        Ok(self.phi_unchecked(s, t, r))
    }

    pub fn edge_prob(&self, s: f64, t: f64, r: f64) -> Result<f64> {
        Self::check_args(s, t, r)?;
        Ok(self.edge_prob_unchecked(s, t, r))
    }

    /// `∫∫ phi(s, t, r) ds dt` over `[a, 1-a]^2` with `a = r^(d(mu-1))`.
    pub fn mark_integral(&self, r: f64, mu: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&mu) {
            return param(format!("mu must lie in [0, 1), got {mu}"));
        }
        if !(r > 0.0) {
            return param(format!("r must be positive, got {r}"));
        }
        let a = r.powf(self.dim as f64 * (mu - 1.0));
        if !(a < 0.5) {
            return param(format!("integration bounds cross: r^(d(mu-1)) = {a} >= 1/2 at r = {r}"));
        }
        self.mark_integral_between(a, 1.0 - a, r)
    }

    /// `∫∫ phi(s, t, r) ds dt` over `[lo, hi]^2`; closed form where one exists.
    pub fn mark_integral_between(&self, lo: f64, hi: f64, r: f64) -> Result<f64> {
        check_bounds(lo, hi)?;
        let d = self.dim as f64;
        let w = hi - lo;
        Ok(match self.family {
            KernelFamily::LongRange { .. } | KernelFamily::BernoulliNn { .. } => {
                let phi = self.phi_unchecked(0.5, 0.5, r);
                if w == 0.0 {
                    0.0
                } else {
                    phi * w * w
                }
            }
            KernelFamily::ScaleFree { beta, gamma, delta } => {
                if r == 0.0 {
                    return Ok(if w == 0.0 { 0.0 } else { f64::INFINITY });
                }
                let j = power_integral(gamma * delta, lo, hi);
                beta * r.powf(-delta * d) * j * j
            }
            KernelFamily::Wdrcm { .. } => return self.mark_integral_quadrature(lo, hi, r),
        })
    }

    /// Quadrature path for the square integral, available for every family.
    pub fn mark_integral_quadrature(&self, lo: f64, hi: f64, r: f64) -> Result<f64> {
        check_bounds(lo, hi)?;
        if lo == hi {
            return Ok(0.0);
        }
        // Substitute s = e^u to flatten the singular behaviour near zero.
        let f = |u: f64, w: f64| {
            let (s, t) = (u.exp(), w.exp());
            self.phi_unchecked(s, t, r) * s * t
        };
        let v = quadrature::integrate_square(f, lo.ln(), hi.ln(), QUAD_TOL)?;
        Ok(v)
    }

    /// Least-squares slope of `-ln I(r) / d` against `ln r` on the grid.
    pub fn estimate_delta_eff(&self, mu: f64, grid: &RGrid) -> Result<DeltaEffEstimate> {
        let r = grid.points();
        let mut integrals = Vec::with_capacity(r.len());
        for &x in &r {
            let v = self.mark_integral(x, mu)?;
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Numeric(format!("mark integral is {v} at r = {x}")));
            }
            integrals.push(v);
        }
        let d = self.dim as f64;
        let xs: Vec<f64> = r.iter().map(|x| x.ln()).collect();
        let ys: Vec<f64> = integrals.iter().map(|v| -v.ln() / d).collect();
        let (slope, residual) = least_squares(&xs, &ys);
        if !slope.is_finite() {
            return Err(Error::Numeric("non-finite slope".into()));
        }
        Ok(DeltaEffEstimate { mu, r, integrals, slope, residual })
    }
}

fn check_bounds(lo: f64, hi: f64) -> Result<()> {
    if !(lo > 0.0 && lo <= hi && hi < 1.0) {
        return param(format!("integration bounds cross or leave (0, 1): [{lo}, {hi}]"));
    }
    Ok(())
}

/// `∫_a^b s^(-e) ds`.
fn power_integral(e: f64, a: f64, b: f64) -> f64 {
    if (e - 1.0).abs() < 1e-12 {
        (b / a).ln()
    } else {
        (b.powf(1.0 - e) - a.powf(1.0 - e)) / (1.0 - e)
    }
}

/// Slope and root-mean-square residual of the least-squares line.
fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let ss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - icpt - slope * x).powi(2)).sum();
    (slope, (ss / n).sqrt())
}

/// Geometric grid `start * ratio^i`, `i < count`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RGrid {
    pub start: f64,
    pub ratio: f64,
    pub count: usize,
}

impl RGrid {
    pub fn new(start: f64, ratio: f64, count: usize) -> Result<Self> {
        if !(start > 0.0) || !start.is_finite() {
            return param(format!("grid start must be positive, got {start}"));
        }
        if !(ratio >= 2.0) || !ratio.is_finite() {
            return param(format!("grid ratio must be at least 2, got {ratio}"));
        }
        if count < 4 {
            return param(format!("grid needs at least 4 points, got {count}"));
        }
        Ok(RGrid { start, ratio, count })
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.start * self.ratio.powi(i as i32)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaEffEstimate {
    pub mu: f64,
    pub r: Vec<f64>,
    pub integrals: Vec<f64>,
    pub slope: f64,
    pub residual: f64,
}
