#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

/// Pearson chi-square p-value. Adjacent bins are pooled until each expects at least 5.
pub fn chi_square_p(observed: &[f64], expected: &[f64]) -> f64 {
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (a, b) in observed.iter().zip(expected) {
        o += a;
        e += b;
        if e >= 5.0 {
            obs.push(o);
            exp.push(e);
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        if let (Some(lo), Some(le)) = (obs.last_mut(), exp.last_mut()) {
            *lo += o;
            *le += e;
        }
    }
    let stat: f64 = obs.iter().zip(&exp).map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = (obs.len() - 1).max(1) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

/// Chi-square p-value of integer samples against a Poisson law.
pub fn poisson_fit_p(samples: &[usize], mean: f64) -> f64 {
    let max = *samples.iter().max().unwrap() + 1;
    let mut observed = vec![0.0; max + 1];
    for &s in samples {
        observed[s] += 1.0;
    }
    let law = Poisson::new(mean).unwrap();
    let n = samples.len() as f64;
    let mut expected: Vec<f64> = (0..=max).map(|k| n * law.pmf(k as u64)).collect();
    let tail: f64 = 1.0 - (0..=max).map(|k| law.pmf(k as u64)).sum::<f64>();
    expected[max] += n * tail.max(0.0);
    chi_square_p(&observed, &expected)
}

/// Two-sample chi-square homogeneity p-value on binned counts.
pub fn homogeneity_p(a: &[f64], b: &[f64]) -> f64 {
    let na: f64 = a.iter().sum();
    let nb: f64 = b.iter().sum();
    let mut stat = 0.0;
    let mut bins = 0usize;
    for (x, y) in a.iter().zip(b) {
        let t = x + y;
        if t == 0.0 {
            continue;
        }
        let ea = t * na / (na + nb);
        let eb = t * nb / (na + nb);
        stat += (x - ea).powi(2) / ea + (y - eb).powi(2) / eb;
        bins += 1;
    }
    let dof = (bins.max(2) - 1) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}
