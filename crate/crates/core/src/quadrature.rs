//! Adaptive Gauss-Kronrod (7/15) integration in one and two dimensions.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

// Gauss weights for the odd-indexed Kronrod nodes 1, 3, 5 and the centre.
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

const MAX_SEGMENTS: usize = 2000;

/// One G7K15 panel: returns (Kronrod estimate, error estimate).
fn panel<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Integrate `f` over `[a, b]` to relative tolerance `rel` (absolute floor `abs`).
pub(crate) fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, rel: f64, abs: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (v, e) = panel(&mut f, a, b);
    let mut segs = vec![(a, b, v, e)];
    let mut total = v;
    let mut err = e;
    while err > abs.max(rel * total.abs()) {
        if segs.len() >= MAX_SEGMENTS {
            return Err(Error::Numeric(format!(
                "quadrature on [{a}, {b}] did not reach tolerance (estimate {total}, error {err})"
            )));
        }
        let worst = (0..segs.len())
            .max_by(|&i, &j| segs[i].3.total_cmp(&segs[j].3))
            .unwrap();
        let (lo, hi, v0, e0) = segs.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = panel(&mut f, lo, mid);
        let (v2, e2) = panel(&mut f, mid, hi);
        total += v1 + v2 - v0;
        err += e1 + e2 - e0;
        segs.push((lo, mid, v1, e1));
        segs.push((mid, hi, v2, e2));
        if !total.is_finite() {
            return Err(Error::Numeric("quadrature produced a non-finite value".into()));
        }
    }
    // Re-sum to remove drift from the running updates.
    Ok(segs.iter().map(|s| s.2).sum())
}

/// Integrate `f(x, y)` over `[a, b]^2` by nested adaptive quadrature.
pub(crate) fn integrate_square<F: Fn(f64, f64) -> f64>(f: F, a: f64, b: f64, rel: f64) -> Result<f64> {
    let inner_rel = rel * 0.1;
    let mut failure = None;
    let outer = integrate(
        |x| match integrate(|y| f(x, y), a, b, inner_rel, 0.0) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        },
        a,
        b,
        rel,
        0.0,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(outer),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let v = integrate(|x| x.powi(5) - 3.0 * x * x, -1.0, 2.0, 1e-12, 0.0).unwrap();
        assert!((v - (64.0 / 6.0 - 1.0 / 6.0 - 9.0)).abs() < 1e-12);
    }

    #[test]
    fn singular_integrand_converges() {
        // int_0^1 x^{-1/2} dx = 2, endpoint singularity
        let v = integrate(|x| x.powf(-0.5), 0.0, 1.0, 1e-9, 0.0).unwrap();
        assert!((v - 2.0).abs() < 1e-7, "{v}");
    }

    #[test]
    fn square_product() {
        let v = integrate_square(|x, y| (x * y).exp(), 0.0, 1.0, 1e-10).unwrap();
        // sum_k 1/(k! (k+1)^2)
        let mut exact = 0.0;
        let mut fact = 1.0;
        for k in 0..30 {
            if k > 0 {
                fact *= k as f64;
            }
            exact += 1.0 / (fact * ((k + 1) as f64).powi(2));
        }
        assert!((v - exact).abs() < 1e-10 * exact);
    }

    #[test]
    fn empty_interval() {
        assert_eq!(integrate(|x| x, 3.0, 3.0, 1e-6, 0.0).unwrap(), 0.0);
    }
}
