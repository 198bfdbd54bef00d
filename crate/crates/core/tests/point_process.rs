mod common;

use perclab::point_process::{attach_marks, palm_condition, read_cloud_csv, sample_lattice, sample_poisson, write_cloud_csv};
use perclab::rng::{derive_seed, Purpose};
use perclab::BoxDomain;
use proptest::prelude::*;

#[test]
fn poisson_counts_fit_pmf() {
    let dom = BoxDomain::centered_cube(2, 10.0).unwrap();
    let counts: Vec<usize> = (0..10_000u64).map(|s| sample_poisson(&dom, 1.0, s).unwrap().len()).collect();
    let p = common::poisson_fit_p(&counts, 100.0);
    assert!(p > 0.01, "chi-square p = {p}");
}

#[test]
fn unit_cube_mean_count() {
    let dom = BoxDomain::centered_cube(3, 1.0).unwrap();
    let total: usize = (0..20_000u64).map(|s| sample_poisson(&dom, 1.0, s).unwrap().len()).sum();
    let mean = total as f64 / 20_000.0;
    assert!((mean - 1.0).abs() < 3.0 * (1.0 / 20_000f64).sqrt(), "mean {mean}");
}

#[test]
fn rescaled_intensity_counts() {
    let dom = BoxDomain::centered_cube(2, 4.0).unwrap();
    let counts: Vec<usize> = (0..4000u64).map(|s| sample_poisson(&dom, 2.5, s).unwrap().len()).collect();
    assert!(common::poisson_fit_p(&counts, 40.0) > 0.01);
}

#[test]
fn disjoint_halves_are_uncorrelated() {
    let dom = BoxDomain::centered_cube(2, 6.0).unwrap();
    let left = BoxDomain::new(vec![-3.0, -3.0], vec![0.0, 3.0], Default::default()).unwrap();
    let n = 5000;
    let pairs: Vec<(f64, f64)> = (0..n as u64)
        .map(|s| {
            let c = sample_poisson(&dom, 1.0, s).unwrap();
            let l = c.points().filter(|p| left.contains(p)).count() as f64;
            (l, c.len() as f64 - l)
        })
        .collect();
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let cov = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / n as f64;
    let corr = cov / (mx * my).sqrt();
    assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "correlation {corr}");
}

#[test]
fn degenerate_box_is_empty() {
    let dom = BoxDomain::new(vec![0.0, 0.0], vec![0.0, 5.0], Default::default()).unwrap();
    assert!(sample_poisson(&dom, 3.0, 1).unwrap().is_empty());
    assert!(sample_poisson(&BoxDomain::centered_cube(2, 1.0).unwrap(), 0.0, 1).is_err());
}

#[test]
fn lattice_counts() {
    let small = BoxDomain::centered_cube(2, 10.0).unwrap();
    assert_eq!(sample_lattice(&small, 1.0, 4).unwrap().len(), 100);
    assert!(sample_lattice(&small, 0.0, 4).unwrap().is_empty());
    assert!(sample_lattice(&small, 1.5, 4).is_err());
    let big = BoxDomain::centered_cube(2, 100.0).unwrap();
    let reps = 1000;
    let total: usize = (0..reps as u64).map(|s| sample_lattice(&big, 0.5, s).unwrap().len()).sum();
    let mean = total as f64 / reps as f64;
    let se = (10_000.0 * 0.25 / reps as f64).sqrt();
    assert!((mean - 5000.0).abs() < 3.0 * se, "mean {mean}");
}

#[test]
fn marks_are_uniform() {
    let dom = BoxDomain::centered_cube(2, 316.0).unwrap();
    let cloud = attach_marks(sample_poisson(&dom, 1.0, 5).unwrap(), 6);
    let mut m = cloud.marks().to_vec();
    assert!(m.len() > 90_000);
    m.sort_by(f64::total_cmp);
    let n = m.len() as f64;
    let d = m
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max);
    assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");
    assert!(m.iter().all(|&x| x > 0.0 && x < 1.0));
}

#[test]
fn marks_uncorrelated_with_location() {
    let dom = BoxDomain::centered_cube(2, 100.0).unwrap();
    let c = attach_marks(sample_poisson(&dom, 1.0, 8).unwrap(), 9);
    let n = c.len() as f64;
    for axis in 0..2 {
        let xs: Vec<f64> = (0..c.len()).map(|i| c.point(i)[axis]).collect();
        let mx = xs.iter().sum::<f64>() / n;
        let mm = c.marks().iter().sum::<f64>() / n;
        let cov = xs.iter().zip(c.marks()).map(|(x, m)| (x - mx) * (m - mm)).sum::<f64>() / n;
        let sx = (xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n).sqrt();
        let sm = (c.marks().iter().map(|m| (m - mm).powi(2)).sum::<f64>() / n).sqrt();
        assert!((cov / (sx * sm)).abs() < 4.0 / n.sqrt());
    }
}

#[test]
fn same_seed_same_marks() {
    let dom = BoxDomain::centered_cube(2, 20.0).unwrap();
    let a = attach_marks(sample_poisson(&dom, 1.0, 1).unwrap(), 2);
    let b = attach_marks(sample_poisson(&dom, 1.0, 1).unwrap(), 2);
    assert_eq!(a, b);
    let e = attach_marks(sample_poisson(&BoxDomain::new(vec![0.0], vec![0.0], Default::default()).unwrap(), 1.0, 1).unwrap(), 2);
    assert!(e.is_empty());
}

#[test]
fn palm_adds_origin() {
    let unit = BoxDomain::centered_cube(2, 1.0).unwrap();
    let counts: Vec<usize> = (0..10_000u64)
        .map(|s| {
            let c = attach_marks(sample_poisson(&unit, 1.0, s).unwrap(), s + 1);
            let p = palm_condition(&c).unwrap();
            assert!(p.origin_index().is_some());
            p.len() - 1
        })
        .collect();
    assert!(common::poisson_fit_p(&counts, 1.0) > 0.01);
    let tiny = BoxDomain::centered_cube(2, 1e-9).unwrap();
    let empty = attach_marks(sample_poisson(&tiny, 1.0, 3).unwrap(), 3);
    assert!(empty.is_empty());
    assert_eq!(palm_condition(&empty).unwrap().len(), 1);
    let away = BoxDomain::new(vec![1.0, 1.0], vec![2.0, 2.0], Default::default()).unwrap();
    assert!(palm_condition(&attach_marks(sample_poisson(&away, 1.0, 3).unwrap(), 3)).is_err());
}

#[test]
fn palm_on_lattice_forces_origin() {
    let dom = BoxDomain::centered_cube(2, 6.0).unwrap();
    for s in 0..20 {
        let c = attach_marks(sample_lattice(&dom, 0.3, s).unwrap(), s);
        let p = palm_condition(&c).unwrap();
        let o = p.origin_index().unwrap();
        assert!(p.mark(o) > 0.0 && p.mark(o) < 1.0);
        assert!(p.len() == c.len() || p.len() == c.len() + 1);
    }
}

#[test]
fn csv_round_trip() {
    let dom = BoxDomain::centered_cube(2, 5.0).unwrap();
    let c = attach_marks(sample_poisson(&dom, 1.0, 12).unwrap(), 13);
    let mut buf = Vec::new();
    write_cloud_csv(&c, &mut buf).unwrap();
    let back = read_cloud_csv(std::io::Cursor::new(buf)).unwrap();
    assert_eq!(back, c);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nested_boxes_agree(seed in any::<u64>(), small in 2.0f64..6.0, extra in 0.5f64..6.0, intensity in 0.5f64..3.0) {
        let inner = BoxDomain::centered_cube(2, small).unwrap();
        let outer = BoxDomain::centered_cube(2, small + extra).unwrap();
        let ms = derive_seed(seed, Purpose::Marks, 0);
        let a = attach_marks(sample_poisson(&inner, intensity, seed).unwrap(), ms);
        let b = attach_marks(sample_poisson(&outer, intensity, seed).unwrap(), ms);
        let (restricted, _) = b.restrict(&inner);
        prop_assert_eq!(a.marks(), restricted.marks());
        prop_assert_eq!(a.base().coords(), restricted.base().coords());
    }

    #[test]
    fn points_inside_and_distinct(seed in any::<u64>(), side in 0.5f64..8.0) {
        let dom = BoxDomain::centered_cube(2, side).unwrap();
        let c = sample_poisson(&dom, 1.0, seed).unwrap();
        for i in 0..c.len() {
            prop_assert!(dom.contains(c.point(i)));
            if i > 0 {
                prop_assert!(c.point(i - 1) != c.point(i));
            }
        }
    }
}
