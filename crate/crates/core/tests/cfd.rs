use cfdbal::cfd::{cfd2_two_sample, cfd_report, GroupSpec};
use cfdbal::kernels::{cross_gram, gram, SpectralDensity};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (DMatrix<f64>, Vec<u8>, Vec<f64>) {
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.5..1.5));
    let mut z: Vec<u8> = (0..n).map(|_| rng.random_bool(0.5) as u8).collect();
    z[0] = 1;
    z[1] = 0;
    let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
    let groups = GroupSpec::new(&z).unwrap();
    let (s1, s0) = groups.group_sums(&w);
    for i in 0..n {
        w[i] *= if z[i] == 1 { groups.n1() as f64 / s1 } else { groups.n0() as f64 / s0 };
    }
    (x, z, w)
}

/// Σᵢⱼ aᵢ bⱼ k(xᵢ, xⱼ) by explicit loops.
fn loop_sum(dens: &SpectralDensity, x: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
    let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().cloned().collect()).collect();
    let mut s = 0.0;
    for i in 0..rows.len() {
        for j in 0..rows.len() {
            s += a[i] * b[j] * dens.kernel(&rows[i], &rows[j]).unwrap();
        }
    }
    s
}

#[test]
fn self_distance_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let n = rng.random_range(1..40);
        let d = rng.random_range(1..6);
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-3.0..3.0));
        let dens = SpectralDensity::gaussian(rng.random_range(0.2..2.0), d).unwrap();
        let k = gram(&dens, &x, None).unwrap().k;
        assert!(cfd2_two_sample(&k, &k, &k, None, None).unwrap().abs() <= 1e-10);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        assert!(cfd2_two_sample(&k, &k, &k, Some(&w), Some(&w)).unwrap().abs() <= 1e-10);
    }
}

#[test]
fn report_matches_double_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..50 {
        let n = rng.random_range(2..=50);
        let (x, z, w) = instance(&mut rng, n, 3);
        let dens = if trial % 2 == 0 {
            SpectralDensity::gaussian(1.0, 3).unwrap()
        } else {
            SpectralDensity::energy(3).unwrap()
        };
        let groups = GroupSpec::new(&z).unwrap();
        let r = cfd_report(&gram(&dens, &x, None).unwrap(), &groups, &w).unwrap();
        let (n1, n0, nf) = (groups.n1() as f64, groups.n0() as f64, n as f64);
        let a1: Vec<f64> = (0..n).map(|i| if z[i] == 1 { w[i] / n1 } else { 0.0 }).collect();
        let a0: Vec<f64> = (0..n).map(|i| if z[i] == 0 { w[i] / n0 } else { 0.0 }).collect();
        let u = vec![1.0 / nf; n];
        let uu = loop_sum(&dens, &x, &u, &u);
        let cfd1 = loop_sum(&dens, &x, &a1, &a1) + uu - 2.0 * loop_sum(&dens, &x, &a1, &u);
        let cfd0 = loop_sum(&dens, &x, &a0, &a0) + uu - 2.0 * loop_sum(&dens, &x, &a0, &u);
        let cfd10 = loop_sum(&dens, &x, &a1, &a1) + loop_sum(&dens, &x, &a0, &a0) - 2.0 * loop_sum(&dens, &x, &a1, &a0);
        for (got, want) in [(r.cfd1_fn, cfd1), (r.cfd0_fn, cfd0), (r.cfd1_0, cfd10), (r.constant, uu)] {
            assert!((got - want).abs() <= 1e-8, "trial {trial}: {got} vs {want}");
        }
    }
}

#[test]
fn two_sample_form_matches_double_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dens = SpectralDensity::cauchy_product(0.7, 2).unwrap();
    for _ in 0..20 {
        let v = DMatrix::from_fn(rng.random_range(1..20), 2, |_, _| rng.random_range(-1.0..1.0));
        let w = DMatrix::from_fn(rng.random_range(1..20), 2, |_, _| rng.random_range(-1.0..1.0));
        let a: Vec<f64> = (0..v.nrows()).map(|_| rng.random_range(0.1..1.0)).collect();
        let b: Vec<f64> = (0..w.nrows()).map(|_| rng.random_range(0.1..1.0)).collect();
        let got = cfd2_two_sample(
            &gram(&dens, &v, None).unwrap().k,
            &gram(&dens, &w, None).unwrap().k,
            &cross_gram(&dens, &v, &w, None).unwrap(),
            Some(&a),
            Some(&b),
        )
        .unwrap();
        let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
        let mut want = 0.0;
        for i in 0..v.nrows() {
            for j in 0..v.nrows() {
                want += a[i] * a[j] / (sa * sa) * dens.kernel(v.row(i).transpose().as_slice(), v.row(j).transpose().as_slice()).unwrap();
            }
            for j in 0..w.nrows() {
                want -= 2.0 * a[i] * b[j] / (sa * sb) * dens.kernel(v.row(i).transpose().as_slice(), w.row(j).transpose().as_slice()).unwrap();
            }
        }
        for i in 0..w.nrows() {
            for j in 0..w.nrows() {
                want += b[i] * b[j] / (sb * sb) * dens.kernel(w.row(i).transpose().as_slice(), w.row(j).transpose().as_slice()).unwrap();
            }
        }
        assert!((got - want).abs() <= 1e-8, "{got} vs {want}");
    }
}

#[test]
fn terms_are_nonnegative_including_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let n = rng.random_range(2..=40);
        let (x, z, w) = instance(&mut rng, n, 4);
        let groups = GroupSpec::new(&z).unwrap();
        let g = cfd_report(&gram(&SpectralDensity::gaussian(1.2, 4).unwrap(), &x, None).unwrap(), &groups, &w).unwrap();
        assert!(g.cfd1_fn >= -1e-8 && g.cfd0_fn >= -1e-8 && g.cfd1_0 >= -1e-8, "{g:?}");
        let e = cfd_report(&gram(&SpectralDensity::energy(4).unwrap(), &x, None).unwrap(), &groups, &w).unwrap();
        assert!(e.cfd1_0 >= -1e-8 && e.cfd1_fn >= -1e-8 && e.cfd0_fn >= -1e-8, "{e:?}");
    }
}

#[test]
fn identical_group_multisets_give_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base = DMatrix::from_fn(8, 2, |_, _| rng.random_range(-1.0..1.0));
    let x = DMatrix::from_fn(16, 2, |i, j| base[(i % 8, j)]);
    let z: Vec<u8> = (0..16).map(|i| (i < 8) as u8).collect();
    let k = gram(&SpectralDensity::energy(2).unwrap(), &x, None).unwrap();
    let r = cfd_report(&k, &GroupSpec::new(&z).unwrap(), &[1.0; 16]).unwrap();
    assert!(r.cfd1_fn.abs() <= 1e-10 && r.cfd0_fn.abs() <= 1e-10 && r.cfd1_0.abs() <= 1e-10, "{r:?}");
}
