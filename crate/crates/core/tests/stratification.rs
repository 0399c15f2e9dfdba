use std::time::Instant;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vecbern::energy::EnergyParams;
use vecbern::model::ModelSolution;
use vecbern::quadrature::Quadrature;
use vecbern::stratification::{
    beta_brute_force, beta_estimate_check, beta_number, plane_distance_integral, second_moment_form, sorted_eigen,
    PointMeasure,
};

fn random_cloud(rng: &mut ChaCha8Rng, d: usize, n: usize) -> PointMeasure {
    let pts = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-0.7..0.7)).collect())
        .collect();
    let w = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    PointMeasure::new(pts, w).unwrap()
}

#[test]
fn eigen_route_matches_brute_force_on_seeded_clouds() {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = if seed % 2 == 0 { 2 } else { 3 };
        let j = if d == 2 { 1 } else { 1 + (seed / 2 % 2) as usize };
        // At least j + 2 points, so the support is generically not planar.
        let n = rng.random_range(j + 2..=20);
        let mu = random_cloud(&mut rng, d, n);
        let x = vec![0.0; d];
        let b = beta_number(&mu, &x, 1.5, j).unwrap().beta;
        let bf = beta_brute_force(&mu, &x, 1.5, j).unwrap();
        let rel = (b - bf).abs() / b.max(1e-300);
        worst = worst.max(rel);
        assert!(rel <= 1e-6, "seed {seed}: {b} vs {bf}");
        assert!(bf >= b * (1.0 - 1e-12), "brute force went below the infimum");
    }
    eprintln!("oracle sweep worst relative gap {worst:e} in {:.2?}", t.elapsed());
}

#[test]
fn beta_vanishes_exactly_on_planar_support() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Points on the plane z = 0.3 x - 0.2 y + 0.1 in d = 3.
    let pts: Vec<Vec<f64>> = (0..12)
        .map(|_| {
            let (a, b) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            vec![a, b, 0.3 * a - 0.2 * b + 0.1]
        })
        .collect();
    let mu = PointMeasure::counting(pts.clone()).unwrap();
    assert!(beta_number(&mu, &[0.0; 3], 1.0, 2).unwrap().beta < 1e-7);
    assert!(beta_number(&mu, &[0.0; 3], 1.0, 1).unwrap().beta > 1e-2);
    let mut off = pts;
    off.push(vec![0.0, 0.0, 0.5]);
    let mu = PointMeasure::counting(off).unwrap();
    assert!(beta_number(&mu, &[0.0; 3], 1.0, 2).unwrap().beta > 1e-3);
}

#[test]
fn outlier_grows_both_sides_of_the_estimate() {
    let model = ModelSolution::rank_one(&[0.6, 0.8], &[1.0, 0.0]).unwrap();
    let view = model.view(1.0 / 256.0, 1.0);
    let params = EnergyParams::new(1.0).unwrap();
    let q = Quadrature::default_for(2);
    let r = 1.0 / 16.0;
    let mut prev: Option<(f64, f64)> = None;
    let mut constants = Vec::new();
    for t in [0.005, 0.01, 0.02] {
        let mut pts: Vec<Vec<f64>> = (-3..=3).map(|i| vec![0.0, i as f64 / 64.0]).collect();
        pts.push(vec![t, 0.0]);
        let mu = PointMeasure::counting(pts).unwrap();
        let rep = beta_estimate_check(&view, &mu, &[0.0, 0.0], r, 1, 0.05, &params, &q).unwrap();
        assert!(rep.rhs > 0.0 && !rep.infinite);
        if let Some((lhs, rhs)) = prev {
            assert!((rep.lhs / lhs / 4.0 - 1.0).abs() < 0.05, "lhs ratio {}", rep.lhs / lhs);
            assert!((rep.rhs / rhs / 4.0 - 1.0).abs() < 0.05, "rhs ratio {}", rep.rhs / rhs);
        }
        prev = Some((rep.lhs, rep.rhs));
        constants.push(rep.implied_constant.unwrap());
    }
    let (lo, hi) = constants
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &c| (a.min(c), b.max(c)));
    assert!(hi / lo < 1.1, "{constants:?}");
}

fn cloud_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-0.6f64..0.6, 2), 2..15)
}

fn rotate(p: &[f64], th: f64, shift: &[f64]) -> Vec<f64> {
    vec![
        th.cos() * p[0] - th.sin() * p[1] + shift[0],
        th.sin() * p[0] + th.cos() * p[1] + shift[1],
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn beta_is_invariant_under_rigid_motions(pts in cloud_strategy(), th in 0.0f64..6.3, sx in -2.0f64..2.0, sy in -2.0f64..2.0) {
        let mu = PointMeasure::counting(pts.clone()).unwrap();
        let b = beta_number(&mu, &[0.0, 0.0], 1.0, 1).unwrap().beta;
        let moved = PointMeasure::counting(pts.iter().map(|p| rotate(p, th, &[sx, sy])).collect()).unwrap();
        let c = rotate(&[0.0, 0.0], th, &[sx, sy]);
        let bm = beta_number(&moved, &c, 1.0, 1).unwrap().beta;
        prop_assert!((b * b - bm * bm).abs() <= 1e-12 + 1e-9 * b * b);
    }

    #[test]
    fn beta_is_invariant_under_dilation(pts in cloud_strategy(), s in 0.1f64..10.0) {
        let mu = PointMeasure::counting(pts.clone()).unwrap();
        let b = beta_number(&mu, &[0.0, 0.0], 1.0, 1).unwrap();
        let scaled = PointMeasure::counting(pts.iter().map(|p| vec![s * p[0], s * p[1]]).collect()).unwrap();
        let bs = beta_number(&scaled, &[0.0, 0.0], s, 1).unwrap();
        // Counting measures keep their mass; the r^-(j+2) factor absorbs s^2 and
        // leaves s^-j.
        let (x, y) = (bs.beta * bs.beta * s, b.beta * b.beta);
        prop_assert!((x - y).abs() <= 1e-12 + 1e-9 * y);
    }

    #[test]
    fn eigenvalue_identity_and_semidefiniteness(pts in prop::collection::vec(prop::collection::vec(-0.5f64..0.5, 3), 1..15), j in 1usize..3) {
        let mu = PointMeasure::counting(pts).unwrap();
        let x = [0.0; 3];
        let form = second_moment_form(&mu, &x, 1.0).unwrap();
        let (ev, _) = sorted_eigen(&form);
        let raw = nalgebra::SymmetricEigen::new(form.clone()).eigenvalues.min();
        prop_assert!(raw >= -1e-12 * form.trace().max(1e-300));
        prop_assert!(ev.windows(2).all(|w| w[0] >= w[1]));
        let b = beta_number(&mu, &x, 1.0, j).unwrap();
        let tail: f64 = b.eigenvalues[j..].iter().sum::<f64>() * b.mass;
        let direct = plane_distance_integral(&mu, &x, 1.0, &b.base, &b.basis);
        prop_assert!((tail - direct).abs() <= 1e-10 * tail + 1e-13 * form.trace() * b.mass);
        for (a, v) in b.basis.iter().enumerate() {
            for (c, w) in b.basis.iter().enumerate() {
                let ip: f64 = v.iter().zip(w).map(|(p, q)| p * q).sum();
                let target = if a == c { 1.0 } else { 0.0 };
                prop_assert!((ip - target).abs() < 1e-12);
            }
        }
    }
}
