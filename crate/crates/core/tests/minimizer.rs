use std::time::Instant;

use vecbern::energy::{total_energy, EnergyParams, NodeRegion};
use vecbern::grid::{BallWindow, GridSpec, VectorField};
use vecbern::minimizer::{minimize, BoundaryData, MinimizeResult, SolverConfig};
use vecbern::model::ModelSolution;
use vecbern::quadrature::Quadrature;

const ALPHA: [f64; 2] = [0.6, 0.8];

fn relative_l2(u: &VectorField, exact: &ModelSolution, radius: f64) -> f64 {
    let q = Quadrature::default_for(2);
    let w = BallWindow::on_grid(u.grid(), &[0.0, 0.0], radius).unwrap();
    let mut e = [0.0; 2];
    let err = q.ball_integral(&w, |x| {
        exact.eval(x, &mut e);
        let v = u.interpolate(x).unwrap();
        (v[0] - e[0]).powi(2) + (v[1] - e[1]).powi(2)
    });
    let norm = q.ball_integral(&w, |x| {
        exact.eval(x, &mut e);
        e[0] * e[0] + e[1] * e[1]
    });
    (err / norm).sqrt()
}

fn solve(model: &ModelSolution, n: usize) -> MinimizeResult {
    let grid = GridSpec::unit(2, n).unwrap();
    let bd = BoundaryData::from_field(&model.sample(grid)).unwrap();
    let params = EnergyParams::new(1.0).unwrap();
    let t = Instant::now();
    let res = minimize(&bd, &params, &SolverConfig::default()).unwrap();
    eprintln!(
        "n={n} solve {:.2?} outer={} flips={} J={:?}",
        t.elapsed(),
        res.iterations,
        res.accepted_flips,
        res.energy_trace
    );
    res
}

fn assert_monotone(trace: &[f64]) {
    for p in trace.windows(2) {
        assert!(p[1] <= p[0] + 1e-12 * p[0].abs(), "trace increased: {trace:?}");
    }
}

#[test]
fn half_plane_data_recovers_the_half_plane_solution() {
    let model = ModelSolution::half_plane(&ALPHA, &[1.0, 0.0]).unwrap();
    let res = solve(&model, 129);
    assert!(res.converged);
    assert_monotone(&res.energy_trace);
    let err = relative_l2(&res.field, &model, 0.5);
    eprintln!("half-plane relative L2 error {err:e}");
    assert!(err <= 0.02);
}

#[test]
fn rank_one_data_recovers_the_linear_map() {
    let model = ModelSolution::rank_one(&ALPHA, &[1.0, 0.0]).unwrap();
    let res = solve(&model, 129);
    assert!(res.converged);
    assert_monotone(&res.energy_trace);
    let err = relative_l2(&res.field, &model, 0.5);
    eprintln!("rank-one relative L2 error {err:e}");
    assert!(err <= 0.02);
}

#[test]
fn minimizer_energy_over_unit_disk() {
    let model = ModelSolution::half_plane(&ALPHA, &[1.0, 0.0]).unwrap();
    let res = solve(&model, 129);
    let region = NodeRegion::ball(res.field.grid(), &[0.0, 0.0], 1.0 - 1e-9);
    let params = EnergyParams::new(1.0).unwrap();
    let j = total_energy(&res.field, &region, &params);
    assert!(
        (j - std::f64::consts::PI).abs() <= 0.02 * std::f64::consts::PI,
        "J = {j}"
    );
}

#[test]
fn component_permutation_is_equivariant() {
    let grid = GridSpec::unit(2, 65).unwrap();
    let data = |x: &[f64], o: &mut [f64]| {
        o[0] = 0.9 * (x[0] + 0.3 * x[1]).max(0.0);
        o[1] = 0.5 * (x[1] - 0.2).max(0.0) + 0.1 * x[0] * x[0];
    };
    let params = EnergyParams::new(1.0).unwrap();
    let cfg = SolverConfig::default();
    let a = minimize(&BoundaryData::from_fn(grid, 2, data).unwrap(), &params, &cfg).unwrap();
    let swapped = BoundaryData::from_fn(grid, 2, |x, o| {
        let mut t = [0.0; 2];
        data(x, &mut t);
        o[0] = t[1];
        o[1] = t[0];
    })
    .unwrap();
    let b = minimize(&swapped, &params, &cfg).unwrap();
    assert_eq!(a.phase, b.phase);
    for node in 0..grid.node_count() {
        let (u, v) = (a.field.node_value(node), b.field.node_value(node));
        assert!((u[0] - v[1]).abs() < 1e-9 && (u[1] - v[0]).abs() < 1e-9);
    }
}

#[test]
fn axis_swap_maps_minimizer_to_minimizer() {
    let grid = GridSpec::unit(2, 65).unwrap();
    let data = |x: &[f64], o: &mut [f64]| {
        o[0] = (0.8 * x[0] + 0.4 * x[1] - 0.1).max(0.0);
    };
    let params = EnergyParams::new(1.0).unwrap();
    let cfg = SolverConfig::default();
    let a = minimize(&BoundaryData::from_fn(grid, 1, data).unwrap(), &params, &cfg).unwrap();
    let b = minimize(
        &BoundaryData::from_fn(grid, 1, |x, o| data(&[x[1], x[0]], o)).unwrap(),
        &params,
        &cfg,
    )
    .unwrap();
    let n = grid.n();
    let mut mismatched = 0;
    for i in 0..n {
        for j in 0..n {
            let p = grid.node_at(&[i, j]);
            let q = grid.node_at(&[j, i]);
            if a.phase.contains(p) != b.phase.contains(q) {
                mismatched += 1;
            }
        }
    }
    assert_eq!(mismatched, 0);
    let ja = a.energy();
    let jb = b.energy();
    assert!((ja - jb).abs() < 1e-9 * ja);
}

#[test]
fn identity_data_keeps_full_phase() {
    let grid = GridSpec::unit(2, 65).unwrap();
    let model = ModelSolution::linear(2, 2, &[1.0, 0.0, 0.0, 1.0]).unwrap();
    let bd = BoundaryData::from_field(&model.sample(grid)).unwrap();
    let res = minimize(&bd, &EnergyParams::new(1.0).unwrap(), &SolverConfig::default()).unwrap();
    assert!(res.converged);
    assert!(relative_l2(&res.field, &model, 0.5) < 1e-6);
}

#[test]
fn three_dimensional_half_space() {
    let grid = GridSpec::unit(3, 33).unwrap();
    let model = ModelSolution::half_plane(&[0.6, 0.8], &[1.0, 0.0, 0.0]).unwrap();
    let bd = BoundaryData::from_field(&model.sample(grid)).unwrap();
    let t = Instant::now();
    let res = minimize(&bd, &EnergyParams::new(1.0).unwrap(), &SolverConfig::default()).unwrap();
    eprintln!("3-D solve {:.2?} trace {:?}", t.elapsed(), res.energy_trace);
    assert!(res.converged);
    assert_monotone(&res.energy_trace);
    let exact = model.sample(grid);
    let worst = exact
        .values()
        .iter()
        .zip(res.field.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "max deviation {worst}");
}
