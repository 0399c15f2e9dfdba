//! Eigenvalue route versus brute-force search for beta numbers on seeded
//! random clouds, plus the four-point cross.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vecbern::stratification::{beta_brute_force, beta_number, PointMeasure};

use crate::Result;

pub const ORACLE_CLOUDS: u64 = 100;
pub const ORACLE_TOL: f64 = 1e-6;
pub const ORACLE_RADIUS: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCase {
    pub seed: u64,
    pub d: usize,
    pub j: usize,
    pub points: usize,
    pub eigen: f64,
    pub brute: f64,
    pub rel_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub cases: Vec<OracleCase>,
    pub worst_rel_gap: f64,
    pub cross_eigen: f64,
    pub cross_brute: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Cloud `seed`: `d` alternates 2, 3; `j` is 1 in the plane and alternates
/// 1, 2 in space; between `j + 2` and 20 points in `[-0.7, 0.7]^d` with
/// weights in `[0.5, 2]`.
pub fn seeded_cloud(seed: u64) -> Result<(PointMeasure, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = if seed.is_multiple_of(2) { 2 } else { 3 };
    let j = if d == 2 { 1 } else { 1 + (seed / 2 % 2) as usize };
    let n = rng.random_range(j + 2..=20);
    let pts = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-0.7..0.7)).collect())
        .collect();
    let w = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    Ok((PointMeasure::new(pts, w)?, j))
}

pub fn cross() -> Result<PointMeasure> {
    Ok(PointMeasure::counting(vec![
        vec![1.0, 0.0],
        vec![-1.0, 0.0],
        vec![0.0, 1.0],
        vec![0.0, -1.0],
    ])?)
}

pub fn run_oracle(clouds: u64) -> Result<OracleReport> {
    let cases: Vec<OracleCase> = (0..clouds)
        .into_par_iter()
        .map(|seed| -> Result<OracleCase> {
            let (mu, j) = seeded_cloud(seed)?;
            let x = vec![0.0; mu.dim()];
            let eigen = beta_number(&mu, &x, ORACLE_RADIUS, j)?.beta;
            let brute = beta_brute_force(&mu, &x, ORACLE_RADIUS, j)?;
            Ok(OracleCase {
                seed,
                d: mu.dim(),
                j,
                points: mu.len(),
                eigen,
                brute,
                rel_gap: (eigen - brute).abs() / eigen.max(f64::MIN_POSITIVE),
            })
        })
        .collect::<Result<_>>()?;
    let worst_rel_gap = cases.iter().map(|c| c.rel_gap).fold(0.0, f64::max);
    let c = cross()?;
    let cross_eigen = beta_number(&c, &[0.0, 0.0], 2.0, 1)?.beta;
    let cross_brute = beta_brute_force(&c, &[0.0, 0.0], 2.0, 1)?;
    let passed = worst_rel_gap <= ORACLE_TOL
        && (cross_eigen - 0.5).abs() <= 1e-15
        && (cross_brute - 0.5).abs() <= ORACLE_TOL * 0.5;
    Ok(OracleReport {
        cases,
        worst_rel_gap,
        cross_eigen,
        cross_brute,
        tolerance: ORACLE_TOL,
        passed,
    })
}
