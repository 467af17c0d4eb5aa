//! Helpers shared by the integration tests.

#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use edgewatt::telemetry::{Deployment, DeploymentKind, ExperimentPlan};

/// Least squares through the normal equations, solved exactly over the
/// rationals. Every f64 input converts to a rational without rounding, so
/// the only rounding is the final conversion back.
pub fn exact_least_squares(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let n = rows[0].len();
    let q = |v: f64| BigRational::from_float(v).expect("finite input");
    let a: Vec<Vec<BigRational>> = rows.iter().map(|r| r.iter().map(|&v| q(v)).collect()).collect();
    let b: Vec<BigRational> = y.iter().map(|&v| q(v)).collect();

    // [AᵀA | Aᵀb]
    let mut m: Vec<Vec<BigRational>> = (0..n)
        .map(|i| {
            let mut row: Vec<BigRational> = (0..n)
                .map(|j| a.iter().fold(BigRational::zero(), |acc, r| acc + &r[i] * &r[j]))
                .collect();
            row.push(
                a.iter()
                    .zip(&b)
                    .fold(BigRational::zero(), |acc, (r, v)| acc + &r[i] * v),
            );
            row
        })
        .collect();

    for col in 0..n {
        let pivot = (col..n)
            .find(|&r| !m[r][col].is_zero())
            .expect("normal matrix is singular");
        m.swap(col, pivot);
        let p = m[col][col].clone();
        for v in m[col].iter_mut() {
            *v = &*v / &p;
        }
        let pivot_row = m[col].clone();
        for (r, row) in m.iter_mut().enumerate() {
            if r != col && !row[col].is_zero() {
                let f = row[col].clone();
                for (v, p) in row.iter_mut().zip(&pivot_row).skip(col) {
                    *v -= p * &f;
                }
            }
        }
    }
    m.iter().map(|row| row[n].to_f64().expect("representable")).collect()
}

/// Exact rational value of an f64, for comparisons that must not round.
pub fn rational(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite")
}

pub fn big(v: u64) -> BigInt {
    BigInt::from(v)
}

/// Largest coefficient error relative to the largest reference coefficient.
pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    got.iter().zip(want).fold(0.0f64, |m, (g, w)| m.max((g - w).abs())) / scale
}

pub fn deployment(kind: DeploymentKind) -> Deployment {
    Deployment {
        kind,
        software: "sim".into(),
    }
}

/// Idle plus 100..800 Mbps.
pub fn sweep(kind: DeploymentKind, phase_s: f64) -> ExperimentPlan {
    ExperimentPlan::traffic_sweep(format!("{}-sweep", kind.short()), deployment(kind), 100.0, 8, phase_s)
}

pub fn repo_root() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}
