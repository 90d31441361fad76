//! Hover efficiency of an arm layout.
//!
//! For a body-frame up direction the hover problem asks for per-arm forces
//! with the smallest sum of squared magnitudes that lift the weight along
//! `up` and produce no net moment about the center. Rotating arms may push
//! anywhere in their thrust plane, fixed arms only along their axis. Because
//! every admissible force is linear in a handful of per-arm coordinates, the
//! problem reduces to a minimum-norm solve of the stacked 6×K wrench map.
//!
//! Two metrics summarize the solution:
//!
//! * `x1 = Σ f·up / Σ |f|`: the share of produced thrust that actually lifts;
//! * `x2 = m·g / (N · max |f|)`: the share of installed thrust needed at hover,
//!   assuming identical motors sized for the most loaded arm.
//!
//! Both are invariant under scaling of mass, gravity and arm length.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::{fmt_f64, parse_f64};
use crate::geometry::{ArmKind, DroneGeometry};
use crate::spatial::Vec3;

const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
pub struct HoverProblem<'a> {
    pub geometry: &'a DroneGeometry,
    /// Gravity-opposing direction in the body frame.
    pub up: Vec3,
    pub mass: f64,
    pub gravity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoverSolution {
    /// Per-arm force in the body frame, newtons.
    pub forces: Vec<Vec3>,
    /// False for unidirectional arms that were switched off.
    pub active: Vec<bool>,
}

impl HoverSolution {
    pub fn sum_squared(&self) -> f64 {
        self.forces.iter().map(|f| f.norm_squared()).sum()
    }
}

/// Minimum-norm hover forces. Unidirectional arms whose thrust would be
/// negative are switched off one at a time (most negative first) and the
/// remaining problem is re-solved, at most once per arm.
pub fn solve_hover(p: &HoverProblem<'_>) -> Result<HoverSolution> {
    if !(p.mass > 0.0) || !p.mass.is_finite() {
        return Err(Error::invalid(format!("mass must be positive, got {}", p.mass)));
    }
    if !(p.gravity > 0.0) || !p.gravity.is_finite() {
        return Err(Error::invalid(format!(
            "gravity must be positive, got {}",
            p.gravity
        )));
    }
    if (p.up.norm() - 1.0).abs() > UNIT_TOL {
        return Err(Error::invalid("up direction must be unit length"));
    }

    let g = p.geometry;
    let weight = p.mass * p.gravity;
    let mut target = DVector::<f64>::zeros(6);
    target.fixed_rows_mut::<3>(0).copy_from(&(p.up * weight));

    let mut columns = g.force_directions();
    let mut active = vec![true; g.n_arms()];
    let tol = 1e-9 * weight * g.max_radius().max(1.0);

    for _ in 0..=g.n_arms() {
        let coords = min_norm_solve(g, &columns, &target)
            .ok_or_else(|| Error::Infeasible(format!("hover wrench out of reach for `{}`", g.name)))?;
        if coords.is_empty() {
            break;
        }
        let residual = (dense_map(g, &columns) * &coords - &target).norm();
        if residual > tol {
            return Err(Error::Infeasible(format!(
                "hover wrench out of reach for `{}` (residual {residual:.3e} N)",
                g.name
            )));
        }

        let worst = columns
            .iter()
            .zip(coords.iter())
            .enumerate()
            .filter(|(_, ((arm, _), _))| g.arms[*arm].kind == ArmKind::FixedUnidirectional)
            .filter(|(_, (_, &t))| t < -tol)
            .min_by(|a, b| a.1 .1.total_cmp(b.1 .1))
            .map(|(k, _)| k);

        match worst {
            None => {
                let mut forces = vec![Vec3::zeros(); g.n_arms()];
                for ((arm, dir), t) in columns.iter().zip(coords.iter()) {
                    forces[*arm] += dir * *t;
                }
                return Ok(HoverSolution { forces, active });
            }
            Some(k) => {
                let (arm, _) = columns.remove(k);
                active[arm] = false;
            }
        }
    }
    Err(Error::Infeasible(format!(
        "no non-negative hover thrust set for `{}`",
        g.name
    )))
}

fn dense_map(g: &DroneGeometry, columns: &[(usize, Vec3)]) -> DMatrix<f64> {
    let m = g.wrench_map(columns);
    DMatrix::from_column_slice(6, columns.len(), m.as_slice())
}

fn min_norm_solve(
    g: &DroneGeometry,
    columns: &[(usize, Vec3)],
    target: &DVector<f64>,
) -> Option<DVector<f64>> {
    if columns.is_empty() {
        return None;
    }
    let a = dense_map(g, columns);
    let svd = a.svd(true, true);
    let max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    svd.solve(target, 1e-10 * max).ok()
}

/// Fraction of produced thrust directed along `up`.
pub fn metric_x1(s: &HoverSolution, up: &Vec3) -> Result<f64> {
    let total: f64 = s.forces.iter().map(|f| f.norm()).sum();
    if !(total > 0.0) {
        return Err(Error::invalid("hover solution carries no thrust"));
    }
    let lifting: f64 = s.forces.iter().map(|f| f.dot(up)).sum();
    Ok(lifting / total)
}

/// Fraction of installed thrust (N motors sized for the largest load) used
/// at hover.
pub fn metric_x2(s: &HoverSolution, mass: f64, gravity: f64) -> Result<f64> {
    let max = s.forces.iter().map(|f| f.norm()).fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::invalid("hover solution carries no thrust"));
    }
    Ok(mass * gravity / (max * s.forces.len() as f64))
}

/// `n` near-uniform directions on the unit sphere (Fibonacci lattice),
/// ordered from the north pole southwards.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vec3::new(rho * phi.cos(), rho * phi.sin(), z)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencySample {
    pub up: [f64; 3],
    pub x1: f64,
    pub x2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfeasibleSample {
    pub index: usize,
    pub up: [f64; 3],
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencySummary {
    pub geometry: String,
    pub samples: usize,
    pub infeasible: usize,
    pub x1_min: f64,
    pub x1_max: f64,
    pub x2_min: f64,
    pub x2_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyMap {
    pub geometry: String,
    pub samples: Vec<EfficiencySample>,
    pub infeasible: Vec<InfeasibleSample>,
}

/// Evaluate X1 and X2 for `n_samples` up directions. Samples where the hover
/// problem has no solution are recorded in `infeasible` and skipped.
pub fn sweep_orientations(
    g: &DroneGeometry,
    n_samples: usize,
    mass: f64,
    gravity: f64,
) -> Result<EfficiencyMap> {
    if n_samples < 100 {
        return Err(Error::invalid(format!(
            "need at least 100 samples, got {n_samples}"
        )));
    }
    let dirs = fibonacci_sphere(n_samples);
    let results: Vec<Result<EfficiencySample>> = dirs
        .par_iter()
        .map(|up| {
            let problem = HoverProblem {
                geometry: g,
                up: *up,
                mass,
                gravity,
            };
            let s = solve_hover(&problem)?;
            Ok(EfficiencySample {
                up: [up.x, up.y, up.z],
                x1: metric_x1(&s, up)?,
                x2: metric_x2(&s, mass, gravity)?,
            })
        })
        .collect();

    let mut samples = Vec::with_capacity(n_samples);
    let mut infeasible = Vec::new();
    for (index, (res, up)) in results.into_iter().zip(&dirs).enumerate() {
        match res {
            Ok(s) => samples.push(s),
            Err(e) if e.is_numerical() => infeasible.push(InfeasibleSample {
                index,
                up: [up.x, up.y, up.z],
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(EfficiencyMap {
        geometry: g.name.clone(),
        samples,
        infeasible,
    })
}

impl EfficiencyMap {
    pub fn summary(&self) -> Result<EfficiencySummary> {
        if self.samples.is_empty() {
            return Err(Error::Infeasible(format!(
                "`{}` cannot hover in any sampled orientation",
                self.geometry
            )));
        }
        let range = |f: fn(&EfficiencySample) -> f64| {
            self.samples
                .iter()
                .map(f)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                })
        };
        let (x1_min, x1_max) = range(|s| s.x1);
        let (x2_min, x2_max) = range(|s| s.x2);
        Ok(EfficiencySummary {
            geometry: self.geometry.clone(),
            samples: self.samples.len() + self.infeasible.len(),
            infeasible: self.infeasible.len(),
            x1_min,
            x1_max,
            x2_min,
            x2_max,
        })
    }

    /// Columns `up_x, up_y, up_z, x1, x2`, one row per feasible sample.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["up_x", "up_y", "up_z", "x1", "x2"])?;
        for s in &self.samples {
            w.write_record([
                fmt_f64(s.up[0]),
                fmt_f64(s.up[1]),
                fmt_f64(s.up[2]),
                fmt_f64(s.x1),
                fmt_f64(s.x2),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(geometry: &str, input: R) -> Result<EfficiencyMap> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let expected = ["up_x", "up_y", "up_z", "x1", "x2"];
        if headers.iter().ne(expected.iter().copied()) {
            return Err(Error::invalid(format!(
                "unexpected efficiency columns {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut samples = Vec::new();
        for row in r.records() {
            let row = row?;
            let v: Vec<f64> = row
                .iter()
                .zip(expected)
                .map(|(f, c)| parse_f64(f, c))
                .collect::<Result<_>>()?;
            samples.push(EfficiencySample {
                up: [v[0], v[1], v[2]],
                x1: v[3],
                x2: v[4],
            });
        }
        Ok(EfficiencyMap {
            geometry: geometry.to_string(),
            samples,
            infeasible: Vec::new(),
        })
    }
}
