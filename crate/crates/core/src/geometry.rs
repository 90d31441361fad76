//! Arm layouts: the built-in catalog of rotating-arm polyhedra and planar
//! frames, one fixed-tilt hexagon, and user-supplied layouts loaded from JSON.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix3, Matrix6xX};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{normalized, Vec3};

const UNIT_TOL: f64 = 1e-9;
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmKind {
    /// Propeller disk can spin continuously about the arm's long axis.
    Rotating,
    /// Fixed thrust axis, thrust only along `+n`.
    FixedUnidirectional,
    /// Fixed thrust axis, thrust of either sign (reversible motor).
    FixedBidirectional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    /// Arm endpoint (propeller hub) in the body frame, meters.
    pub r: Vec3,
    /// Rotation axis of the arm.
    pub x: Vec3,
    /// Thrust direction at zero arm angle; the fixed thrust axis for fixed arms.
    pub z0: Vec3,
    /// Propeller spin sign, ±1.
    pub spin: f64,
    pub kind: ArmKind,
}

impl Arm {
    /// Rotating arm with the default zero-angle thrust direction.
    pub fn rotating(r: Vec3, spin: f64) -> Result<Arm> {
        let x = normalized(&r)?;
        Ok(Arm {
            r,
            x,
            z0: default_zero_direction(&x),
            spin,
            kind: ArmKind::Rotating,
        })
    }

    pub fn fixed(r: Vec3, n: Vec3, spin: f64, kind: ArmKind) -> Result<Arm> {
        if kind == ArmKind::Rotating {
            return Err(Error::invalid("fixed arm constructed with rotating kind"));
        }
        Ok(Arm {
            r,
            x: normalized(&r).unwrap_or_else(|_| Vec3::x()),
            z0: normalized(&n)?,
            spin,
            kind,
        })
    }

    pub fn is_rotating(&self) -> bool {
        self.kind == ArmKind::Rotating
    }
}

/// `z0 = normalize(ez − ⟨ez, x⟩x)` unless the axis is (anti)parallel to
/// body z, in which case `ex`.
pub fn default_zero_direction(x: &Vec3) -> Vec3 {
    let ez = Vec3::z();
    let v = ez - x * ez.dot(x);
    let n = v.norm();
    if n < 1e-9 {
        Vec3::x()
    } else {
        v / n
    }
}

/// Orthonormal basis `(z0, x × z0)` of the plane a rotating arm can push in.
/// The thrust direction at angle `a` is `cos(a)·b1 + sin(a)·b2`.
pub fn thrust_plane_basis(arm: &Arm) -> Result<(Vec3, Vec3)> {
    if !arm.is_rotating() {
        return Err(Error::invalid("thrust plane requested for a fixed arm"));
    }
    Ok((arm.z0, arm.x.cross(&arm.z0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroneGeometry {
    pub name: String,
    pub arms: Vec<Arm>,
}

/// Identifiers of the built-in layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatalogId {
    OctahedronRot,
    TetrahedronRot,
    CubeRot,
    HexagonRot,
    SquareRot,
    HexagonTilt30Fixed,
}

impl CatalogId {
    pub const ALL: [CatalogId; 6] = [
        CatalogId::OctahedronRot,
        CatalogId::TetrahedronRot,
        CatalogId::CubeRot,
        CatalogId::HexagonRot,
        CatalogId::SquareRot,
        CatalogId::HexagonTilt30Fixed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CatalogId::OctahedronRot => "octahedron_rot",
            CatalogId::TetrahedronRot => "tetrahedron_rot",
            CatalogId::CubeRot => "cube_rot",
            CatalogId::HexagonRot => "hexagon_rot",
            CatalogId::SquareRot => "square_rot",
            CatalogId::HexagonTilt30Fixed => "hexagon_tilt30_fixed",
        }
    }
}

impl fmt::Display for CatalogId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CatalogId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CatalogId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::UnknownConfiguration(s.to_string()))
    }
}

/// Body radius of the octahedral prototype: half its 412 mm motor diagonal.
pub const DEFAULT_SCALE: f64 = 0.206;

/// Build a catalog layout with arm endpoints at distance `scale` from the
/// center.
///
/// Spin signs follow the vertex order used below; whenever two arms are
/// collinear (opposite vertices) they get opposite signs.
pub fn build_catalog(id: CatalogId, scale: f64) -> Result<DroneGeometry> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::invalid(format!("scale must be positive, got {scale}")));
    }
    let rotating = |dirs: &[Vec3], spins: &[f64]| -> Result<Vec<Arm>> {
        dirs.iter()
            .zip(spins)
            .map(|(d, &s)| Arm::rotating(d.normalize() * scale, s))
            .collect()
    };
    let planar = |count: usize| -> Vec<Vec3> {
        (0..count)
            .map(|k| {
                let phi = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                Vec3::new(phi.cos(), phi.sin(), 0.0)
            })
            .collect()
    };
    let alternating = |count: usize| -> Vec<f64> {
        (0..count).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect()
    };

    let arms = match id {
        CatalogId::OctahedronRot => {
            let dirs = [
                Vec3::x(),
                -Vec3::x(),
                Vec3::y(),
                -Vec3::y(),
                Vec3::z(),
                -Vec3::z(),
            ];
            rotating(&dirs, &alternating(6))?
        }
        CatalogId::TetrahedronRot => {
            // alternate corners of the cube; no two are collinear
            let dirs = [
                Vec3::new(1.0, 1.0, 1.0),
                Vec3::new(1.0, -1.0, -1.0),
                Vec3::new(-1.0, 1.0, -1.0),
                Vec3::new(-1.0, -1.0, 1.0),
            ];
            rotating(&dirs, &alternating(4))?
        }
        CatalogId::CubeRot => {
            let mut dirs = Vec::with_capacity(8);
            for &sx in &[1.0, -1.0] {
                for &sy in &[1.0, -1.0] {
                    for &sz in &[1.0, -1.0] {
                        dirs.push(Vec3::new(sx, sy, sz));
                    }
                }
            }
            // sign of the coordinate product flips between opposite corners
            let spins: Vec<f64> = dirs.iter().map(|d| (d.x * d.y * d.z).signum()).collect();
            rotating(&dirs, &spins)?
        }
        CatalogId::HexagonRot => rotating(&planar(6), &alternating(6))?,
        CatalogId::SquareRot => rotating(&planar(4), &alternating(4))?,
        CatalogId::HexagonTilt30Fixed => {
            let tilt = 30f64.to_radians();
            planar(6)
                .into_iter()
                .enumerate()
                .map(|(k, radial)| {
                    let side = if k % 2 == 0 { 1.0 } else { -1.0 };
                    // tilt about the arm's own axis, alternating direction
                    let tangent = Vec3::z().cross(&radial);
                    let n = Vec3::z() * tilt.cos() + tangent * (side * tilt.sin());
                    Arm::fixed(radial * scale, n, side, ArmKind::FixedUnidirectional)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(DroneGeometry {
        name: id.as_str().to_string(),
        arms,
    })
}

/// One arm in a geometry file. Rotating arms need `x` (and may give `z0`);
/// fixed arms need `n`. Lengths are meters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmRecord {
    pub r: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z0: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<[f64; 3]>,
    pub s: f64,
    pub kind: ArmKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryFile {
    #[serde(default = "custom_name")]
    pub name: String,
    pub arms: Vec<ArmRecord>,
}

fn custom_name() -> String {
    "custom".to_string()
}

fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl DroneGeometry {
    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }

    /// Parse a geometry document. Structural problems are errors; the
    /// geometric checks of [`validate`] run afterwards and also reject.
    pub fn from_json_str(text: &str) -> Result<DroneGeometry> {
        let file: GeometryFile = serde_json::from_str(text)?;
        let arms = file
            .arms
            .iter()
            .enumerate()
            .map(|(i, rec)| {
                if rec.s != 1.0 && rec.s != -1.0 {
                    return Err(Error::invalid(format!("arm {i}: spin sign must be ±1")));
                }
                match rec.kind {
                    ArmKind::Rotating => {
                        let x = rec
                            .x
                            .ok_or_else(|| Error::invalid(format!("arm {i}: rotating arm needs `x`")))?;
                        let x = vec3(x);
                        Ok(Arm {
                            r: vec3(rec.r),
                            x,
                            z0: rec.z0.map(vec3).unwrap_or_else(|| default_zero_direction(&x)),
                            spin: rec.s,
                            kind: ArmKind::Rotating,
                        })
                    }
                    kind => {
                        let n = rec
                            .n
                            .ok_or_else(|| Error::invalid(format!("arm {i}: fixed arm needs `n`")))?;
                        let r = vec3(rec.r);
                        Ok(Arm {
                            r,
                            x: rec
                                .x
                                .map(vec3)
                                .unwrap_or_else(|| normalized(&r).unwrap_or_else(|_| Vec3::x())),
                            z0: vec3(n),
                            spin: rec.s,
                            kind,
                        })
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let geometry = DroneGeometry {
            name: file.name,
            arms,
        };
        let report = validate(&geometry);
        if !report.is_ok() {
            return Err(Error::Infeasible(format!(
                "geometry `{}` failed validation: {}",
                geometry.name,
                report.violations.join("; ")
            )));
        }
        Ok(geometry)
    }

    pub fn load(path: &Path) -> Result<DroneGeometry> {
        DroneGeometry::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_file(&self) -> GeometryFile {
        let arr = |v: &Vec3| [v.x, v.y, v.z];
        GeometryFile {
            name: self.name.clone(),
            arms: self
                .arms
                .iter()
                .map(|a| match a.kind {
                    ArmKind::Rotating => ArmRecord {
                        r: arr(&a.r),
                        x: Some(arr(&a.x)),
                        z0: Some(arr(&a.z0)),
                        n: None,
                        s: a.spin,
                        kind: a.kind,
                    },
                    _ => ArmRecord {
                        r: arr(&a.r),
                        x: None,
                        z0: None,
                        n: Some(arr(&a.z0)),
                        s: a.spin,
                        kind: a.kind,
                    },
                })
                .collect(),
        }
    }

    /// Force directions each arm can realize linearly: `(b1, b2)` for a
    /// rotating arm, the fixed axis for a fixed arm. Returned as
    /// `(arm index, direction)` in arm order.
    pub fn force_directions(&self) -> Vec<(usize, Vec3)> {
        let mut out = Vec::with_capacity(2 * self.arms.len());
        for (i, arm) in self.arms.iter().enumerate() {
            match arm.kind {
                ArmKind::Rotating => {
                    out.push((i, arm.z0));
                    out.push((i, arm.x.cross(&arm.z0)));
                }
                _ => out.push((i, arm.z0)),
            }
        }
        out
    }

    /// Stacked `[d; r × d]` columns of the hover map for the given directions.
    pub fn wrench_map(&self, directions: &[(usize, Vec3)]) -> Matrix6xX<f64> {
        let mut m = Matrix6xX::zeros(directions.len());
        for (col, (i, d)) in directions.iter().enumerate() {
            let t = self.arms[*i].r.cross(d);
            m.fixed_view_mut::<3, 1>(0, col).copy_from(d);
            m.fixed_view_mut::<3, 1>(3, col).copy_from(&t);
        }
        m
    }

    pub fn max_radius(&self) -> f64 {
        self.arms.iter().map(|a| a.r.norm()).fold(0.0, f64::max)
    }
}

/// Numerical rank of a matrix via its singular values.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max).count()
}

/// The 24 proper rotations mapping the coordinate axes onto themselves.
pub fn octahedral_group() -> Vec<Matrix3<f64>> {
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::new();
    for p in perms {
        for signs in 0..8 {
            let mut m = Matrix3::<f64>::zeros();
            for row in 0..3 {
                let s = if signs & (1 << row) != 0 { -1.0 } else { 1.0 };
                m[(row, p[row])] = s;
            }
            if (m.determinant() - 1.0).abs() < 1e-12 {
                out.push(m);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    /// Rank of the stacked linear hover map.
    pub rank: usize,
    /// Number of linear thrust coordinates minus the rank.
    pub nullity: usize,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate(g: &DroneGeometry) -> ValidationReport {
    let mut violations = Vec::new();
    if g.arms.len() < 4 {
        violations.push(format!("need at least 4 arms, found {}", g.arms.len()));
    }
    for (i, arm) in g.arms.iter().enumerate() {
        if !(arm.r.iter().chain(arm.x.iter()).chain(arm.z0.iter())).all(|c| c.is_finite()) {
            violations.push(format!("arm {i}: non-finite component"));
            continue;
        }
        if arm.spin != 1.0 && arm.spin != -1.0 {
            violations.push(format!("arm {i}: spin sign {} is not ±1", arm.spin));
        }
        if (arm.z0.norm() - 1.0).abs() > UNIT_TOL {
            violations.push(format!("arm {i}: thrust direction is not unit length"));
        }
        if arm.is_rotating() {
            if (arm.x.norm() - 1.0).abs() > UNIT_TOL {
                violations.push(format!("arm {i}: rotation axis is not unit length"));
            }
            let dot = arm.x.dot(&arm.z0);
            if dot.abs() > UNIT_TOL {
                violations.push(format!(
                    "arm {i}: zero-angle thrust direction not orthogonal to rotation axis (dot {dot:.3e})"
                ));
            }
        }
    }
    let dirs = g.force_directions();
    let (rank, nullity) = if dirs.is_empty() || !violations.is_empty() {
        (0, dirs.len())
    } else {
        let map = g.wrench_map(&dirs);
        let rank = numerical_rank(&DMatrix::from_column_slice(6, dirs.len(), map.as_slice()));
        (rank, dirs.len() - rank)
    };
    if violations.is_empty() && rank < 6 {
        violations.push(format!(
            "hover map has rank {rank} < 6: some body wrenches are out of reach"
        ));
    }
    ValidationReport {
        violations,
        rank,
        nullity,
    }
}
