//! Vector and quaternion helpers shared by every other module.
//!
//! Quaternions are Hamilton, scalar-first, and act as active rotations:
//! `rotate(q, v)` returns `v` expressed after rotating it by `q`. Body-to-world
//! orientations are stored as `q`, so `rotate(q.inverse(), v_world)` yields the
//! body-frame components.

use nalgebra::{Quaternion, Unit};

use crate::error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type UnitQuaternion = nalgebra::UnitQuaternion<f64>;

const UNIT_TOL: f64 = 1e-9;

/// Rotation by `angle` radians about the unit vector `axis`.
pub fn quat_from_axis_angle(axis: &Vec3, angle: f64) -> Result<UnitQuaternion> {
    let norm = axis.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOL {
        return Err(Error::invalid(format!(
            "rotation axis must be unit length, got norm {norm}"
        )));
    }
    if !angle.is_finite() {
        return Err(Error::invalid("rotation angle must be finite"));
    }
    let (s, c) = (0.5 * angle).sin_cos();
    Ok(UnitQuaternion::new_normalize(Quaternion::new(
        c,
        s * axis.x,
        s * axis.y,
        s * axis.z,
    )))
}

/// Build a unit quaternion from scalar-first components, normalizing.
pub fn quat_from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<UnitQuaternion> {
    let q = Quaternion::new(w, x, y, z);
    let n = q.norm();
    if !n.is_finite() || n < 1e-12 {
        return Err(Error::invalid("quaternion must be finite and non-zero"));
    }
    Ok(UnitQuaternion::new_normalize(q))
}

/// Scalar-first components `[w, x, y, z]`.
pub fn quat_to_wxyz(q: &UnitQuaternion) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

#[inline]
pub fn rotate(q: &UnitQuaternion, v: &Vec3) -> Vec3 {
    q.transform_vector(v)
}

/// Axis-angle vector (body frame of `q`) of the rotation `q⁻¹·q_set`,
/// taking the short way round so the angle lies in `[0, π]`.
pub fn orientation_error(q_set: &UnitQuaternion, q: &UnitQuaternion) -> Vec3 {
    let mut d = (q.inverse() * q_set).into_inner();
    if d.w < 0.0 {
        d = -d;
    }
    let s = d.imag().norm();
    if s < 1e-300 {
        return Vec3::zeros();
    }
    // atan2 keeps precision near both zero and π.
    let angle = 2.0 * s.atan2(d.w);
    d.imag() * (angle / s)
}

/// Geodesic angle between two orientations, in `[0, π]`.
pub fn geodesic_angle(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    let dot = a.coords.dot(&b.coords).abs().min(1.0);
    2.0 * dot.acos()
}

/// Advance a body-to-world orientation by a constant body rate over `dt`.
/// Uses the exact exponential map and renormalizes the result.
pub fn integrate_orientation(q: &UnitQuaternion, omega_body: &Vec3, dt: f64) -> UnitQuaternion {
    let rot = exp_map(&(omega_body * dt));
    UnitQuaternion::new_normalize((q * rot).into_inner())
}

/// Quaternion of the rotation vector `phi` (axis times angle).
pub fn exp_map(phi: &Vec3) -> UnitQuaternion {
    let angle = phi.norm();
    if angle < 1e-12 {
        // second-order series; exact to machine precision at this size
        return UnitQuaternion::new_normalize(Quaternion::new(
            1.0 - angle * angle / 8.0,
            0.5 * phi.x,
            0.5 * phi.y,
            0.5 * phi.z,
        ));
    }
    UnitQuaternion::from_axis_angle(&Unit::new_unchecked(phi / angle), angle)
}

/// Unit vector along `v`, or an error when `v` is (near) zero.
pub fn normalized(v: &Vec3) -> Result<Vec3> {
    let n = v.norm();
    if !n.is_finite() || n < 1e-12 {
        return Err(Error::invalid("cannot normalize a zero or non-finite vector"));
    }
    Ok(v / n)
}

pub fn is_finite(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}
