//! Small rotation-group helpers shared by the simulator, the MDP and the baselines.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

pub const E3: Vector3<f64> = Vector3::new(0.0, 0.0, 1.0);

/// Skew-symmetric matrix so that `hat(a) * b == a.cross(&b)`.
#[inline]
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`hat`], reading the antisymmetric part of `m`.
#[inline]
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Rodrigues formula for `exp(hat(phi))`.
pub fn exp_so3(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = hat(phi);
    let (a, b) = if theta2 < 1e-12 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// One Newton step toward the closest rotation: `R (3I - RᵀR) / 2`.
///
/// Applied every integrator step, drift stays at machine precision.
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let e = r.transpose() * r;
    let mut out = r * (Matrix3::identity() * 3.0 - e) * 0.5;
    // a second pass is nearly free and removes the residual quadratic term
    let e = out.transpose() * out;
    out = out * (Matrix3::identity() * 3.0 - e) * 0.5;
    out
}

/// Z-Y-X Euler angles (roll, pitch, yaw) to a body→world rotation.
pub fn rot_from_euler(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    *Rotation3::from_euler_angles(roll, pitch, yaw).matrix()
}

pub fn rot_z(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Roll angle of the Z-Y-X decomposition, in (-π, π].
#[inline]
pub fn roll_of(r: &Matrix3<f64>) -> f64 {
    r[(2, 1)].atan2(r[(2, 2)])
}

#[inline]
pub fn yaw_of(r: &Matrix3<f64>) -> f64 {
    r[(1, 0)].atan2(r[(0, 0)])
}

/// Wraps an angle into (-π, π].
pub fn wrap_pi(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut x = a % two_pi;
    if x <= -std::f64::consts::PI {
        x += two_pi;
    } else if x > std::f64::consts::PI {
        x -= two_pi;
    }
    x
}

/// Rotation angle in [0, π] from the trace formula.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    c.acos()
}

/// Unit quaternion `[w, x, y, z]` with `w >= 0`.
pub fn quat_wxyz(r: &Matrix3<f64>) -> [f64; 4] {
    let q = UnitQuaternion::from_matrix(r);
    let q = q.quaternion();
    let s = if q.w < 0.0 { -1.0 } else { 1.0 };
    [s * q.w, s * q.i, s * q.j, s * q.k]
}

/// Angle between two vectors in [0, π]; zero if either is degenerate.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na < 1e-12 || nb < 1e-12 {
        return 0.0;
    }
    // atan2 form keeps precision near 0 and π
    a.cross(b).norm().atan2(a.dot(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hat_vee_roundtrip() {
        let w = Vector3::new(0.3, -1.2, 2.5);
        assert_relative_eq!(vee(&hat(&w)), w);
        let b = Vector3::new(1.0, 2.0, -0.5);
        assert_relative_eq!(hat(&w) * b, w.cross(&b));
    }

    #[test]
    fn exp_matches_nalgebra() {
        let phi = Vector3::new(0.4, -0.1, 1.3);
        let ours = exp_so3(&phi);
        let theirs = *Rotation3::from_scaled_axis(phi).matrix();
        assert_relative_eq!(ours, theirs, epsilon = 1e-14);
        let tiny = Vector3::new(1e-9, 0.0, -2e-9);
        assert_relative_eq!(
            exp_so3(&tiny),
            *Rotation3::from_scaled_axis(tiny).matrix(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn orthonormalize_repairs_perturbation() {
        let mut r = rot_from_euler(0.3, -0.2, 1.0);
        r[(0, 1)] += 1e-6;
        r[(2, 0)] -= 2e-6;
        let o = orthonormalize(&r);
        assert!((o.transpose() * o - Matrix3::identity()).norm() < 1e-14);
        assert!((o.determinant() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn wrap_and_angles() {
        assert_relative_eq!(wrap_pi(3.0 * std::f64::consts::PI), std::f64::consts::PI);
        assert_relative_eq!(wrap_pi(-0.5), -0.5);
        assert_relative_eq!(
            rotation_angle(&rot_z(std::f64::consts::PI)),
            std::f64::consts::PI
        );
        assert_relative_eq!(
            roll_of(&rot_from_euler(0.7, 0.2, -0.4)),
            0.7,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            yaw_of(&rot_from_euler(0.1, 0.2, -0.4)),
            -0.4,
            epsilon = 1e-12
        );
    }
}
