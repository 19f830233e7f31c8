use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Constant-speed horizontal circle. Positive speed runs counter-clockwise
/// seen from above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleReference {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub speed: f64,
    /// Polar angle of the reference point at `t = 0` (rad).
    pub phase: f64,
}

impl CircleReference {
    pub fn new(center: Vector3<f64>, radius: f64, speed: f64, phase: f64) -> Self {
        assert!(radius > 0.0, "radius must be positive");
        Self {
            center,
            radius,
            speed,
            phase,
        }
    }

    /// Reference starting at the point of the circle closest to `position`.
    pub fn through(center: Vector3<f64>, radius: f64, speed: f64, position: &Vector3<f64>) -> Self {
        let d = position - center;
        let phase = if d.x.hypot(d.y) > 1e-9 {
            d.y.atan2(d.x)
        } else {
            0.0
        };
        Self::new(center, radius, speed, phase)
    }

    pub fn angle(&self, t: f64) -> f64 {
        self.phase + self.speed / self.radius * t
    }

    pub fn angular_rate(&self) -> f64 {
        self.speed / self.radius
    }

    pub fn position(&self, t: f64) -> Vector3<f64> {
        let (s, c) = self.angle(t).sin_cos();
        self.center + self.radius * Vector3::new(c, s, 0.0)
    }

    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        let (s, c) = self.angle(t).sin_cos();
        self.speed * Vector3::new(-s, c, 0.0)
    }

    pub fn acceleration(&self, t: f64) -> Vector3<f64> {
        let (s, c) = self.angle(t).sin_cos();
        -self.speed * self.speed / self.radius * Vector3::new(c, s, 0.0)
    }

    /// Heading that faces the circle center from the reference point.
    pub fn inward_yaw(&self, t: f64) -> f64 {
        let d = self.center - self.position(t);
        d.y.atan2(d.x)
    }
}
