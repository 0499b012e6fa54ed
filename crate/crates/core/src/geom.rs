//! Minimal 3-vector helpers over `[f64; 3]`.

pub type Vec3 = [f64; 3];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

/// Rotates `v` about the world z axis by `yaw` radians.
#[inline]
pub fn rotate_yaw(v: Vec3, yaw: f64) -> Vec3 {
    let (s, c) = yaw.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
}

/// Camera pose with pitch and roll fixed at zero. The camera looks along its
/// local +x axis; +z is up.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Pose {
    pub position: Vec3,
    /// Radians, normalized to `[0, 2π)`.
    pub yaw: f64,
}

impl Pose {
    pub fn new(position: Vec3, yaw: f64) -> Self {
        Self { position, yaw: normalize_yaw(yaw) }
    }

    /// Maps a camera-frame vector to the world frame (rotation only).
    #[inline]
    pub fn to_world_dir(&self, v: Vec3) -> Vec3 {
        rotate_yaw(v, self.yaw)
    }

    #[inline]
    pub fn to_world_point(&self, v: Vec3) -> Vec3 {
        add(self.position, rotate_yaw(v, self.yaw))
    }
}

pub fn normalize_yaw(yaw: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let y = yaw.rem_euclid(tau);
    if y >= tau {
        0.0
    } else {
        y
    }
}
