//! Pose representation, quaternion algebra, error metrics, and Min-Max
//! target normalization.
//!
//! Quaternions use (w, x, y, z) component order everywhere, including file
//! formats. Canonical form has w >= 0 so that the double cover q / -q maps
//! to a single representative.

use serde::{Deserialize, Serialize};

use crate::error::{AprError, Result};

/// Unit quaternion in (w, x, y, z) order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, other: &Quat) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn negated(&self) -> Quat {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }

    /// Quaternion from yaw (z), pitch (y), roll (x) angles in radians.
    pub fn from_yaw_pitch_roll(yaw: f64, pitch: f64, roll: f64) -> Quat {
        let (sy, cy) = (0.5 * yaw).sin_cos();
        let (sp, cp) = (0.5 * pitch).sin_cos();
        let (sr, cr) = (0.5 * roll).sin_cos();
        Quat::new(
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        )
    }

    /// Rotate a vector by this quaternion (assumed unit norm).
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        // q * (0, v) * q^-1 expanded as t = 2 u x v; v' = v + w t + u x t
        let u = [self.x, self.y, self.z];
        let t = [
            2.0 * (u[1] * v[2] - u[2] * v[1]),
            2.0 * (u[2] * v[0] - u[0] * v[2]),
            2.0 * (u[0] * v[1] - u[1] * v[0]),
        ];
        [
            v[0] + self.w * t[0] + u[1] * t[2] - u[2] * t[1],
            v[1] + self.w * t[1] + u[2] * t[0] - u[0] * t[2],
            v[2] + self.w * t[2] + u[0] * t[1] - u[1] * t[0],
        ]
    }

    /// Rotate by the inverse (conjugate) of this unit quaternion.
    pub fn rotate_inverse(&self, v: [f64; 3]) -> [f64; 3] {
        Quat::new(self.w, -self.x, -self.y, -self.z).rotate(v)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }
}

/// Scale a quaternion to unit norm.
///
/// Fails on inputs with norm at or below 1e-12.
pub fn quat_normalize(q: Quat) -> Result<Quat> {
    let n = q.norm();
    if n <= 1e-12 {
        return Err(AprError::domain("cannot normalize zero-norm quaternion"));
    }
    Ok(Quat::new(q.w / n, q.x / n, q.y / n, q.z / n))
}

/// Pick the canonical representative of the double cover {q, -q}.
///
/// Returns q when w > 0 and -q when w < 0. When w == 0 the sign is flipped
/// so the first nonzero component is positive.
pub fn quat_canonicalize(q: Quat) -> Quat {
    if q.w > 0.0 {
        return q;
    }
    if q.w < 0.0 {
        return q.negated();
    }
    for c in [q.x, q.y, q.z] {
        if c > 0.0 {
            return q;
        }
        if c < 0.0 {
            return q.negated();
        }
    }
    q
}

/// Geodesic angle between two unit quaternions, in degrees.
///
/// Computed as 2 * acos(clamp(|<q1, q2>|, 0, 1)) * 180 / pi; the absolute
/// value makes q and -q equivalent. Range [0, 180].
pub fn quat_angular_distance(q1: &Quat, q2: &Quat) -> Result<f64> {
    for (q, which) in [(q1, "first"), (q2, "second")] {
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(AprError::Domain(format!(
                "{which} quaternion is not unit norm (|q| = {})",
                q.norm()
            )));
        }
    }
    let d = q1.dot(q2).abs().clamp(0.0, 1.0);
    Ok(2.0 * d.acos().to_degrees())
}

/// Euclidean distance between two positions in meters.
pub fn position_error(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// 3D position plus unit quaternion orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Position in meters (map frame).
    pub position: [f64; 3],
    /// Canonical unit quaternion (w, x, y, z).
    pub orientation: Quat,
}

impl Pose {
    /// Construct a pose, normalizing and canonicalizing the orientation.
    pub fn new(position: [f64; 3], orientation: Quat) -> Result<Pose> {
        let q = quat_canonicalize(quat_normalize(orientation)?);
        Ok(Pose {
            position,
            orientation: q,
        })
    }

    pub fn identity() -> Pose {
        Pose {
            position: [0.0; 3],
            orientation: Quat::IDENTITY,
        }
    }

    /// Map a point from the ego frame into the map frame.
    pub fn transform(&self, ego: [f64; 3]) -> [f64; 3] {
        let r = self.orientation.rotate(ego);
        [
            r[0] + self.position[0],
            r[1] + self.position[1],
            r[2] + self.position[2],
        ]
    }

    /// Map a point from the map frame into the ego frame.
    pub fn transform_inverse(&self, world: [f64; 3]) -> [f64; 3] {
        let d = [
            world[0] - self.position[0],
            world[1] - self.position[1],
            world[2] - self.position[2],
        ];
        self.orientation.rotate_inverse(d)
    }
}

/// Per-dimension Min-Max extrema of position targets, fitted on the
/// training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub min: [f64; 3],
    pub max: [f64; 3],
    /// True where max - min < 1e-9; those dimensions map to 0 on apply and
    /// return the minimum on invert.
    pub degenerate: [bool; 3],
}

const DEGENERATE_EXTENT: f64 = 1e-9;

impl NormalizationStats {
    /// Rebuild stats from stored bounds, re-deriving the degenerate flags.
    pub fn from_bounds(min: [f64; 3], max: [f64; 3]) -> NormalizationStats {
        let mut degenerate = [false; 3];
        for d in 0..3 {
            degenerate[d] = max[d] - min[d] < DEGENERATE_EXTENT;
        }
        NormalizationStats { min, max, degenerate }
    }
}

/// Fit Min-Max statistics over a non-empty list of positions.
pub fn minmax_fit(positions: &[[f64; 3]]) -> Result<NormalizationStats> {
    if positions.is_empty() {
        return Err(AprError::domain("cannot fit Min-Max stats on empty list"));
    }
    let mut min = positions[0];
    let mut max = positions[0];
    for p in positions.iter().skip(1) {
        for d in 0..3 {
            min[d] = min[d].min(p[d]);
            max[d] = max[d].max(p[d]);
        }
    }
    let mut degenerate = [false; 3];
    for d in 0..3 {
        degenerate[d] = max[d] - min[d] < DEGENERATE_EXTENT;
    }
    Ok(NormalizationStats {
        min,
        max,
        degenerate,
    })
}

/// Map a position into normalized target space: (p - min) / (max - min).
pub fn minmax_apply(stats: &NormalizationStats, p: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for d in 0..3 {
        out[d] = if stats.degenerate[d] {
            0.0
        } else {
            (p[d] - stats.min[d]) / (stats.max[d] - stats.min[d])
        };
    }
    out
}

/// Map a normalized target back to meters. Degenerate dimensions return
/// the stored minimum.
pub fn minmax_invert(stats: &NormalizationStats, u: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for d in 0..3 {
        out[d] = if stats.degenerate[d] {
            stats.min[d]
        } else {
            u[d] * (stats.max[d] - stats.min[d]) + stats.min[d]
        };
    }
    out
}
