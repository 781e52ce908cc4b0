//! Pinhole camera models, the 8-value extrinsic code and world↔image
//! projection.
//!
//! Conventions used throughout the crate:
//!
//! - A [`Pose`] maps world coordinates to camera coordinates,
//!   `p_cam = R · p_world + T`, so `T` is the world origin expressed in
//!   the camera frame.
//! - Image coordinates `(u, v)` run along width and height respectively,
//!   with the origin at the top-left corner of the image and the center
//!   of pixel `(row r, col c)` at the continuous point `(c + 0.5, r + 0.5)`.
//! - Rotations are encoded as an axis-angle pair packed into an 8-vector
//!   `[sin θ, cos θ, uₓ, u_y, u_z, tₓ, t_y, t_z]` ([`ExtrinsicCode`]).

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points closer to the image plane than this depth count as behind the
/// camera.
pub const EPS_DEPTH: f64 = 1e-6;

/// Below this angle a rotation is treated as the identity and the axis is
/// unobservable.
pub const EPS_THETA: f64 = 1e-9;

const EPS_AXIS: f64 = 1e-9;

/// Pinhole intrinsics in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub px: f64,
    pub py: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, px: f64, py: f64) -> Result<Self> {
        if !(fx > 0.0) || !(fy > 0.0) || !px.is_finite() || !py.is_finite() {
            return Err(Error::invalid(format!(
                "intrinsics require fx, fy > 0 and finite principal point, got fx={fx} fy={fy} px={px} py={py}"
            )));
        }
        Ok(Self { fx, fy, px, py })
    }
}

/// Focal length and principal point estimated from the image size alone:
/// `fx = fy = height`, principal point at the image center.
pub fn estimate_intrinsics(height: u32, width: u32) -> Result<Intrinsics> {
    if height == 0 || width == 0 {
        return Err(Error::invalid(format!(
            "image size must be positive, got {height}x{width}"
        )));
    }
    let h = f64::from(height);
    let w = f64::from(width);
    Intrinsics::new(h, h, w / 2.0, h / 2.0)
}

/// Rigid world→camera transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    /// Builds a pose, checking that `rotation` is a proper rotation matrix
    /// (orthonormal with determinant +1, both within 1e-9).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.norm() > 1e-9 {
            return Err(Error::invalid(format!(
                "rotation is not orthonormal (|RᵀR - I| = {:.3e})",
                gram.norm()
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "rotation determinant is {det}, expected 1"
            )));
        }
        if !translation.iter().all(|t| t.is_finite()) {
            return Err(Error::invalid("translation must be finite"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in world coordinates, `-Rᵀ T`.
    pub fn camera_center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    pub fn transform(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Pose of a camera at `eye` looking at `target`, x to the right and
    /// y downward in the image, `up` being the world up direction.
    pub fn look_at(eye: Point3<f64>, target: Point3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::invalid("look_at eye and target coincide"));
        }
        let z = forward.normalize();
        let mut x = z.cross(&up);
        if x.norm() < 1e-9 {
            // View direction parallel to up; fall back to an arbitrary lateral axis.
            x = z.cross(&Vector3::y());
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye.coords);
        Pose::new(rotation, translation)
    }
}

/// 8-vector `[sin θ, cos θ, uₓ, u_y, u_z, tₓ, t_y, t_z]` describing a pose
/// as a rotation of `θ` about the unit axis `u` plus a translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicCode(pub [f64; 8]);

impl ExtrinsicCode {
    pub fn sin_theta(&self) -> f64 {
        self.0[0]
    }

    pub fn cos_theta(&self) -> f64 {
        self.0[1]
    }

    pub fn axis(&self) -> Vector3<f64> {
        Vector3::new(self.0[2], self.0[3], self.0[4])
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.0[5], self.0[6], self.0[7])
    }
}

/// Rodrigues rotation of `theta` radians about `axis`.
///
/// The axis is renormalized; a zero axis is accepted only for `|theta|`
/// below [`EPS_THETA`] (the rotation is then the identity).
pub fn rotation_from_axis_angle(axis: Vector3<f64>, theta: f64) -> Result<Matrix3<f64>> {
    if !theta.is_finite() || !axis.iter().all(|a| a.is_finite()) {
        return Err(Error::invalid("axis and angle must be finite"));
    }
    let norm = axis.norm();
    if norm < EPS_AXIS {
        if theta.abs() > EPS_THETA {
            return Err(Error::invalid(
                "zero rotation axis with a non-zero angle",
            ));
        }
        return Ok(Matrix3::identity());
    }
    let u = axis / norm;
    let (sin, cos) = theta.sin_cos();
    let cross = Matrix3::new(0.0, -u.z, u.y, u.z, 0.0, -u.x, -u.y, u.x, 0.0);
    Ok(Matrix3::identity() * cos + u * u.transpose() * (1.0 - cos) + cross * sin)
}

/// Extracts the canonical axis-angle of a rotation matrix: `θ ∈ [0, π]`,
/// unit axis. At `θ ≈ 0` the axis is the conventional `(0, 0, 1)`; at
/// `θ ≈ π` the sign ambiguity is resolved by making the first non-zero
/// axis component positive.
fn rotation_to_axis_angle(r: &Matrix3<f64>) -> (Vector3<f64>, f64) {
    let skew = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    let sin = skew.norm() / 2.0;
    let cos = (r.trace() - 1.0) / 2.0;
    let theta = sin.atan2(cos);

    if theta < EPS_THETA {
        return (Vector3::z(), theta);
    }
    if sin > 1e-6 {
        return (skew / skew.norm(), theta);
    }

    // θ near π: recover the axis from R + I, whose columns are all parallel
    // to the axis.
    let b = (r + Matrix3::identity()) / 2.0;
    let diag = Vector3::new(b[(0, 0)], b[(1, 1)], b[(2, 2)]);
    let k = diag.imax();
    let uk = diag[k].max(0.0).sqrt();
    let mut axis = Vector3::zeros();
    axis[k] = uk;
    for j in 0..3 {
        if j != k {
            axis[j] = b[(k, j)] / uk;
        }
    }
    let mut axis = axis.normalize();
    // Canonical sign: first component that is not numerically zero is positive.
    for c in 0..3 {
        if axis[c].abs() > 1e-9 {
            if axis[c] < 0.0 {
                axis = -axis;
            }
            break;
        }
    }
    (axis, theta)
}

/// Packs a pose into the 8-value code. `decode_extrinsics` inverts this to
/// within 1e-9 on the rotation and exactly on the translation.
pub fn encode_extrinsics(pose: &Pose) -> ExtrinsicCode {
    let (axis, theta) = rotation_to_axis_angle(pose.rotation());
    let t = pose.translation();
    ExtrinsicCode([
        theta.sin(),
        theta.cos(),
        axis.x,
        axis.y,
        axis.z,
        t.x,
        t.y,
        t.z,
    ])
}

/// Unpacks an 8-value code into a pose.
///
/// `(sin θ, cos θ)` is normalized to unit norm and the axis to unit
/// length before reconstruction, so raw regression outputs are accepted.
pub fn decode_extrinsics(code: &ExtrinsicCode) -> Result<Pose> {
    if !code.0.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("extrinsic code must be finite"));
    }
    let sc_norm = code.sin_theta().hypot(code.cos_theta());
    if sc_norm < 1e-9 {
        return Err(Error::DegenerateCode(
            "sin θ and cos θ are both zero".into(),
        ));
    }
    let sin = code.sin_theta() / sc_norm;
    let cos = code.cos_theta() / sc_norm;
    let theta = sin.atan2(cos);

    let axis = code.axis();
    let rotation = if axis.norm() < EPS_AXIS {
        if theta.abs() > EPS_THETA {
            return Err(Error::DegenerateCode(
                "zero axis with a non-zero angle".into(),
            ));
        }
        Matrix3::identity()
    } else {
        rotation_from_axis_angle(axis, theta)?
    };
    Pose::new(rotation, code.translation())
}

/// A camera: intrinsics, pose and the pixel extent of its image.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    /// (height, width) in pixels.
    pub image_size: (u32, u32),
}

impl CameraModel {
    pub fn new(intrinsics: Intrinsics, pose: Pose, image_size: (u32, u32)) -> Result<Self> {
        if image_size.0 == 0 || image_size.1 == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        Ok(Self {
            intrinsics,
            pose,
            image_size,
        })
    }

    pub fn height(&self) -> u32 {
        self.image_size.0
    }

    pub fn width(&self) -> u32 {
        self.image_size.1
    }
}

/// Image-plane projection of one world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub u: f64,
    pub v: f64,
    /// Depth along the optical axis in meters.
    pub depth: f64,
    /// False when the point is behind the camera (depth ≤ [`EPS_DEPTH`]).
    pub valid: bool,
}

impl ProjectedPoint {
    /// True when the projection is valid and lands inside the image extent.
    pub fn in_image(&self, camera: &CameraModel) -> bool {
        self.valid
            && self.u >= 0.0
            && self.u <= f64::from(camera.width())
            && self.v >= 0.0
            && self.v <= f64::from(camera.height())
    }
}

/// Projects a single world point through `K · [R|T]`.
///
/// Points at or behind the image plane are flagged invalid; their `(u, v)`
/// are not meaningful but index alignment with the input is preserved.
pub fn project_point(point: &Point3<f64>, camera: &CameraModel) -> ProjectedPoint {
    let p = camera.pose.transform(point);
    let depth = p.z;
    if depth <= EPS_DEPTH {
        return ProjectedPoint {
            u: f64::NAN,
            v: f64::NAN,
            depth,
            valid: false,
        };
    }
    let k = &camera.intrinsics;
    ProjectedPoint {
        u: k.fx * p.x / depth + k.px,
        v: k.fy * p.y / depth + k.py,
        depth,
        valid: true,
    }
}

/// Batch form of [`project_point`]; output index i corresponds to input i.
pub fn project_points(points: &[Point3<f64>], camera: &CameraModel) -> Vec<ProjectedPoint> {
    points.iter().map(|p| project_point(p, camera)).collect()
}
