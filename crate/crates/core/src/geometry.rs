//! Pinhole cameras, rigid transforms and two-view triangulation.

use nalgebra::{ComplexField, Matrix3, Rotation3, Unit, Vector3};

use crate::{Error, Mat3, Result, Vec3};

/// Orthonormality tolerance accepted by [`RigidTransform::new`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Minimum angle between two rays for [`triangulate`] to accept them.
pub const DEFAULT_RAY_EPSILON_RAD: f64 = 1e-6;

/// Pinhole intrinsics of a `width × height` camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl CameraIntrinsics {
    /// Validates `fx, fy > 0` and a principal point strictly inside the image.
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        if !(fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::InvalidIntrinsics("focal lengths must be positive"));
        }
        if !(cx > 0.0 && cx < f64::from(width)) || !(cy > 0.0 && cy < f64::from(height)) {
            return Err(Error::InvalidIntrinsics("principal point outside the image"));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// Focal length along u, in pixels.
    pub fn fx(&self) -> f64 {
        self.fx
    }

    /// Focal length along v, in pixels.
    pub fn fy(&self) -> f64 {
        self.fy
    }

    /// Principal point u coordinate.
    pub fn cx(&self) -> f64 {
        self.cx
    }

    /// Principal point v coordinate.
    pub fn cy(&self) -> f64 {
        self.cy
    }

    /// Image width in pixels.
    pub fn width(&self) -> u32 {
        self.width
    }

    /// Image height in pixels.
    pub fn height(&self) -> u32 {
        self.height
    }

    /// The 3×3 calibration matrix.
    pub fn matrix(&self) -> Mat3 {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Intrinsics of the same camera sampled at `width × height`, keeping
    /// pixel centers aligned (`u' = (u + 0.5)·s − 0.5`).
    pub fn rescaled(&self, width: u32, height: u32) -> Result<Self> {
        let sx = f64::from(width) / f64::from(self.width);
        let sy = f64::from(height) / f64::from(self.height);
        Self::new(
            self.fx * sx,
            self.fy * sy,
            (self.cx + 0.5) * sx - 0.5,
            (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        )
    }
}

/// Pixel coordinates plus depth of a projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// column, pixels
    pub u: f64,
    /// row, pixels
    pub v: f64,
    /// camera-frame z, meters
    pub depth: f64,
}

/// Projects a camera-frame point through the pinhole model.
pub fn project_point(p: &Vec3, k: &CameraIntrinsics) -> Result<Projection> {
    let z = p.z;
    if !(z > 0.0) {
        return Err(Error::NonPositiveDepth { depth: z });
    }
    Ok(Projection {
        u: k.fx * p.x / z + k.cx,
        v: k.fy * p.y / z + k.cy,
        depth: z,
    })
}

/// Back-projects pixel `(u, v)` to the camera-frame point at `depth`.
pub fn unproject_pixel(u: f64, v: f64, depth: f64, k: &CameraIntrinsics) -> Result<Vec3> {
    if !(depth > 0.0) {
        return Err(Error::NonPositiveDepth { depth });
    }
    Ok(Vector3::new(
        (u - k.cx) / k.fx * depth,
        (v - k.cy) / k.fy * depth,
        depth,
    ))
}

/// Rigid transform `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    /// Builds a transform, checking `RᵀR = I` and `det R = +1` within
    /// [`ROTATION_TOLERANCE`].
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        if rotation.iter().chain(translation.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let error = rotation_error(&rotation);
        if error > ROTATION_TOLERANCE {
            return Err(Error::InvalidRotation { error });
        }
        Ok(Self { rotation, translation })
    }

    /// Builds a transform from a rotation known to be proper, e.g. the output
    /// of an SVD projection.
    pub(crate) fn from_parts_unchecked(rotation: Mat3, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    /// The identity transform.
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Pure translation.
    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation,
        }
    }

    /// Rotation of `angle` radians about `axis` followed by `translation`.
    /// A zero axis yields the identity rotation.
    pub fn from_axis_angle(axis: &Vec3, angle: f64, translation: Vec3) -> Self {
        let rotation = match Unit::try_new(*axis, 1e-15) {
            Some(axis) => *Rotation3::from_axis_angle(&axis, angle).matrix(),
            None => Mat3::identity(),
        };
        Self { rotation, translation }
    }

    /// Rotation part.
    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    /// Translation part, meters.
    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Applies the transform to a point.
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Applies only the rotation.
    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Inverse transform.
    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Geodesic angle (radians) of `self.R · other.Rᵀ`.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        let relative = self.rotation * other.rotation.transpose();
        let cos = ((relative.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        cos.acos()
    }

    /// Position of the camera center when `self` maps world to camera.
    pub fn camera_center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }
}

/// Free-function form of [`RigidTransform::transform_point`].
pub fn transform_point(t: &RigidTransform, p: &Vec3) -> Vec3 {
    t.transform_point(p)
}

/// Largest deviation of `m` from a proper rotation.
pub fn rotation_error(m: &Mat3) -> f64 {
    let ortho = (m.transpose() * m - Mat3::identity()).amax();
    let det = (m.determinant() - 1.0).abs();
    ortho.max(det)
}

/// Reference and query cameras sharing one set of intrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewPair {
    intrinsics: CameraIntrinsics,
    ref_from_world: RigidTransform,
    query_from_world: RigidTransform,
    baseline_m: f64,
}

impl ViewPair {
    /// Derives the baseline from the two camera centers.
    pub fn new(
        intrinsics: CameraIntrinsics,
        ref_from_world: RigidTransform,
        query_from_world: RigidTransform,
    ) -> Self {
        let baseline_m =
            (ref_from_world.camera_center() - query_from_world.camera_center()).norm();
        Self {
            intrinsics,
            ref_from_world,
            query_from_world,
            baseline_m,
        }
    }

    /// Shared intrinsics.
    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    /// World → reference camera.
    pub fn ref_from_world(&self) -> &RigidTransform {
        &self.ref_from_world
    }

    /// World → query camera.
    pub fn query_from_world(&self) -> &RigidTransform {
        &self.query_from_world
    }

    /// Distance between the two camera centers, meters.
    pub fn baseline_m(&self) -> f64 {
        self.baseline_m
    }
}

/// Midpoint triangulation with the default ray epsilon.
pub fn triangulate(uv_ref: (f64, f64), uv_query: (f64, f64), pair: &ViewPair) -> Result<Vec3> {
    triangulate_with_epsilon(uv_ref, uv_query, pair, DEFAULT_RAY_EPSILON_RAD)
}

/// Returns the midpoint of the common perpendicular of the two viewing rays,
/// in world coordinates.
pub fn triangulate_with_epsilon(
    uv_ref: (f64, f64),
    uv_query: (f64, f64),
    pair: &ViewPair,
    epsilon_rad: f64,
) -> Result<Vec3> {
    let (c1, d1) = viewing_ray(uv_ref, &pair.ref_from_world, &pair.intrinsics);
    let (c2, d2) = viewing_ray(uv_query, &pair.query_from_world, &pair.intrinsics);

    let cross = d1.cross(&d2);
    let angle = cross.norm().atan2(d1.dot(&d2));
    if pair.baseline_m <= f64::EPSILON || !(angle >= epsilon_rad) {
        return Err(Error::DegenerateRays { angle_rad: angle });
    }

    // Closest points c1 + s·d1 and c2 + r·d2 on unit-direction rays.
    let w = c1 - c2;
    let b = d1.dot(&d2);
    let d = d1.dot(&w);
    let e = d2.dot(&w);
    let denom = 1.0 - b * b;
    let s = (b * e - d) / denom;
    let r = (e - b * d) / denom;
    Ok(((c1 + d1 * s) + (c2 + d2 * r)) * 0.5)
}

/// World-frame camera center and unit direction through pixel `uv`.
fn viewing_ray(uv: (f64, f64), cam_from_world: &RigidTransform, k: &CameraIntrinsics) -> (Vec3, Vec3) {
    let dir_cam = Vector3::new((uv.0 - k.cx) / k.fx, (uv.1 - k.cy) / k.fy, 1.0);
    let dir = cam_from_world.rotation().transpose() * dir_cam;
    (cam_from_world.camera_center(), dir.normalize())
}
