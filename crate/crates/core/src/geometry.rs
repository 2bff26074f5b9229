//! Pinhole camera, workspace-plane homography and detection lifting.
//!
//! Workspace frame is right-handed and z-up with the table at `z = 0`.
//! Camera frame looks down its local `+Z`, with `+X` to the right and `+Y`
//! down so that it lines up with image axes.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Depth below which a point counts as behind the camera.
const MIN_DEPTH: f64 = 1e-9;
/// Relative size of the vertical ray component below which a ray is parallel to the plane.
const PARALLEL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {0:.3e} m)")]
    BehindCamera(f64),
    #[error("camera pose is degenerate for the workspace plane")]
    DegeneratePose,
    #[error("pixel ray does not reach the workspace plane")]
    NoIntersection,
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid box: {0}")]
    InvalidBox(String),
}

/// Intrinsics derived from image size and horizontal field of view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub image_width_px: u32,
    pub image_height_px: u32,
    pub horizontal_fov_rad: f64,
}

impl CameraModel {
    pub fn new(image_width_px: u32, image_height_px: u32, horizontal_fov_rad: f64) -> Result<Self, GeometryError> {
        let cam = Self {
            image_width_px,
            image_height_px,
            horizontal_fov_rad,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.image_width_px == 0 || self.image_height_px == 0 {
            return Err(GeometryError::InvalidCamera("image size must be positive".into()));
        }
        if !(self.horizontal_fov_rad > 0.0 && self.horizontal_fov_rad < std::f64::consts::PI) {
            return Err(GeometryError::InvalidCamera(format!(
                "horizontal fov {} rad outside (0, pi)",
                self.horizontal_fov_rad
            )));
        }
        Ok(())
    }

    pub fn focal_px(&self) -> f64 {
        (self.image_width_px as f64 / 2.0) / (self.horizontal_fov_rad / 2.0).tan()
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.image_width_px as f64 / 2.0, self.image_height_px as f64 / 2.0)
    }

    pub fn vertical_fov_rad(&self) -> f64 {
        2.0 * ((self.image_height_px as f64 / 2.0) / self.focal_px()).atan()
    }

    pub fn intrinsic_matrix(&self) -> Matrix3<f64> {
        let f = self.focal_px();
        let c = self.principal_point();
        Matrix3::new(f, 0.0, c.x, 0.0, f, c.y, 0.0, 0.0, 1.0)
    }
}

/// Camera placement in the workspace. `orientation` rotates camera-frame
/// vectors into the workspace frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    /// Builds a pose from a raw `(w, x, y, z)` quaternion, which must already
    /// be unit length to within 1e-9.
    pub fn from_parts(position: Vector3<f64>, quat_wxyz: [f64; 4]) -> Result<Self, GeometryError> {
        let q = Quaternion::new(quat_wxyz[0], quat_wxyz[1], quat_wxyz[2], quat_wxyz[3]);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidPose(format!("quaternion norm {norm} is not 1")));
        }
        Ok(Self {
            position,
            orientation: UnitQuaternion::new_unchecked(q),
        })
    }

    /// Camera at `eye` looking at `target`; `up` picks the roll so that it
    /// points toward the top of the image.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self, GeometryError> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidPose("eye and target coincide".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidPose("up is parallel to the view direction".into()))?;
        let down = forward.cross(&right);
        let rot = Rotation3::from_basis_unchecked(&[right, down, forward]);
        Ok(Self {
            position: eye,
            orientation: UnitQuaternion::from_rotation_matrix(&rot),
        })
    }

    /// Looking straight down from `(x, y, height)`, image up along workspace `+Y`.
    pub fn top_down(x: f64, y: f64, height: f64) -> Self {
        Self::look_at(
            Vector3::new(x, y, height),
            Vector3::new(x, y, height - 1.0),
            Vector3::new(0.0, 1.0, 0.0),
        )
        .expect("top-down pose is well defined")
    }

    pub fn forward(&self) -> Vector3<f64> {
        self.orientation * Vector3::z()
    }

    pub fn world_to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.inverse_transform_vector(&(world - self.position))
    }
}

pub fn project_point(camera: &CameraModel, pose: &Pose, world: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
    let pc = pose.world_to_camera(world);
    if pc.z <= MIN_DEPTH {
        return Err(GeometryError::BehindCamera(pc.z));
    }
    let f = camera.focal_px();
    let c = camera.principal_point();
    Ok(Vector2::new(c.x + f * pc.x / pc.z, c.y + f * pc.y / pc.z))
}

/// Projective map from homogeneous plane coordinates `(X, Y, 1)` to
/// homogeneous pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    matrix: Matrix3<f64>,
    inverse: Matrix3<f64>,
}

impl Homography {
    pub fn from_matrix(matrix: Matrix3<f64>) -> Result<Self, GeometryError> {
        let inverse = matrix.try_inverse().ok_or(GeometryError::DegeneratePose)?;
        Ok(Self { matrix, inverse })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn scaled(&self, k: f64) -> Result<Self, GeometryError> {
        Self::from_matrix(self.matrix * k)
    }

    pub fn plane_to_pixel(&self, plane: &Vector2<f64>) -> Vector2<f64> {
        let h = self.matrix * Vector3::new(plane.x, plane.y, 1.0);
        Vector2::new(h.x / h.z, h.y / h.z)
    }

    pub fn pixel_to_plane(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        let h = self.inverse * Vector3::new(pixel.x, pixel.y, 1.0);
        Vector2::new(h.x / h.z, h.y / h.z)
    }
}

/// `H = K [r1 r2 t]` for the plane `z = 0`, where `r1, r2` are the first two
/// columns of the world-to-camera rotation and `t` its translation.
pub fn plane_homography(camera: &CameraModel, pose: &Pose) -> Result<Homography, GeometryError> {
    if pose.position.z.abs() <= MIN_DEPTH || pose.forward().z.abs() <= PARALLEL_EPS {
        return Err(GeometryError::DegeneratePose);
    }
    let world_to_cam = pose.orientation.inverse().to_rotation_matrix();
    let r = world_to_cam.matrix();
    let t = -(r * pose.position);
    let extrinsic = Matrix3::from_columns(&[r.column(0).into_owned(), r.column(1).into_owned(), t]);
    Homography::from_matrix(camera.intrinsic_matrix() * extrinsic)
}

/// Intersects the pixel's viewing ray with the horizontal plane `z = plane_z`.
pub fn pixel_to_plane_at(
    camera: &CameraModel,
    pose: &Pose,
    pixel: &Vector2<f64>,
    plane_z: f64,
) -> Result<Vector2<f64>, GeometryError> {
    let f = camera.focal_px();
    let c = camera.principal_point();
    let dir_cam = Vector3::new((pixel.x - c.x) / f, (pixel.y - c.y) / f, 1.0);
    let dir = pose.orientation * dir_cam;
    if dir.z.abs() <= PARALLEL_EPS * dir.norm() {
        return Err(GeometryError::NoIntersection);
    }
    let s = (plane_z - pose.position.z) / dir.z;
    if s <= 0.0 {
        return Err(GeometryError::NoIntersection);
    }
    Ok(Vector2::new(pose.position.x + s * dir.x, pose.position.y + s * dir.y))
}

pub fn pixel_to_plane(camera: &CameraModel, pose: &Pose, pixel: &Vector2<f64>) -> Result<Vector2<f64>, GeometryError> {
    pixel_to_plane_at(camera, pose, pixel, 0.0)
}

/// Detector output, in image pixels (origin top-left, +y down).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BBox2D {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub class_id: String,
    pub confidence: f64,
}

impl BBox2D {
    pub fn new(
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        class_id: &str,
        confidence: f64,
    ) -> Result<Self, GeometryError> {
        if ![x_min, y_min, x_max, y_max, confidence].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidBox("non-finite coordinate".into()));
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(GeometryError::InvalidBox(format!(
                "degenerate box [{x_min}, {x_max}] x [{y_min}, {y_max}]"
            )));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(GeometryError::InvalidBox(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
            class_id: class_id.to_string(),
            confidence,
        })
    }

    pub fn corners(&self) -> [Vector2<f64>; 4] {
        [
            Vector2::new(self.x_min, self.y_min),
            Vector2::new(self.x_max, self.y_min),
            Vector2::new(self.x_max, self.y_max),
            Vector2::new(self.x_min, self.y_max),
        ]
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn intersects_image(&self, camera: &CameraModel) -> bool {
        self.x_max > 0.0
            && self.y_max > 0.0
            && self.x_min < camera.image_width_px as f64
            && self.y_min < camera.image_height_px as f64
    }

    /// Pixel-space bounding box of a set of points.
    pub fn enclosing(points: &[Vector2<f64>], class_id: &str, confidence: f64) -> Result<Self, GeometryError> {
        let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
        let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        Self::new(x0, y0, x1, y1, class_id, confidence)
    }
}

/// Axis-aligned box resting on (or lifted onto) the workspace plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundBox3D {
    pub center_x: f64,
    pub center_y: f64,
    pub extent_x: f64,
    pub extent_y: f64,
    pub height: f64,
    pub label: String,
}

impl GroundBox3D {
    pub fn from_bounds(min: Vector2<f64>, max: Vector2<f64>, height: f64, label: &str) -> Self {
        Self {
            center_x: (min.x + max.x) / 2.0,
            center_y: (min.y + max.y) / 2.0,
            extent_x: max.x - min.x,
            extent_y: max.y - min.y,
            height,
            label: label.to_string(),
        }
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(self.center_x, self.center_y)
    }

    pub fn min(&self) -> Vector2<f64> {
        Vector2::new(self.center_x - self.extent_x / 2.0, self.center_y - self.extent_y / 2.0)
    }

    pub fn max(&self) -> Vector2<f64> {
        Vector2::new(self.center_x + self.extent_x / 2.0, self.center_y + self.extent_y / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.extent_x * self.extent_y
    }

    pub fn intersection_area(&self, other: &GroundBox3D) -> f64 {
        let (a0, a1, b0, b1) = (self.min(), self.max(), other.min(), other.max());
        let w = (a1.x.min(b1.x) - a0.x.max(b0.x)).max(0.0);
        let h = (a1.y.min(b1.y) - a0.y.max(b0.y)).max(0.0);
        w * h
    }

    pub fn center_distance(&self, other: &GroundBox3D) -> f64 {
        (self.center() - other.center()).norm()
    }
}

/// Lifts a detection onto the plane `z = plane_z` as the axis-aligned hull
/// of its four back-projected corners.
pub fn bbox_to_groundbox_at(
    camera: &CameraModel,
    pose: &Pose,
    bbox: &BBox2D,
    brick_height_m: f64,
    plane_z: f64,
) -> Result<GroundBox3D, GeometryError> {
    let mut min = Vector2::repeat(f64::INFINITY);
    let mut max = Vector2::repeat(f64::NEG_INFINITY);
    for corner in bbox.corners() {
        let p = pixel_to_plane_at(camera, pose, &corner, plane_z)?;
        min = min.inf(&p);
        max = max.sup(&p);
    }
    Ok(GroundBox3D::from_bounds(min, max, brick_height_m, &bbox.class_id))
}

pub fn bbox_to_groundbox(
    camera: &CameraModel,
    pose: &Pose,
    bbox: &BBox2D,
    brick_height_m: f64,
) -> Result<GroundBox3D, GeometryError> {
    bbox_to_groundbox_at(camera, pose, bbox, brick_height_m, 0.0)
}
