//! Pinhole camera geometry and the table's world model.
//!
//! World frame: origin on the floor below the table center, X across the
//! table, Y along its length, Z up. The playing surface is the plane
//! `z = TableModel::height`.

use nalgebra::{Matrix3, Matrix3x4, Rotation3, Unit, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CamError {
    #[error("point is behind the camera (depth {depth})")]
    PointBehindCamera { depth: f64 },
    #[error("ray is parallel to the plane")]
    RayParallelToPlane,
    #[error("invalid camera: {0}")]
    Invalid(String),
}

/// Focal length and image size. The principal point is the image center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub f: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(f: f64, width: u32, height: u32) -> Result<Self, CamError> {
        if !(f > 0.0 && f.is_finite()) {
            return Err(CamError::Invalid(format!("focal length must be positive, got {f}")));
        }
        if width == 0 || height == 0 {
            return Err(CamError::Invalid("image size must be positive".into()));
        }
        Ok(Self { f, width, height })
    }

    pub fn cx(&self) -> f64 {
        self.width as f64 / 2.0
    }

    pub fn cy(&self) -> f64 {
        self.height as f64 / 2.0
    }

    pub fn k(&self) -> Matrix3<f64> {
        Matrix3::new(self.f, 0.0, self.cx(), 0.0, self.f, self.cy(), 0.0, 0.0, 1.0)
    }

    pub fn k_inv(&self) -> Matrix3<f64> {
        let fi = 1.0 / self.f;
        Matrix3::new(fi, 0.0, -self.cx() * fi, 0.0, fi, -self.cy() * fi, 0.0, 0.0, 1.0)
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }
}

/// World-to-camera rigid transform: `X_cam = R * X_world + T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl Pose {
    pub fn new(r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self, CamError> {
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(CamError::Invalid("rotation is not orthonormal with det +1".into()));
        }
        if !t.iter().all(|x| x.is_finite()) {
            return Err(CamError::Invalid("translation is not finite".into()));
        }
        Ok(Self { r, t })
    }

    pub fn from_rotation(rot: &Rotation3<f64>, t: Vector3<f64>) -> Self {
        Self { r: *rot.matrix(), t }
    }

    /// Pose of a camera at `eye` looking at `target`, image-up roughly along world +Z.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let up = Vector3::z();
        let mut x = z.cross(&up);
        if x.norm() < 1e-9 {
            x = Vector3::x();
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Self { r, t: -r * eye }
    }

    pub fn center(&self) -> Vector3<f64> {
        -self.r.transpose() * self.t
    }

    pub fn to_camera(&self, xw: &Vector3<f64>) -> Vector3<f64> {
        self.r * xw + self.t
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_matrix_unchecked(self.r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibratedCamera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    /// Diagnostic only.
    pub reprojection_rmse: f64,
}

impl CalibratedCamera {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Self {
        Self { intrinsics, pose, reprojection_rmse: 0.0 }
    }

    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.pose.r);
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.pose.t);
        self.intrinsics.k() * rt
    }

    pub fn center(&self) -> Vector3<f64> {
        self.pose.center()
    }

    /// Projects a world point to pixel coordinates.
    pub fn project(&self, xw: &Vector3<f64>) -> Result<Vector2<f64>, CamError> {
        let xc = self.pose.to_camera(xw);
        if !(xc.z > 0.0) {
            return Err(CamError::PointBehindCamera { depth: xc.z });
        }
        let f = self.intrinsics.f;
        Ok(Vector2::new(
            self.intrinsics.cx() + f * xc.x / xc.z,
            self.intrinsics.cy() + f * xc.y / xc.z,
        ))
    }

    /// World-frame ray through a pixel.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Ray {
        let d_cam = self.intrinsics.k_inv() * Vector3::new(u, v, 1.0);
        let d = self.pose.r.transpose() * d_cam;
        Ray { origin: self.center(), direction: Unit::new_normalize(d) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Unit<Vector3<f64>>,
}

impl Ray {
    pub fn at(&self, s: f64) -> Vector3<f64> {
        self.origin + self.direction.into_inner() * s
    }

    pub fn distance_to(&self, p: &Vector3<f64>) -> f64 {
        let w = p - self.origin;
        (w - self.direction.into_inner() * w.dot(&self.direction)).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Unit<Vector3<f64>>,
    pub point: Vector3<f64>,
}

impl Plane {
    pub fn horizontal(z: f64) -> Self {
        Self { normal: Vector3::z_axis(), point: Vector3::new(0.0, 0.0, z) }
    }

    pub fn offset(&self, distance: f64) -> Self {
        Self { normal: self.normal, point: self.point + self.normal.into_inner() * distance }
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        (p - self.point).dot(&self.normal)
    }
}

/// Intersects a ray with the plane through `x_plane` with normal `n`.
pub fn intersect_ray_plane(
    ray: &Ray,
    n: &Unit<Vector3<f64>>,
    x_plane: &Vector3<f64>,
) -> Result<Vector3<f64>, CamError> {
    let denom = ray.direction.dot(n);
    if denom.abs() <= 1e-9 {
        return Err(CamError::RayParallelToPlane);
    }
    let s = (x_plane - ray.origin).dot(n) / denom;
    Ok(ray.at(s))
}

/// Feature labels on the table top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFeature {
    Corner0,
    Corner1,
    Corner2,
    Corner3,
    MidlineFront,
    MidlineBack,
}

impl TableFeature {
    pub const CORNERS: [TableFeature; 4] =
        [TableFeature::Corner0, TableFeature::Corner1, TableFeature::Corner2, TableFeature::Corner3];
    pub const ALL: [TableFeature; 6] = [
        TableFeature::Corner0,
        TableFeature::Corner1,
        TableFeature::Corner2,
        TableFeature::Corner3,
        TableFeature::MidlineFront,
        TableFeature::MidlineBack,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableModel {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for TableModel {
    fn default() -> Self {
        Self::ittf()
    }
}

impl TableModel {
    pub const fn ittf() -> Self {
        Self { length: 2.74, width: 1.525, height: 0.76 }
    }

    /// Corners in counter-clockwise order seen from above, starting at (-x, -y).
    pub fn corners(&self) -> [Vector3<f64>; 4] {
        let (hx, hy, z) = (self.width / 2.0, self.length / 2.0, self.height);
        [
            Vector3::new(-hx, -hy, z),
            Vector3::new(hx, -hy, z),
            Vector3::new(hx, hy, z),
            Vector3::new(-hx, hy, z),
        ]
    }

    /// End points of the center line, on the near (-Y) and far (+Y) end lines.
    pub fn midline(&self) -> [Vector3<f64>; 2] {
        let hy = self.length / 2.0;
        [Vector3::new(0.0, -hy, self.height), Vector3::new(0.0, hy, self.height)]
    }

    pub fn feature(&self, f: TableFeature) -> Vector3<f64> {
        let c = self.corners();
        let m = self.midline();
        match f {
            TableFeature::Corner0 => c[0],
            TableFeature::Corner1 => c[1],
            TableFeature::Corner2 => c[2],
            TableFeature::Corner3 => c[3],
            TableFeature::MidlineFront => m[0],
            TableFeature::MidlineBack => m[1],
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, self.height)
    }

    pub fn plane(&self) -> Plane {
        Plane::horizontal(self.height)
    }

    /// Whether the XY position lies over the table top, grown by `margin`.
    pub fn contains_xy(&self, p: &Vector3<f64>, margin: f64) -> bool {
        p.x.abs() <= self.width / 2.0 + margin && p.y.abs() <= self.length / 2.0 + margin
    }
}
