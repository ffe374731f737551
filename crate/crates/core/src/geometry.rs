//! Camera model, rigid transforms and ego-motion.
//!
//! # Conventions
//!
//! These are the only axis conventions in the crate; everything else builds
//! on the functions here.
//!
//! - Camera frame: `x` right, `y` down, `z` forward (along the principal
//!   axis). Pixel `(u, v)` is column `u`, row `v`; integer coordinates are
//!   pixel centres.
//! - World frame: right-handed, `z` up. A camera with zero yaw, pitch and
//!   roll looks along world `+y` with its `x` axis on world `+x`.
//! - [`Pose`] angles are applied yaw (about world up), then pitch (about the
//!   camera's right axis), then roll (about the camera's forward axis).
//!   Positive yaw turns the camera to the left, positive pitch tilts it up.
//! - [`EgoMotion`] is the motion of the camera between two frames, expressed
//!   in the earlier camera's frame: the translation is where the new camera
//!   centre sits, and the rotation is `Ry(r_y)·Rx(r_x)·Rz(r_z)` about the
//!   earlier camera's axes (so positive `r_y` turns right, since `y` points
//!   down). The transform that carries *points* from the earlier camera
//!   frame into the later one is the inverse of this,
//!   `T_curr⁻¹ · T_prev` in world-from-camera terms.

use image::RgbImage;
use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::{invalid, Error, Result};

/// Points with depth at or below this are behind or on the camera plane.
pub const DEFAULT_Z_MIN: f64 = 1e-3;

/// Pitch magnitudes beyond this make the Euler decomposition ill-defined.
pub const GIMBAL_LIMIT: f64 = std::f64::consts::FRAC_PI_2 - 1e-6;

/// Projections within this distance of an integer pixel are snapped to it,
/// so that unprojecting and reprojecting a pixel lands on it exactly.
pub const PIXEL_SNAP: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Pinhole camera with the principal point at the image centre.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx >= 0.0
            && self.cy >= 0.0
            && self.cx < self.width as f64
            && self.cy < self.height as f64;
        if !ok {
            return invalid(format!("invalid intrinsics {self:?}"));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Same field of view at a different resolution.
    pub fn rescaled(&self, width: usize, height: usize) -> Result<Self> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self::new(
            self.fx * sx,
            self.fy * sy,
            (self.cx + 0.5) * sx - 0.5,
            (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        )
    }

    /// Camera-frame ray through pixel `(u, v)`, scaled to unit depth.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// Camera position (metres, world frame) and orientation (radians).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl Pose {
    pub fn new(position: [f64; 3], yaw: f64, pitch: f64, roll: f64) -> Self {
        Pose {
            position,
            yaw,
            pitch,
            roll,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.yaw.is_finite()
            && self.pitch.is_finite()
            && self.roll.is_finite()
    }
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// World-from-camera rotation of a camera with zero yaw, pitch and roll:
/// camera `x` → world `+x`, camera `y` → world `−z`, camera `z` → world `+y`.
pub fn camera_to_body() -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0)
}

/// `p ↦ R·p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::from(t),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> RigidTransform {
        RigidTransform {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    /// `‖RᵀR − I‖∞`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max()
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.orthonormality_error() <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }
}

/// World-from-camera transform of a pose.
pub fn pose_to_transform(pose: &Pose) -> Result<RigidTransform> {
    if !pose.is_finite() {
        return invalid(format!("pose has non-finite components: {pose:?}"));
    }
    let rotation = rot_z(pose.yaw) * rot_x(pose.pitch) * rot_y(pose.roll) * camera_to_body();
    Ok(RigidTransform {
        rotation,
        translation: Vector3::from(pose.position),
    })
}

/// Six-component camera motion between two frames; see the module docs for
/// the frame and sign conventions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EgoMotion {
    pub t_x: f64,
    pub t_y: f64,
    pub t_z: f64,
    pub r_x: f64,
    pub r_y: f64,
    pub r_z: f64,
}

impl EgoMotion {
    pub fn zero() -> Self {
        EgoMotion::default()
    }

    pub fn translation(t_x: f64, t_y: f64, t_z: f64) -> Self {
        EgoMotion {
            t_x,
            t_y,
            t_z,
            ..Default::default()
        }
    }

    pub fn components(&self) -> [f64; 6] {
        [self.t_x, self.t_y, self.t_z, self.r_x, self.r_y, self.r_z]
    }

    pub fn from_components(c: [f64; 6]) -> Self {
        EgoMotion {
            t_x: c[0],
            t_y: c[1],
            t_z: c[2],
            r_x: c[3],
            r_y: c[4],
            r_z: c[5],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|v| v.is_finite())
    }

    /// Pose of the new camera in the old camera's frame.
    pub fn camera_transform(&self) -> RigidTransform {
        RigidTransform {
            rotation: rot_y(self.r_y) * rot_x(self.r_x) * rot_z(self.r_z),
            translation: Vector3::new(self.t_x, self.t_y, self.t_z),
        }
    }

    /// Maps points from the old camera frame into the new one.
    pub fn point_transform(&self) -> RigidTransform {
        self.camera_transform().inverse()
    }

    /// Decomposes a camera transform back into components.
    pub fn from_camera_transform(t: &RigidTransform) -> Result<Self> {
        let r = &t.rotation;
        let sin_x = (-r[(1, 2)]).clamp(-1.0, 1.0);
        let r_x = sin_x.asin();
        if r_x.abs() > GIMBAL_LIMIT {
            return Err(Error::OutOfRange(format!(
                "rotation about x of {r_x} rad is at gimbal lock"
            )));
        }
        let r_y = r[(0, 2)].atan2(r[(2, 2)]);
        let r_z = r[(1, 0)].atan2(r[(1, 1)]);
        Ok(EgoMotion {
            t_x: t.translation.x,
            t_y: t.translation.y,
            t_z: t.translation.z,
            r_x,
            r_y,
            r_z,
        })
    }

    /// Motion `self` followed by `next` (expressed in the camera frame reached
    /// after `self`).
    pub fn then(&self, next: &EgoMotion) -> Result<EgoMotion> {
        Self::from_camera_transform(&self.camera_transform().compose(&next.camera_transform()))
    }

    pub fn inverse(&self) -> Result<EgoMotion> {
        Self::from_camera_transform(&self.camera_transform().inverse())
    }
}

/// Camera motion from `prev` to `curr`.
pub fn ego_motion(prev: &Pose, curr: &Pose) -> Result<EgoMotion> {
    let t_prev = pose_to_transform(prev)?;
    let t_curr = pose_to_transform(curr)?;
    EgoMotion::from_camera_transform(&t_prev.inverse().compose(&t_curr))
}

/// Per-pixel metric depth with a validity mask, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != width * height || mask.len() != width * height {
            return invalid(format!(
                "depth map {width}×{height} needs {} values and mask entries, got {} and {}",
                width * height,
                values.len(),
                mask.len()
            ));
        }
        for (i, (&d, &m)) in values.iter().zip(&mask).enumerate() {
            if m && !(d.is_finite() && d > 0.0) {
                return invalid(format!("valid depth at index {i} is {d}"));
            }
        }
        Ok(DepthMap {
            width,
            height,
            values,
            mask,
        })
    }

    /// All pixels invalid.
    pub fn empty(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            values: vec![0.0; width * height],
            mask: vec![false; width * height],
        }
    }

    /// Every pixel valid at the same depth.
    pub fn constant(width: usize, height: usize, depth: f64) -> Result<Self> {
        Self::new(
            width,
            height,
            vec![depth; width * height],
            vec![true; width * height],
        )
    }

    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        let i = self.index(u, v);
        self.mask[i].then_some(self.values[i])
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    fn check_dims(&self, k: &CameraIntrinsics) -> Result<()> {
        if self.width != k.width || self.height != k.height {
            return invalid(format!(
                "depth map is {}×{}, camera is {}×{}",
                self.width, self.height, k.width, k.height
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudPoint {
    pub position: Vector3<f64>,
    pub rgb: [u8; 3],
    /// Row-major index of the pixel this point came from.
    pub source: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Paints each point with the colour of its source pixel.
    pub fn attach_colors(&mut self, image: &RgbImage) -> Result<()> {
        let width = image.width() as usize;
        let pixels = width * image.height() as usize;
        for p in &mut self.points {
            if p.source >= pixels {
                return invalid(format!(
                    "source pixel {} outside {}-pixel image",
                    p.source, pixels
                ));
            }
            p.rgb = image
                .get_pixel((p.source % width) as u32, (p.source / width) as u32)
                .0;
        }
        Ok(())
    }
}

/// One point per valid pixel: `(u, v, d) ↦ ((u − cx)·d/fx, (v − cy)·d/fy, d)`.
/// Colours are left black; see [`PointCloud::attach_colors`].
pub fn unproject(depth: &DepthMap, k: &CameraIntrinsics) -> Result<PointCloud> {
    depth.check_dims(k)?;
    let mut points = Vec::with_capacity(depth.valid_count());
    for v in 0..depth.height {
        for u in 0..depth.width {
            let i = depth.index(u, v);
            if !depth.mask[i] {
                continue;
            }
            let d = depth.values[i];
            let position = Vector3::new(
                (u as f64 - k.cx) * d / k.fx,
                (v as f64 - k.cy) * d / k.fy,
                d,
            );
            points.push(CloudPoint {
                position,
                rgb: [0; 3],
                source: i,
            });
        }
    }
    Ok(PointCloud { points })
}

pub fn apply_transform(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
    PointCloud {
        points: cloud
            .points
            .iter()
            .map(|p| CloudPoint {
                position: t.apply(&p.position),
                ..*p
            })
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedPoint {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub rgb: [u8; 3],
    pub source: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProjectionStats {
    /// Points at or behind the `z_min` plane.
    pub behind: usize,
    /// Points whose whole splat footprint falls outside the image.
    pub outside: usize,
}

impl ProjectionStats {
    pub fn culled(&self) -> usize {
        self.behind + self.outside
    }
}

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= PIXEL_SNAP {
        r
    } else {
        x
    }
}

/// Pinhole projection. A point survives if `z > z_min` and at least one of
/// the pixels `{⌊u⌋,⌈u⌉}×{⌊v⌋,⌈v⌉}` lies inside the image.
pub fn project(
    cloud: &PointCloud,
    k: &CameraIntrinsics,
    z_min: f64,
) -> (Vec<ProjectedPoint>, ProjectionStats) {
    let mut stats = ProjectionStats::default();
    let mut out = Vec::with_capacity(cloud.len());
    let (w, h) = (k.width as f64, k.height as f64);
    for p in &cloud.points {
        let z = p.position.z;
        if !(z > z_min) {
            stats.behind += 1;
            continue;
        }
        let u = snap(k.fx * p.position.x / z + k.cx);
        let v = snap(k.fy * p.position.y / z + k.cy);
        if !(u > -1.0 && u < w && v > -1.0 && v < h) {
            stats.outside += 1;
            continue;
        }
        out.push(ProjectedPoint {
            u,
            v,
            depth: z,
            rgb: p.rgb,
            source: p.source,
        });
    }
    (out, stats)
}
