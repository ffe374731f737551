//! Ray-cast synthetic scenes: a textured ground plane and axis-aligned
//! textured boxes, seen from a camera trajectory. Rendering yields RGB frames
//! and exact dense depth, which doubles as ground truth for the warp.

use image::{Rgb, RgbImage};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::VideoFrame;
use crate::geometry::{pose_to_transform, CameraIntrinsics, DepthMap, Pose};
use crate::{invalid, Result, FORMAT_VERSION};

fn default_version() -> u32 {
    FORMAT_VERSION
}

fn default_texture_scale() -> f64 {
    1.0
}

fn default_supersample() -> u32 {
    3
}

fn default_sky() -> [u8; 3] {
    [150, 190, 230]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    /// Centre of the box, world frame.
    pub position: [f64; 3],
    /// Extent along world x, y, z.
    pub size: [f64; 3],
    pub texture_seed: u64,
    /// Feature size of the procedural texture in metres.
    #[serde(default = "default_texture_scale")]
    pub texture_scale: f64,
}

impl SceneBox {
    fn min(&self) -> Vector3<f64> {
        Vector3::from(self.position) - Vector3::from(self.size) / 2.0
    }

    fn max(&self) -> Vector3<f64> {
        Vector3::from(self.position) + Vector3::from(self.size) / 2.0
    }

    fn contains(&self, p: &Vector3<f64>) -> bool {
        let (lo, hi) = (self.min(), self.max());
        (0..3).all(|a| p[a] > lo[a] && p[a] < hi[a])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    #[serde(default = "default_version")]
    pub version: u32,
    /// World `z` of the ground plane; `None` for no ground.
    pub ground_height: Option<f64>,
    #[serde(default)]
    pub ground_texture_seed: u64,
    #[serde(default = "default_texture_scale")]
    pub ground_texture_scale: f64,
    pub boxes: Vec<SceneBox>,
    pub trajectory: Vec<Pose>,
    pub intrinsics: CameraIntrinsics,
    pub frame_count: usize,
    /// Colour of rays that hit nothing; those pixels get no depth.
    #[serde(default = "default_sky")]
    pub sky: [u8; 3],
    /// Colour samples per pixel along each axis (depth uses the centre ray).
    #[serde(default = "default_supersample")]
    pub supersample: u32,
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.frame_count == 0 {
            return invalid("frame count must be at least 1");
        }
        if self.trajectory.len() < self.frame_count {
            return invalid(format!(
                "trajectory has {} poses for {} frames",
                self.trajectory.len(),
                self.frame_count
            ));
        }
        if self.supersample == 0 {
            return invalid("supersample must be at least 1");
        }
        for b in &self.boxes {
            if !b.size.iter().all(|&s| s > 0.0 && s.is_finite())
                || !b.position.iter().all(|p| p.is_finite())
            {
                return invalid(format!("degenerate box {b:?}"));
            }
            if !(b.texture_scale > 0.0) {
                return invalid("texture scale must be positive");
            }
        }
        if !(self.ground_texture_scale > 0.0) {
            return invalid("ground texture scale must be positive");
        }
        for (i, pose) in self.trajectory.iter().take(self.frame_count).enumerate() {
            let p = Vector3::from(pose_to_transform(pose)?.translation);
            if self.boxes.iter().any(|b| b.contains(&p)) {
                return invalid(format!("camera {i} is inside a box"));
            }
            if self.ground_height.is_some_and(|g| p.z <= g) {
                return invalid(format!("camera {i} is at or below the ground plane"));
            }
        }
        Ok(())
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix(ix as u64 ^ splitmix(iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smooth value noise in `[0, 1]`.
fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * sx;
    let bottom = c + (d - c) * sx;
    top + (bottom - top) * sy
}

/// Procedural surface colour at surface coordinates `(s, t)` metres.
fn texture(seed: u64, scale: f64, s: f64, t: f64) -> [f64; 3] {
    let mut rgb = [0.0; 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        let base = 60.0 + 140.0 * lattice(splitmix(seed ^ 0xC0FFEE), c as i64, -1);
        let chan_seed = splitmix(seed.wrapping_add(c as u64 + 1));
        let n = 0.65 * value_noise(chan_seed, s / scale, t / scale)
            + 0.35 * value_noise(chan_seed ^ 0x5EED, 2.0 * s / scale, 2.0 * t / scale);
        *out = (base + 100.0 * (n - 0.5)).clamp(0.0, 255.0);
    }
    rgb
}

struct Hit {
    t: f64,
    rgb: [f64; 3],
}

fn intersect_box(b: &SceneBox, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, usize)> {
    let (lo, hi) = (b.min(), b.max());
    let (mut t0, mut t1, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a] < lo[a] || o[a] > hi[a] {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo[a] - o[a]) / d[a], (hi[a] - o[a]) / d[a]);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        if ta > t0 {
            t0 = ta;
            axis = a;
        }
        t1 = t1.min(tb);
    }
    (t0 <= t1 && t0 > 0.0).then_some((t0, axis))
}

fn trace(spec: &SyntheticSceneSpec, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    if let Some(g) = spec.ground_height {
        if d.z.abs() > 1e-15 {
            let t = (g - o.z) / d.z;
            if t > 0.0 {
                let p = o + d * t;
                best = Some(Hit {
                    t,
                    rgb: texture(
                        spec.ground_texture_seed,
                        spec.ground_texture_scale,
                        p.x,
                        p.y,
                    ),
                });
            }
        }
    }
    for b in &spec.boxes {
        if let Some((t, axis)) = intersect_box(b, o, d) {
            if best.as_ref().is_none_or(|h| t < h.t) {
                let p = o + d * t;
                let (s, u) = match axis {
                    0 => (p.y, p.z),
                    1 => (p.x, p.z),
                    _ => (p.x, p.y),
                };
                // offset per face so adjacent faces do not share a pattern
                let face_seed = b.texture_seed.wrapping_add(axis as u64 * 7919);
                best = Some(Hit {
                    t,
                    rgb: texture(face_seed, b.texture_scale, s, u),
                });
            }
        }
    }
    best
}

/// Renders one view: RGB plus depth along the optical axis at each pixel
/// centre.
pub fn render_view(spec: &SyntheticSceneSpec, pose: &Pose) -> Result<(RgbImage, DepthMap)> {
    let k = &spec.intrinsics;
    let cam = pose_to_transform(pose)?;
    let origin = cam.translation;
    let n = spec.supersample as usize;
    let mut image = RgbImage::new(k.width as u32, k.height as u32);
    let mut depth = DepthMap::empty(k.width, k.height);
    let sky = spec.sky.map(f64::from);
    for v in 0..k.height {
        for u in 0..k.width {
            let centre = cam.rotation * k.ray(u as f64, v as f64);
            if let Some(hit) = trace(spec, &origin, &centre) {
                let i = depth.index(u, v);
                depth.values[i] = hit.t;
                depth.mask[i] = true;
            }
            let mut acc = [0.0; 3];
            for sy in 0..n {
                for sx in 0..n {
                    let du = (sx as f64 + 0.5) / n as f64 - 0.5;
                    let dv = (sy as f64 + 0.5) / n as f64 - 0.5;
                    let dir = cam.rotation * k.ray(u as f64 + du, v as f64 + dv);
                    let rgb = trace(spec, &origin, &dir).map_or(sky, |h| h.rgb);
                    for c in 0..3 {
                        acc[c] += rgb[c];
                    }
                }
            }
            let px = acc.map(|a| (a / (n * n) as f64).round().clamp(0.0, 255.0) as u8);
            image.put_pixel(u as u32, v as u32, Rgb(px));
        }
    }
    Ok((image, depth))
}

/// Renders every frame of the scene's trajectory.
pub fn render_synthetic_sequence(spec: &SyntheticSceneSpec) -> Result<Vec<VideoFrame>> {
    spec.validate()?;
    spec.trajectory[..spec.frame_count]
        .iter()
        .map(|pose| {
            let (rgb, depth) = render_view(spec, pose)?;
            Ok(VideoFrame {
                rgb,
                depth,
                pose: *pose,
            })
        })
        .collect()
}

/// Knobs for [`random_street_scene`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreetSceneParams {
    pub frame_count: usize,
    /// Forward speed range, metres per frame.
    pub speed: (f64, f64),
    /// Camera height range above the ground, metres.
    pub camera_height: (f64, f64),
    /// Per-frame yaw change range, radians.
    pub yaw_rate: (f64, f64),
    pub box_count: usize,
    /// Range of the gap between the road centre line and a box's near face.
    pub lateral_offset: (f64, f64),
    /// Range of box centre distances ahead of the first camera position.
    pub box_distance: (f64, f64),
    /// Distance of the backdrop wall ahead of the first camera position.
    pub backdrop_distance: f64,
}

impl StreetSceneParams {
    /// Two boxes ahead of a close backdrop.
    pub fn two_box() -> Self {
        StreetSceneParams {
            box_count: 2,
            lateral_offset: (2.5, 6.0),
            box_distance: (14.0, 35.0),
            backdrop_distance: 60.0,
            ..Default::default()
        }
    }
}

impl Default for StreetSceneParams {
    fn default() -> Self {
        StreetSceneParams {
            frame_count: 10,
            speed: (0.5, 1.0),
            camera_height: (1.4, 1.8),
            yaw_rate: (-0.01, 0.01),
            box_count: 12,
            lateral_offset: (4.0, 8.0),
            box_distance: (-10.0, 80.0),
            backdrop_distance: 95.0,
        }
    }
}

/// A street-like scene: textured ground, boxes beside the road, a distant
/// backdrop wall, and a camera driving forward with a slight turn. With the
/// default parameters the boxes line the whole stretch the camera can see,
/// so frame statistics do not drift along the sequence.
pub fn random_street_scene(
    seed: u64,
    k: CameraIntrinsics,
    params: &StreetSceneParams,
) -> SyntheticSceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let height = rng.random_range(params.camera_height.0..=params.camera_height.1);
    let speed = rng.random_range(params.speed.0..=params.speed.1);
    let yaw_rate = rng.random_range(params.yaw_rate.0..=params.yaw_rate.1);
    let mut boxes = Vec::with_capacity(params.box_count + 1);
    for i in 0..params.box_count {
        let side = if i % 2 == 0 { -1.0 } else { 1.0 };
        let size = [
            rng.random_range(1.5..4.0),
            rng.random_range(1.5..5.0),
            rng.random_range(1.5..4.0),
        ];
        let x = side
            * (rng.random_range(params.lateral_offset.0..params.lateral_offset.1) + size[0] / 2.0);
        let y = rng.random_range(params.box_distance.0..params.box_distance.1);
        boxes.push(SceneBox {
            position: [x, y, size[2] / 2.0],
            size,
            texture_seed: rng.random(),
            texture_scale: rng.random_range(0.6..1.2),
        });
    }
    let wall_y = params.backdrop_distance;
    boxes.push(SceneBox {
        position: [0.0, wall_y + 0.5, 30.0],
        size: [400.0, 1.0, 60.0],
        texture_seed: rng.random(),
        texture_scale: 20.0,
    });
    let mut trajectory = Vec::with_capacity(params.frame_count);
    let (mut x, mut y, mut yaw) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..params.frame_count {
        trajectory.push(Pose::new([x, y, height], yaw, 0.0, 0.0));
        // forward is world +y rotated by yaw
        x -= speed * yaw.sin();
        y += speed * yaw.cos();
        yaw += yaw_rate;
    }
    SyntheticSceneSpec {
        version: FORMAT_VERSION,
        ground_height: Some(0.0),
        ground_texture_seed: rng.random(),
        ground_texture_scale: 1.5,
        boxes,
        trajectory,
        intrinsics: k,
        frame_count: params.frame_count,
        sky: default_sky(),
        supersample: default_supersample(),
    }
}
