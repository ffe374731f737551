//! Next-frame synthesis by forward warping.
//!
//! Every valid source pixel is lifted to 3-D with its depth, moved by the
//! ego-motion's point transform and projected into the new view. Each point
//! writes its colour and depth to the pixels `{⌊u⌋,⌈u⌉}×{⌊v⌋,⌈v⌉}` (a single
//! pixel at integer coordinates). Conflicts keep the smaller depth, then the
//! smaller source index. Pixels nothing lands on are gaps: black, no depth,
//! coverage false.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::depth_data::{denormalize_label, DepthLabelConfig};
use crate::geometry::{
    apply_transform, ego_motion, project, unproject, CameraIntrinsics, DepthMap, EgoMotion, Pose,
    DEFAULT_Z_MIN,
};
use crate::model::{forward_sequence, stack_images, ModelParams, TrainedModel};
use crate::{invalid, Result};

pub const GAP_RGB: [u8; 3] = [0, 0, 0];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Footprint {
    /// Nearest pixel only.
    Single,
    /// Every pixel the point's continuous position touches.
    #[default]
    Quad,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplatConfig {
    pub footprint: Footprint,
    /// Points at or nearer than this camera depth are dropped.
    pub z_min: f64,
}

impl Default for SplatConfig {
    fn default() -> Self {
        SplatConfig {
            footprint: Footprint::Quad,
            z_min: DEFAULT_Z_MIN,
        }
    }
}

impl SplatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.z_min > 0.0 && self.z_min.is_finite()) {
            return invalid(format!("z_min {} must be positive", self.z_min));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarpStats {
    /// Source points that landed nowhere in the image.
    pub culled: usize,
    /// Pixel writes that lost the depth test or replaced an earlier winner.
    pub overwritten: usize,
    /// Output pixels nothing landed on.
    pub gaps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FramePrediction {
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub coverage: Vec<bool>,
    pub stats: WarpStats,
}

impl FramePrediction {
    pub fn coverage_fraction(&self) -> f64 {
        if self.coverage.is_empty() {
            return 0.0;
        }
        self.coverage.iter().filter(|&&c| c).count() as f64 / self.coverage.len() as f64
    }
}

fn footprint(u: f64, v: f64, kind: Footprint) -> ([i64; 2], [i64; 2], usize, usize) {
    match kind {
        Footprint::Single => ([u.round() as i64; 2], [v.round() as i64; 2], 1, 1),
        Footprint::Quad => {
            let (u0, u1) = (u.floor() as i64, u.ceil() as i64);
            let (v0, v1) = (v.floor() as i64, v.ceil() as i64);
            (
                [u0, u1],
                [v0, v1],
                if u0 == u1 { 1 } else { 2 },
                if v0 == v1 { 1 } else { 2 },
            )
        }
    }
}

/// Forward-warps `rgb` with per-pixel `depth` by `motion`.
pub fn warp_forward(
    rgb: &RgbImage,
    depth: &DepthMap,
    motion: &EgoMotion,
    k: &CameraIntrinsics,
    cfg: &SplatConfig,
) -> Result<FramePrediction> {
    cfg.validate()?;
    k.validate()?;
    if rgb.dimensions() != (k.width as u32, k.height as u32) {
        return invalid(format!(
            "image is {:?}, camera is {}×{}",
            rgb.dimensions(),
            k.width,
            k.height
        ));
    }
    if !motion.is_finite() {
        return invalid("ego-motion is not finite");
    }
    let mut cloud = unproject(depth, k)?;
    cloud.attach_colors(rgb)?;
    let moved = apply_transform(&cloud, &motion.point_transform());
    let (points, pstats) = project(&moved, k, cfg.z_min);

    let (w, h) = (k.width, k.height);
    // per output pixel: index into `points` of the current winner
    let mut winner: Vec<Option<usize>> = vec![None; w * h];
    let mut stats = WarpStats {
        culled: pstats.culled(),
        ..Default::default()
    };
    for (pi, p) in points.iter().enumerate() {
        let (us, vs, nu, nv) = footprint(p.u, p.v, cfg.footprint);
        let mut landed = false;
        for &y in &vs[..nv] {
            for &x in &us[..nu] {
                if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                    continue;
                }
                landed = true;
                let slot = &mut winner[y as usize * w + x as usize];
                match *slot {
                    None => *slot = Some(pi),
                    Some(cur) => {
                        stats.overwritten += 1;
                        let q = &points[cur];
                        if (p.depth, p.source) < (q.depth, q.source) {
                            *slot = Some(pi);
                        }
                    }
                }
            }
        }
        if !landed {
            stats.culled += 1;
        }
    }

    let mut out = RgbImage::from_pixel(w as u32, h as u32, Rgb(GAP_RGB));
    let mut out_depth = DepthMap::empty(w, h);
    let mut coverage = vec![false; w * h];
    for (i, slot) in winner.iter().enumerate() {
        match slot {
            Some(pi) => {
                let p = &points[*pi];
                out.put_pixel((i % w) as u32, (i / w) as u32, Rgb(p.rgb));
                out_depth.values[i] = p.depth;
                out_depth.mask[i] = true;
                coverage[i] = true;
            }
            None => stats.gaps += 1,
        }
    }
    Ok(FramePrediction {
        rgb: out,
        depth: out_depth,
        coverage,
        stats,
    })
}

/// Pixels of the new view whose surface was visible in the source view.
///
/// Each valid pixel of `next_depth` is lifted to 3-D, moved back into the
/// source camera by the inverse of `motion` and projected. It counts as
/// visible when the four source pixels around its position are in the
/// image and valid, and the bilinear interpolation of their inverse depth
/// agrees with the back-projected depth within `rel_tol` relative error.
pub fn source_visibility(
    source_depth: &DepthMap,
    next_depth: &DepthMap,
    motion: &EgoMotion,
    k: &CameraIntrinsics,
    rel_tol: f64,
) -> Result<Vec<bool>> {
    let (w, h) = (k.width, k.height);
    for d in [source_depth, next_depth] {
        if (d.width, d.height) != (w, h) {
            return invalid(format!("depth map is {}×{}, camera is {w}×{h}", d.width, d.height));
        }
    }
    let cloud = unproject(next_depth, k)?;
    let back = apply_transform(&cloud, &motion.point_transform().inverse());
    let (points, _) = project(&back, k, DEFAULT_Z_MIN);
    let mut visible = vec![false; w * h];
    for p in points {
        let (x0, y0) = (p.u.floor(), p.v.floor());
        if x0 < 0.0 || y0 < 0.0 || p.u > (w - 1) as f64 || p.v > (h - 1) as f64 {
            continue;
        }
        let (x0, y0) = (x0 as usize, y0 as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = (p.u - x0 as f64, p.v - y0 as f64);
        let mut inv = 0.0;
        let mut ok = true;
        for (x, y, wt) in [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ] {
            let i = y * w + x;
            ok &= source_depth.mask[i] && source_depth.values[i] > 0.0;
            inv += wt / source_depth.values[i];
        }
        visible[p.source] = ok && (1.0 / inv - p.depth).abs() <= rel_tol * p.depth;
    }
    Ok(visible)
}

/// One independent warp of the same frame per candidate motion.
pub fn simulate_hypothetical(
    rgb: &RgbImage,
    depth: &DepthMap,
    motions: &[EgoMotion],
    k: &CameraIntrinsics,
    cfg: &SplatConfig,
) -> Result<Vec<FramePrediction>> {
    motions
        .iter()
        .map(|m| warp_forward(rgb, depth, m, k, cfg))
        .collect()
}

/// Per-frame metric depth for a frame sequence. Depth for frame `i` may
/// only depend on frames `0..=i`.
pub trait DepthPredictor {
    fn predict_depths(&self, frames: &[&RgbImage]) -> Result<Vec<DepthMap>>;
}

/// Dense metric depth from network output labels `[1, h, w, 1]`.
pub fn labels_to_depth(
    labels: &[f64],
    width: usize,
    height: usize,
    cfg: &DepthLabelConfig,
) -> Result<DepthMap> {
    if labels.len() != width * height {
        return invalid(format!(
            "{} labels for a {width}×{height} map",
            labels.len()
        ));
    }
    if labels.iter().any(|l| !l.is_finite()) {
        return Err(crate::Error::Numeric(
            "network produced a non-finite depth label".into(),
        ));
    }
    let values = labels.iter().map(|&l| denormalize_label(l, cfg)).collect();
    DepthMap::new(width, height, values, vec![true; width * height])
}

/// The network as a depth predictor.
pub struct ModelPredictor<'a> {
    pub params: &'a ModelParams<f32>,
    pub labels: DepthLabelConfig,
}

impl<'a> ModelPredictor<'a> {
    pub fn new(model: &'a TrainedModel) -> Self {
        ModelPredictor {
            params: &model.params,
            labels: model.labels,
        }
    }
}

impl DepthPredictor for ModelPredictor<'_> {
    fn predict_depths(&self, frames: &[&RgbImage]) -> Result<Vec<DepthMap>> {
        let arch = &self.params.arch;
        let inputs = frames
            .iter()
            .map(|f| stack_images::<f32>(&[*f]))
            .collect::<Result<Vec<_>>>()?;
        forward_sequence(self.params, &inputs)?
            .iter()
            .map(|t| {
                let labels: Vec<f64> = t.data().iter().map(|&v| v as f64).collect();
                labels_to_depth(&labels, arch.input_width, arch.input_height, &self.labels)
            })
            .collect()
    }
}

/// Returns known depth maps, ignoring the frames.
pub struct OraclePredictor<'a> {
    pub depths: &'a [DepthMap],
}

impl DepthPredictor for OraclePredictor<'_> {
    fn predict_depths(&self, frames: &[&RgbImage]) -> Result<Vec<DepthMap>> {
        if frames.len() > self.depths.len() {
            return invalid(format!(
                "oracle has {} depth maps for {} frames",
                self.depths.len(),
                frames.len()
            ));
        }
        Ok(self.depths[..frames.len()].to_vec())
    }
}

/// Predicts frame `k` from frames `1..k−1` and poses `1..k`: depth of frame
/// `k−1`, ego-motion between the last two poses, then a forward warp.
pub fn predict_next(
    predictor: &dyn DepthPredictor,
    frames: &[&RgbImage],
    poses: &[Pose],
    k: &CameraIntrinsics,
    cfg: &SplatConfig,
) -> Result<FramePrediction> {
    if frames.is_empty() || poses.len() != frames.len() + 1 {
        return invalid(format!(
            "{} frames need {} poses, got {}",
            frames.len(),
            frames.len() + 1,
            poses.len()
        ));
    }
    let depth = predictor
        .predict_depths(frames)?
        .pop()
        .expect("one depth per frame");
    let n = frames.len();
    let motion = ego_motion(&poses[n - 1], &poses[n])?;
    warp_forward(frames[n - 1], &depth, &motion, k, cfg)
}
