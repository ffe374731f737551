//! Ground-truth depth labels, synthetic scenes and dataset packaging.

pub mod io;
pub mod synthetic;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, DepthMap, Pose, RigidTransform};
use crate::{invalid, Error, Result};

/// Point cloud in the sensor frame plus its calibration into the camera.
#[derive(Clone, Debug)]
pub struct LidarScan {
    pub points: Vec<[f64; 3]>,
    pub sensor_to_camera: RigidTransform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LabelTransform {
    /// `d_min / d`, affinely mapped onto the label range.
    #[default]
    Inverse,
    /// `log d`, affinely mapped onto the label range (near → high label).
    Log,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthLabelConfig {
    pub d_min: f64,
    pub d_max: f64,
    pub label_lo: f64,
    pub label_hi: f64,
    #[serde(default)]
    pub transform: LabelTransform,
}

impl Default for DepthLabelConfig {
    fn default() -> Self {
        DepthLabelConfig {
            d_min: 3.0,
            d_max: 80.0,
            label_lo: 0.25,
            label_hi: 0.75,
            transform: LabelTransform::Inverse,
        }
    }
}

impl DepthLabelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_min > 0.0 && self.d_min < self.d_max && self.d_max.is_finite()) {
            return invalid(format!(
                "depth range [{}, {}] is invalid",
                self.d_min, self.d_max
            ));
        }
        if !(0.0 <= self.label_lo && self.label_lo < self.label_hi && self.label_hi <= 1.0) {
            return invalid(format!(
                "label range [{}, {}] is invalid",
                self.label_lo, self.label_hi
            ));
        }
        Ok(())
    }

    pub fn in_range(&self, d: f64) -> bool {
        d >= self.d_min && d <= self.d_max
    }

    /// Position of `d` in `[0, 1]`, 1 at `d_min` and 0 at `d_max`.
    fn unit(&self, d: f64) -> f64 {
        match self.transform {
            LabelTransform::Inverse => {
                let far = self.d_min / self.d_max;
                (self.d_min / d - far) / (1.0 - far)
            }
            LabelTransform::Log => (self.d_max.ln() - d.ln()) / (self.d_max.ln() - self.d_min.ln()),
        }
    }

    fn from_unit(&self, s: f64) -> f64 {
        match self.transform {
            LabelTransform::Inverse => {
                let far = self.d_min / self.d_max;
                self.d_min / (far + s * (1.0 - far))
            }
            LabelTransform::Log => {
                (self.d_max.ln() - s * (self.d_max.ln() - self.d_min.ln())).exp()
            }
        }
    }
}

/// Maps a metric depth in `[d_min, d_max]` onto `[label_lo, label_hi]`.
pub fn normalize_depth(d: f64, cfg: &DepthLabelConfig) -> Result<f64> {
    if !cfg.in_range(d) {
        return Err(Error::OutOfRange(format!(
            "depth {d} outside [{}, {}]",
            cfg.d_min, cfg.d_max
        )));
    }
    Ok(cfg.label_lo + cfg.unit(d) * (cfg.label_hi - cfg.label_lo))
}

/// Inverse of [`normalize_depth`]; labels outside the range are clamped first.
pub fn denormalize_label(label: f64, cfg: &DepthLabelConfig) -> f64 {
    let l = label.clamp(cfg.label_lo, cfg.label_hi);
    cfg.from_unit((l - cfg.label_lo) / (cfg.label_hi - cfg.label_lo))
}

/// Normalized depth labels with a validity mask, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
    pub mask: Vec<bool>,
}

impl LabelMap {
    /// Labels for every valid pixel whose depth is inside the configured
    /// range; everything else is masked out.
    pub fn from_depth(depth: &DepthMap, cfg: &DepthLabelConfig) -> Self {
        let mut values = vec![0.0f32; depth.values.len()];
        let mut mask = vec![false; depth.values.len()];
        for i in 0..values.len() {
            if depth.mask[i] {
                if let Ok(l) = normalize_depth(depth.values[i], cfg) {
                    values[i] = l as f32;
                    mask[i] = true;
                }
            }
        }
        LabelMap {
            width: depth.width,
            height: depth.height,
            values,
            mask,
        }
    }

    /// Dense labels, e.g. network output.
    pub fn dense(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return invalid(format!(
                "{} labels for a {width}×{height} map",
                values.len()
            ));
        }
        Ok(LabelMap {
            width,
            height,
            values,
            mask: vec![true; width * height],
        })
    }

    /// Metric depth for every valid label.
    pub fn to_depth(&self, cfg: &DepthLabelConfig) -> DepthMap {
        let values = self
            .values
            .iter()
            .zip(&self.mask)
            .map(|(&l, &m)| {
                if m {
                    denormalize_label(l as f64, cfg)
                } else {
                    0.0
                }
            })
            .collect();
        DepthMap {
            width: self.width,
            height: self.height,
            values,
            mask: self.mask.clone(),
        }
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScanStats {
    /// Points outside the depth range or the image.
    pub culled: usize,
    /// Points that lost a pixel to a nearer point.
    pub occluded: usize,
}

/// Rasterizes a scan into a sparse depth map: each in-range point writes its
/// nearest pixel, the nearest point wins, untouched pixels stay invalid.
pub fn scan_to_depth_map(
    scan: &LidarScan,
    k: &CameraIntrinsics,
    cfg: &DepthLabelConfig,
) -> Result<(DepthMap, ScanStats)> {
    k.validate()?;
    cfg.validate()?;
    if !scan.sensor_to_camera.is_valid(1e-6) {
        return invalid("sensor-to-camera rotation is not orthonormal");
    }
    let mut map = DepthMap::empty(k.width, k.height);
    let mut stats = ScanStats::default();
    for p in &scan.points {
        if !p.iter().all(|c| c.is_finite()) {
            return invalid(format!("non-finite scan point {p:?}"));
        }
        let c = scan.sensor_to_camera.apply(&nalgebra::Vector3::from(*p));
        if !cfg.in_range(c.z) {
            stats.culled += 1;
            continue;
        }
        let u = (k.fx * c.x / c.z + k.cx).round();
        let v = (k.fy * c.y / c.z + k.cy).round();
        if u < 0.0 || v < 0.0 || u >= k.width as f64 || v >= k.height as f64 {
            stats.culled += 1;
            continue;
        }
        let i = map.index(u as usize, v as usize);
        if map.mask[i] {
            stats.occluded += 1;
            if c.z >= map.values[i] {
                continue;
            }
        }
        map.values[i] = c.z;
        map.mask[i] = true;
    }
    Ok((map, stats))
}

/// A video frame with its metric depth and camera pose.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoFrame {
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub pose: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceFrame {
    pub rgb: RgbImage,
    pub labels: LabelMap,
    pub pose: Pose,
}

/// A fixed-length run of consecutive frames used for training.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRecord {
    pub frames: Vec<SequenceFrame>,
}

impl SequenceRecord {
    pub fn from_video(frames: &[VideoFrame], cfg: &DepthLabelConfig) -> Result<Self> {
        let Some(first) = frames.first() else {
            return invalid("a sequence needs at least one frame");
        };
        let dims = first.rgb.dimensions();
        let mut out = Vec::with_capacity(frames.len());
        for f in frames {
            if f.rgb.dimensions() != dims || (f.depth.width as u32, f.depth.height as u32) != dims {
                return invalid("all frames of a sequence must share dimensions");
            }
            out.push(SequenceFrame {
                rgb: f.rgb.clone(),
                labels: LabelMap::from_depth(&f.depth, cfg),
                pose: f.pose,
            });
        }
        Ok(SequenceRecord { frames: out })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Start indices of consecutive windows of length `k`, `stride` apart. A
/// trailing remainder shorter than `k` is dropped.
pub fn window_starts(len: usize, k: usize, stride: usize) -> Vec<usize> {
    if k == 0 || stride == 0 || len < k {
        return Vec::new();
    }
    (0..=len - k).step_by(stride).collect()
}

/// Splits a video into non-overlapping `k`-frame sequences.
pub fn split_sequences(
    video: &[VideoFrame],
    k: usize,
    cfg: &DepthLabelConfig,
) -> Result<Vec<SequenceRecord>> {
    split_sequences_with_stride(video, k, k, cfg)
}

pub fn split_sequences_with_stride(
    video: &[VideoFrame],
    k: usize,
    stride: usize,
    cfg: &DepthLabelConfig,
) -> Result<Vec<SequenceRecord>> {
    if k < 2 {
        return invalid(format!("sequence length must be at least 2, got {k}"));
    }
    if stride == 0 {
        return invalid("sequence stride must be positive");
    }
    window_starts(video.len(), k, stride)
        .into_iter()
        .map(|s| SequenceRecord::from_video(&video[s..s + k], cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;

    #[test]
    fn label_endpoints_and_midpoint() {
        let cfg = DepthLabelConfig::default();
        assert!((normalize_depth(3.0, &cfg).unwrap() - 0.75).abs() < 1e-15);
        assert!((normalize_depth(80.0, &cfg).unwrap() - 0.25).abs() < 1e-15);
        // inverse depth 0.51875 sits halfway between 3/80 = 0.0375 and 1
        assert!((normalize_depth(3.0 / 0.51875, &cfg).unwrap() - 0.5).abs() < 1e-12);
        assert!((denormalize_label(0.75, &cfg) - 3.0).abs() < 1e-12);
        assert!((denormalize_label(0.25, &cfg) - 80.0).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_depth_is_an_error_and_labels_clamp() {
        let cfg = DepthLabelConfig::default();
        assert!(matches!(
            normalize_depth(2.5, &cfg),
            Err(Error::OutOfRange(_))
        ));
        assert!(matches!(
            normalize_depth(80.5, &cfg),
            Err(Error::OutOfRange(_))
        ));
        assert_eq!(denormalize_label(0.9, &cfg), denormalize_label(0.75, &cfg));
        assert_eq!(denormalize_label(-1.0, &cfg), denormalize_label(0.25, &cfg));
    }

    #[test]
    fn log_labels_are_monotone_and_invertible() {
        let cfg = DepthLabelConfig {
            transform: LabelTransform::Log,
            ..Default::default()
        };
        assert!((normalize_depth(3.0, &cfg).unwrap() - 0.75).abs() < 1e-12);
        assert!((normalize_depth(80.0, &cfg).unwrap() - 0.25).abs() < 1e-12);
        let mut last = f64::INFINITY;
        for d in [3.0, 5.0, 10.0, 40.0, 80.0] {
            let l = normalize_depth(d, &cfg).unwrap();
            assert!(l < last);
            last = l;
            assert!((denormalize_label(l, &cfg) - d).abs() < 1e-9);
        }
    }

    #[test]
    fn config_validation() {
        assert!(DepthLabelConfig::default().validate().is_ok());
        assert!(DepthLabelConfig {
            d_min: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(DepthLabelConfig {
            d_max: 2.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(DepthLabelConfig {
            label_lo: 0.8,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(DepthLabelConfig {
            label_hi: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 20.0, 10.0, 41, 21).unwrap()
    }

    fn scan(points: Vec<[f64; 3]>) -> LidarScan {
        LidarScan {
            points,
            sensor_to_camera: RigidTransform::identity(),
        }
    }

    #[test]
    fn scan_below_cutoff_is_masked() {
        let (map, stats) = scan_to_depth_map(
            &scan(vec![[0.0, 0.0, 2.5]]),
            &camera(),
            &DepthLabelConfig::default(),
        )
        .unwrap();
        assert_eq!(map.valid_count(), 0);
        assert_eq!(stats.culled, 1);
    }

    #[test]
    fn scan_point_lands_on_principal_pixel() {
        let k = camera();
        let (map, _) = scan_to_depth_map(
            &scan(vec![[0.0, 0.0, 50.0]]),
            &k,
            &DepthLabelConfig::default(),
        )
        .unwrap();
        assert_eq!(map.valid_count(), 1);
        assert_eq!(
            map.get(k.cx.round() as usize, k.cy.round() as usize),
            Some(50.0)
        );
    }

    #[test]
    fn nearest_scan_point_wins() {
        // both points lie on the ray through the principal point
        for order in [[10.0, 40.0], [40.0, 10.0]] {
            let pts = order.iter().map(|&z| [0.0, 0.0, z]).collect();
            let (map, stats) =
                scan_to_depth_map(&scan(pts), &camera(), &DepthLabelConfig::default()).unwrap();
            assert_eq!(map.get(20, 10), Some(10.0));
            assert_eq!(map.valid_count(), 1);
            assert_eq!(stats.occluded, 1);
        }
    }

    #[test]
    fn scan_uses_calibration() {
        // sensor 2 m behind the camera along its optical axis
        let cal = RigidTransform::from_translation([0.0, 0.0, -2.0]);
        let s = LidarScan {
            points: vec![[0.0, 0.0, 12.0]],
            sensor_to_camera: cal,
        };
        let (map, _) = scan_to_depth_map(&s, &camera(), &DepthLabelConfig::default()).unwrap();
        assert_eq!(map.get(20, 10), Some(10.0));
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_starts(100, 10, 10).len(), 10);
        assert!(window_starts(9, 10, 10).is_empty());
        assert_eq!(window_starts(25, 10, 10), vec![0, 10]);
        assert_eq!(window_starts(12, 10, 1), vec![0, 1, 2]);
    }

    #[test]
    fn split_rejects_short_sequences() {
        assert!(split_sequences(&[], 1, &DepthLabelConfig::default()).is_err());
        assert!(split_sequences(&[], 2, &DepthLabelConfig::default())
            .unwrap()
            .is_empty());
    }
}
