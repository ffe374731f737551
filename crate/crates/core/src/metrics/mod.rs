//! Image quality over predicted pixels, and the per-frame-index evaluation
//! harness.
//!
//! Both metrics only read pixels inside a mask, normally the warp's
//! coverage. A PSNR of `+∞` (identical pixels) is written as `"inf"`.

use std::io::Write;

use image::RgbImage;
use serde::{Deserialize, Serialize, Serializer};

use crate::depth_data::VideoFrame;
use crate::geometry::{ego_motion, CameraIntrinsics};
use crate::synthesis::{warp_forward, DepthPredictor, SplatConfig};
use crate::{invalid, Result, FORMAT_VERSION};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);
/// Minimum masked share of a window's weight for its centre to be scored.
pub const SSIM_MIN_COVERAGE: f64 = 0.5;

fn check_pair(pred: &RgbImage, gt: &RgbImage, mask: &[bool]) -> Result<()> {
    if pred.dimensions() != gt.dimensions() {
        return invalid(format!(
            "images differ in size: {:?} vs {:?}",
            pred.dimensions(),
            gt.dimensions()
        ));
    }
    if mask.len() != (gt.width() * gt.height()) as usize {
        return invalid(format!(
            "mask has {} entries for {:?}",
            mask.len(),
            gt.dimensions()
        ));
    }
    Ok(())
}

/// Mean squared error over masked pixels and all three channels.
pub fn masked_mse(pred: &RgbImage, gt: &RgbImage, mask: &[bool]) -> Result<f64> {
    check_pair(pred, gt, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, g), &m) in pred.pixels().zip(gt.pixels()).zip(mask) {
        if m {
            for c in 0..3 {
                let d = p.0[c] as f64 - g.0[c] as f64;
                sum += d * d;
            }
            n += 3;
        }
    }
    if n == 0 {
        return invalid("PSNR needs at least one masked pixel");
    }
    Ok(sum / n as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

/// `10·log10(255² / MSE)` over masked pixels; `+∞` when they are identical.
pub fn psnr(pred: &RgbImage, gt: &RgbImage, mask: &[bool]) -> Result<f64> {
    Ok(psnr_from_mse(masked_mse(pred, gt, mask)?))
}

/// BT.601 luma.
pub fn luma(image: &RgbImage) -> Vec<f64> {
    image
        .pixels()
        .map(|p| 0.299 * p.0[0] as f64 + 0.587 * p.0[1] as f64 + 0.114 * p.0[2] as f64)
        .collect()
}

/// Normalized 11×11 Gaussian, row-major.
pub fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w: Vec<f64> = (0..SSIM_WINDOW * SSIM_WINDOW)
        .map(|i| {
            let (dy, dx) = ((i / SSIM_WINDOW) as f64 - r, (i % SSIM_WINDOW) as f64 - r);
            (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// SSIM of the luma at every masked pixel whose window is at least half
/// masked; `None` elsewhere. Window weights are renormalized over masked,
/// in-image pixels.
pub fn ssim_map(pred: &RgbImage, gt: &RgbImage, mask: &[bool]) -> Result<Vec<Option<f64>>> {
    check_pair(pred, gt, mask)?;
    let (w, h) = (gt.width() as i64, gt.height() as i64);
    let (a, b) = (luma(pred), luma(gt));
    let window = gaussian_window();
    let r = (SSIM_WINDOW / 2) as i64;
    let mut out = vec![None; mask.len()];
    for y in 0..h {
        for x in 0..w {
            let centre = (y * w + x) as usize;
            if !mask[centre] {
                continue;
            }
            let mut weight = 0.0;
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy < 0 || xx < 0 || yy >= h || xx >= w {
                        continue;
                    }
                    let i = (yy * w + xx) as usize;
                    if !mask[i] {
                        continue;
                    }
                    let g = window[((dy + r) * SSIM_WINDOW as i64 + dx + r) as usize];
                    weight += g;
                    ma += g * a[i];
                    mb += g * b[i];
                    saa += g * a[i] * a[i];
                    sbb += g * b[i] * b[i];
                    sab += g * a[i] * b[i];
                }
            }
            if weight < SSIM_MIN_COVERAGE {
                continue;
            }
            let (ma, mb) = (ma / weight, mb / weight);
            let va = saa / weight - ma * ma;
            let vb = sbb / weight - mb * mb;
            let cov = sab / weight - ma * mb;
            let s = ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            out[centre] = Some(s);
        }
    }
    Ok(out)
}

/// Mean of [`ssim_map`] over scored pixels.
pub fn ssim(pred: &RgbImage, gt: &RgbImage, mask: &[bool]) -> Result<f64> {
    let map = ssim_map(pred, gt, mask)?;
    let scored: Vec<f64> = map.into_iter().flatten().collect();
    if scored.is_empty() {
        return invalid("no pixel has enough masked neighbours for SSIM");
    }
    Ok(scored.iter().sum::<f64>() / scored.len() as f64)
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

/// `"inf"` for `+∞`, otherwise the number.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthMode {
    Predicted,
    Oracle,
}

/// Means over all sequences for one frame index (1-based: the prediction of
/// frame `i + 1` from frames `1..=i`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameIndexStats {
    pub frame_index: usize,
    #[serde(serialize_with = "ser_db")]
    pub psnr_mean: f64,
    pub ssim_mean: f64,
    pub n: usize,
    /// Mean masked RMSE (metres) of the depth used for the warp.
    pub depth_rmse_mean: f64,
    pub coverage_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub version: u32,
    pub mode: DepthMode,
    #[serde(serialize_with = "ser_db")]
    pub psnr: f64,
    pub ssim: f64,
    /// Covered pixels scored for PSNR, summed over all predictions.
    pub pixel_count: usize,
    /// Predictions left out because nothing was covered.
    pub skipped: usize,
    pub per_frame: Vec<FrameIndexStats>,
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `frame_index,psnr_mean,ssim_mean,n,depth_rmse_mean,coverage_mean`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "frame_index,psnr_mean,ssim_mean,n,depth_rmse_mean,coverage_mean"
        )?;
        for f in &self.per_frame {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                f.frame_index,
                format_db(f.psnr_mean),
                f.ssim_mean,
                f.n,
                f.depth_rmse_mean,
                f.coverage_mean
            )?;
        }
        Ok(())
    }
}

fn depth_rmse(pred: &crate::geometry::DepthMap, truth: &crate::geometry::DepthMap) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..truth.values.len() {
        if truth.mask[i] && pred.mask[i] {
            let d = pred.values[i] - truth.values[i];
            sum += d * d;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

#[derive(Default)]
struct Acc {
    psnr: f64,
    ssim: f64,
    rmse: f64,
    coverage: f64,
    n: usize,
}

/// Where the warp's depth comes from.
#[derive(Clone, Copy)]
pub enum DepthSource<'a> {
    Predicted(&'a dyn DepthPredictor),
    /// Each frame's own ground-truth depth.
    Oracle,
}

impl DepthSource<'_> {
    pub fn mode(&self) -> DepthMode {
        match self {
            DepthSource::Predicted(_) => DepthMode::Predicted,
            DepthSource::Oracle => DepthMode::Oracle,
        }
    }
}

/// Scores next-frame predictions for every sequence and frame index. The
/// predictor sees frames `1..=i` when frame `i + 1` is predicted.
pub fn evaluate(
    source: DepthSource<'_>,
    sequences: &[Vec<VideoFrame>],
    k: &CameraIntrinsics,
    cfg: &SplatConfig,
) -> Result<MetricReport> {
    if sequences.is_empty() {
        return invalid("evaluation set is empty");
    }
    let len = sequences.iter().map(Vec::len).min().unwrap_or(0);
    if len < 2 {
        return invalid("evaluation sequences need at least two frames");
    }
    let mut per_index: Vec<Acc> = (0..len - 1).map(|_| Acc::default()).collect();
    let mut total = Acc::default();
    let mut pixel_count = 0;
    let mut skipped = 0;
    for seq in sequences {
        let images: Vec<&RgbImage> = seq[..len - 1].iter().map(|f| &f.rgb).collect();
        let depths = match source {
            DepthSource::Predicted(p) => p.predict_depths(&images)?,
            DepthSource::Oracle => seq[..len - 1].iter().map(|f| f.depth.clone()).collect(),
        };
        for i in 0..len - 1 {
            let motion = ego_motion(&seq[i].pose, &seq[i + 1].pose)?;
            let pred = warp_forward(&seq[i].rgb, &depths[i], &motion, k, cfg)?;
            let covered = pred.coverage.iter().filter(|&&c| c).count();
            let Ok(s) = ssim(&pred.rgb, &seq[i + 1].rgb, &pred.coverage) else {
                skipped += 1;
                continue;
            };
            let p = psnr(&pred.rgb, &seq[i + 1].rgb, &pred.coverage)?;
            pixel_count += covered;
            let rmse = depth_rmse(&depths[i], &seq[i].depth);
            for acc in [&mut per_index[i], &mut total] {
                acc.psnr += p;
                acc.ssim += s;
                acc.rmse += rmse;
                acc.coverage += pred.coverage_fraction();
                acc.n += 1;
            }
        }
    }
    if total.n == 0 {
        return invalid("no prediction covered any pixel");
    }
    let mean = |v: f64, n: usize| if n == 0 { f64::NAN } else { v / n as f64 };
    let per_frame = per_index
        .iter()
        .enumerate()
        .map(|(i, a)| FrameIndexStats {
            frame_index: i + 1,
            psnr_mean: mean(a.psnr, a.n),
            ssim_mean: mean(a.ssim, a.n),
            n: a.n,
            depth_rmse_mean: mean(a.rmse, a.n),
            coverage_mean: mean(a.coverage, a.n),
        })
        .collect();
    Ok(MetricReport {
        version: FORMAT_VERSION,
        mode: source.mode(),
        psnr: total.psnr / total.n as f64,
        ssim: total.ssim / total.n as f64,
        pixel_count,
        skipped,
        per_frame,
    })
}
