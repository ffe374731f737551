//! On-disk dataset layout. One directory per video:
//!
//! ```text
//! frames/NNNNNN.png      8-bit RGB
//! depth/NNNNNN.npyish    "DMAP", u32 width, u32 height, f32 depth, u8 mask (LE)
//! poses.csv              frame,x,y,z,yaw,pitch,roll
//! intrinsics.json        fx, fy, cx, cy, width, height, version
//! ```
//!
//! Scans for label generation are `NNNNNN.bin` files of `f32` x, y, z,
//! reflectance records, with a `calibration.json` sensor-to-camera matrix.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synthetic::SyntheticSceneSpec;
use super::VideoFrame;
use crate::geometry::{CameraIntrinsics, DepthMap, Pose, RigidTransform};
use crate::{Error, Result, FORMAT_VERSION};

pub const DMAP_MAGIC: &[u8; 4] = b"DMAP";
pub const DEPTH_EXTENSION: &str = "npyish";

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

/// Depth is stored as `f32`; masked-out pixels are written as zero.
pub fn write_dmap<W: Write>(mut w: W, depth: &DepthMap) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + depth.values.len() * 5);
    buf.extend_from_slice(DMAP_MAGIC);
    buf.extend_from_slice(&(depth.width as u32).to_le_bytes());
    buf.extend_from_slice(&(depth.height as u32).to_le_bytes());
    for (&d, &m) in depth.values.iter().zip(&depth.mask) {
        let v = if m { d as f32 } else { 0.0 };
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend(depth.mask.iter().map(|&m| m as u8));
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_dmap<R: Read>(mut r: R) -> Result<DepthMap> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[..4] != DMAP_MAGIC {
        return format_err("missing DMAP header");
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format("DMAP size overflows".into()))?;
    if bytes.len() != 12 + n * 5 {
        return format_err(format!(
            "DMAP {width}×{height} expects {} bytes, found {}",
            12 + n * 5,
            bytes.len()
        ));
    }
    let (depth_bytes, mask_bytes) = bytes[12..].split_at(n * 4);
    let values: Vec<f64> = depth_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let mut mask = Vec::with_capacity(n);
    for &b in mask_bytes {
        match b {
            0 => mask.push(false),
            1 => mask.push(true),
            _ => return format_err(format!("mask byte {b} is not 0 or 1")),
        }
    }
    DepthMap::new(width, height, values, mask).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_dmap(path: &Path, depth: &DepthMap) -> Result<()> {
    write_dmap(fs::File::create(path)?, depth)
}

pub fn load_dmap(path: &Path) -> Result<DepthMap> {
    read_dmap(fs::File::open(path)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseRow {
    frame: usize,
    x: f64,
    y: f64,
    z: f64,
    yaw: f64,
    pitch: f64,
    roll: f64,
}

pub fn write_poses<W: Write>(w: W, poses: &[Pose]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for (frame, p) in poses.iter().enumerate() {
        let [x, y, z] = p.position;
        csv.serialize(PoseRow {
            frame,
            x,
            y,
            z,
            yaw: p.yaw,
            pitch: p.pitch,
            roll: p.roll,
        })?;
    }
    csv.flush()?;
    Ok(())
}

/// Rows must be numbered `0, 1, 2, …` in order.
pub fn read_poses<R: Read>(r: R) -> Result<Vec<Pose>> {
    let mut out = Vec::new();
    for (i, row) in csv::Reader::from_reader(r)
        .deserialize::<PoseRow>()
        .enumerate()
    {
        let row = row?;
        if row.frame != i {
            return format_err(format!("pose row {i} is labelled frame {}", row.frame));
        }
        let pose = Pose::new([row.x, row.y, row.z], row.yaw, row.pitch, row.roll);
        if !pose.is_finite() {
            return format_err(format!("pose {i} is not finite"));
        }
        out.push(pose);
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct IntrinsicsFile {
    version: u32,
    #[serde(flatten)]
    intrinsics: CameraIntrinsics,
}

pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics) -> Result<()> {
    let file = IntrinsicsFile {
        version: FORMAT_VERSION,
        intrinsics: *k,
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let file: IntrinsicsFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    if file.version != FORMAT_VERSION {
        return format_err(format!("unsupported intrinsics version {}", file.version));
    }
    file.intrinsics
        .validate()
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(file.intrinsics)
}

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("frames").join(format!("{index:06}.png"))
}

pub fn depth_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("depth")
        .join(format!("{index:06}.{DEPTH_EXTENSION}"))
}

/// Writes a video in the dataset layout, creating `dir` if needed.
pub fn write_video_dir(dir: &Path, frames: &[VideoFrame], k: &CameraIntrinsics) -> Result<()> {
    fs::create_dir_all(dir.join("frames"))?;
    fs::create_dir_all(dir.join("depth"))?;
    for (i, f) in frames.iter().enumerate() {
        if f.rgb.dimensions() != (k.width as u32, k.height as u32) {
            return Err(Error::InvalidArgument(format!(
                "frame {i} does not match the camera size"
            )));
        }
        f.rgb
            .save_with_format(frame_path(dir, i), image::ImageFormat::Png)?;
        save_dmap(&depth_path(dir, i), &f.depth)?;
    }
    let poses: Vec<Pose> = frames.iter().map(|f| f.pose).collect();
    write_poses(fs::File::create(dir.join("poses.csv"))?, &poses)?;
    write_intrinsics(&dir.join("intrinsics.json"), k)
}

/// Reads a video written by [`write_video_dir`]. The pose count defines the
/// frame count; every frame needs its image and depth file.
pub fn read_video_dir(dir: &Path) -> Result<(Vec<VideoFrame>, CameraIntrinsics)> {
    let k = read_intrinsics(&dir.join("intrinsics.json"))?;
    let poses = read_poses(fs::File::open(dir.join("poses.csv"))?)?;
    let mut frames = Vec::with_capacity(poses.len());
    for (i, pose) in poses.into_iter().enumerate() {
        let rgb = image::open(frame_path(dir, i))?.to_rgb8();
        let depth = load_dmap(&depth_path(dir, i))?;
        if rgb.dimensions() != (k.width as u32, k.height as u32)
            || depth.width != k.width
            || depth.height != k.height
        {
            return format_err(format!("frame {i} does not match the camera size"));
        }
        frames.push(VideoFrame { rgb, depth, pose });
    }
    Ok((frames, k))
}

/// Reads every video directory directly under `root` (sorted by name); a
/// root that is itself a video directory is read as a single video.
pub fn read_dataset(root: &Path) -> Result<Vec<(Vec<VideoFrame>, CameraIntrinsics)>> {
    if root.join("poses.csv").exists() {
        return Ok(vec![read_video_dir(root)?]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("poses.csv").exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return format_err(format!("no video directories under {}", root.display()));
    }
    dirs.iter().map(|d| read_video_dir(d)).collect()
}

/// Point records of four little-endian `f32` (x, y, z, reflectance); the
/// reflectance is dropped.
pub fn read_scan_points<R: Read>(mut r: R) -> Result<Vec<[f64; 3]>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 16 != 0 {
        return format_err(format!("scan of {} bytes is not a whole number of points", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes(c[4 * i..4 * i + 4].try_into().unwrap()) as f64;
            [f(0), f(1), f(2)]
        })
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct ScanCalibrationFile {
    version: u32,
    /// Row-major 4×4 sensor-to-camera matrix.
    sensor_to_camera: [[f64; 4]; 4],
}

pub fn read_scan_calibration(path: &Path) -> Result<RigidTransform> {
    let file: ScanCalibrationFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    if file.version != FORMAT_VERSION {
        return format_err(format!("unsupported calibration version {}", file.version));
    }
    let m = nalgebra::Matrix4::from_fn(|r, c| file.sensor_to_camera[r][c]);
    if m.row(3).iter().zip([0.0, 0.0, 0.0, 1.0]).any(|(a, b)| *a != b) {
        return format_err("calibration bottom row must be 0 0 0 1");
    }
    let t = RigidTransform::from_matrix(&m);
    if !t.is_valid(1e-6) {
        return format_err("calibration rotation is not orthonormal");
    }
    Ok(t)
}

pub fn write_scan_calibration(path: &Path, t: &RigidTransform) -> Result<()> {
    let m = t.to_matrix();
    let file = ScanCalibrationFile {
        version: FORMAT_VERSION,
        sensor_to_camera: std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])),
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn read_scene_spec(path: &Path) -> Result<SyntheticSceneSpec> {
    let spec: SyntheticSceneSpec = serde_json::from_str(&fs::read_to_string(path)?)?;
    if spec.version != FORMAT_VERSION {
        return format_err(format!("unsupported scene version {}", spec.version));
    }
    Ok(spec)
}

pub fn write_scene_spec(path: &Path, spec: &SyntheticSceneSpec) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(spec)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dmap_header_layout() {
        let d = DepthMap::new(2, 1, vec![5.0, 0.0], vec![true, false]).unwrap();
        let mut buf = Vec::new();
        write_dmap(&mut buf, &d).unwrap();
        assert_eq!(&buf[..4], b"DMAP");
        assert_eq!(&buf[4..12], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&buf[12..16], &5.0f32.to_le_bytes());
        assert_eq!(&buf[20..], &[1, 0]);
        assert_eq!(read_dmap(&buf[..]).unwrap(), d);
    }

    #[test]
    fn scan_records_drop_reflectance() {
        let mut buf = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5, -4.0, 0.0, 9.5, 0.1] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(read_scan_points(&buf[..]).unwrap(), vec![[1.0, 2.0, 3.0], [-4.0, 0.0, 9.5]]);
        assert!(read_scan_points(&buf[..15]).is_err());
    }

    #[test]
    fn dmap_rejects_corruption() {
        let d = DepthMap::constant(3, 2, 7.5).unwrap();
        let mut buf = Vec::new();
        write_dmap(&mut buf, &d).unwrap();
        assert!(read_dmap(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_dmap(&bad[..]).is_err());
        let mut bad = buf.clone();
        *bad.last_mut().unwrap() = 2;
        assert!(read_dmap(&bad[..]).is_err());
    }

    #[test]
    fn poses_round_trip_and_reject_gaps() {
        let poses = vec![Pose::new([1.0, 2.0, 3.0], 0.1, -0.2, 0.3), Pose::default()];
        let mut buf = Vec::new();
        write_poses(&mut buf, &poses).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("frame,x,y,z,yaw,pitch,roll"));
        assert_eq!(read_poses(&buf[..]).unwrap(), poses);
        let gap = "frame,x,y,z,yaw,pitch,roll\n0,0,0,0,0,0,0\n2,0,0,0,0,0,0\n";
        assert!(read_poses(gap.as_bytes()).is_err());
    }
}
