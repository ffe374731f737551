use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use geoframe::depth_data::io::{
    load_dmap, read_dataset, read_intrinsics, read_scan_calibration, read_scan_points, read_scene_spec,
    read_video_dir, save_dmap, write_video_dir, DEPTH_EXTENSION,
};
use geoframe::depth_data::synthetic::{random_street_scene, render_synthetic_sequence, StreetSceneParams};
use geoframe::depth_data::{scan_to_depth_map, split_sequences, window_starts, DepthLabelConfig, LidarScan, VideoFrame};
use geoframe::geometry::{CameraIntrinsics, EgoMotion, Pose};
use geoframe::metrics::{evaluate, DepthSource};
use geoframe::model::{train_with, write_loss_log, TrainConfig, TrainedModel};
use geoframe::synthesis::{
    predict_next, simulate_hypothetical, DepthPredictor, FramePrediction, ModelPredictor, OraclePredictor,
    SplatConfig,
};
use geoframe::FORMAT_VERSION;
use image::{GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use crate::args::{EvalArgs, GenDataArgs, MakeDepthArgs, PredictArgs, SimulateArgs, TrainArgs};
use crate::{CliError, Result};

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Usage(msg.into()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    if let Some(spec) = &a.spec {
        let spec = read_scene_spec(spec)?;
        let frames = render_synthetic_sequence(&spec)?;
        write_video_dir(&a.out, &frames, &spec.intrinsics)?;
        return print_json(&serde_json::json!({ "version": FORMAT_VERSION, "videos": 1, "frames": frames.len() }));
    }
    let count = a.street.expect("clap requires --spec or --street");
    let k = CameraIntrinsics::centered(a.focal.unwrap_or(0.58 * a.width as f64), a.width, a.height)?;
    let params = if a.two_box { StreetSceneParams::two_box() } else { StreetSceneParams::default() };
    for i in 0..count {
        let spec = random_street_scene(a.seed + i as u64, k, &params);
        let frames = render_synthetic_sequence(&spec)?;
        write_video_dir(&a.out.join(format!("video{i:04}")), &frames, &k)?;
    }
    print_json(&serde_json::json!({ "version": FORMAT_VERSION, "videos": count, "frames": count * params.frame_count }))
}

pub fn make_depth(a: &MakeDepthArgs) -> Result<()> {
    let k = read_intrinsics(&a.intrinsics)?;
    let sensor_to_camera = read_scan_calibration(&a.calibration)?;
    let cfg = DepthLabelConfig { d_min: a.d_min, d_max: a.d_max, ..Default::default() };
    cfg.validate()?;
    let mut scans: Vec<PathBuf> = fs::read_dir(&a.scans)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "bin"))
        .collect();
    scans.sort();
    if scans.is_empty() {
        return Err(geoframe::Error::Format(format!("no .bin scans in {}", a.scans.display())).into());
    }
    fs::create_dir_all(&a.out)?;
    let (mut valid, mut culled, mut occluded) = (0, 0, 0);
    for path in &scans {
        let points = read_scan_points(fs::File::open(path)?)?;
        let (depth, stats) = scan_to_depth_map(&LidarScan { points, sensor_to_camera }, &k, &cfg)?;
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        save_dmap(&a.out.join(format!("{stem}.{DEPTH_EXTENSION}")), &depth)?;
        valid += depth.valid_count();
        culled += stats.culled;
        occluded += stats.occluded;
    }
    print_json(&serde_json::json!({
        "version": FORMAT_VERSION,
        "scans": scans.len(),
        "valid_pixels": valid,
        "culled_points": culled,
        "occluded_points": occluded,
    }))
}

#[derive(Serialize)]
struct TrainSummary {
    version: u32,
    steps: usize,
    initial_loss: Option<f64>,
    final_loss: Option<f64>,
    evals: Vec<(usize, f64)>,
    output: PathBuf,
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = serde_json::from_str(&fs::read_to_string(&a.config)?)?;
    let base = a.config.parent().unwrap_or(Path::new("."));
    // paths in the config file are relative to the file
    let resolve = |p: Option<PathBuf>| p.map(|p| if p.is_relative() { base.join(p) } else { p });
    cfg.data = a.data.clone().or(resolve(cfg.data.take()));
    cfg.eval_data = a.eval_data.clone().or(resolve(cfg.eval_data.take()));
    cfg.output = a.out.clone().or(resolve(cfg.output.take()));
    let (Some(data), Some(output)) = (cfg.data.clone(), cfg.output.clone()) else {
        return usage("training needs a data directory and an output directory");
    };
    cfg.validate()?;
    let sequences = |dir: &Path| -> Result<Vec<_>> {
        let mut out = Vec::new();
        for (video, _) in read_dataset(dir)? {
            out.extend(split_sequences(&video, cfg.seq_len, &cfg.labels)?);
        }
        Ok(out)
    };
    let train_set = sequences(&data)?;
    let held_out = match &cfg.eval_data {
        Some(dir) => sequences(dir)?,
        None => Vec::new(),
    };
    fs::create_dir_all(&output)?;
    let outcome = train_with(&cfg, &train_set, &held_out, |r, _| {
        if r.step % 100 == 0 {
            eprintln!("step {} loss {:.6}", r.step, r.loss);
        }
        Ok(())
    })?;
    let model = TrainedModel { params: outcome.params, labels: cfg.labels };
    model.save(&output)?;
    write_loss_log(fs::File::create(output.join("loss.csv"))?, &outcome.log)?;
    let mut evals = fs::File::create(output.join("evals.csv"))?;
    writeln!(evals, "step,depth_l2")?;
    for (step, l2) in &outcome.evals {
        writeln!(evals, "{step},{l2}")?;
    }
    fs::write(output.join("train_config.json"), serde_json::to_string_pretty(&cfg)?)?;
    print_json(&TrainSummary {
        version: FORMAT_VERSION,
        steps: outcome.log.len(),
        initial_loss: outcome.log.first().map(|r| r.loss),
        final_loss: outcome.log.last().map(|r| r.loss),
        evals: outcome.evals,
        output,
    })
}

/// Every video cut into non-overlapping windows of `len` frames; videos
/// shorter than `len` are kept whole.
fn windows(videos: Vec<(Vec<VideoFrame>, CameraIntrinsics)>, len: usize) -> Result<(Vec<Vec<VideoFrame>>, CameraIntrinsics)> {
    let k = videos[0].1;
    let mut out = Vec::new();
    for (video, kv) in videos {
        if kv != k {
            return Err(geoframe::Error::Format("videos use different intrinsics".into()).into());
        }
        if video.len() < len {
            out.push(video);
            continue;
        }
        for s in window_starts(video.len(), len, len) {
            out.push(video[s..s + len].to_vec());
        }
    }
    Ok((out, k))
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    if a.seq_len < 2 {
        return usage("--seq-len must be at least 2");
    }
    let (sequences, k) = windows(read_dataset(&a.data)?, a.seq_len)?;
    let cfg = SplatConfig::default();
    let report = match &a.model {
        Some(dir) => {
            let model = TrainedModel::load(dir)?;
            evaluate(DepthSource::Predicted(&ModelPredictor::new(&model)), &sequences, &k, &cfg)?
        }
        None => evaluate(DepthSource::Oracle, &sequences, &k, &cfg)?,
    };
    if let Some(path) = &a.csv {
        report.write_csv(fs::File::create(path)?)?;
    }
    let json = report.to_json()?;
    match &a.out {
        Some(path) => fs::write(path, json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn coverage_image(p: &FramePrediction, width: u32, height: u32) -> GrayImage {
    GrayImage::from_fn(width, height, |x, y| {
        Luma([if p.coverage[(y * width + x) as usize] { 255 } else { 0 }])
    })
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let (video, k) = read_video_dir(&a.sequence)?;
    if video.len() < 2 {
        return Err(geoframe::Error::Format("prediction needs at least two frames".into()).into());
    }
    let n = video.len() - 1;
    let frames: Vec<&RgbImage> = video[..n].iter().map(|f| &f.rgb).collect();
    let poses: Vec<Pose> = video.iter().map(|f| f.pose).collect();
    let depths: Vec<_> = video.iter().map(|f| f.depth.clone()).collect();
    let model = a.model.as_deref().map(TrainedModel::load).transpose()?;
    let predictor: Box<dyn DepthPredictor + '_> = match &model {
        Some(m) => Box::new(ModelPredictor::new(m)),
        None => Box::new(OraclePredictor { depths: &depths }),
    };
    let p = predict_next(predictor.as_ref(), &frames, &poses, &k, &SplatConfig::default())?;
    fs::create_dir_all(&a.out)?;
    p.rgb.save_with_format(a.out.join("next.png"), image::ImageFormat::Png)?;
    save_dmap(&a.out.join(format!("next.{DEPTH_EXTENSION}")), &p.depth)?;
    coverage_image(&p, k.width as u32, k.height as u32)
        .save_with_format(a.out.join("coverage.png"), image::ImageFormat::Png)?;
    print_json(&serde_json::json!({
        "version": FORMAT_VERSION,
        "input_frames": n,
        "coverage": p.coverage_fraction(),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MotionList {
    pub version: u32,
    pub motions: Vec<EgoMotion>,
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let k = read_intrinsics(&a.intrinsics)?;
    let rgb = image::open(&a.frame)?.to_rgb8();
    let depth = load_dmap(&a.depth)?;
    let list: MotionList = serde_json::from_str(&fs::read_to_string(&a.motions)?)?;
    if list.version != FORMAT_VERSION {
        return Err(geoframe::Error::Format(format!("unsupported motions version {}", list.version)).into());
    }
    if let Some(i) = list.motions.iter().position(|m| !m.is_finite()) {
        return Err(geoframe::Error::Format(format!("motion {i} is not finite")).into());
    }
    let out = simulate_hypothetical(&rgb, &depth, &list.motions, &k, &SplatConfig::default())?;
    fs::create_dir_all(&a.out)?;
    let mut coverage = Vec::with_capacity(out.len());
    for (i, p) in out.iter().enumerate() {
        p.rgb.save_with_format(a.out.join(format!("{i:06}.png")), image::ImageFormat::Png)?;
        save_dmap(&a.out.join(format!("{i:06}.{DEPTH_EXTENSION}")), &p.depth)?;
        coverage.push(p.coverage_fraction());
    }
    print_json(&serde_json::json!({ "version": FORMAT_VERSION, "frames": out.len(), "coverage": coverage }))
}
