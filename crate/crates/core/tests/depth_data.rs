use geoframe::depth_data::io::{read_dataset, read_dmap, read_scene_spec, write_dmap, write_scene_spec, write_video_dir};
use geoframe::depth_data::synthetic::{random_street_scene, render_synthetic_sequence, StreetSceneParams};
use geoframe::depth_data::{
    denormalize_label, normalize_depth, scan_to_depth_map, split_sequences, split_sequences_with_stride,
    DepthLabelConfig, LabelTransform, LidarScan, VideoFrame,
};
use geoframe::geometry::{CameraIntrinsics, DepthMap, Pose, RigidTransform};
use image::{Rgb, RgbImage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn label_round_trip_on_random_depths() {
    let cfg = DepthLabelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..1000 {
        let d = rng.random_range(3.0..=80.0);
        let back = denormalize_label(normalize_depth(d, &cfg).unwrap(), &cfg);
        assert!((back - d).abs() < 1e-9, "{d} -> {back}");
    }
}

#[test]
fn label_examples_by_hand() {
    let cfg = DepthLabelConfig::default();
    // (3/d − 3/80)·0.5/(1 − 3/80) + 0.25, evaluated independently
    let oracle = |d: f64| (3.0 / d - 0.0375) * 0.5 / 0.9625 + 0.25;
    for d in [3.0, 5.0, 3.0 / 0.51875, 17.0, 80.0] {
        assert!((normalize_depth(d, &cfg).unwrap() - oracle(d)).abs() < 1e-12);
    }
    assert!((normalize_depth(3.0 / 0.51875, &cfg).unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(denormalize_label(0.9, &cfg), 3.0);
    assert_eq!(denormalize_label(-1.0, &cfg), 80.0);
}

#[test]
fn log_labels_round_trip() {
    let cfg = DepthLabelConfig { transform: LabelTransform::Log, ..Default::default() };
    for d in [3.0, 9.5, 40.0, 80.0] {
        let back = denormalize_label(normalize_depth(d, &cfg).unwrap(), &cfg);
        assert!((back - d).abs() < 1e-9);
    }
}

fn camera() -> CameraIntrinsics {
    CameraIntrinsics::new(60.0, 60.0, 20.0, 10.0, 40, 20).unwrap()
}

#[test]
fn scan_examples() {
    let k = camera();
    let cfg = DepthLabelConfig::default();
    let scan = |points: Vec<[f64; 3]>| LidarScan { points, sensor_to_camera: RigidTransform::identity() };
    let (m, stats) = scan_to_depth_map(&scan(vec![[0.0, 0.0, 2.5]]), &k, &cfg).unwrap();
    assert_eq!((m.valid_count(), stats.culled), (0, 1));
    let (m, _) = scan_to_depth_map(&scan(vec![[0.0, 0.0, 50.0]]), &k, &cfg).unwrap();
    assert_eq!(m.valid_count(), 1);
    assert_eq!(m.get(20, 10), Some(50.0));
    let (m, _) = scan_to_depth_map(&scan(vec![[1.0, 0.5, 40.0], [0.25, 0.125, 10.0]]), &k, &cfg).unwrap();
    assert_eq!(m.valid_count(), 1);
    assert_eq!(m.get(22, 11), Some(10.0));
}

proptest! {
    #[test]
    fn labels_decrease_with_depth(a in 3.0f64..80.0, b in 3.0f64..80.0) {
        prop_assume!(a < b);
        let cfg = DepthLabelConfig::default();
        prop_assert!(normalize_depth(a, &cfg).unwrap() > normalize_depth(b, &cfg).unwrap());
    }

    #[test]
    fn scan_depths_stay_in_range(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = DepthLabelConfig::default();
        let points = (0..300)
            .map(|_| [rng.random_range(-30.0..30.0), rng.random_range(-10.0..10.0), rng.random_range(-5.0..120.0)])
            .collect();
        let yaw = rng.random_range(-0.3..0.3);
        let sensor_to_camera = RigidTransform::new(
            *nalgebra::Rotation3::from_axis_angle(&nalgebra::Vector3::y_axis(), yaw).matrix(),
            nalgebra::Vector3::new(0.1, -0.2, 0.3),
        );
        let (m, stats) = scan_to_depth_map(&LidarScan { points, sensor_to_camera }, &camera(), &cfg).unwrap();
        prop_assert!(m.valid_count() + stats.culled + stats.occluded == 300);
        for i in 0..m.values.len() {
            if m.mask[i] {
                prop_assert!((3.0..=80.0).contains(&m.values[i]));
            }
        }
    }

    #[test]
    fn splitting_keeps_order_without_duplicates(len in 0usize..40, k in 2usize..12, stride in 1usize..12) {
        let video: Vec<VideoFrame> = (0..len)
            .map(|i| VideoFrame {
                rgb: RgbImage::new(2, 1),
                depth: DepthMap::constant(2, 1, 5.0).unwrap(),
                pose: Pose::new([i as f64, 0.0, 0.0], 0.0, 0.0, 0.0),
            })
            .collect();
        let cfg = DepthLabelConfig::default();
        let seqs = split_sequences_with_stride(&video, k, stride, &cfg).unwrap();
        let expected = if len < k { 0 } else { (len - k) / stride + 1 };
        prop_assert_eq!(seqs.len(), expected);
        let mut last_start = None;
        for s in &seqs {
            let ids: Vec<f64> = s.frames.iter().map(|f| f.pose.position[0]).collect();
            prop_assert_eq!(ids.len(), k);
            prop_assert!(ids.windows(2).all(|w| w[1] == w[0] + 1.0));
            if let Some(prev) = last_start {
                prop_assert!(ids[0] >= prev + stride as f64);
            }
            last_start = Some(ids[0]);
        }
        if stride == k {
            let all: Vec<f64> = seqs.iter().flat_map(|s| s.frames.iter().map(|f| f.pose.position[0])).collect();
            prop_assert!(all.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn dmap_round_trip(w in 1usize..9, h in 1usize..9, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.1f32..200.0) as f64).collect();
        let mask: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.7)).collect();
        let values = values.iter().zip(&mask).map(|(&v, &m)| if m { v } else { 0.0 }).collect();
        let d = DepthMap::new(w, h, values, mask).unwrap();
        let mut buf = Vec::new();
        write_dmap(&mut buf, &d).unwrap();
        prop_assert_eq!(buf.len(), 12 + 5 * w * h);
        prop_assert_eq!(read_dmap(&buf[..]).unwrap(), d);
    }
}

#[test]
fn split_examples() {
    let frame = |i: usize| VideoFrame {
        rgb: RgbImage::from_pixel(2, 2, Rgb([i as u8; 3])),
        depth: DepthMap::constant(2, 2, 4.0).unwrap(),
        pose: Pose::default(),
    };
    let cfg = DepthLabelConfig::default();
    let video: Vec<_> = (0..100).map(frame).collect();
    assert_eq!(split_sequences(&video, 10, &cfg).unwrap().len(), 10);
    assert!(split_sequences(&video[..9], 10, &cfg).unwrap().is_empty());
    let s = split_sequences(&video[..25], 10, &cfg).unwrap();
    assert_eq!(s.len(), 2);
    assert_eq!(s[1].frames[0].rgb.get_pixel(0, 0).0, [10; 3]);
    assert_eq!(s[1].frames[9].rgb.get_pixel(0, 0).0, [19; 3]);
}

#[test]
fn dataset_directory_round_trip() {
    let k = CameraIntrinsics::centered(30.0, 36, 12).unwrap();
    let root = tempfile::tempdir().unwrap();
    let mut videos = Vec::new();
    for seed in 0..2 {
        let spec = random_street_scene(seed, k, &StreetSceneParams { frame_count: 3, ..Default::default() });
        let frames = render_synthetic_sequence(&spec).unwrap();
        write_video_dir(&root.path().join(format!("video{seed}")), &frames, &k).unwrap();
        videos.push(frames);
    }
    let back = read_dataset(root.path()).unwrap();
    assert_eq!(back.len(), 2);
    for ((frames, kb), original) in back.iter().zip(&videos) {
        assert_eq!(*kb, k);
        assert_eq!(frames.len(), 3);
        for (a, b) in frames.iter().zip(original) {
            assert_eq!(a.rgb, b.rgb);
            assert_eq!(a.depth.mask, b.depth.mask);
            for (x, y) in a.depth.values.iter().zip(&b.depth.values) {
                assert_eq!(*x, *y as f32 as f64);
            }
            for (x, y) in a.pose.position.iter().zip(b.pose.position) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
    let single = read_dataset(&root.path().join("video1")).unwrap();
    assert_eq!(single.len(), 1);
    assert!(read_dataset(&root.path().join("video0").join("frames")).is_err());
}

#[test]
fn scene_spec_json_round_trip() {
    let k = CameraIntrinsics::centered(30.0, 36, 12).unwrap();
    let spec = random_street_scene(4, k, &StreetSceneParams::two_box());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.json");
    write_scene_spec(&path, &spec).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("\"version\": 1"));
    assert_eq!(read_scene_spec(&path).unwrap(), spec);
    std::fs::write(&path, text.replace("\"version\": 1", "\"version\": 2")).unwrap();
    assert!(read_scene_spec(&path).is_err());
}

#[test]
fn street_scenes_are_reproducible() {
    let k = CameraIntrinsics::centered(30.0, 36, 12).unwrap();
    let a = render_synthetic_sequence(&random_street_scene(9, k, &StreetSceneParams::default())).unwrap();
    let b = render_synthetic_sequence(&random_street_scene(9, k, &StreetSceneParams::default())).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|f| f.depth.valid_count() == 36 * 12));
}
