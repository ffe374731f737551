use geoframe::depth_data::synthetic::{random_street_scene, render_synthetic_sequence, StreetSceneParams};
use geoframe::depth_data::{DepthLabelConfig, SequenceRecord};
use geoframe::geometry::CameraIntrinsics;
use geoframe::model::{
    berhu_loss, forward_sequence, forward_step, gdl_loss, image_to_tensor, init_params, l2_loss, sequence_loss, train,
    ArchitectureConfig, LayerOp, LossConfig, LossKind, LossTarget, ModelParams, SequenceStates, TrainConfig,
    FORGET_BIAS,
};
use geoframe_nn::Tensor;

fn street_frames(arch: &ArchitectureConfig, seed: u64) -> Vec<Tensor<f64>> {
    let k = CameraIntrinsics::centered(arch.input_width as f64 * 0.6, arch.input_width, arch.input_height).unwrap();
    render_synthetic_sequence(&random_street_scene(seed, k, &StreetSceneParams::default()))
        .unwrap()
        .iter()
        .map(|f| image_to_tensor(&f.rgb))
        .collect()
}

fn street_record(arch: &ArchitectureConfig, seed: u64) -> SequenceRecord {
    let k = CameraIntrinsics::centered(arch.input_width as f64 * 0.6, arch.input_width, arch.input_height).unwrap();
    let video = render_synthetic_sequence(&random_street_scene(seed, k, &StreetSceneParams::default())).unwrap();
    SequenceRecord::from_video(&video, &DepthLabelConfig::default()).unwrap()
}

fn bits(p: &ModelParams<f32>) -> Vec<(String, Vec<u32>)> {
    p.store.iter().map(|(n, t)| (n.to_string(), t.data().iter().map(|v| v.to_bits()).collect())).collect()
}

#[test]
fn init_is_deterministic_per_seed() {
    let arch = ArchitectureConfig::reduced();
    let a = init_params::<f32>(&arch, 7).unwrap();
    let b = init_params::<f32>(&arch, 7).unwrap();
    let c = init_params::<f32>(&arch, 8).unwrap();
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn forget_gate_biases_start_at_one() {
    let arch = ArchitectureConfig::default();
    let p = init_params::<f64>(&arch, 1).unwrap();
    let mut lstm_layers = 0;
    for layer in &arch.layers {
        if !layer.has_params() {
            continue;
        }
        let b = p.store.get(&format!("{}/b", layer.name)).unwrap().data();
        match layer.op {
            LayerOp::ConvLstm { channels, .. } => {
                lstm_layers += 1;
                assert_eq!(b.len(), 4 * channels);
                for (i, &v) in b.iter().enumerate() {
                    let expected = if (channels..2 * channels).contains(&i) { FORGET_BIAS } else { 0.0 };
                    assert_eq!(v, expected, "{} bias {i}", layer.name);
                }
            }
            LayerOp::Conv { .. } => assert!(b.iter().all(|&v| v == 0.0)),
            _ => {}
        }
    }
    assert_eq!(lstm_layers, 5);
}

#[test]
fn conv1_weight_spread_matches_init_std() {
    let p = init_params::<f64>(&ArchitectureConfig::default(), 3).unwrap();
    let w = p.store.get("conv1/w").unwrap().data();
    assert!(w.len() >= 2400);
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((0.009..=0.011).contains(&std), "std {std}");
}

#[test]
fn default_output_shape_and_range() {
    let arch = ArchitectureConfig::default();
    let p = init_params::<f32>(&arch, 0).unwrap();
    let frame = street_frames(&arch, 0)[0].cast::<f32>();
    let states = SequenceStates::zeros(&arch, 1).unwrap();
    let (y, next) = forward_step(&p, &frame, &states).unwrap();
    assert_eq!(y.shape(), &[1, 88, 288, 1]);
    assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    assert_eq!(next.layers.len(), 5);
}

#[test]
fn wrong_frame_size_is_rejected() {
    let arch = ArchitectureConfig::tiny();
    let p = init_params::<f64>(&arch, 0).unwrap();
    let states = SequenceStates::zeros(&arch, 1).unwrap();
    let bad = Tensor::<f64>::zeros(&[1, arch.input_height + 8, arch.input_width, 3]);
    assert!(forward_step(&p, &bad, &states).is_err());
}

#[test]
fn carried_state_changes_the_output() {
    let arch = ArchitectureConfig::reduced();
    let p = init_params::<f64>(&arch, 4).unwrap();
    let frames = street_frames(&arch, 11);
    let zero = SequenceStates::zeros(&arch, 1).unwrap();
    let (_, s1) = forward_step(&p, &frames[0], &zero).unwrap();
    let (carried, _) = forward_step(&p, &frames[1], &s1).unwrap();
    let (fresh, _) = forward_step(&p, &frames[1], &zero).unwrap();
    let diff = carried.data().iter().zip(fresh.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-6, "max difference {diff}");
}

#[test]
fn unrolled_sequence_equals_iterated_steps() {
    let arch = ArchitectureConfig::tiny();
    let p = init_params::<f64>(&arch, 5).unwrap();
    let frames = street_frames(&arch, 2);
    let one = forward_sequence(&p, &frames[..1]).unwrap();
    let (single, _) = forward_step(&p, &frames[0], &SequenceStates::zeros(&arch, 1).unwrap()).unwrap();
    assert_eq!(one[0], single);

    let unrolled = forward_sequence(&p, &frames[..4]).unwrap();
    let mut states = SequenceStates::zeros(&arch, 1).unwrap();
    for (i, f) in frames[..4].iter().enumerate() {
        let (y, next) = forward_step(&p, f, &states).unwrap();
        assert_eq!(unrolled[i], y, "step {i}");
        states = next;
    }
}

#[test]
fn predictions_ignore_future_frames() {
    let arch = ArchitectureConfig::tiny();
    let p = init_params::<f64>(&arch, 6).unwrap();
    let frames = street_frames(&arch, 3);
    let all = forward_sequence(&p, &frames[..6]).unwrap();
    for j in 1..6 {
        assert_eq!(forward_sequence(&p, &frames[..j]).unwrap()[..], all[..j]);
    }
    let mut altered = frames[..6].to_vec();
    altered[4] = altered[4].map(|v| 1.0 - v);
    altered[5] = Tensor::zeros(altered[5].shape());
    assert_eq!(forward_sequence(&p, &altered).unwrap()[..4], all[..4]);
}

fn target<'a>(labels: &'a [f64], mask: &'a [bool], width: usize) -> LossTarget<'a> {
    LossTarget { labels, mask, width, height: labels.len() / width }
}

#[test]
fn berhu_hand_computed_example() {
    let y = [0.0, 0.0, 0.0];
    let d = [1.0, 0.1, -0.5];
    let mask = [true; 3];
    let loss = berhu_loss(&d, &target(&y, &mask, 3)).unwrap();
    let expected = (2.6 + 0.1 + 0.725) / 3.0;
    assert!((loss.value - expected).abs() < 1e-9, "{}", loss.value);
    assert!((expected - 1.1416666666666666).abs() < 1e-12);
    // unmasked residuals neither set c nor contribute
    let y = [0.0, 0.0, 0.0, 0.0];
    let d = [1.0, 0.1, -0.5, 40.0];
    let mask = [true, true, true, false];
    assert!((berhu_loss(&d, &target(&y, &mask, 4)).unwrap().value - expected).abs() < 1e-9);
}

#[test]
fn berhu_slope_is_continuous_at_threshold() {
    // residuals {1.0, x}: c = 0.2, and x sweeps across it
    let y = [0.0, 0.0];
    let mask = [true; 2];
    let value = |x: f64| berhu_loss(&[1.0, x], &target(&y, &mask, 2)).unwrap().value;
    let c = 0.2;
    let h = 1e-7;
    let left = (value(c) - value(c - h)) / h;
    let right = (value(c + h) - value(c)) / h;
    assert!((left - right).abs() < 1e-6, "{left} vs {right}");
    let at = berhu_loss(&[1.0, c], &target(&y, &mask, 2)).unwrap();
    let quadratic = (c * c + c * c) / (2.0 * c);
    assert!((at.value - (2.6 + c) / 2.0).abs() < 1e-12 && (quadratic - c).abs() < 1e-15);
}

#[test]
fn gdl_examples() {
    let y = [0.0, 0.0];
    let mask = [true; 2];
    assert_eq!(gdl_loss(&[0.0, 1.0], &target(&y, &mask, 2)).unwrap().value, 1.0);
    let y: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
    let mask = vec![true; 12];
    let shifted: Vec<f64> = y.iter().map(|v| v + 0.25).collect();
    assert!(gdl_loss(&shifted, &target(&y, &mask, 4)).unwrap().value < 1e-24);
    assert_eq!(gdl_loss(&y, &target(&y, &mask, 4)).unwrap().value, 0.0);
}

#[test]
fn sequence_loss_examples() {
    let y = vec![0.5; 6];
    let mask = vec![true; 6];
    let frames: Vec<Vec<f64>> = vec![vec![0.6; 6], vec![0.3; 6], vec![0.5, 0.1, 0.5, 0.9, 0.5, 0.5]];
    let targets = vec![target(&y, &mask, 3); 3];

    let same = vec![frames[0].clone(); 3];
    let single = l2_loss(&frames[0], &targets[0]).unwrap().value;
    let (v, _) = sequence_loss(&same, &targets, &LossConfig::default()).unwrap();
    assert!((v - single).abs() < 1e-15);

    let last_only = LossConfig { alphas: vec![0.0, 0.0, 1.0], ..Default::default() };
    let (v, grads) = sequence_loss(&frames, &targets, &last_only).unwrap();
    let last = l2_loss(&frames[2], &targets[2]).unwrap().value;
    assert!((v - last / 3.0).abs() < 1e-15);
    assert!(grads[0].iter().chain(&grads[1]).all(|&g| g == 0.0));

    for kind in [LossKind::L2, LossKind::Berhu] {
        let base = LossConfig { kind, ..Default::default() };
        let zero = LossConfig { kind, lambda_gdl: 0.0, alphas: vec![1.0; 3] };
        let a = sequence_loss(&frames, &targets, &base).unwrap();
        let b = sequence_loss(&frames, &targets, &zero).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1, b.1);
    }

    let with_gdl = LossConfig { lambda_gdl: 1.0, ..Default::default() };
    let (v, _) = sequence_loss(&frames, &targets, &with_gdl).unwrap();
    let expected: f64 = frames
        .iter()
        .zip(&targets)
        .map(|(f, t)| l2_loss(f, t).unwrap().value + gdl_loss(f, t).unwrap().value)
        .sum::<f64>()
        / 3.0;
    assert!((v - expected).abs() < 1e-15);
}

#[test]
fn single_sequence_overfits() {
    let cfg = TrainConfig { steps: 500, batch_size: 1, ..Default::default() };
    let data = vec![street_record(&cfg.arch, 21)];
    let out = train(&cfg, &data, &[]).unwrap();
    let first = out.log.first().unwrap().loss;
    let last = out.log.last().unwrap().loss;
    assert_eq!(out.log.len(), 500);
    assert!(last < 0.1 * first, "loss {first} -> {last}");
}

#[test]
fn zero_steps_returns_the_initialization() {
    let cfg = TrainConfig { steps: 0, seed: 9, ..Default::default() };
    let data = vec![street_record(&cfg.arch, 1)];
    let out = train(&cfg, &data, &[]).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(bits(&out.params), bits(&init_params(&cfg.arch, 9).unwrap()));
}

#[test]
fn training_is_deterministic_and_rejects_empty_data() {
    let arch = ArchitectureConfig::tiny();
    let cfg = TrainConfig { arch: arch.clone(), steps: 6, batch_size: 2, seq_len: 4, seed: 3, ..Default::default() };
    let data: Vec<_> = (0..3).map(|s| street_record(&arch, s)).collect();
    let a = train(&cfg, &data, &data[..1]).unwrap();
    let b = train(&cfg, &data, &data[..1]).unwrap();
    let curve = |o: &geoframe::model::TrainOutcome| o.log.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(curve(&a), curve(&b));
    assert_eq!(a.evals, b.evals);
    assert_eq!(bits(&a.params), bits(&b.params));
    assert!(train(&cfg, &[], &[]).is_err());
}
