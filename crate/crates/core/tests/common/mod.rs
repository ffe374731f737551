//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use geoframe::geometry::{CameraIntrinsics, DepthMap, Pose};
use nalgebra::Matrix4;
use rand::Rng;

/// World-from-camera 4×4 matrix written out element by element.
/// Camera axes: x right, y down, z forward. World: z up, zero-angle camera
/// looking along +y. Yaw turns about world z, then pitch about the camera's
/// right axis, then roll about its forward axis.
pub fn pose_matrix(p: &Pose) -> Matrix4<f64> {
    let (sy, cy) = p.yaw.sin_cos();
    let (sp, cp) = p.pitch.sin_cos();
    let (sr, cr) = p.roll.sin_cos();
    // body axes (right, forward, up) in world coordinates
    let rz = [[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
    let ry = [[cr, 0.0, sr], [0.0, 1.0, 0.0], [-sr, 0.0, cr]];
    let body = mul3(mul3(rz, rx), ry);
    // camera x = body right, camera y = −body up, camera z = body forward
    let mut m = Matrix4::identity();
    for r in 0..3 {
        m[(r, 0)] = body[r][0];
        m[(r, 1)] = -body[r][2];
        m[(r, 2)] = body[r][1];
        m[(r, 3)] = p.position[r];
    }
    m
}

fn mul3(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn random_pose<R: Rng>(rng: &mut R) -> Pose {
    Pose::new(
        [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-2.0..5.0)],
        rng.random_range(-3.1..3.1),
        rng.random_range(-0.4..0.4),
        rng.random_range(-0.4..0.4),
    )
}

pub fn random_depth_map<R: Rng>(rng: &mut R, k: &CameraIntrinsics) -> DepthMap {
    let n = k.width * k.height;
    let values = (0..n).map(|_| rng.random_range(0.5..120.0)).collect();
    let mask = (0..n).map(|_| rng.random_bool(0.8)).collect();
    DepthMap::new(k.width, k.height, values, mask).unwrap()
}
