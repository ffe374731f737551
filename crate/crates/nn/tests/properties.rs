use geoframe_nn::checkpoint::{read_checkpoint, write_checkpoint};
use geoframe_nn::kernels::{conv2d, depth_to_space, sigmoid_scalar, space_to_depth};
use geoframe_nn::{ParamStore, Tensor};
use proptest::prelude::*;

fn tensor(shape: [usize; 4]) -> impl Strategy<Value = Tensor<f64>> {
    let len = shape.iter().product::<usize>();
    prop::collection::vec(-100.0f64..100.0, len).prop_map(move |d| Tensor::from_vec(&shape, d).unwrap())
}

fn d2s_input() -> impl Strategy<Value = (Tensor<f64>, usize)> {
    (1usize..3, 1usize..4, 1usize..4, 1usize..3, 1usize..3)
        .prop_flat_map(|(n, h, w, c, b)| (tensor([n, h, w, c * b * b]), Just(b)))
}

proptest! {
    #[test]
    fn space_to_depth_inverts_depth_to_space((x, b) in d2s_input()) {
        let y = depth_to_space(&x, b).unwrap();
        prop_assert_eq!(space_to_depth(&y, b).unwrap(), x);
    }

    #[test]
    fn depth_to_space_inverts_space_to_depth((x, b) in d2s_input()) {
        let y = depth_to_space(&x, b).unwrap();
        prop_assert_eq!(depth_to_space(&space_to_depth(&y, b).unwrap(), b).unwrap(), y);
    }

    #[test]
    fn stride_one_conv_keeps_spatial_shape(
        h in 1usize..9, w in 1usize..9, k in prop::sample::select(vec![1usize, 3, 5]), cout in 1usize..4
    ) {
        let x = Tensor::<f64>::full(&[1, h, w, 2], 0.5);
        let wt = Tensor::full(&[k, k, 2, cout], 0.1);
        let y = conv2d(&x, &wt, &Tensor::zeros(&[cout]), 1).unwrap();
        prop_assert_eq!(y.shape(), &[1, h, w, cout]);
    }

    #[test]
    fn sigmoid_is_finite_and_bounded(v in -1e300f64..1e300) {
        let s = sigmoid_scalar(v);
        prop_assert!(s.is_finite() && (0.0..=1.0).contains(&s));
        let s32 = sigmoid_scalar(v as f32);
        prop_assert!(s32.is_finite() && (0.0..=1.0).contains(&s32));
    }

    #[test]
    fn checkpoint_round_trip(values in prop::collection::vec(any::<f32>(), 1..40)) {
        let mut p = ParamStore::new();
        p.insert("a/w", Tensor::from_vec(&[values.len()], values.clone()).unwrap()).unwrap();
        p.insert("b", Tensor::full(&[2, 1], 3.5f32)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let back = read_checkpoint(&buf[..]).unwrap();
        let bits = |s: &ParamStore<f32>| -> Vec<u32> {
            s.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
        };
        prop_assert_eq!(bits(&back), bits(&p));
    }
}
