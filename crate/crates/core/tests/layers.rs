//! Shape algebra, linearity, pooling and determinism of the layer kernels.

use collabdqn_core::nn::{
    conv3d_forward, dense_forward, maxpool3d_forward, relu_forward, Layer, LayerKind, LayerParams, Network,
};
use collabdqn_core::rng;
use collabdqn_core::Tensor;
use proptest::prelude::*;
use rand::Rng as _;

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::seeded(seed);
    Tensor::from_fn(shape, |_| r.random_range(-1.0f32..1.0)).unwrap()
}

fn random_params(kind: LayerKind, seed: u64, zero_bias: bool) -> LayerParams {
    let mut r = rng::seeded(seed);
    let mut p = LayerParams::he_uniform(kind, &mut r).unwrap();
    if !zero_bias {
        for b in p.bias.data_mut() {
            *b = r.random_range(-0.5f32..0.5);
        }
    }
    p
}

fn combine(a: f32, x: &Tensor, b: f32, y: &Tensor) -> Tensor {
    let data = x.data().iter().zip(y.data()).map(|(u, v)| a * u + b * v).collect();
    Tensor::new(x.shape(), data).unwrap()
}

fn assert_close(actual: &Tensor, expected: &Tensor, tol: f32) {
    assert_eq!(actual.shape(), expected.shape());
    for (i, (a, e)) in actual.data().iter().zip(expected.data()).enumerate() {
        assert!((a - e).abs() <= tol * (1.0 + e.abs()), "element {i}: {a} vs {e}");
    }
}

#[derive(Debug, Clone)]
struct ConvCase {
    batch: usize,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    padding: usize,
    extents: [usize; 3],
    window: usize,
}

fn conv_case() -> impl Strategy<Value = ConvCase> {
    (1usize..3, 1usize..4, 1usize..4, 1usize..4, 0usize..2, 1usize..4)
        .prop_flat_map(|(batch, ci, co, kernel, padding, window)| {
            // Extents large enough for the kernel and one pooling window after.
            let lo = (kernel + window).saturating_sub(2 * padding).max(1);
            (Just((batch, ci, co, kernel, padding, window)), [lo..lo + 5, lo..lo + 5, lo..lo + 5])
        })
        .prop_map(|((batch, in_channels, out_channels, kernel, padding, window), e)| ConvCase {
            batch,
            in_channels,
            out_channels,
            kernel,
            padding,
            extents: [e[0], e[1], e[2]],
            window,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn declared_shapes_match_actual_shapes(c in conv_case(), hidden in 1usize..6, seed in any::<u64>()) {
        let kind = LayerKind::Conv3d {
            in_channels: c.in_channels,
            out_channels: c.out_channels,
            kernel: c.kernel,
            padding: c.padding,
        };
        let input_shape = [c.batch, c.in_channels, c.extents[0], c.extents[1], c.extents[2]];
        let conv = Layer::Conv3d(random_params(kind, seed, false));
        let conv_shape = conv.output_shape(&input_shape).unwrap();
        let pool = Layer::MaxPool3d { window: c.window };
        let pooled = pool.output_shape(&conv_shape).unwrap();
        let flat_width = pooled[1..].iter().product::<usize>();
        let dense = Layer::Dense(random_params(
            LayerKind::Dense { in_width: flat_width, out_width: hidden },
            seed ^ 1,
            false,
        ));
        let net = Network::new(vec![conv, Layer::Relu, pool, Layer::Flatten, dense]);
        let declared = net.output_shape(&input_shape).unwrap();
        prop_assert_eq!(&declared, &vec![c.batch, hidden]);

        let x = random_tensor(&input_shape, seed);
        let trace = net.forward_trace(&x).unwrap();
        prop_assert_eq!(trace.output().shape(), declared.as_slice());
        // Every intermediate matches the per-layer declaration too.
        let y = conv3d_forward(&x, net_layer_params(&net, 0)).unwrap();
        prop_assert_eq!(y.shape(), conv_shape.as_slice());
        let p = maxpool3d_forward(&relu_forward(&y), c.window).unwrap();
        prop_assert_eq!(p.shape(), pooled.as_slice());
    }

    #[test]
    fn conv_is_linear_without_bias(c in conv_case(), a in -2.0f32..2.0, b in -2.0f32..2.0, seed in any::<u64>()) {
        let kind = LayerKind::Conv3d {
            in_channels: c.in_channels,
            out_channels: c.out_channels,
            kernel: c.kernel,
            padding: c.padding,
        };
        let params = random_params(kind, seed, true);
        let shape = [c.batch, c.in_channels, c.extents[0], c.extents[1], c.extents[2]];
        let x = random_tensor(&shape, seed ^ 2);
        let y = random_tensor(&shape, seed ^ 3);
        let lhs = conv3d_forward(&combine(a, &x, b, &y), &params).unwrap();
        let rhs = combine(a, &conv3d_forward(&x, &params).unwrap(), b, &conv3d_forward(&y, &params).unwrap());
        assert_close(&lhs, &rhs, 1e-5);
    }

    #[test]
    fn dense_is_linear_without_bias(batch in 1usize..5, i in 1usize..20, o in 1usize..10, a in -2.0f32..2.0, b in -2.0f32..2.0, seed in any::<u64>()) {
        let params = random_params(LayerKind::Dense { in_width: i, out_width: o }, seed, true);
        let x = random_tensor(&[batch, i], seed ^ 2);
        let y = random_tensor(&[batch, i], seed ^ 3);
        let lhs = dense_forward(&combine(a, &x, b, &y), &params).unwrap();
        let rhs = combine(a, &dense_forward(&x, &params).unwrap(), b, &dense_forward(&y, &params).unwrap());
        assert_close(&lhs, &rhs, 1e-5);
    }

    #[test]
    fn pooling_a_constant_returns_the_constant(
        n in 1usize..3, c in 1usize..3, window in 1usize..4, blocks in [1usize..4, 1usize..4, 1usize..4],
        extra in [0usize..2, 0usize..2, 0usize..2], value in -10.0f32..10.0,
    ) {
        let ext: Vec<usize> = (0..3).map(|i| blocks[i] * window + extra[i].min(window - 1)).collect();
        let x = Tensor::full(&[n, c, ext[0], ext[1], ext[2]], value).unwrap();
        let y = maxpool3d_forward(&x, window).unwrap();
        prop_assert_eq!(y.shape(), &[n, c, blocks[0], blocks[1], blocks[2]][..]);
        prop_assert!(y.data().iter().all(|&v| v == value));
    }

    #[test]
    fn forward_is_bitwise_deterministic(c in conv_case(), seed in any::<u64>()) {
        let kind = LayerKind::Conv3d {
            in_channels: c.in_channels,
            out_channels: c.out_channels,
            kernel: c.kernel,
            padding: c.padding,
        };
        let net = Network::new(vec![
            Layer::Conv3d(random_params(kind, seed, false)),
            Layer::Relu,
            Layer::MaxPool3d { window: c.window },
        ]);
        let x = random_tensor(&[c.batch, c.in_channels, c.extents[0], c.extents[1], c.extents[2]], seed);
        let first = net.forward(&x).unwrap();
        let copy = net.clone();
        let second = copy.forward(&x.clone()).unwrap();
        prop_assert_eq!(
            first.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            second.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

fn net_layer_params(net: &Network, index: usize) -> &LayerParams {
    net.param_layers().nth(index).unwrap()
}

#[test]
fn padded_conv_of_ones_counts_in_range_taps() {
    // All-ones input and kernel: each output counts the taps that land
    // inside the volume.
    let kind = LayerKind::Conv3d {
        in_channels: 1,
        out_channels: 1,
        kernel: 3,
        padding: 1,
    };
    let params = LayerParams::new(kind, Tensor::full(&kind.weight_shape(), 1.0).unwrap(), Tensor::zeros(&[1]).unwrap()).unwrap();
    let x = Tensor::full(&[1, 1, 4, 4, 4], 1.0).unwrap();
    let y = conv3d_forward(&x, &params).unwrap();
    let span = |i: usize| if i == 0 || i == 3 { 2.0 } else { 3.0 };
    for z in 0..4 {
        for yy in 0..4 {
            for xx in 0..4 {
                assert_eq!(y.data()[(z * 4 + yy) * 4 + xx], span(z) * span(yy) * span(xx));
            }
        }
    }
}

#[test]
fn consecutive_samples_do_not_leak_through_padding() {
    // The second sample of a batch must come out the same as when run alone.
    let kind = LayerKind::Conv3d {
        in_channels: 2,
        out_channels: 3,
        kernel: 3,
        padding: 1,
    };
    let params = random_params(kind, 9, false);
    let batch = random_tensor(&[2, 2, 5, 4, 3], 10);
    let both = conv3d_forward(&batch, &params).unwrap();
    let alone = conv3d_forward(&batch.slice_outer(1, 2).unwrap(), &params).unwrap();
    assert_eq!(&both.data()[both.len() / 2..], alone.data());
}
