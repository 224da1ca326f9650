use spi_engine::{ops, EngineError, Graph, Tensor};

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
}

#[test]
fn identity_kernel_conv_is_noop() {
    let data: Vec<f64> = (0..2 * 3 * 4).map(|i| i as f64 * 0.25 - 1.0).collect();
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[2, 1, 3, 4], &data));
    let w = g.constant(t(&[1, 1, 1, 1], &[1.0]));
    let y = g.conv2d(x, w, None, 1, 0).unwrap();
    assert_eq!(g.value(y).data(), &data[..]);
}

#[test]
fn softplus_closed_form() {
    let v = ops::softplus(0.75f64, 20.0);
    let closed = (1.0 + 15f64.exp()).ln() / 20.0;
    assert!((v - closed).abs() < 1e-15);
    assert!((v - 0.75000002).abs() < 5e-9, "{v}");
}

#[test]
fn softmax_symmetric() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[2], &[0.0, 0.0]));
    let y = g.softmax(x, 0).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.5]);
}

#[test]
fn scan_with_unit_gains_is_prefix_sum() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 3, 1], &[1.0, 2.0, 3.0]));
    let delta = g.constant(t(&[1, 3, 1], &[1.0; 3]));
    // exp(delta * 0) = 1: no decay
    let a = g.constant(t(&[1, 1], &[0.0]));
    let b = g.constant(t(&[1, 3, 1], &[1.0; 3]));
    let c = g.constant(t(&[1, 3, 1], &[1.0; 3]));
    let d = g.constant(t(&[1], &[0.0]));
    let y = g.selective_scan(x, delta, a, b, c, d).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 3.0, 6.0]);
}

#[test]
fn scan_memoryless_returns_input() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 4, 1], &[0.5, -1.0, 2.0, 0.25]));
    let delta = g.constant(t(&[1, 4, 1], &[1.0; 4]));
    let a = g.constant(t(&[1, 1], &[-1e4]));
    let b = g.constant(t(&[1, 4, 1], &[1.0; 4]));
    let c = g.constant(t(&[1, 4, 1], &[1.0; 4]));
    let d = g.constant(t(&[1], &[0.0]));
    let y = g.selective_scan(x, delta, a, b, c, d).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, -1.0, 2.0, 0.25]);
}

#[test]
fn backward_square_sum() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[1], &[3.0]));
    let y = g.mul(x, x).unwrap();
    let l = g.sum(y).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
}

#[test]
fn backward_l1_subgradient() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[3], &[0.5, -0.2, 0.0]));
    let l = g.l1_norm(x).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, -1.0, 0.0]);
}

#[test]
fn backward_errors() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[2], &[1.0, 2.0]));
    let y = g.square(x).unwrap();
    assert!(matches!(g.backward(y), Err(EngineError::NotScalar { .. })));
    let l = g.sum(y).unwrap();
    g.backward(l).unwrap();
    assert!(matches!(g.backward(l), Err(EngineError::BackwardTwice)));
    // a fresh forward pass re-arms backward
    let l2 = g.sum(y).unwrap();
    g.backward(l2).unwrap();
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros([2, 3]));
    let b = g.constant(Tensor::zeros([4]));
    match g.add(a, b) {
        Err(EngineError::ShapeMismatch { op, lhs, rhs }) => {
            assert_eq!(op, "add");
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![4]);
        }
        other => panic!("expected shape mismatch, got {other:?}"),
    }
    let m = g.constant(Tensor::zeros([3, 2]));
    let e = g.matmul(a, a).unwrap_err();
    assert!(e.to_string().contains("matmul"), "{e}");
    g.matmul(a, m).unwrap();
}

#[test]
fn non_finite_output_names_op() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[2], &[1.0, 0.0]));
    let e = g.log(x).unwrap_err();
    assert!(matches!(e, EngineError::NonFinite { op: "log" }), "{e:?}");
}

#[test]
fn clear_is_idempotent() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[2], &[1.0, 2.0]));
    let l = g.sum(x).unwrap();
    g.backward(l).unwrap();
    g.clear();
    assert!(g.is_empty());
    g.clear();
    assert!(g.is_empty());
}

#[test]
fn constant_inputs_are_not_recorded_for_backward() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(t(&[2], &[1.0, 2.0]));
    let b = g.exp(a).unwrap();
    assert!(!g.requires_grad(b));
    let x = g.leaf(t(&[2], &[0.0, 0.0]));
    let c = g.add(b, x).unwrap();
    assert!(g.requires_grad(c));
}

#[test]
fn bilinear_upsample_of_constant_is_constant() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::full([1, 1, 3, 3], 0.7));
    let y = g.bilinear_upsample(x, 12, 12).unwrap();
    assert!(g.value(y).data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
}

#[test]
fn avg_pool_averages_blocks() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 1, 2, 4], &[1.0, 3.0, 5.0, 7.0, 1.0, 3.0, 5.0, 7.0]));
    let y = g.avg_pool(x, 2).unwrap();
    assert_eq!(g.value(y).data(), &[2.0, 6.0]);
    assert!(g.avg_pool(x, 3).is_err());
}

#[test]
fn group_norm_normalizes_each_group() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 2, 1, 2], &[1.0, 3.0, 10.0, 30.0]));
    let gamma = g.constant(Tensor::full([2], 1.0));
    let beta = g.constant(Tensor::zeros([2]));
    let y = g.group_norm(x, gamma, beta, 2, 0.0).unwrap();
    let v = g.value(y).data();
    for (got, want) in v.iter().zip([-1.0, 1.0, -1.0, 1.0]) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn depthwise_matches_grouped_dense_conv() {
    let xs: Vec<f64> = (0..2 * 9).map(|i| (i as f64 * 0.37).cos()).collect();
    let ws: Vec<f64> = (0..2 * 9).map(|i| (i as f64 * 0.91).sin()).collect();
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 2, 3, 3], &xs));
    let w = g.constant(t(&[2, 1, 3, 3], &ws));
    let y = g.depthwise_conv2d(x, w, None, 1).unwrap();
    // dense weight with zero cross-channel taps
    let mut dense = vec![0.0; 2 * 2 * 9];
    for c in 0..2 {
        dense[(c * 2 + c) * 9..(c * 2 + c + 1) * 9].copy_from_slice(&ws[c * 9..(c + 1) * 9]);
    }
    let wd = g.constant(t(&[2, 2, 3, 3], &dense));
    let z = g.conv2d(x, wd, None, 1, 1).unwrap();
    for (a, b) in g.value(y).data().iter().zip(g.value(z).data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn gather_zero_index_reads_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[3], &[1.0, 2.0, 3.0]));
    let y = g.gather(x, vec![2, ops::ZERO_INDEX, 0, 2], [4]).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 0.0, 1.0, 3.0]);
    let l = g.sum(y).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 2.0]);
}

#[test]
fn f32_graph_runs() {
    let mut g = Graph::<f32>::new();
    let x = g.leaf(Tensor::new([2], vec![1.0f32, -2.0]).unwrap());
    let y = g.silu(x).unwrap();
    let l = g.sum(y).unwrap();
    g.backward(l).unwrap();
    assert!(g.grad(x).unwrap().is_finite());
}
