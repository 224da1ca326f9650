//! Central-difference checks for every differentiable primitive.

use proptest::prelude::*;
use spi_engine::{grad_check, Graph, Result, Tensor, Var};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Contracts a tensor to a scalar with fixed, non-uniform weights so every
/// output coordinate contributes a distinct gradient.
fn wsum(g: &mut Graph<f64>, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7 + 0.3).sin()).collect();
    let w = g.constant(Tensor::new(shape, w)?);
    let p = g.mul(y, w)?;
    g.sum(p)
}

/// Splits a flat input into consecutive pieces of the given shapes.
fn split(g: &mut Graph<f64>, x: Var, shapes: &[&[usize]]) -> Result<Vec<Var>> {
    let mut at = 0;
    let mut out = Vec::new();
    for s in shapes {
        let n: usize = s.iter().product();
        let piece = g.slice(x, 0, at, n)?;
        out.push(g.reshape(piece, s.to_vec())?);
        at += n;
    }
    Ok(out)
}

fn total(shapes: &[&[usize]]) -> usize {
    shapes.iter().map(|s| s.iter().product::<usize>()).sum()
}

fn vec_in(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, n)
}

/// Values bounded away from zero, for kinks at the origin.
fn vec_away(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0.05f64..2.0, any::<bool>()).prop_map(|(m, s)| if s { m } else { -m }), n)
}

fn check(point: Vec<f64>, f: impl Fn(&mut Graph<f64>, Var) -> Result<Var>) {
    let n = point.len();
    let t = Tensor::new([n], point).unwrap();
    let err = grad_check(f, &t, STEP).unwrap();
    assert!(err <= TOL, "relative error {err:e}");
}

fn unary(point: Vec<f64>, op: impl Fn(&mut Graph<f64>, Var) -> Result<Var>) {
    check(point, |g, x| {
        let y = op(g, x)?;
        wsum(g, y)
    });
}

fn binary(point: Vec<f64>, sa: &[usize], sb: &[usize], op: impl Fn(&mut Graph<f64>, Var, Var) -> Result<Var>) {
    check(point, |g, x| {
        let v = split(g, x, &[sa, sb])?;
        let y = op(g, v[0], v[1])?;
        wsum(g, y)
    });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn add_broadcast(p in vec_in(6 + 3, -2.0, 2.0)) {
        binary(p, &[2, 3], &[3], |g, a, b| g.add(a, b));
    }

    #[test]
    fn sub_broadcast(p in vec_in(6 + 2, -2.0, 2.0)) {
        binary(p, &[2, 3], &[2, 1], |g, a, b| g.sub(a, b));
    }

    #[test]
    fn mul_same_shape(p in vec_in(12, -2.0, 2.0)) {
        binary(p, &[2, 3], &[2, 3], |g, a, b| g.mul(a, b));
    }

    #[test]
    fn div_broadcast(p in vec_in(6, -2.0, 2.0), d in vec_away(3)) {
        let mut p = p;
        p.extend(d);
        binary(p, &[2, 3], &[3], |g, a, b| g.div(a, b));
    }

    #[test]
    fn matmul(p in vec_in(6 + 12, -2.0, 2.0)) {
        binary(p, &[2, 3], &[3, 4], |g, a, b| g.matmul(a, b));
    }

    #[test]
    fn conv2d_stride1_pad1(p in vec_in(total(&[&[1, 2, 4, 4], &[3, 2, 3, 3], &[3]]), -1.0, 1.0)) {
        check(p, |g, x| {
            let v = split(g, x, &[&[1, 2, 4, 4], &[3, 2, 3, 3], &[3]])?;
            let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
            wsum(g, y)
        });
    }

    #[test]
    fn conv2d_stride2(p in vec_in(total(&[&[2, 1, 5, 5], &[2, 1, 3, 3]]), -1.0, 1.0)) {
        check(p, |g, x| {
            let v = split(g, x, &[&[2, 1, 5, 5], &[2, 1, 3, 3]])?;
            let y = g.conv2d(v[0], v[1], None, 2, 1)?;
            wsum(g, y)
        });
    }

    #[test]
    fn conv2d_pointwise(p in vec_in(total(&[&[1, 3, 3, 3], &[2, 3, 1, 1], &[2]]), -1.0, 1.0)) {
        check(p, |g, x| {
            let v = split(g, x, &[&[1, 3, 3, 3], &[2, 3, 1, 1], &[2]])?;
            let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 0)?;
            wsum(g, y)
        });
    }

    #[test]
    fn depthwise_conv2d(p in vec_in(total(&[&[1, 2, 4, 4], &[2, 1, 3, 3], &[2]]), -1.0, 1.0)) {
        check(p, |g, x| {
            let v = split(g, x, &[&[1, 2, 4, 4], &[2, 1, 3, 3], &[2]])?;
            let y = g.depthwise_conv2d(v[0], v[1], Some(v[2]), 1)?;
            wsum(g, y)
        });
    }

    #[test]
    fn transpose(p in vec_in(6, -2.0, 2.0)) {
        unary(p, |g, x| {
            let m = g.reshape(x, [2, 3])?;
            g.transpose(m)
        });
    }

    #[test]
    fn permute(p in vec_in(24, -2.0, 2.0)) {
        unary(p, |g, x| {
            let m = g.reshape(x, [2, 3, 4])?;
            g.permute(m, &[2, 0, 1])
        });
    }

    #[test]
    fn concat_axis1(p in vec_in(6 + 4, -2.0, 2.0)) {
        binary(p, &[2, 3], &[2, 2], |g, a, b| g.concat(&[a, b], 1));
    }

    #[test]
    fn slice_axis1(p in vec_in(12, -2.0, 2.0)) {
        unary(p, |g, x| {
            let m = g.reshape(x, [3, 4])?;
            g.slice(m, 1, 1, 2)
        });
    }

    #[test]
    fn pad2d_and_crop(p in vec_in(16, -2.0, 2.0)) {
        unary(p, |g, x| {
            let m = g.reshape(x, [1, 1, 4, 4])?;
            g.pad2d(m, 1, -1, 2, 0)
        });
    }

    #[test]
    fn bilinear_upsample(p in vec_in(2 * 9, -2.0, 2.0)) {
        unary(p, |g, x| {
            let m = g.reshape(x, [1, 2, 3, 3])?;
            g.bilinear_upsample(m, 7, 5)
        });
    }

    #[test]
    fn avg_pool(p in vec_in(2 * 16, -2.0, 2.0)) {
        unary(p, |g, x| {
            let m = g.reshape(x, [1, 2, 4, 4])?;
            g.avg_pool(m, 2)
        });
    }

    #[test]
    fn sigmoid(p in vec_in(8, -6.0, 6.0)) {
        unary(p, |g, x| g.sigmoid(x));
    }

    #[test]
    fn silu(p in vec_in(8, -6.0, 6.0)) {
        unary(p, |g, x| g.silu(x));
    }

    #[test]
    fn relu(p in vec_away(8)) {
        unary(p, |g, x| g.relu(x));
    }

    #[test]
    fn softplus_beta20(p in vec_in(8, -1.0, 1.0)) {
        unary(p, |g, x| g.softplus(x, 20.0));
    }

    #[test]
    fn abs(p in vec_away(8)) {
        unary(p, |g, x| g.abs(x));
    }

    #[test]
    fn square_neg_scale(p in vec_in(8, -2.0, 2.0)) {
        unary(p, |g, x| {
            let s = g.square(x)?;
            let n = g.neg(s)?;
            let a = g.add_scalar(n, 0.5)?;
            g.scale(a, -3.0)
        });
    }

    #[test]
    fn exp(p in vec_in(8, -3.0, 3.0)) {
        unary(p, |g, x| g.exp(x));
    }

    #[test]
    fn log(p in vec_in(8, 0.1, 5.0)) {
        unary(p, |g, x| g.log(x));
    }

    #[test]
    fn softmax_rows(p in vec_in(12, -3.0, 3.0)) {
        unary(p, |g, x| {
            let m = g.reshape(x, [3, 4])?;
            g.softmax(m, 1)
        });
    }

    #[test]
    fn softmax_axis0(p in vec_in(12, -3.0, 3.0)) {
        unary(p, |g, x| {
            let m = g.reshape(x, [3, 4])?;
            g.softmax(m, 0)
        });
    }

    #[test]
    fn log_softmax(p in vec_in(6, -3.0, 3.0)) {
        unary(p, |g, x| g.log_softmax(x, 0));
    }

    #[test]
    fn sum_of_squares(p in vec_in(8, -2.0, 2.0)) {
        check(p, |g, x| {
            let s = g.square(x)?;
            g.sum(s)
        });
    }

    #[test]
    fn mean_of_squares(p in vec_in(8, -2.0, 2.0)) {
        check(p, |g, x| {
            let s = g.square(x)?;
            g.mean(s)
        });
    }

    #[test]
    fn l1_norm(p in vec_away(8)) {
        check(p, |g, x| {
            let s = g.scale(x, 1.5)?;
            g.l1_norm(s)
        });
    }

    #[test]
    fn group_norm(p in vec_in(2 * 4 * 9 + 4 + 4, -2.0, 2.0)) {
        check(p, |g, x| {
            let v = split(g, x, &[&[2, 4, 3, 3], &[4], &[4]])?;
            let y = g.group_norm(v[0], v[1], v[2], 2, 1e-5)?;
            wsum(g, y)
        });
    }

    #[test]
    fn group_norm_single_group(p in vec_in(3 * 4 + 3 + 3, -2.0, 2.0)) {
        check(p, |g, x| {
            let v = split(g, x, &[&[1, 3, 2, 2], &[3], &[3]])?;
            let y = g.group_norm(v[0], v[1], v[2], 1, 1e-5)?;
            wsum(g, y)
        });
    }

    #[test]
    fn selective_scan(
        x in vec_in(2 * 5 * 3, -1.0, 1.0),
        delta in vec_in(2 * 5 * 3, 0.05, 1.0),
        a in vec_in(3 * 2, -2.0, -0.1),
        bc in vec_in(2 * 2 * 5 * 2, -1.0, 1.0),
        d in vec_in(3, -1.0, 1.0),
    ) {
        let mut p = x;
        p.extend(delta);
        p.extend(a);
        p.extend(bc);
        p.extend(d);
        check(p, |g, x| {
            let v = split(g, x, &[&[2, 5, 3], &[2, 5, 3], &[3, 2], &[2, 5, 2], &[2, 5, 2], &[3]])?;
            let y = g.selective_scan(v[0], v[1], v[2], v[3], v[4], v[5])?;
            wsum(g, y)
        });
    }
}

#[test]
fn sign_has_zero_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::new([3], vec![-1.0, 0.0, 2.0]).unwrap());
    let s = g.sign(x).unwrap();
    let l = g.sum(s).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn mse_gradient_matches_closed_form() {
    // d/dx (1/N)|Phi x - y|^2 = (2/N) Phi^T (Phi x - y)
    let phi = [[1.0, 2.0, 0.5], [0.0, -1.0, 3.0]];
    let y = [0.3, -0.7];
    let x0 = [0.2, -0.4, 0.9];
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::new([3, 1], x0.to_vec()).unwrap());
    let m = g.constant(Tensor::new([2, 3], phi.iter().flatten().copied().collect()).unwrap());
    let yv = g.constant(Tensor::new([2, 1], y.to_vec()).unwrap());
    let p = g.matmul(m, x).unwrap();
    let r = g.sub(p, yv).unwrap();
    let s = g.square(r).unwrap();
    let l = g.mean(s).unwrap();
    g.backward(l).unwrap();
    let grad = g.grad(x).unwrap();

    let resid: Vec<f64> = (0..2).map(|i| (0..3).map(|j| phi[i][j] * x0[j]).sum::<f64>() - y[i]).collect();
    for j in 0..3 {
        let expect: f64 = (0..2).map(|i| phi[i][j] * resid[i]).sum::<f64>() * 2.0 / 2.0;
        assert!((grad.data()[j] - expect).abs() < 1e-12);
    }

    let t = Tensor::new([3, 1], x0.to_vec()).unwrap();
    let err = grad_check(
        |g, x| {
            let m = g.constant(Tensor::new([2, 3], phi.iter().flatten().copied().collect())?);
            let yv = g.constant(Tensor::new([2, 1], y.to_vec())?);
            let p = g.matmul(m, x)?;
            let r = g.sub(p, yv)?;
            let s = g.square(r)?;
            g.mean(s)
        },
        &t,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-8);
}

#[test]
fn grad_check_rejects_bad_step_and_nonfinite_point() {
    let t = Tensor::new([1], vec![1.0]).unwrap();
    assert!(grad_check(|g, x| g.sum(x), &t, 0.0).is_err());
    let bad = Tensor::new([1], vec![f64::NAN]).unwrap();
    assert!(grad_check(|g, x| g.sum(x), &bad, 1e-5).is_err());
}

#[test]
fn grad_check_spec_examples() {
    let x = Tensor::new([8], vec![-1.3, -0.4, 0.0, 0.2, 0.7, 1.1, 2.5, -2.2]).unwrap();
    let e = grad_check(
        |g, x| {
            let s = g.sigmoid(x)?;
            g.sum(s)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(e <= 1e-6, "{e}");
    let e = grad_check(
        |g, x| {
            let s = g.softplus(x, 20.0)?;
            g.sum(s)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(e <= 1e-5, "{e}");
}
