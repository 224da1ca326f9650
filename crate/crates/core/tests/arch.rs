use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spi_core::arch::*;
use spi_core::SpiError;
use spi_engine::{Graph, ParamStore, Tensor, Var};

fn random_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| scale * (2.0 * rng.gen::<f64>() - 1.0)).collect();
    Tensor::from_f64(shape.to_vec(), &v).unwrap()
}

fn zero_where(store: &mut ParamStore<f64>, pred: impl Fn(&str) -> bool) {
    let ids: Vec<_> = store.ids().filter(|&id| pred(store.name(id))).collect();
    assert!(!ids.is_empty());
    for id in ids {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn run<F>(store: &ParamStore<f64>, input: &Tensor<f64>, f: F) -> Tensor<f64>
where
    F: FnOnce(&mut Graph<f64>, Var) -> spi_core::Result<Var>,
{
    let mut g = Graph::new();
    g.bind_params(store);
    let x = g.constant(input.clone());
    let y = f(&mut g, x).unwrap();
    g.value(y).clone()
}

// ---- VSSB / SS2D ----

#[test]
fn vssb_with_zero_output_projection_is_identity() {
    let mut store = ParamStore::<f64>::new();
    let block = Vssb::new(&mut Builder::new(&mut store, 3), "v", 4, 3, false).unwrap();
    zero_where(&mut store, |n| n.starts_with("v.out_proj"));
    let x = random_tensor(&[1, 4, 5, 7], 1, 1.0);
    let y = run(&store, &x, |g, x| block.forward(g, x));
    assert_eq!(y.data(), x.data());
}

#[test]
fn vssb_preserves_shape() {
    let mut store = ParamStore::<f64>::new();
    let block = Vssb::new(&mut Builder::new(&mut store, 3), "v", 3, 2, true).unwrap();
    for (h, w) in [(1, 1), (3, 8), (9, 2)] {
        let x = random_tensor(&[2, 3, h, w], 2, 1.0);
        assert_eq!(run(&store, &x, |g, x| block.forward(g, x)).shape(), &[2, 3, h, w]);
    }
    let wrong = random_tensor(&[1, 5, 4, 4], 2, 1.0);
    let mut g = Graph::new();
    g.bind_params(&store);
    let x = g.constant(wrong);
    assert!(matches!(block.forward(&mut g, x), Err(SpiError::SizeMismatch { .. })));
}

/// Scan inputs for one channel and one state: `delta = 1`, `b = c = 1`, skip 0.
fn unit_scan(image: &[f64], h: usize, w: usize, pole: f64) -> Vec<f64> {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_f64(vec![1, 1, h, w], image).unwrap());
    let ones = || Tensor::from_f64(vec![1, 1, h, w], &vec![1.0; h * w]).unwrap();
    let (delta, b, c) = (g.constant(ones()), g.constant(ones()), g.constant(ones()));
    let dirs = [0; 4].map(|_| DirParams {
        a: g.constant(Tensor::from_f64(vec![1, 1], &[pole]).unwrap()),
        skip: g.constant(Tensor::from_f64(vec![1], &[0.0]).unwrap()),
    });
    let y = directional_scan_sum(&mut g, x, delta, b, c, dirs).unwrap();
    g.value(y).to_f64_vec()
}

#[test]
fn memoryless_scan_sums_four_copies() {
    // exp(-1000) underflows to 0: each direction returns its input
    let y = unit_scan(&[0.3; 12], 3, 4, -1000.0);
    assert!(y.iter().all(|&v| (v - 1.2).abs() < 1e-15), "{y:?}");
}

#[test]
fn zero_pole_scan_sums_directional_prefix_sums() {
    // with no decay each direction accumulates the pixels visited so far
    let (h, w) = (2, 3);
    let img = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let y = unit_scan(&img, h, w, 0.0);
    let row_major: Vec<usize> = (0..h * w).collect();
    let col_major: Vec<usize> = (0..w).flat_map(|c| (0..h).map(move |r| r * w + c)).collect();
    let mut expect = vec![0.0; h * w];
    for order in [row_major.clone(), row_major.into_iter().rev().collect(), col_major.clone(), col_major.into_iter().rev().collect()] {
        let mut acc = 0.0;
        for p in order {
            acc += img[p];
            expect[p] += acc;
        }
    }
    assert!(max_diff(&y, &expect) < 1e-12, "{y:?} vs {expect:?}");
}

#[test]
fn sequence_index_round_trips() {
    for dir in Direction::ALL {
        let (b, k, h, w) = (2, 3, 4, 5);
        let to = to_sequence_index(b, k, h, w, dir);
        let from = from_sequence_index(b, k, h, w, dir);
        for (i, &j) in from.iter().enumerate() {
            assert_eq!(to[j], i);
        }
    }
}

// ---- window block ----

#[test]
fn partition_then_reverse_is_exact() {
    for (h, w, win) in [(4, 4, 2), (5, 7, 3), (8, 8, 8), (3, 2, 4)] {
        let x = random_tensor(&[2, 3, h, w], 7, 1.0);
        let y = run(&ParamStore::new(), &x, |g, x| windowed(g, x, win, |_, p| Ok(p)));
        assert_eq!(y.data(), x.data(), "{h}x{w} window {win}");
    }
}

#[test]
fn four_by_four_with_window_two_gives_four_windows() {
    let x = random_tensor(&[1, 3, 4, 4], 1, 1.0);
    let mut seen = Vec::new();
    run(&ParamStore::new(), &x, |g, x| {
        windowed(g, x, 2, |g, p| {
            seen = g.shape(p).to_vec();
            Ok(p)
        })
    });
    assert_eq!(seen, vec![4, 3, 2, 2]);
    assert_eq!(WindowGrid::new(4, 4, 2).count(), 4);
    assert_eq!(WindowGrid::new(5, 4, 2).count(), 6);
}

#[test]
fn window_block_mixes_distant_pixels() {
    let mut store = ParamStore::<f64>::new();
    let wmb = Wmb::new(&mut Builder::new(&mut store, 11), "w", 2, 2, 4, true, false).unwrap();
    let mut g = Graph::new();
    g.bind_params(&store);
    let x = g.leaf(random_tensor(&[1, 2, 8, 8], 4, 1.0));
    let y = wmb.forward(&mut g, x).unwrap();
    // output pixel (0, 0) of channel 0
    let mask: Vec<f64> = (0..128).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
    let m = g.constant(Tensor::from_f64(vec![1, 2, 8, 8], &mask).unwrap());
    let picked = g.mul(y, m).unwrap();
    let loss = g.sum(picked).unwrap();
    g.backward(loss).unwrap();
    let grad = g.grad(x).unwrap();
    // (7, 7) sits in a different 4x4 window, only the global scan reaches it
    assert!(grad.data()[7 * 8 + 7].abs() > 0.0);
}

// ---- multi-scale block and fidelity network ----

fn res2mmb(hyper: &BlockHyper) -> (ParamStore<f64>, Res2Mmb) {
    let mut store = ParamStore::new();
    let block = Res2Mmb::new(&mut Builder::new(&mut store, 5), "r", hyper, true).unwrap();
    (store, block)
}

#[test]
fn res2mmb_shapes() {
    let hyper = BlockHyper::toy();
    let (store, block) = res2mmb(&hyper);
    let x = random_tensor(&[1, 4, 32, 32], 3, 1.0);
    let mut shapes = Vec::new();
    run(&store, &x, |g, x| {
        for v in block.branches(g, x)? {
            shapes.push(g.shape(v).to_vec());
        }
        Ok(x)
    });
    assert_eq!(shapes, vec![vec![1, 4, 32, 32], vec![1, 4, 16, 16], vec![1, 4, 8, 8]]);
    assert_eq!(run(&store, &x, |g, x| block.forward(g, x)).shape(), &[1, 4, 32, 32]);
    let pooled = BlockHyper { pooled_downsample: true, ..hyper };
    let (store, block) = res2mmb(&pooled);
    assert_eq!(run(&store, &x, |g, x| block.forward(g, x)).shape(), &[1, 4, 32, 32]);
}

#[test]
fn res2mmb_rejects_tiny_inputs() {
    let (store, block) = res2mmb(&BlockHyper::toy());
    let mut g = Graph::new();
    g.bind_params(&store);
    let x = g.constant(random_tensor(&[1, 4, 3, 8], 0, 1.0));
    let e = block.forward(&mut g, x).unwrap_err();
    assert!(e.to_string().contains("H, W >= 4"), "{e}");
}

#[test]
fn res2mmb_scale_order_matters() {
    let (store, mut block) = res2mmb(&BlockHyper::toy());
    let x = random_tensor(&[1, 4, 16, 16], 9, 1.0);
    let a = run(&store, &x, |g, x| block.forward(g, x));
    block.order = ScaleOrder::FineToCoarse;
    let b = run(&store, &x, |g, x| block.forward(g, x));
    assert!(max_diff(a.data(), b.data()) > 1e-6);
}

#[test]
fn mamcnn_with_zero_branches_passes_through() {
    let hyper = BlockHyper::toy();
    let mut store = ParamStore::<f64>::new();
    let net = Res2MmNet::new(&mut Builder::new(&mut store, 2), "f", &hyper, true).unwrap();
    zero_where(&mut store, |n| n.contains(".res2mmb.fuse.") || n.contains(".conv2."));
    let i = random_tensor(&[1, 1, 16, 16], 5, 0.5);
    let head = run(&store, &i, |g, x| net.head(g, x));
    let block = run(&store, &head, |g, x| net.blocks[0].forward(g, x));
    assert_eq!(block.data(), head.data());
    let trunk = run(&store, &i, |g, x| net.forward_trunk(g, x));
    let doubled: Vec<f64> = head.data().iter().map(|v| 2.0 * v).collect();
    assert!(max_diff(trunk.data(), &doubled) < 1e-12);
}

#[test]
fn fidelity_network_maps_into_unit_interval() {
    let model = SistaModel::<f32>::new(64, 64, &BlockHyper::light(), ThresholdBounds::default(), Variant::A, 1).unwrap();
    let mut g = Graph::new();
    let out = model.forward(&mut g).unwrap();
    let of = g.value(out.of);
    assert_eq!(of.shape(), &[1, 1, 64, 64]);
    assert!(of.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn forward_is_bit_identical_across_builds() {
    let build = || SistaModel::<f64>::new(16, 16, &BlockHyper::toy(), ThresholdBounds::default(), Variant::Full, 99).unwrap();
    let outs: Vec<Vec<f64>> = (0..2)
        .map(|_| {
            let m = build();
            let mut g = Graph::new();
            let o = m.forward(&mut g).unwrap();
            g.value(o.op).data().to_vec()
        })
        .collect();
    assert_eq!(outs[0], outs[1]);
    let other = SistaModel::<f64>::new(16, 16, &BlockHyper::toy(), ThresholdBounds::default(), Variant::Full, 100).unwrap();
    assert_ne!(build().input().data(), other.input().data());
}

// ---- proximal branch ----

fn proximal_parts(hyper: &BlockHyper) -> (ParamStore<f64>, Encoder, Decoder) {
    let mut store = ParamStore::new();
    let mut b = Builder::new(&mut store, 8);
    let enc = Encoder::new(&mut b, "encoder", hyper, true, false).unwrap();
    let dec = Decoder::new(&mut b, "decoder", hyper, true, false).unwrap();
    (store, enc, dec)
}

#[test]
fn encoder_and_decoder_shapes() {
    let hyper = BlockHyper { base_channels: 8, ..BlockHyper::default() };
    assert_eq!(hyper.latent_channels(), 32);
    let (store, enc, dec) = proximal_parts(&hyper);
    let x = random_tensor(&[1, 1, 64, 64], 1, 0.5).cast::<f64>();
    let latent = run(&store, &x, |g, x| enc.forward(g, x));
    assert_eq!(latent.shape(), &[1, 32, 32, 32]);
    let out = run(&store, &latent, |g, z| dec.forward(g, z, (64, 64)));
    assert_eq!(out.shape(), &[1, 1, 64, 64]);
    // odd sizes round up in the encoder and come back exactly
    let odd = random_tensor(&[1, 1, 15, 13], 2, 0.5);
    let l = run(&store, &odd, |g, x| enc.forward(g, x));
    assert_eq!(l.shape(), &[1, 32, 8, 7]);
    assert_eq!(run(&store, &l, |g, z| dec.forward(g, z, (15, 13))).shape(), &[1, 1, 15, 13]);
}

#[test]
fn decoder_rejects_wrong_latent_width() {
    let (store, _, dec) = proximal_parts(&BlockHyper::toy());
    let mut g = Graph::new();
    g.bind_params(&store);
    let z = g.constant(random_tensor(&[1, 3, 4, 4], 0, 1.0));
    assert!(matches!(dec.forward(&mut g, z, (8, 8)), Err(SpiError::SizeMismatch { .. })));
}

#[test]
fn encoder_is_zero_at_zero_without_biases() {
    let (mut store, enc, _) = proximal_parts(&BlockHyper::light());
    zero_where(&mut store, |n| n.starts_with("encoder") && (n.ends_with("bias") || n.ends_with("beta")));
    let latent = run(&store, &Tensor::zeros(vec![1, 1, 16, 16]), |g, x| enc.forward(g, x));
    assert!(latent.data().iter().all(|&v| v == 0.0));
}

#[test]
fn decoder_mirrors_encoder_size() {
    for hyper in [BlockHyper::default(), BlockHyper::light(), BlockHyper::toy()] {
        let model = SistaModel::<f32>::new(16, 16, &hyper, ThresholdBounds::default(), Variant::Full, 0).unwrap();
        let (e, d) = (model.params.count_prefix("encoder.") as f64, model.params.count_prefix("decoder.") as f64);
        assert!((e - d).abs() / e <= 0.05, "encoder {e} decoder {d}");
    }
}

#[test]
fn decoder_output_stays_in_unit_interval() {
    let (store, _, dec) = proximal_parts(&BlockHyper::toy());
    let z = random_tensor(&[1, 4, 8, 8], 6, 5.0);
    let out = run(&store, &z, |g, z| dec.forward(g, z, (16, 16)));
    assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn threshold_at_initial_alpha() {
    let b = ThresholdBounds::default();
    assert!((spi_engine::ops::sigmoid(0.1f64) - 0.524979).abs() < 1e-6);
    assert!((b.lambda(ALPHA_INIT) - 0.267240).abs() < 1e-6);
    assert!((b.lambda(-60.0) - 0.01).abs() < 1e-12);
    assert!((b.lambda(60.0) - 0.5).abs() < 1e-12);
    let mut g = Graph::<f64>::new();
    let a = g.leaf(Tensor::from_f64(vec![1], &[ALPHA_INIT]).unwrap());
    let l = lambda_of(&mut g, a, &b).unwrap();
    assert!((g.value(l).data()[0] - b.lambda(ALPHA_INIT)).abs() < 1e-15);
    g.backward(l).unwrap();
    let s = spi_engine::ops::sigmoid(ALPHA_INIT);
    assert!((g.grad(a).unwrap().data()[0] - 0.49 * s * (1.0 - s)).abs() < 1e-15);
}

fn smooth_threshold(values: &[f64], lambda: f64, beta: f64) -> Vec<f64> {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_f64(vec![values.len()], values).unwrap());
    let l = g.constant(Tensor::from_f64(vec![1], &[lambda]).unwrap());
    let y = soft_threshold_smooth(&mut g, x, l, beta).unwrap();
    g.value(y).to_f64_vec()
}

#[test]
fn smooth_threshold_examples() {
    let y = smooth_threshold(&[0.0, 1.0, -1.0], 0.25, 20.0);
    assert_eq!(y[0], 0.0);
    let expect = (1.0 + 15f64.exp()).ln() / 20.0;
    assert!((y[1] - expect).abs() < 1e-15 && (y[1] - 0.75000002).abs() < 1e-8);
    assert_eq!(y[2], -y[1]);
}

#[test]
fn sign_carries_no_gradient_but_threshold_does() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::from_f64(vec![3], &[0.9, -0.4, 0.0]).unwrap());
    let l = g.leaf(Tensor::from_f64(vec![1], &[0.2]).unwrap());
    let y = soft_threshold_smooth(&mut g, x, l, 20.0).unwrap();
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    let sig = |z: f64| 1.0 / (1.0 + (-20.0 * z).exp());
    let gx = g.grad(x).unwrap();
    // d/dx sgn(x) softplus(|x| - l) = sigmoid(beta (|x| - l)) when sgn is constant
    assert!((gx.data()[0] - sig(0.7)).abs() < 1e-12 && (gx.data()[1] - sig(0.2)).abs() < 1e-12);
    assert_eq!(gx.data()[2], 0.0);
    let gl = g.grad(l).unwrap().data()[0];
    assert!((gl - (-sig(0.7) + sig(0.2))).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lambda_is_bounded_and_monotone(a in -30.0f64..30.0, d in 1e-3f64..5.0) {
        let b = ThresholdBounds::default();
        let (l0, l1) = (b.lambda(a), b.lambda(a + d));
        prop_assert!(l0 > b.lambda_min && l0 < b.lambda_max);
        prop_assert!(l1 > l0);
    }

    #[test]
    fn smooth_threshold_stays_near_hard(x in -3.0f64..3.0, lambda in 0.01f64..0.5, beta in 1.0f64..50.0) {
        let y = smooth_threshold(&[x], lambda, beta)[0];
        let hard = x.signum() * (x.abs() - lambda).max(0.0);
        prop_assert!((y - hard).abs() <= 2f64.ln() / beta + 1e-12);
    }
}

// ---- full model ----

/// Central differences on sampled parameter coordinates of `sum(w * O_P)`.
#[test]
fn full_model_gradients_match_finite_differences() {
    let mut model = SistaModel::<f64>::new(8, 8, &BlockHyper::toy(), ThresholdBounds::default(), Variant::Full, 21).unwrap();
    let weights = random_tensor(&[1, 1, 8, 8], 30, 1.0);
    let loss = |m: &SistaModel<f64>, g: &mut Graph<f64>| -> Var {
        let o = m.forward(g).unwrap();
        let w = g.constant(weights.clone());
        let p = g.mul(o.op, w).unwrap();
        g.sum(p).unwrap()
    };
    let mut g = Graph::new();
    let l = loss(&model, &mut g);
    g.backward(l).unwrap();
    let grads = g.param_grads();

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ids: Vec<_> = model.params.ids().collect();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (k, &id) in ids.iter().enumerate() {
        let name = model.params.name(id).to_string();
        // every alpha, every SS2D pole, plus one random coordinate of each tensor
        let n = model.params.get(id).numel();
        let coords: Vec<usize> = if name == "alpha" || name.ends_with("a_log") { (0..n.min(4)).collect() } else { vec![rng.gen_range(0..n)] };
        for i in coords {
            let orig = model.params.get(id).data()[i];
            let eval = |m: &mut SistaModel<f64>, v: f64| {
                m.params.get_mut(id).data_mut()[i] = v;
                let mut g = Graph::new();
                let l = loss(m, &mut g);
                g.value(l).data()[0]
            };
            let h = 1e-5;
            let numeric = (eval(&mut model, orig + h) - eval(&mut model, orig - h)) / (2.0 * h);
            model.params.get_mut(id).data_mut()[i] = orig;
            let err = (grads[k].data()[i] - numeric).abs() / numeric.abs().max(1.0);
            assert!(err <= 1e-4, "{name}[{i}]: analytic {} numeric {numeric}", grads[k].data()[i]);
            worst = worst.max(err);
            checked += 1;
        }
    }
    assert!(checked > ids.len());
    assert!(worst <= 1e-4);
}

#[test]
fn single_precision_gradients_track_double() {
    let grads = |f64_mode: bool| -> Vec<f64> {
        if f64_mode {
            let m = SistaModel::<f64>::new(8, 8, &BlockHyper::toy(), ThresholdBounds::default(), Variant::Full, 21).unwrap();
            let mut g = Graph::new();
            let o = m.forward(&mut g).unwrap();
            let s = g.sum(o.op).unwrap();
            g.backward(s).unwrap();
            g.param_grads().iter().flat_map(|t| t.to_f64_vec()).collect()
        } else {
            let m = SistaModel::<f32>::new(8, 8, &BlockHyper::toy(), ThresholdBounds::default(), Variant::Full, 21).unwrap();
            let mut g = Graph::new();
            let o = m.forward(&mut g).unwrap();
            let s = g.sum(o.op).unwrap();
            g.backward(s).unwrap();
            g.param_grads().iter().flat_map(|t| t.to_f64_vec()).collect()
        }
    };
    let (a, b) = (grads(true), grads(false));
    let err = a.iter().zip(&b).map(|(x, y)| (x - y).abs() / x.abs().max(1.0)).fold(0.0, f64::max);
    assert!(err <= 1e-3, "{err}");
}

#[test]
fn variants_build_and_share_the_input() {
    let hyper = BlockHyper::toy();
    let full = SistaModel::<f32>::new(16, 16, &hyper, ThresholdBounds::default(), Variant::Full, 5).unwrap();
    for v in Variant::ABLATIONS {
        let m = SistaModel::<f32>::new(16, 16, &hyper, ThresholdBounds::default(), v, 5).unwrap();
        assert_eq!(m.input().data(), full.input().data(), "{}", v.tag());
        let mut g = Graph::new();
        let o = m.forward(&mut g).unwrap();
        assert_eq!(g.shape(o.op), &[1, 1, 16, 16]);
        assert_eq!(o.lambda.is_some(), v != Variant::A);
        if v == Variant::A {
            assert_eq!(o.op, o.of);
            assert!(m.lambda().is_none());
        }
    }
    assert_eq!(Variant::from_tag(" B ").unwrap(), Variant::B);
    assert!(matches!(Variant::from_tag("h"), Err(SpiError::UnknownAblation(_))));
}

#[test]
fn conv_stack_ablation_matches_window_block_size() {
    let hyper = BlockHyper::light();
    let target = Latent::wmb_params(&hyper).unwrap();
    let cl = hyper.latent_channels();
    let m = SistaModel::<f32>::new(16, 16, &hyper, ThresholdBounds::default(), Variant::B, 0).unwrap();
    let stack = m.params.count_prefix("encoder.latent.");
    assert!(stack.abs_diff(target) <= cl * cl + cl, "stack {stack} vs window block {target}");
}

#[test]
fn hyper_and_bounds_validation() {
    assert!(BlockHyper { window: 0, ..BlockHyper::default() }.validate().is_err());
    assert!(ThresholdBounds { lambda_min: 0.6, ..Default::default() }.validate().is_err());
    assert!(ThresholdBounds { beta: 0.0, ..Default::default() }.validate().is_err());
}
