//! Fits `y = 2x - 1` with Adam, then checks one gradient numerically.

use spi_engine::{grad_check, AdamState, Graph, ParamStore, Tensor};

fn main() -> spi_engine::Result<()> {
    let xs: Vec<f64> = (0..16).map(|i| i as f64 / 8.0 - 1.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
    let x = Tensor::new([16, 1], xs)?;
    let y = Tensor::new([16, 1], ys)?;

    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", Tensor::new([1, 1], vec![0.0])?)?;
    let b = store.add("b", Tensor::new([1], vec![0.0])?)?;
    let mut adam = AdamState::new(&store, 0.05);
    for step in 0..400 {
        let mut g = Graph::new();
        g.bind_params(&store);
        let (xv, yv) = (g.constant(x.clone()), g.constant(y.clone()));
        let (wv, bv) = (g.param(w), g.param(b));
        let pred = g.matmul(xv, wv)?;
        // (16, 1) + (1,) broadcasts
        let pred = g.add(pred, bv)?;
        let err = g.sub(pred, yv)?;
        let sq = g.square(err)?;
        let loss = g.mean(sq)?;
        g.backward(loss)?;
        if step % 100 == 0 {
            println!("step {step:3}  loss {:.3e}", g.value(loss).data()[0]);
        }
        adam.step(&mut store, &g.param_grads())?;
    }
    println!("w = {:.4}  b = {:.4}", store.get(w).data()[0], store.get(b).data()[0]);

    let worst = grad_check(
        |g, v| {
            let s = g.sigmoid(v)?;
            let p = g.mul(s, v)?;
            g.sum(p)
        },
        &Tensor::new([4], vec![-2.0, -0.5, 0.3, 1.7])?,
        1e-5,
    )?;
    println!("x*sigmoid(x) gradient check: max relative error {worst:.2e}");
    Ok(())
}
