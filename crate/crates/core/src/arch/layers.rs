use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spi_engine::{Graph, ParamId, ParamStore, Real, Tensor, Var};

use crate::error::Result;

/// Creates named parameters with deterministic initial values.
pub struct Builder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
    scope: Vec<String>,
}

impl<'a, T: Real> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        Builder { store, rng: ChaCha8Rng::seed_from_u64(seed), scope: Vec::new() }
    }

    /// Runs `f` with `name` appended to the parameter name prefix.
    pub fn scope<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        self.scope.push(name.to_string());
        let r = f(self);
        self.scope.pop();
        r
    }

    fn full_name(&self, name: &str) -> String {
        let mut s = self.scope.join(".");
        if !s.is_empty() {
            s.push('.');
        }
        s.push_str(name);
        s
    }

    pub fn values(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<ParamId> {
        let t = Tensor::from_f64(shape.to_vec(), &values)?;
        Ok(self.store.add(self.full_name(name), t)?)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let v = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        self.values(name, shape, v)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        self.values(name, shape, vec![value; n])
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// 2-D convolution with "same" padding for odd kernels.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// Fan-in uniform init `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weight and bias.
    pub fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Result<Self> {
        b.scope(name, |b| {
            let bound = 1.0 / ((cin * k * k) as f64).sqrt();
            let weight = b.uniform("weight", &[cout, cin, k, k], bound)?;
            let bias = Some(b.uniform("bias", &[cout], bound)?);
            Ok(Conv { weight, bias, stride, pad: k / 2 })
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = self.bias.map(|id| g.param(id));
        Ok(g.conv2d(x, w, b, self.stride, self.pad)?)
    }
}

/// Depthwise 3x3 convolution, stride 1.
#[derive(Clone, Debug)]
pub struct DwConv {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DwConv {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Result<Self> {
        b.scope(name, |b| {
            let bound = 1.0 / 3.0;
            Ok(DwConv { weight: b.uniform("weight", &[channels, 1, 3, 3], bound)?, bias: b.uniform("bias", &[channels], bound)? })
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        Ok(g.depthwise_conv2d(x, w, Some(b), 1)?)
    }
}

/// Group norm with one group (normalizes each sample over C, H, W).
#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Result<Self> {
        b.scope(name, |b| Ok(Norm { gamma: b.constant("gamma", &[channels], 1.0)?, beta: b.constant("beta", &[channels], 0.0)? }))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        Ok(g.group_norm(x, gamma, beta, 1, Norm::EPS)?)
    }
}

/// `x + conv(silu(conv(x)))`.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Conv,
    pub conv2: Conv,
}

impl ResBlock {
    pub fn new<T: Real>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Result<Self> {
        b.scope(name, |b| Ok(ResBlock { conv1: Conv::new(b, "conv1", channels, channels, 3, 1)?, conv2: Conv::new(b, "conv2", channels, channels, 3, 1)? }))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, x)?;
        let h = g.silu(h)?;
        let h = self.conv2.forward(g, h)?;
        Ok(g.add(x, h)?)
    }
}

/// Spatial size `(h, w)` of a `(B, C, H, W)` value.
pub(crate) fn hw<T: Real>(g: &Graph<T>, x: Var) -> (usize, usize) {
    let s = g.shape(x);
    (s[2], s[3])
}

/// Bilinear resize to `(h, w)`, skipped when the size already matches.
pub(crate) fn resize<T: Real>(g: &mut Graph<T>, x: Var, size: (usize, usize)) -> Result<Var> {
    if hw(g, x) == size {
        Ok(x)
    } else {
        Ok(g.bilinear_upsample(x, size.0, size.1)?)
    }
}

thread_local! {
    static INDEX_CACHE: std::cell::RefCell<std::collections::HashMap<(&'static str, [usize; 5]), std::rc::Rc<[usize]>>> =
        std::cell::RefCell::new(std::collections::HashMap::new());
}

/// Gather table memoized per thread by `(kind, key)`.
pub(crate) fn cached_index(kind: &'static str, key: [usize; 5], build: impl FnOnce() -> Vec<usize>) -> std::rc::Rc<[usize]> {
    if let Some(idx) = INDEX_CACHE.with(|c| c.borrow().get(&(kind, key)).cloned()) {
        return idx;
    }
    let idx: std::rc::Rc<[usize]> = build().into();
    INDEX_CACHE.with(|c| c.borrow_mut().insert((kind, key), idx.clone()));
    idx
}
