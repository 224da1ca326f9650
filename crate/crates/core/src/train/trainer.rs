use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use spi_engine::{clip_global_norm, cosine_lr, AdamState, Graph, Real, Tensor};

use super::losses::{fidelity_loss, proximal_loss, sparsity_loss, Problem};
use crate::arch::{SistaModel, Variant};
use crate::error::{Result, SpiError};
use crate::forward::MeasurementMatrix;
use crate::image::Image;

/// Weights `lambda_1..lambda_3` of the fidelity, sparsity and proximal losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub fidelity: f64,
    pub sparsity: f64,
    pub proximal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { fidelity: 10.0, sparsity: 0.1, proximal: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.fidelity, self.sparsity, self.proximal];
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(SpiError::invalid(format!("loss weights must be finite and >= 0, got {w:?}")));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(SpiError::invalid("loss weights are all zero"));
        }
        Ok(())
    }

    /// Weights after applying the loss ablations `e`, `f`, `g` and the
    /// missing sparsity term of `a`.
    pub fn for_variant(self, v: Variant) -> Self {
        match v {
            Variant::A | Variant::F => LossWeights { sparsity: 0.0, ..self },
            Variant::E => LossWeights { fidelity: 0.0, ..self },
            Variant::G => LossWeights { fidelity: 0.0, sparsity: 0.0, ..self },
            _ => self,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub k_max: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm cap; only applied in 32-bit runs.
    pub clip_norm: Option<f64>,
    /// Subtract the mean pattern and mean measurement, then scale by
    /// `1 / std(Y)`, before training.
    pub normalize_y: bool,
    /// Keep a copy of `O_P` every this many iterations.
    pub snapshot_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            k_max: 2000,
            lr_max: 1e-4,
            lr_min: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(10.0),
            normalize_y: false,
            snapshot_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.lr_max > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return Err(SpiError::invalid(format!("need 0 <= lr_min <= lr_max, lr_max > 0; got {} and {}", self.lr_min, self.lr_max)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(SpiError::invalid("Adam needs beta1, beta2 in [0, 1) and eps > 0"));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(SpiError::invalid("clip_norm must be > 0"));
        }
        if self.snapshot_every == Some(0) {
            return Err(SpiError::invalid("snapshot_every must be >= 1"));
        }
        Ok(())
    }
}

/// Losses and schedule values of one iteration, measured before its update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iteration: usize,
    pub fidelity: f64,
    pub sparsity: f64,
    pub proximal: f64,
    pub total: f64,
    /// `lambda(alpha)`; `None` without a proximal branch.
    pub lambda: Option<f64>,
    pub lr: f64,
}

impl IterRecord {
    fn is_finite(&self) -> bool {
        [self.fidelity, self.sparsity, self.proximal, self.total, self.lambda.unwrap_or(0.0)].iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub records: Vec<IterRecord>,
    pub wall_time: Duration,
    /// Final fidelity output `O_F`.
    pub of: Image,
    /// Final reconstruction `O_P`.
    pub op: Image,
    pub snapshots: Vec<(usize, Image)>,
}

fn to_image<T: Real>(t: &Tensor<T>) -> Result<Image> {
    let s = t.shape();
    Image::new(s[s.len() - 2], s[s.len() - 1], t.to_f64_vec())
}

/// Patterns and measurements after the optional normalization.
fn prepare(m: &MeasurementMatrix, y: &[f64], normalize: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    if y.len() != m.n_meas() {
        return Err(SpiError::SizeMismatch { what: "measurement count", expected: m.n_meas().to_string(), got: y.len().to_string() });
    }
    if y.len() < 2 {
        return Err(SpiError::invalid("training needs at least 2 measurements"));
    }
    let mut pats = m.to_f64();
    let mut y = y.to_vec();
    if normalize {
        let n = m.n_pix();
        let mut mean_row = vec![0.0; n];
        for row in pats.chunks_exact(n) {
            mean_row.iter_mut().zip(row).for_each(|(a, b)| *a += b / m.n_meas() as f64);
        }
        let y_mean = y.iter().sum::<f64>() / y.len() as f64;
        y.iter_mut().for_each(|v| *v -= y_mean);
        let std = (y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64).sqrt();
        let s = if std > 0.0 { 1.0 / std } else { 1.0 };
        y.iter_mut().for_each(|v| *v *= s);
        for row in pats.chunks_exact_mut(n) {
            row.iter_mut().zip(&mean_row).for_each(|(a, b)| *a = (*a - b) * s);
        }
    }
    Ok((pats, y))
}

/// One self-supervised fitting run: a model, its optimizer and the data.
pub struct Session<T: Real> {
    pub model: SistaModel<T>,
    pub adam: AdamState<T>,
    problem: Problem<T>,
    cfg: TrainConfig,
    weights: LossWeights,
    records: Vec<IterRecord>,
    snapshots: Vec<(usize, Image)>,
    graph: Graph<T>,
    elapsed: Duration,
}

impl<T: Real> Session<T> {
    pub fn new(model: SistaModel<T>, m: &MeasurementMatrix, y: &[f64], cfg: &TrainConfig) -> Result<Self> {
        let adam = AdamState::with_betas(&model.params, cfg.lr_max, cfg.beta1, cfg.beta2, cfg.eps);
        Self::resume(model, adam, m, y, cfg)
    }

    /// Continues from saved parameters and optimizer moments.
    pub fn resume(model: SistaModel<T>, adam: AdamState<T>, m: &MeasurementMatrix, y: &[f64], cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if (m.height, m.width) != (model.height(), model.width()) {
            return Err(SpiError::SizeMismatch {
                what: "model size",
                expected: format!("{}x{}", m.height, m.width),
                got: format!("{}x{}", model.height(), model.width()),
            });
        }
        let weights = cfg.weights.for_variant(model.variant);
        weights.validate()?;
        let (pats, y) = prepare(m, y, cfg.normalize_y)?;
        let problem = Problem::new(pats, m.n_meas(), &y)?;
        let mut graph = Graph::new();
        graph.set_check_finite(true);
        Ok(Session { model, adam, problem, cfg: cfg.clone(), weights, records: Vec::new(), snapshots: Vec::new(), graph, elapsed: Duration::ZERO })
    }

    pub fn weights(&self) -> LossWeights {
        self.weights
    }

    pub fn records(&self) -> &[IterRecord] {
        &self.records
    }

    /// Clipping is a 32-bit stability guard; 64-bit runs keep exact gradients.
    fn clip_norm(&self) -> Option<f64> {
        if T::NAME == "f64" {
            None
        } else {
            self.cfg.clip_norm
        }
    }

    fn non_finite(&self, iteration: usize) -> SpiError {
        SpiError::NonFiniteLoss { iteration, last: self.records.last().copied().map(Box::new) }
    }

    /// Records the forward pass and the weighted loss on the session graph.
    fn forward_losses(&mut self, k: usize, lr: f64) -> Result<(IterRecord, spi_engine::Var)> {
        let g = &mut self.graph;
        g.clear();
        let out = self.model.forward(g)?;
        let b = self.problem.bind(g);
        let w = self.weights;
        let l_f = fidelity_loss(g, &b, out.of)?;
        let l_p = proximal_loss(g, &b, out.op)?;
        let l_s = match out.feat {
            Some(f) => Some(sparsity_loss(g, f)?),
            None => None,
        };
        let mut total = g.scale(l_f, w.fidelity)?;
        let wp = g.scale(l_p, w.proximal)?;
        total = g.add(total, wp)?;
        if let Some(s) = l_s {
            let ws = g.scale(s, w.sparsity)?;
            total = g.add(total, ws)?;
        }
        let scalar = |g: &Graph<T>, v| g.value(v).data()[0].to_f64_lossless();
        let record = IterRecord {
            iteration: k,
            fidelity: scalar(g, l_f),
            sparsity: l_s.map_or(0.0, |s| scalar(g, s)),
            proximal: scalar(g, l_p),
            total: scalar(g, total),
            lambda: out.lambda.map(|l| scalar(g, l)),
            lr,
        };
        Ok((record, total))
    }

    /// Forward, backward and one Adam update.
    pub fn step(&mut self) -> Result<IterRecord> {
        let start = Instant::now();
        let k = self.adam.step_count as usize;
        let lr = cosine_lr(k, self.cfg.k_max.saturating_sub(1), self.cfg.lr_max, self.cfg.lr_min);
        let (record, total) = match self.forward_losses(k, lr) {
            Ok(r) if r.0.is_finite() => r,
            Ok(_) | Err(SpiError::Engine(spi_engine::EngineError::NonFinite { .. })) => return Err(self.non_finite(k)),
            Err(e) => return Err(e),
        };
        let g = &mut self.graph;
        g.backward(total)?;
        let mut grads = g.param_grads();
        if grads.iter().any(|t| !t.is_finite()) {
            return Err(SpiError::NonFinite { what: "gradient", iteration: k });
        }
        if let Some(c) = self.clip_norm() {
            clip_global_norm(&mut grads, c);
        }
        self.adam.lr = lr;
        self.adam.step(&mut self.model.params, &grads)?;
        if let Some(every) = self.cfg.snapshot_every {
            if (k + 1).is_multiple_of(every) {
                let (_, op) = self.outputs()?;
                self.snapshots.push((k + 1, op));
            }
        }
        self.records.push(record);
        self.elapsed += start.elapsed();
        Ok(record)
    }

    /// Current `O_F` and `O_P` without recording gradients.
    pub fn outputs(&self) -> Result<(Image, Image)> {
        let mut g = Graph::new();
        let out = self.model.forward(&mut g)?;
        Ok((to_image(g.value(out.of))?, to_image(g.value(out.op))?))
    }

    /// Runs the remaining iterations up to `k_max`, calling `on_iter` after each.
    pub fn run_with(mut self, mut on_iter: impl FnMut(&IterRecord)) -> Result<(TrainReport, SistaModel<T>, AdamState<T>)> {
        while (self.adam.step_count as usize) < self.cfg.k_max {
            let r = self.step()?;
            on_iter(&r);
        }
        let (of, op) = self.outputs()?;
        let report = TrainReport { records: self.records, wall_time: self.elapsed, of, op, snapshots: self.snapshots };
        Ok((report, self.model, self.adam))
    }

    pub fn run(self) -> Result<(TrainReport, SistaModel<T>, AdamState<T>)> {
        self.run_with(|_| {})
    }
}

/// Fits `model` to `(m, y)` for `cfg.k_max` iterations.
pub fn train<T: Real>(model: SistaModel<T>, m: &MeasurementMatrix, y: &[f64], cfg: &TrainConfig) -> Result<(TrainReport, SistaModel<T>, AdamState<T>)> {
    Session::new(model, m, y, cfg)?.run()
}
