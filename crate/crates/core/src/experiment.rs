//! Run-level pipeline shared by the CLI, the examples and the tests:
//! simulate, reconstruct with one method, evaluate, serialize.

use serde::Serialize;
use spi_engine::Real;

use crate::arch::SistaModel;
use crate::classical::{dgi_reconstruct, ista_reconstruct, IstaResult};
use crate::config::{ExperimentConfig, Method, Precision};
use crate::error::{Result, SpiError};
use crate::forward::{load_measurements, make_patterns, measure, MeasurementMatrix, MeasurementVector};
use crate::image::Image;
use crate::metrics::{evaluate, threshold_masks, MetricReport, Reference};
use crate::train::{write_checkpoint, IterRecord, Session, TrainReport};

/// Scene plus its simulated acquisition.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub scene: Image,
    pub patterns: MeasurementMatrix,
    pub y: MeasurementVector,
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<Simulation> {
    let scene = cfg.load_scene()?;
    let patterns = make_patterns(cfg.pattern, cfg.n_meas()?, cfg.height, cfg.width, cfg.seeds.pattern())?;
    let y = measure(&patterns, &scene, &cfg.noise_spec())?;
    Ok(Simulation { scene, patterns, y })
}

/// Loads `cfg.measurements` when set, else simulates. Also returns the
/// config with its acquisition fields aligned to the data actually used.
pub fn acquire(cfg: &ExperimentConfig) -> Result<(ExperimentConfig, MeasurementMatrix, MeasurementVector, Option<Image>)> {
    let mut cfg = cfg.resolved();
    match cfg.measurements.clone() {
        Some(path) => {
            let (m, y) = load_measurements(&path)?;
            cfg.height = m.height;
            cfg.width = m.width;
            cfg.pattern = m.kind;
            cfg.set_n_meas(m.n_meas());
            cfg.seeds.pattern = Some(m.seed);
            cfg.seeds.noise = Some(y.noise.seed);
            cfg.noise.gaussian_sigma = y.noise.gaussian_sigma;
            cfg.noise.poisson_scale = y.noise.poisson_scale;
            Ok((cfg, m, y, None))
        }
        None => {
            let s = simulate(&cfg)?;
            Ok((cfg, s.patterns, s.y, Some(s.scene)))
        }
    }
}

/// Result of a network fit.
#[derive(Clone, Debug)]
pub struct SistaOutput {
    pub report: TrainReport,
    /// SSTA bytes of the final model and optimizer state.
    pub checkpoint: Vec<u8>,
    pub final_lambda: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub method: Method,
    /// Final image in `[0, 1]`.
    pub image: Image,
    pub ista: Option<IstaResult>,
    pub sista: Option<SistaOutput>,
}

fn fit<T: Real>(cfg: &ExperimentConfig, m: &MeasurementMatrix, y: &MeasurementVector, on_iter: &mut dyn FnMut(&IterRecord)) -> Result<SistaOutput> {
    let model = SistaModel::<T>::new(m.height, m.width, &cfg.hyper, cfg.bounds, cfg.variant, cfg.seeds.init())?;
    let (report, model, adam) = Session::new(model, m, &y.values, &cfg.train)?.run_with(|r| on_iter(r))?;
    let extra = serde_json::to_value(cfg.resolved()).map_err(|e| SpiError::invalid(format!("config: {e}")))?;
    let checkpoint = write_checkpoint(&model, &adam, extra)?;
    Ok(SistaOutput { report, checkpoint, final_lambda: model.lambda() })
}

/// Runs `cfg.method` on the given measurements.
pub fn reconstruct_with(
    cfg: &ExperimentConfig,
    m: &MeasurementMatrix,
    y: &MeasurementVector,
    on_iter: &mut dyn FnMut(&IterRecord),
) -> Result<Reconstruction> {
    match cfg.method {
        Method::Dgi => Ok(Reconstruction { method: Method::Dgi, image: dgi_reconstruct(m, y)?, ista: None, sista: None }),
        Method::Ista => {
            let r = ista_reconstruct(m, y, &cfg.ista)?;
            Ok(Reconstruction { method: Method::Ista, image: r.image, ista: Some(r.report), sista: None })
        }
        Method::Sista => {
            let out = match cfg.precision {
                Precision::F32 => fit::<f32>(cfg, m, y, on_iter)?,
                Precision::F64 => fit::<f64>(cfg, m, y, on_iter)?,
            };
            Ok(Reconstruction { method: Method::Sista, image: out.report.op.clamped(), ista: None, sista: Some(out) })
        }
    }
}

pub fn reconstruct(cfg: &ExperimentConfig, m: &MeasurementMatrix, y: &MeasurementVector) -> Result<Reconstruction> {
    reconstruct_with(cfg, m, y, &mut |_| {})
}

/// Metrics against a ground-truth scene, with CNR masks from the scene
/// binarized at 0.5.
pub fn score_against_truth(recon: &Image, scene: &Image) -> Result<MetricReport> {
    let (t, b) = threshold_masks(scene, 0.5);
    let masks = (t.iter().any(|&v| v) && b.iter().any(|&v| v)).then_some((t.as_slice(), b.as_slice()));
    evaluate(recon, scene, Reference::GroundTruth, masks)
}

/// One row of the metrics CSV. Columns are fixed; new ones only append.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub scene: String,
    pub method: String,
    /// Sampling ratio as a fraction.
    pub ratio: f64,
    /// `inf` when the images are identical.
    pub psnr_db: f64,
    pub ssim: f64,
    /// Empty when no masks were available.
    pub cnr: Option<f64>,
    pub seed: u64,
    /// `ground-truth` or `pseudo-gt`.
    pub against: String,
}

pub const METRIC_COLUMNS: [&str; 8] = ["scene", "method", "ratio", "psnr_db", "ssim", "cnr", "seed", "against"];

impl MetricRow {
    pub fn new(scene: &str, method: &str, ratio: f64, seed: u64, report: &MetricReport) -> Self {
        MetricRow {
            scene: scene.to_string(),
            method: method.to_string(),
            ratio,
            psnr_db: report.psnr.db,
            ssim: report.ssim.value,
            cnr: report.cnr,
            seed,
            against: report.against.label().to_string(),
        }
    }
}

fn csv_err(e: csv::Error) -> SpiError {
    SpiError::invalid(format!("csv: {e}"))
}

/// Serializes rows with the header.
pub fn metric_csv(rows: &[MetricRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(METRIC_COLUMNS).map_err(csv_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| SpiError::invalid(format!("csv: {e}")))
}

/// Training log: `iteration, fidelity, sparsity, proximal, total, lambda, lr`.
pub fn train_csv(records: &[IterRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    if records.is_empty() {
        w.write_record(["iteration", "fidelity", "sparsity", "proximal", "total", "lambda", "lr"]).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| SpiError::invalid(format!("csv: {e}")))
}

/// ISTA history: `iteration, residual, objective`.
pub fn ista_csv(r: &IstaResult) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "residual", "objective"]).map_err(csv_err)?;
    for (k, (res, obj)) in r.residual_history.iter().zip(&r.objective_history).enumerate() {
        w.write_record([k.to_string(), res.to_string(), obj.to_string()]).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| SpiError::invalid(format!("csv: {e}")))
}
