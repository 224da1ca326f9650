//! The `spi` command line: simulate, reconstruct, eval, sweep, ablate.
//!
//! Every run directory gets a `config.json` holding the resolved config; feeding
//! it back through `--config` repeats the run. Files written by a run that
//! fails are removed again.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};

use crate::arch::{BlockHyper, Variant};
use crate::config::{ExperimentConfig, Method, Precision};
use crate::error::{Result, SpiError};
use crate::experiment::{acquire, ista_csv, metric_csv, reconstruct_with, score_against_truth, simulate, train_csv, MetricRow, Reconstruction};
use crate::forward::{format_ratio, write_spim};
use crate::image::{montage, Image};
use crate::metrics::{evaluate, otsu_threshold, pseudo_gt, threshold_masks, MetricReport, PseudoGtConfig, Reference};

#[derive(Debug, Parser)]
#[command(name = "spi", version, about = "Single-pixel imaging simulation and reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate bucket measurements of a scene and write a SPIM file.
    Simulate(RunArgs),
    /// Reconstruct an image from a SPIM file (or from a freshly simulated scene).
    Reconstruct {
        /// SPIM file; defaults to `measurements` in the config, else simulates.
        spim: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a reconstruction and append a row to a metrics CSV.
    Eval(EvalArgs),
    /// Run every (ratio x method) cell on one scene.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Sampling ratios, as fractions (0.05) or percentages (5%).
        #[arg(long, value_delimiter = ',', default_value = "1%,2%,3%,4%,5%,6%,7%,8%,9%,10%")]
        ratios: Vec<String>,
        /// Methods to run in every ratio cell.
        #[arg(long, value_delimiter = ',', default_value = "dgi,ista,sista", value_parser = parse_method)]
        methods: Vec<Method>,
        #[command(flatten)]
        pool: PoolArgs,
    },
    /// Train the full model and the requested ablations on each scene.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Ablation tags; the full model always runs.
        #[arg(long, value_delimiter = ',', default_value = "a,b,c,d,e,f,g")]
        tags: Vec<String>,
        /// Built-in scene names or PGM paths; defaults to the config scene.
        #[arg(long, value_delimiter = ',')]
        scenes: Vec<String>,
        #[command(flatten)]
        pool: PoolArgs,
    },
}

/// Overrides applied on top of `--config` (or the defaults).
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Experiment config JSON; unknown fields are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in scene name or PGM path.
    #[arg(long)]
    pub scene: Option<String>,
    /// Reconstruction method: dgi, ista or sista.
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    /// Sampling ratio, as a fraction (0.1) or a percentage (10%).
    #[arg(long, conflicts_with = "n_meas", value_parser = parse_ratio)]
    pub ratio: Option<f64>,
    /// Measurement count; excludes `--ratio`.
    #[arg(long)]
    pub n_meas: Option<usize>,
    /// Master seed; the pattern, noise and init seeds are re-derived from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Network arithmetic: f32, or f64 for bit-reproducible runs.
    #[arg(long, value_parser = parse_precision)]
    pub precision: Option<Precision>,
    /// Write `snapshots/op_NNNNNN.pgm` every this many iterations.
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    /// Training iterations.
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Peak learning rate of the cosine schedule.
    #[arg(long)]
    pub lr_max: Option<f64>,
    /// Normalize measurements to zero mean and unit spread before training.
    #[arg(long)]
    pub normalize_y: bool,
    /// Architecture preset: default, light or toy.
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<BlockHyper>,
    /// Model variant: full or an ablation tag a..g.
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PoolArgs {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Also write a grid image of all reconstructions.
    #[arg(long)]
    pub montage: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Reconstruction PGM.
    pub recon: PathBuf,
    /// Reference PGM: the ground truth, or with `--pseudo-gt` the raw image
    /// the pseudo ground truth is built from.
    #[arg(long)]
    pub reference: PathBuf,
    /// Score against a pseudo ground truth built from `--reference`.
    #[arg(long)]
    pub pseudo_gt: bool,
    /// Also compute CNR; needs masks.
    #[arg(long)]
    pub cnr: bool,
    #[arg(long)]
    pub target_mask: Option<PathBuf>,
    #[arg(long)]
    pub background_mask: Option<PathBuf>,
    /// Derive CNR masks from the reference (0.5 threshold, Otsu for pseudo-GT).
    #[arg(long)]
    pub auto_masks: bool,
    /// Metrics CSV to append to.
    #[arg(long, default_value = "metrics.csv")]
    pub out: PathBuf,
    /// Label columns copied into the row.
    #[arg(long, default_value = "")]
    pub scene: String,
    #[arg(long, default_value = "")]
    pub method: String,
    #[arg(long, value_parser = parse_ratio, default_value = "0")]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn parse_ratio(s: &str) -> std::result::Result<f64, String> {
    let (num, pct) = match s.trim().strip_suffix('%') {
        Some(n) => (n, true),
        None => (s.trim(), false),
    };
    let v: f64 = num.parse().map_err(|_| format!("not a number: {s}"))?;
    let r = if pct { v / 100.0 } else { v };
    if !(0.0..=1.0).contains(&r) {
        return Err(format!("ratio must be in [0, 1] or [0%, 100%], got {s}"));
    }
    Ok(r)
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::from_name(s).ok_or_else(|| format!("unknown method '{s}'; expected dgi, ista or sista"))
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    match s {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        _ => Err(format!("unknown precision '{s}'; expected f32 or f64")),
    }
}

fn parse_preset(s: &str) -> std::result::Result<BlockHyper, String> {
    match s {
        "default" => Ok(BlockHyper::default()),
        "light" => Ok(BlockHyper::light()),
        "toy" => Ok(BlockHyper::toy()),
        _ => Err(format!("unknown preset '{s}'; expected default, light or toy")),
    }
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    Variant::from_tag(s).map_err(|e| e.to_string())
}

impl RunArgs {
    /// Loads `--config` (or defaults) and applies the flag overrides.
    pub fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = &self.scene {
            cfg.scene = s.clone();
            cfg.measurements = None;
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(r) = self.ratio {
            cfg.set_ratio(r);
        }
        if let Some(n) = self.n_meas {
            cfg.set_n_meas(n);
        }
        if let Some(s) = self.seed {
            cfg.set_master_seed(s);
        }
        if let Some(p) = self.precision {
            cfg.precision = p;
        }
        if self.snapshot_every.is_some() {
            cfg.train.snapshot_every = self.snapshot_every;
        }
        if let Some(k) = self.k_max {
            cfg.train.k_max = k;
        }
        if let Some(lr) = self.lr_max {
            cfg.train.lr_max = lr;
            cfg.train.lr_min = cfg.train.lr_min.min(lr);
        }
        if self.normalize_y {
            cfg.train.normalize_y = true;
        }
        if let Some(h) = &self.preset {
            cfg.hyper = h.clone();
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        Ok(cfg)
    }
}

/// Output directory whose new files are deleted unless [`OutDir::commit`] runs.
pub struct OutDir {
    dir: PathBuf,
    created: bool,
    written: Vec<PathBuf>,
    committed: bool,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self> {
        let created = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| SpiError::io(dir, e))?;
        Ok(OutDir { dir: dir.to_path_buf(), created, written: Vec::new(), committed: false })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| SpiError::io(parent, e))?;
        }
        self.written.push(path.clone());
        fs::write(&path, bytes).map_err(|e| SpiError::io(&path, e))?;
        Ok(path)
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for OutDir {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        if self.created {
            let _ = fs::remove_dir_all(&self.dir);
            return;
        }
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        let _ = fs::remove_dir(self.dir.join("snapshots"));
    }
}

fn config_json(cfg: &ExperimentConfig) -> Vec<u8> {
    let mut s = cfg.resolved().to_json();
    s.push('\n');
    s.into_bytes()
}

pub fn cmd_simulate(run: &RunArgs) -> Result<PathBuf> {
    let mut cfg = run.config()?.resolved();
    cfg.measurements = None;
    cfg.validate()?;
    let sim = simulate(&cfg)?;
    let mut out = OutDir::create(&cfg.out)?;
    let path = out.write("measurements.spim", &write_spim(&sim.patterns, &sim.y)?)?;
    out.write("config.json", &config_json(&cfg))?;
    out.commit();
    eprintln!(
        "simulated {} at {} ({} measurements) -> {}",
        cfg.scene,
        format_ratio(sim.patterns.n_meas(), sim.patterns.n_pix()),
        sim.patterns.n_meas(),
        path.display()
    );
    Ok(path)
}

/// Files of one reconstruction, written into `out`.
fn write_run(out: &mut OutDir, cfg: &ExperimentConfig, r: &Reconstruction) -> Result<()> {
    out.write("recon.pgm", &r.image.to_pgm_bytes())?;
    if let Some(ista) = &r.ista {
        out.write("residuals.csv", &ista_csv(ista)?)?;
    }
    if let Some(s) = &r.sista {
        out.write("of.pgm", &s.report.of.clamped().to_pgm_bytes())?;
        out.write("train.csv", &train_csv(&s.report.records)?)?;
        out.write("model.ssta", &s.checkpoint)?;
        for (k, img) in &s.report.snapshots {
            out.write(&format!("snapshots/op_{k:06}.pgm"), &img.clamped().to_pgm_bytes())?;
        }
    }
    out.write("config.json", &config_json(cfg))?;
    Ok(())
}

fn progress(label: String, k_max: usize) -> impl FnMut(&crate::train::IterRecord) {
    let every = (k_max / 10).max(1);
    move |r| {
        if (r.iteration + 1) % every == 0 || r.iteration + 1 == k_max {
            eprintln!("[{label}] iter {:>5}/{k_max}  loss {:.4e}  lr {:.2e}", r.iteration + 1, r.total, r.lr);
        }
    }
}

pub fn cmd_reconstruct(spim: Option<&Path>, run: &RunArgs) -> Result<Reconstruction> {
    let mut cfg = run.config()?;
    if let Some(p) = spim {
        cfg.measurements = Some(p.to_path_buf());
    }
    cfg.validate()?;
    let (cfg, m, y, scene) = acquire(&cfg)?;
    let mut out = OutDir::create(&cfg.out)?;
    let mut on_iter = progress(cfg.method.name().to_string(), cfg.train.k_max);
    let r = reconstruct_with(&cfg, &m, &y, &mut on_iter)?;
    write_run(&mut out, &cfg, &r)?;
    out.commit();
    if let Some(scene) = scene {
        let rep = score_against_truth(&r.image, &scene)?;
        eprintln!("{}", summary(cfg.method.name(), &rep));
    }
    eprintln!("wrote {}", cfg.out.display());
    Ok(r)
}

fn summary(label: &str, r: &MetricReport) -> String {
    let psnr = if r.psnr.identical { "inf (identical)".to_string() } else { format!("{:.2} dB", r.psnr.db) };
    let cnr = r.cnr.map_or("-".to_string(), |c| format!("{c:.3}"));
    format!("{label}: psnr {psnr}  ssim {:.4}  cnr {cnr}  (against {})", r.ssim.value, r.against.label())
}

fn read_mask(path: &Path, like: &Image) -> Result<Vec<bool>> {
    let m = Image::read_pgm(path)?;
    if !m.same_shape(like) {
        return Err(SpiError::SizeMismatch {
            what: "mask size",
            expected: format!("{}x{}", like.height(), like.width()),
            got: format!("{}x{} ({})", m.height(), m.width(), path.display()),
        });
    }
    Ok(m.data().iter().map(|&v| v >= 0.5).collect())
}

/// Appends rows to a metrics CSV, writing the header for a new file.
pub fn append_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let fresh = !path.exists() || fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut bytes = metric_csv(rows)?;
    if !fresh {
        let header_end = bytes.iter().position(|&b| b == b'\n').map_or(bytes.len(), |i| i + 1);
        bytes.drain(..header_end);
    }
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| SpiError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| SpiError::io(path, e))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<MetricRow> {
    let recon = Image::read_pgm(&a.recon)?;
    let raw = Image::read_pgm(&a.reference)?;
    let (reference, against) = if a.pseudo_gt {
        let p = pseudo_gt(&raw, &PseudoGtConfig::default());
        if p.degenerate {
            eprintln!("warning: pseudo ground truth of {} is constant", a.reference.display());
        }
        (p.image, Reference::PseudoGt)
    } else {
        (raw, Reference::GroundTruth)
    };
    if !recon.same_shape(&reference) {
        return Err(SpiError::SizeMismatch {
            what: "image size",
            expected: format!("{}x{} (reference)", reference.height(), reference.width()),
            got: format!("{}x{} (reconstruction)", recon.height(), recon.width()),
        });
    }
    let masks = if !a.cnr {
        None
    } else if a.auto_masks {
        let t = if a.pseudo_gt { otsu_threshold(&reference) } else { 0.5 };
        Some(threshold_masks(&reference, t))
    } else {
        let target = a.target_mask.as_deref().ok_or_else(|| SpiError::invalid("--cnr needs --target-mask (or --auto-masks)"))?;
        let background = a.background_mask.as_deref().ok_or_else(|| SpiError::invalid("--cnr needs --background-mask (or --auto-masks)"))?;
        Some((read_mask(target, &reference)?, read_mask(background, &reference)?))
    };
    let report = evaluate(&recon, &reference, against, masks.as_ref().map(|(t, b)| (t.as_slice(), b.as_slice())))?;
    let row = MetricRow::new(&a.scene, &a.method, a.ratio, a.seed, &report);
    append_metrics(&a.out, std::slice::from_ref(&row))?;
    println!("{}", summary(&a.recon.display().to_string(), &report));
    Ok(row)
}

/// Runs `f` over `items` on `jobs` scoped threads, keeping input order.
pub fn run_pool<J: Sync, R: Send>(items: &[J], jobs: usize, f: impl Fn(&J) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("pool lock")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("pool lock").into_iter().map(|r| r.expect("every item ran")).collect()
}

fn default_jobs(pool: &PoolArgs) -> usize {
    pool.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// One sweep or ablation cell.
#[derive(Clone, Debug)]
pub struct Cell {
    pub label: String,
    pub scene_label: String,
    pub method_label: String,
    pub cfg: ExperimentConfig,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub row: MetricRow,
    pub image: Image,
}

/// Simulates, reconstructs, scores against the scene and writes the cell directory.
pub fn run_cell(cell: &Cell) -> Result<CellResult> {
    let cfg = cell.cfg.resolved();
    cfg.validate()?;
    let mut out = OutDir::create(&cfg.out)?;
    let sim = simulate(&cfg)?;
    let mut on_iter = progress(cell.label.clone(), cfg.train.k_max);
    let r = reconstruct_with(&cfg, &sim.patterns, &sim.y, &mut on_iter)?;
    write_run(&mut out, &cfg, &r)?;
    let report = score_against_truth(&r.image, &sim.scene)?;
    out.commit();
    eprintln!("{}", summary(&cell.label, &report));
    let ratio = sim.patterns.n_meas() as f64 / sim.patterns.n_pix() as f64;
    Ok(CellResult { row: MetricRow::new(&cell.scene_label, &cell.method_label, ratio, cfg.seeds.master, &report), image: r.image })
}

/// Outcome of a multi-cell command.
#[derive(Debug)]
pub struct BatchReport {
    pub rows: Vec<MetricRow>,
    pub failures: Vec<(String, String)>,
    pub csv: PathBuf,
}

impl BatchReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

fn run_batch(cells: &[Cell], pool: &PoolArgs, root: &Path, csv_name: &str, montage_cols: usize) -> Result<(BatchReport, Vec<Option<CellResult>>)> {
    fs::create_dir_all(root).map_err(|e| SpiError::io(root, e))?;
    let results = run_pool(cells, default_jobs(pool), run_cell);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut kept = Vec::new();
    for (cell, r) in cells.iter().zip(results) {
        match r {
            Ok(c) => {
                rows.push(c.row.clone());
                kept.push(Some(c));
            }
            Err(e) => {
                eprintln!("[{}] failed: {e}", cell.label);
                failures.push((cell.label.clone(), e.to_string()));
                kept.push(None);
            }
        }
    }
    let csv = root.join(csv_name);
    fs::write(&csv, metric_csv(&rows)?).map_err(|e| SpiError::io(&csv, e))?;
    if !failures.is_empty() {
        let text: String = failures.iter().map(|(l, e)| format!("{l}\t{e}\n")).collect();
        let p = root.join("failures.txt");
        fs::write(&p, text).map_err(|e| SpiError::io(&p, e))?;
    }
    if pool.montage {
        let blank = cells.first().map(|c| Image::zeros(c.cfg.height, c.cfg.width));
        let tiles: Vec<Image> = kept.iter().filter_map(|c| c.as_ref().map(|c| c.image.clone()).or_else(|| blank.clone())).collect();
        if let Some(m) = montage(&tiles, montage_cols) {
            m.write_pgm(root.join("montage.pgm"))?;
        }
    }
    Ok((BatchReport { rows, failures, csv }, kept))
}

/// Cell directory name for a ratio, e.g. `r05.00`.
fn ratio_tag(cfg: &ExperimentConfig) -> Result<String> {
    let n = cfg.n_meas()?;
    Ok(format!("r{:05.2}", crate::forward::ratio_percent(n, cfg.n_pix())))
}

pub fn cmd_sweep(run: &RunArgs, ratios: &[String], methods: &[Method], pool: &PoolArgs) -> Result<BatchReport> {
    let base = run.config()?.resolved();
    if ratios.is_empty() || methods.is_empty() {
        return Err(SpiError::invalid("sweep needs at least one ratio and one method"));
    }
    let ratios: Vec<f64> = ratios.iter().map(|r| parse_ratio(r).map_err(SpiError::Invalid)).collect::<Result<_>>()?;
    if let Some(r) = ratios.iter().find(|&&r| r <= 0.0) {
        return Err(SpiError::invalid(format!("sampling ratio must be in (0, 1], got {r}")));
    }
    let mut cells = Vec::new();
    // rows are methods, columns ratios, so the montage reads like a ratio series
    for &method in methods {
        for &ratio in &ratios {
            let mut cfg = base.clone();
            cfg.method = method;
            cfg.set_ratio(ratio);
            cfg.measurements = None;
            let label = format!("{}_{}", method.name(), ratio_tag(&cfg)?);
            cfg.out = base.out.join(&label);
            cells.push(Cell { label, scene_label: scene_label(&base.scene), method_label: method.name().to_string(), cfg });
        }
    }
    let (report, _) = run_batch(&cells, pool, &base.out, "sweep.csv", ratios.len())?;
    Ok(report)
}

fn scene_label(scene: &str) -> String {
    match crate::scenes::Scene::from_name(scene) {
        Some(s) => s.name().to_string(),
        None => Path::new(scene).file_stem().map_or(scene.to_string(), |s| s.to_string_lossy().into_owned()),
    }
}

pub fn cmd_ablate(run: &RunArgs, tags: &[String], scenes: &[String], pool: &PoolArgs) -> Result<BatchReport> {
    let mut base = run.config()?.resolved();
    base.method = Method::Sista;
    base.measurements = None;
    let mut variants = vec![Variant::Full];
    for t in tags {
        let v = Variant::from_tag(t)?;
        if !variants.contains(&v) {
            variants.push(v);
        }
    }
    let scenes: Vec<String> = if scenes.is_empty() { vec![base.scene.clone()] } else { scenes.to_vec() };
    let mut cells = Vec::new();
    for scene in &scenes {
        for &v in &variants {
            let mut cfg = base.clone();
            cfg.scene = scene.clone();
            cfg.variant = v;
            let label = format!("{}_{}", scene_label(scene), v.tag());
            cfg.out = base.out.join(&label);
            cells.push(Cell { label, scene_label: scene_label(scene), method_label: format!("sista-{}", v.tag()), cfg });
        }
    }
    let (report, _) = run_batch(&cells, pool, &base.out, "ablate.csv", variants.len())?;
    let table = ablation_table(&report.rows, &variants, &scenes.iter().map(|s| scene_label(s)).collect::<Vec<_>>())?;
    let p = base.out.join("ablate_table.csv");
    fs::write(&p, table).map_err(|e| SpiError::io(&p, e))?;
    Ok(report)
}

/// Variants as rows, `<scene>_psnr_db` and `<scene>_ssim` column pairs.
pub fn ablation_table(rows: &[MetricRow], variants: &[Variant], scenes: &[String]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["variant".to_string()];
    for s in scenes {
        header.push(format!("{s}_psnr_db"));
        header.push(format!("{s}_ssim"));
    }
    let err = |e: csv::Error| SpiError::invalid(format!("csv: {e}"));
    w.write_record(&header).map_err(err)?;
    for v in variants {
        let method = format!("sista-{}", v.tag());
        let mut rec = vec![v.tag().to_string()];
        for s in scenes {
            match rows.iter().find(|r| &r.scene == s && r.method == method) {
                Some(r) => {
                    rec.push(r.psnr_db.to_string());
                    rec.push(r.ssim.to_string());
                }
                None => rec.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&rec).map_err(err)?;
    }
    w.into_inner().map_err(|e| SpiError::invalid(format!("csv: {e}")))
}

/// Parses `args` and runs the command; the exit code is 0 iff every cell succeeded.
pub fn run<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Simulate(run) => cmd_simulate(run).map(|_| true),
        Command::Reconstruct { spim, run } => cmd_reconstruct(spim.as_deref(), run).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Sweep { run, ratios, methods, pool } => cmd_sweep(run, ratios, methods, pool).map(|r| report_batch(&r)),
        Command::Ablate { run, tags, scenes, pool } => cmd_ablate(run, tags, scenes, pool).map(|r| report_batch(&r)),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn report_batch(r: &BatchReport) -> bool {
    eprintln!("{} cells ok, {} failed; wrote {}", r.rows.len(), r.failures.len(), r.csv.display());
    r.ok()
}
