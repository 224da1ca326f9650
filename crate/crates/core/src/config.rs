//! Experiment configuration: one JSON document per run or sweep cell.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{BlockHyper, ThresholdBounds, Variant};
use crate::classical::IstaConfig;
use crate::error::{Result, SpiError};
use crate::forward::{n_meas_for_ratio, NoiseSpec, PatternKind};
use crate::image::Image;
use crate::scenes::Scene;
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dgi,
    Ista,
    Sista,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Dgi, Method::Ista, Method::Sista];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dgi => "dgi",
            Method::Ista => "ista",
            Method::Sista => "sista",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Element type of the network and optimizer state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

/// Detector noise levels; the noise seed lives in [`Seeds`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseLevels {
    pub gaussian_sigma: f64,
    pub poisson_scale: f64,
}

/// RNG seeds. Unset seeds derive from `master`; a resolved config has all of them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub master: u64,
    pub pattern: Option<u64>,
    pub noise: Option<u64>,
    pub init: Option<u64>,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { master: 1, pattern: None, noise: None, init: None }
    }
}

impl Seeds {
    pub fn from_master(master: u64) -> Self {
        Seeds { master, ..Default::default() }.resolved()
    }

    /// Fills unset seeds from a ChaCha stream of `master`, in the order pattern, noise, init.
    pub fn resolved(self) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        let derived: [u64; 3] = rng.gen();
        Seeds {
            master: self.master,
            pattern: Some(self.pattern.unwrap_or(derived[0])),
            noise: Some(self.noise.unwrap_or(derived[1])),
            init: Some(self.init.unwrap_or(derived[2])),
        }
    }

    pub fn pattern(&self) -> u64 {
        self.resolved().pattern.expect("resolved")
    }

    pub fn noise(&self) -> u64 {
        self.resolved().noise.expect("resolved")
    }

    pub fn init(&self) -> u64 {
        self.resolved().init.expect("resolved")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in scene name (`glyph`, `texture`, `stripes`) or a PGM path.
    pub scene: String,
    pub height: usize,
    pub width: usize,
    pub pattern: PatternKind,
    pub n_meas: Option<usize>,
    /// Sampling ratio as a fraction in `(0, 1]`.
    pub ratio: Option<f64>,
    pub noise: NoiseLevels,
    /// Existing SPIM file; when set, reconstruction skips simulation.
    pub measurements: Option<PathBuf>,
    pub method: Method,
    pub precision: Precision,
    pub variant: Variant,
    pub hyper: BlockHyper,
    pub bounds: ThresholdBounds,
    pub train: TrainConfig,
    pub ista: IstaConfig,
    pub seeds: Seeds,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scene: Scene::Glyph.name().to_string(),
            height: Scene::SIZE,
            width: Scene::SIZE,
            pattern: PatternKind::Bernoulli,
            n_meas: None,
            ratio: Some(0.1),
            noise: NoiseLevels::default(),
            measurements: None,
            method: Method::Sista,
            precision: Precision::F32,
            variant: Variant::Full,
            hyper: BlockHyper::default(),
            bounds: ThresholdBounds::default(),
            train: TrainConfig::default(),
            ista: IstaConfig::default(),
            seeds: Seeds::default(),
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SpiError::invalid(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| SpiError::io(path, e))?;
        Self::from_json(&text).map_err(|e| SpiError::invalid(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Sets the sampling ratio and clears `n_meas`.
    pub fn set_ratio(&mut self, ratio: f64) {
        self.ratio = Some(ratio);
        self.n_meas = None;
    }

    /// Sets the measurement count and clears `ratio`.
    pub fn set_n_meas(&mut self, n: usize) {
        self.n_meas = Some(n);
        self.ratio = None;
    }

    /// Replaces the master seed and re-derives every other seed from it.
    pub fn set_master_seed(&mut self, master: u64) {
        self.seeds = Seeds::from_master(master);
    }

    pub fn n_pix(&self) -> usize {
        self.height * self.width
    }

    pub fn n_meas(&self) -> Result<usize> {
        match (self.n_meas, self.ratio) {
            (Some(n), None) => Ok(n),
            (None, Some(r)) => n_meas_for_ratio(r, self.n_pix()),
            (Some(_), Some(_)) => Err(SpiError::invalid("config sets both n_meas and ratio; give exactly one")),
            (None, None) => Err(SpiError::invalid("config sets neither n_meas nor ratio; give exactly one")),
        }
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec { gaussian_sigma: self.noise.gaussian_sigma, poisson_scale: self.noise.poisson_scale, seed: self.seeds.noise() }
    }

    /// The config with derived seeds written out, as echoed next to outputs.
    pub fn resolved(&self) -> Self {
        ExperimentConfig { seeds: self.seeds.resolved(), ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(SpiError::invalid(format!("image size must be positive, got {}x{}", self.height, self.width)));
        }
        let n = self.n_meas()?;
        if n == 0 {
            return Err(SpiError::invalid("n_meas must be >= 1"));
        }
        self.noise_spec().validate()?;
        self.hyper.validate()?;
        self.bounds.validate()?;
        self.train.validate()?;
        match &self.measurements {
            Some(p) if !p.is_file() => Err(SpiError::invalid(format!("measurements file not found: {}", p.display()))),
            Some(_) => Ok(()),
            None if Scene::from_name(&self.scene).is_none() && !Path::new(&self.scene).is_file() => {
                Err(SpiError::invalid(format!("scene '{}' is neither a built-in name nor a readable PGM path", self.scene)))
            }
            None => Ok(()),
        }
    }

    /// Loads or renders the scene at `height x width`, quantized to 8 bits.
    pub fn load_scene(&self) -> Result<Image> {
        let img = match Scene::from_name(&self.scene) {
            Some(s) => {
                let r = s.render(self.height, self.width);
                Image::from_u8(self.height, self.width, &r.to_u8())?
            }
            None => Image::read_pgm(Path::new(&self.scene))?,
        };
        if (img.height(), img.width()) != (self.height, self.width) {
            return Err(SpiError::SizeMismatch {
                what: "scene size",
                expected: format!("{}x{}", self.height, self.width),
                got: format!("{}x{} ({})", img.height(), img.width(), self.scene),
            });
        }
        Ok(img)
    }
}
