use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classic::{ClassicModelSpec, FeatureKind, FeatureSpec, GbtConfig, DEFAULT_RIDGE};
use crate::dataio::{load_bundle, synth_generate, LabeledDataset, SplitSpec, SynthConfig, Target};
use crate::models::{Family, TrainConfig};
use crate::perturb::{AmplitudePreset, Method, NoiseOptConfig};
use crate::robustness::{PgdConfig, Transform};
use crate::{Error, Result};

/// Schema version written to and expected in every config document.
pub const CONFIG_VERSION: u32 = 1;

/// Where the trials come from: exactly one of `bundle`, `preset`, `synth`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSource {
    /// Name used in the `dataset` report column.
    pub name: Option<String>,
    pub bundle: Option<PathBuf>,
    /// Named synthetic preset (`reference`, `tiny`).
    pub preset: Option<String>,
    pub synth: Option<SynthConfig>,
}

impl DataSource {
    pub fn preset(name: &str) -> Self {
        Self {
            preset: Some(name.into()),
            ..Self::default()
        }
    }

    pub fn bundle(path: impl Into<PathBuf>) -> Self {
        Self {
            bundle: Some(path.into()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let given = [
            self.bundle.is_some(),
            self.preset.is_some(),
            self.synth.is_some(),
        ];
        if given.iter().filter(|&&b| b).count() != 1 {
            return Err(Error::invalid(
                "dataset",
                "set exactly one of `bundle`, `preset`, `synth`",
            ));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match (&self.bundle, &self.preset) {
            (Some(p), _) => p.file_name().map_or_else(
                || p.display().to_string(),
                |f| f.to_string_lossy().into_owned(),
            ),
            (_, Some(p)) => p.clone(),
            _ => "synthetic".into(),
        }
    }

    /// Bundle paths are resolved against `base` when relative.
    pub fn load(&self, base: Option<&Path>) -> Result<LabeledDataset> {
        self.validate()?;
        if let Some(p) = &self.bundle {
            let path = match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p.clone(),
            };
            return load_bundle(path);
        }
        let cfg = match (&self.preset, &self.synth) {
            (Some(name), _) => SynthConfig::preset(name)?,
            (_, Some(cfg)) => cfg.clone(),
            _ => unreachable!("validated above"),
        };
        synth_generate(&cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DefenseSpec {
    None,
    /// Adversarial training at each ε of the grid (fractions of user std).
    At {
        epsilons: Vec<f64>,
    },
}

/// One concrete defense setting of a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Defense {
    None,
    At(f64),
}

impl Defense {
    pub fn label(self) -> String {
        match self {
            Defense::None => "none".into(),
            Defense::At(e) => format!("at:{e}"),
        }
    }

    /// Inverse of [`Defense::label`].
    pub fn parse(s: &str) -> Option<Self> {
        if s == "none" {
            return Some(Defense::None);
        }
        s.strip_prefix("at:")?.parse().ok().map(Defense::At)
    }
}

/// Default ε grid for adversarial training sweeps.
pub const DEFAULT_EPSILONS: [f64; 5] = [0.0, 0.01, 0.02, 0.05, 0.1];

/// A classical pipeline written `features+classifier`, e.g. `ar+lda`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ClassicPipeline {
    pub features: FeatureKind,
    pub gbt: bool,
}

impl ClassicPipeline {
    pub fn label(self) -> String {
        format!(
            "{}+{}",
            self.features.as_str(),
            if self.gbt { "gbt" } else { "lda" }
        )
    }
}

impl std::str::FromStr for ClassicPipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (f, m) = s.split_once('+').ok_or_else(|| {
            Error::invalid(
                "classic",
                format!("`{s}` is not of the form features+classifier"),
            )
        })?;
        let features = f.parse()?;
        let gbt = match m.to_ascii_lowercase().as_str() {
            "lda" => false,
            "gbt" => true,
            other => {
                return Err(Error::invalid(
                    "classic",
                    format!("unknown classifier `{other}`"),
                ))
            }
        };
        Ok(Self { features, gbt })
    }
}

impl TryFrom<String> for ClassicPipeline {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ClassicPipeline> for String {
    fn from(p: ClassicPipeline) -> String {
        p.label()
    }
}

/// A full experiment matrix. Serialised as TOML; every field except
/// `dataset` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub dataset: DataSource,
    /// `None`: the first session trains, the rest test.
    pub split: Option<SplitSpec>,
    /// Perturbation methods; the clean baseline is added unless `include_clean` is off.
    pub methods: Vec<Method>,
    pub include_clean: bool,
    /// Amplitude preset name; see [`AmplitudePreset::named`].
    pub preset: String,
    /// Explicit multipliers, overriding `preset`.
    pub multipliers: Option<AmplitudePreset>,
    pub sn_channel_variation: bool,
    pub families: Vec<Family>,
    pub targets: Vec<Target>,
    pub defenses: Vec<DefenseSpec>,
    pub transforms: Vec<Transform>,
    pub classic: Vec<ClassicPipeline>,
    pub n_repeats: usize,
    pub base_seed: u64,
    /// Training schedule; `seed` and `target` are set per cell.
    pub train: TrainConfig,
    /// EMIN/EMAX optimiser settings; `seed` is set per cell.
    pub noise: NoiseOptConfig,
    /// PGD settings for AT; `epsilon` is set from the grid.
    pub pgd: PgdConfig,
    pub tr_segments: usize,
    /// Largest circular shift for TS; `None` means a quarter of the trial.
    pub ts_max_offset: Option<usize>,
    /// Montage for SL; without one every other channel is a neighbour.
    pub montage: Option<PathBuf>,
    pub feature_spec: FeatureSpec,
    pub lda_ridge: f64,
    pub gbt: GbtConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            dataset: DataSource::preset("reference"),
            split: None,
            methods: Method::ALL.to_vec(),
            include_clean: true,
            preset: "mi".into(),
            multipliers: None,
            sn_channel_variation: true,
            families: vec![Family::Eegnet],
            targets: vec![Target::Task, Target::Uid],
            defenses: vec![DefenseSpec::None],
            transforms: vec![Transform::None],
            classic: Vec::new(),
            n_repeats: 5,
            base_seed: 0,
            train: TrainConfig::default(),
            noise: NoiseOptConfig::default(),
            pgd: PgdConfig::default(),
            tr_segments: 8,
            ts_max_offset: None,
            montage: None,
            feature_spec: FeatureSpec::default(),
            lda_ridge: DEFAULT_RIDGE,
            gbt: GbtConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: PathBuf::from("<config>"),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::invalid("config", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::invalid(
                "version",
                format!("expected {CONFIG_VERSION}, found {}", self.version),
            ));
        }
        self.dataset.validate()?;
        if self.n_repeats == 0 {
            return Err(Error::invalid("n_repeats", "must be at least 1"));
        }
        if self.targets.is_empty() {
            return Err(Error::invalid("targets", "must not be empty"));
        }
        if self.families.is_empty() && self.classic.is_empty() {
            return Err(Error::invalid(
                "families",
                "need at least one model family or classic pipeline",
            ));
        }
        if self.methods.is_empty() && !self.include_clean {
            return Err(Error::invalid(
                "methods",
                "nothing to run without methods or the clean baseline",
            ));
        }
        for (field, empty) in [
            ("defenses", self.defenses.is_empty()),
            ("transforms", self.transforms.is_empty()),
        ] {
            if empty && !self.families.is_empty() {
                return Err(Error::invalid(field, "must not be empty"));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(m) = self.methods.iter().find(|m| !seen.insert(**m)) {
            return Err(Error::invalid("methods", format!("`{m}` listed twice")));
        }
        for d in &self.defenses {
            if let DefenseSpec::At { epsilons } = d {
                if epsilons.is_empty() {
                    return Err(Error::invalid("defenses", "AT needs a non-empty ε grid"));
                }
                for &e in epsilons {
                    PgdConfig {
                        epsilon: e,
                        ..self.pgd.clone()
                    }
                    .validate()?;
                }
            }
        }
        self.multipliers()?;
        self.noise.validate()?;
        if self.tr_segments == 0 {
            return Err(Error::invalid("tr_segments", "must be at least 1"));
        }
        if !(self.lda_ridge.is_finite() && self.lda_ridge >= 0.0) {
            return Err(Error::invalid(
                "lda_ridge",
                "must be finite and non-negative",
            ));
        }
        Ok(())
    }

    pub fn multipliers(&self) -> Result<AmplitudePreset> {
        match self.multipliers {
            Some(m) => {
                if [m.rand, m.sn, m.emin, m.emax]
                    .iter()
                    .any(|v| !(v.is_finite() && *v >= 0.0))
                {
                    return Err(Error::invalid(
                        "multipliers",
                        "must be finite and non-negative",
                    ));
                }
                Ok(m)
            }
            None => AmplitudePreset::named(&self.preset),
        }
    }

    /// Defense settings in config order, AT grids expanded.
    pub fn defense_points(&self) -> Vec<Defense> {
        self.defenses
            .iter()
            .flat_map(|d| match d {
                DefenseSpec::None => vec![Defense::None],
                DefenseSpec::At { epsilons } => epsilons.iter().map(|&e| Defense::At(e)).collect(),
            })
            .collect()
    }

    pub fn classic_model(&self, pipeline: ClassicPipeline) -> ClassicModelSpec {
        if pipeline.gbt {
            ClassicModelSpec::Gbt(self.gbt.clone())
        } else {
            ClassicModelSpec::Lda {
                ridge: self.lda_ridge,
            }
        }
    }

    pub fn classic_features(&self, pipeline: ClassicPipeline) -> FeatureSpec {
        FeatureSpec {
            kind: pipeline.features,
            ..self.feature_spec.clone()
        }
    }

    /// Cells per repeat, failed or not.
    pub fn cells_per_repeat(&self) -> usize {
        let arms = self.methods.len() + usize::from(self.include_clean);
        let cnn = self.families.len() * self.defense_points().len() * self.transforms.len();
        arms * self.targets.len() * (cnn + self.classic.len())
    }
}
