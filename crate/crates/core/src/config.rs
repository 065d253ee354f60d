//! Scenario files: TOML with one section per component.
//!
//! ```toml
//! seed = 7
//!
//! [domain]
//! dimension = 1
//! spacing = 0.015625
//! horizon = 0.0625
//! accessible = "right"
//!
//! [kernel]
//! beta = 0.25
//! gamma_lower = 1.0
//!
//! [time]
//! final_time = 1.0
//! steps = 64
//!
//! [coefficient]
//! kind = "one_plus_sin2"
//! ```
//!
//! Closed-form fields are picked from small catalogs by `kind`. See the
//! README for the full key list.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{AccessibleRegion, DomainSpec};
use crate::error::{Error, Result};
use crate::inversion::BasisKind;
use crate::kernel::{KernelForm, KernelSpec, TensorField};
use crate::limit::LimitCheckSpec;
use crate::solver::Model;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceName {
    All,
    Left,
    Right,
    Bottom,
    Top,
}

impl FaceName {
    pub fn region(self) -> AccessibleRegion {
        match self {
            FaceName::All => AccessibleRegion::All,
            FaceName::Left => AccessibleRegion::Face { axis: 0, upper: false },
            FaceName::Right => AccessibleRegion::Face { axis: 0, upper: true },
            FaceName::Bottom => AccessibleRegion::Face { axis: 1, upper: false },
            FaceName::Top => AccessibleRegion::Face { axis: 1, upper: true },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub dimension: usize,
    #[serde(default)]
    pub lower: Option<Vec<f64>>,
    #[serde(default)]
    pub upper: Option<Vec<f64>>,
    pub spacing: f64,
    pub horizon: f64,
    #[serde(default = "default_face")]
    pub accessible: FaceName,
}

fn default_face() -> FaceName {
    FaceName::Right
}

impl DomainSection {
    pub fn spec(&self) -> DomainSpec<f64> {
        let d = self.dimension;
        DomainSpec {
            dimension: d,
            lower: self.lower.clone().unwrap_or_else(|| vec![0.0; d]),
            upper: self.upper.clone().unwrap_or_else(|| vec![1.0; d]),
            horizon: self.horizon,
            spacing: self.spacing,
            accessible: self.accessible.region(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    #[serde(default = "default_form")]
    pub form: KernelForm,
    pub beta: f64,
    pub gamma_lower: f64,
    /// Defaults to `gamma_lower`.
    #[serde(default)]
    pub gamma_upper: Option<f64>,
    #[serde(default)]
    pub symmetric_pairing: bool,
}

fn default_form() -> KernelForm {
    KernelForm::Power
}

impl KernelSection {
    pub fn spec(&self, dimension: usize, horizon: f64) -> KernelSpec<f64> {
        KernelSpec {
            dimension,
            beta: self.beta,
            gamma_lower: self.gamma_lower,
            gamma_upper: self.gamma_upper.unwrap_or(self.gamma_lower),
            horizon,
            form: self.form,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub final_time: f64,
    pub steps: usize,
}

/// Reaction coefficient catalog.
#[derive(Default, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum CoefficientSource {
    Zero,
    Constant { value: f64 },
    /// `offset + slope·x₁`.
    Affine {
        #[serde(default = "one")]
        offset: f64,
        #[serde(default = "one")]
        slope: f64,
    },
    /// `1 + Π_k sin²(π x_k)`.
    #[default]
    OnePlusSin2,
    /// One value per interior node, in node order. A `q_true` column marks
    /// the values as ground truth; a `q` column does not.
    Csv { path: PathBuf },
}

fn one() -> f64 {
    1.0
}


impl CoefficientSource {
    pub fn eval(&self, x: &[f64]) -> Option<f64> {
        Some(match self {
            CoefficientSource::Zero => 0.0,
            CoefficientSource::Constant { value } => *value,
            CoefficientSource::Affine { offset, slope } => offset + slope * x[0],
            CoefficientSource::OnePlusSin2 => {
                1.0 + x
                    .iter()
                    .map(|&c| (std::f64::consts::PI * c).sin().powi(2))
                    .product::<f64>()
            }
            CoefficientSource::Csv { .. } => return None,
        })
    }
}

/// Temporal strength `v(t)` catalog; every entry vanishes at `t = 0`.
#[derive(Default, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum SignalSource {
    /// `t/T`.
    #[default]
    Ramp,
    /// `sin(πt/(2T))`.
    QuarterSine,
    /// `(t/T)^p`.
    Power { exponent: f64 },
    /// `sin²(πt/(fT))` for `t < fT`, zero afterwards.
    EarlyBump { fraction: f64 },
}


impl SignalSource {
    pub fn eval(&self, t: f64, final_time: f64) -> f64 {
        let s = t / final_time;
        match self {
            SignalSource::Ramp => s,
            SignalSource::QuarterSine => (std::f64::consts::FRAC_PI_2 * s).sin(),
            SignalSource::Power { exponent } => s.powf(*exponent),
            SignalSource::EarlyBump { fraction } => {
                if s < *fraction {
                    (std::f64::consts::PI * s / fraction).sin().powi(2)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Spatial source profile `φ` used by the forward run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum ProfileSource {
    Constant { value: f64 },
    /// Tent of half-width `width` centred at `center` (domain centre when omitted).
    Hat {
        #[serde(default)]
        center: Option<Vec<f64>>,
        width: f64,
    },
    /// `Π_k sin(m π x_k)`.
    SineMode { mode: usize },
}

impl Default for ProfileSource {
    fn default() -> Self {
        ProfileSource::Hat {
            center: None,
            width: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSection {
    /// Activity window as fractions of the final time.
    #[serde(default)]
    pub start: f64,
    #[serde(default = "one")]
    pub end: f64,
}

impl Default for SensorSection {
    fn default() -> Self {
        SensorSection { start: 0.0, end: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    #[serde(default = "default_basis")]
    pub kind: BasisKind,
    /// Number of sine modes; ignored for the nodal basis.
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub ridge: bool,
    #[serde(default = "default_mask")]
    pub mask_threshold: f64,
}

fn default_basis() -> BasisKind {
    BasisKind::Nodal
}

fn default_mask() -> f64 {
    1e-10
}

impl Default for BasisSection {
    fn default() -> Self {
        BasisSection {
            kind: BasisKind::Nodal,
            count: None,
            ridge: false,
            mask_threshold: 1e-10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Relative Gaussian noise on the data; zero disables it.
    #[serde(default)]
    pub level: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Randomized runs per property.
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Multiplies the kernel by `1 ± skew` depending on pair orientation.
    #[serde(default)]
    pub inject_skew: f64,
}

fn default_trials() -> usize {
    20
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            trials: default_trials(),
            inject_skew: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub domain: DomainSection,
    pub kernel: KernelSection,
    #[serde(default)]
    pub tensor: TensorField<f64>,
    pub time: TimeSection,
    #[serde(default = "default_model")]
    pub model: Model<f64>,
    #[serde(default)]
    pub coefficient: CoefficientSource,
    #[serde(default)]
    pub signal: SignalSource,
    #[serde(default)]
    pub source: ProfileSource,
    #[serde(default)]
    pub sensor: SensorSection,
    #[serde(default)]
    pub basis: BasisSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub limit: LimitCheckSpec,
}

fn default_model() -> Model<f64> {
    Model::Nde
}

/// Finds the 1-based line of `key` inside `[section]` (top level when empty).
fn locate(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut section_line = None;
    for (n, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == section {
                section_line = Some(n + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(n + 1);
                }
            }
        }
    }
    section_line
}

impl Scenario {
    pub fn from_toml_str(source: &str) -> Result<Self> {
        let scenario: Scenario =
            toml::from_str(source).map_err(|e| Error::Config(format!("config: {e}")))?;
        scenario.validate_with_source(Some(source))?;
        Ok(scenario)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut s = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        // relative CSV paths are resolved against the config file
        if let CoefficientSource::Csv { path: p } = &mut s.coefficient {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize scenario: {e}")))
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml_string()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with_source(None)
    }

    fn validate_with_source(&self, source: Option<&str>) -> Result<()> {
        let fail = |section: &str, key: &str, msg: String| -> Error {
            let field = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            match source.and_then(|s| locate(s, section, key)) {
                Some(line) => Error::Config(format!("line {line}: {field}: {msg}")),
                None => Error::Config(format!("{field}: {msg}")),
            }
        };
        let d = &self.domain;
        if !(1..=2).contains(&d.dimension) {
            return Err(fail("domain", "dimension", format!("must be 1 or 2, got {}", d.dimension)));
        }
        for (key, v) in [("lower", &d.lower), ("upper", &d.upper)] {
            if let Some(v) = v {
                if v.len() != d.dimension {
                    return Err(fail("domain", key, format!("needs {} entries", d.dimension)));
                }
            }
        }
        if d.dimension == 1 && matches!(d.accessible, FaceName::Bottom | FaceName::Top) {
            return Err(fail("domain", "accessible", "bottom/top faces need dimension 2".into()));
        }
        if let Err(e) = d.spec().validate() {
            let key = if e.to_string().contains("horizon") { "horizon" } else { "spacing" };
            return Err(fail("domain", key, e.to_string()));
        }
        let k = &self.kernel;
        if !(k.beta > 0.0 && k.beta < 1.0) {
            return Err(fail("kernel", "beta", format!("must lie in (0, 1), got {}", k.beta)));
        }
        if !(k.gamma_lower > 0.0) {
            return Err(fail("kernel", "gamma_lower", format!("must be positive, got {}", k.gamma_lower)));
        }
        if let Some(g) = k.gamma_upper {
            if !(g >= k.gamma_lower) {
                return Err(fail("kernel", "gamma_upper", format!("must be at least gamma_lower, got {g}")));
            }
        }
        if let Err(e) = self.tensor.validate(d.dimension) {
            return Err(fail("tensor", "kind", e.to_string()));
        }
        if !(self.time.final_time > 0.0) {
            return Err(fail("time", "final_time", "must be positive".into()));
        }
        if self.time.steps < 1 {
            return Err(fail("time", "steps", "must be at least 1".into()));
        }
        if let Model::Mttfnde(spec) = &self.model {
            if let Err(e) = spec.validate() {
                let key = if !(spec.order > 0.0 && spec.order < 1.0) { "order" } else { "lower" };
                return Err(fail("model", key, e.to_string()));
            }
        }
        match &self.coefficient {
            CoefficientSource::Constant { value } if !(*value >= 0.0) => {
                return Err(fail("coefficient", "value", format!("must be nonnegative, got {value}")));
            }
            CoefficientSource::Affine { offset, slope } => {
                let lo = d.spec().lower[0];
                let hi = d.spec().upper[0];
                if !(offset + slope * lo >= 0.0 && offset + slope * hi >= 0.0) {
                    return Err(fail("coefficient", "slope", "coefficient would be negative on the domain".into()));
                }
            }
            _ => {}
        }
        match &self.signal {
            SignalSource::Power { exponent } if !(*exponent > 0.0) => {
                return Err(fail("signal", "exponent", "must be positive so that v(0) = 0".into()));
            }
            SignalSource::EarlyBump { fraction } if !(*fraction > 0.0 && *fraction <= 1.0) => {
                return Err(fail("signal", "fraction", "must lie in (0, 1]".into()));
            }
            _ => {}
        }
        match &self.source {
            ProfileSource::Hat { center, width } => {
                if !(*width > 0.0) {
                    return Err(fail("source", "width", "must be positive".into()));
                }
                if center.as_ref().is_some_and(|c| c.len() != d.dimension) {
                    return Err(fail("source", "center", format!("needs {} entries", d.dimension)));
                }
            }
            ProfileSource::SineMode { mode } if *mode == 0 => {
                return Err(fail("source", "mode", "must be at least 1".into()));
            }
            _ => {}
        }
        let s = &self.sensor;
        if !(s.start >= 0.0 && s.end <= 1.0 && s.start < s.end) {
            return Err(fail("sensor", "start", "window must satisfy 0 <= start < end <= 1".into()));
        }
        if self.basis.kind == BasisKind::Sine && self.basis.count.unwrap_or(0) == 0 {
            return Err(fail("basis", "count", "sine basis needs a positive count".into()));
        }
        if !(self.basis.mask_threshold >= 0.0) {
            return Err(fail("basis", "mask_threshold", "must be nonnegative".into()));
        }
        if !(self.noise.level >= 0.0) {
            return Err(fail("noise", "level", "must be nonnegative".into()));
        }
        if let Err(e) = self.limit.validate() {
            return Err(fail("limit", "beta", e.to_string()));
        }
        Ok(())
    }

    /// The standard one-dimensional scenario used by the examples and tests.
    pub fn standard() -> Self {
        Scenario {
            seed: 7,
            output: None,
            domain: DomainSection {
                dimension: 1,
                lower: None,
                upper: None,
                spacing: 1.0 / 64.0,
                horizon: 4.0 / 64.0,
                accessible: FaceName::Right,
            },
            kernel: KernelSection {
                form: KernelForm::Power,
                beta: 0.25,
                gamma_lower: 1.0,
                gamma_upper: None,
                symmetric_pairing: false,
            },
            tensor: TensorField::default(),
            time: TimeSection {
                final_time: 1.0,
                steps: 64,
            },
            model: Model::Nde,
            coefficient: CoefficientSource::OnePlusSin2,
            signal: SignalSource::Ramp,
            source: ProfileSource::default(),
            sensor: SensorSection::default(),
            basis: BasisSection::default(),
            noise: NoiseSection::default(),
            verify: VerifySection::default(),
            limit: LimitCheckSpec::default(),
        }
    }
}
