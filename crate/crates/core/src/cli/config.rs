//! Experiment configuration: JSON, schema-checked, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{Field, ParameterBox, ParametricModel};
use crate::piecewise::{Criterion, SplitStrategy};
use crate::sensing::{Dictionary, Sensor, SensorKind};
use crate::testbed;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Output directory, relative to the config file; defaults to `runs/<name>`.
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub model: ModelSpec,
    pub training: TrainingSpec,
    pub sensors: SensorSpec,
    pub method: MethodSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Testbed {
    #[serde(rename = "elliptic_2d")]
    Elliptic2d,
    RotatingLayers,
    MisalignedOffset,
    TwoBranch,
}

/// Either a named testbed or explicit piecewise-constant tables.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub n_h: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub testbed: Option<Testbed>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abar: Option<Field>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<Vec<Field>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Field>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_terms: Option<Vec<Field>>,
    #[serde(rename = "Y", default, skip_serializing_if = "Option::is_none")]
    pub y: Option<ParameterBox>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    /// Points per axis of the training grid.
    pub grid: Vec<usize>,
    /// Cells per axis of the midpoint grid used for held-out evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub held_out: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionarySpec {
    pub kind: SensorKind,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
}

/// A uniform dictionary or explicit placements; `select` picks dictionary members.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<DictionarySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placements: Option<Vec<Sensor>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub select: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub level: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PbdwParams {
    pub n: usize,
    /// Use the parameter-box center as offset.
    #[serde(default)]
    pub affine: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineOptParams {
    /// Dimension of the greedy `Z_N`.
    pub n: usize,
    pub iters: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stall_tol: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmpVariant {
    Collective,
    WorstCase,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmpParams {
    pub n: usize,
    pub beta_star: f64,
    #[serde(default = "one")]
    pub kappa: f64,
    pub m_max: usize,
    pub variant: OmpVariant,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NestedParams {
    pub beta_lower: f64,
    pub eps_stop: f64,
    pub n_max: usize,
    pub m_max: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeimParams {
    pub n_max: usize,
    pub eps_stop: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum CriterionSpec {
    Sigma(f64),
    EpsMu { eps: f64, mu: f64 },
}

impl From<CriterionSpec> for Criterion {
    fn from(c: CriterionSpec) -> Self {
        match c {
            CriterionSpec::Sigma(s) => Criterion::Sigma(s),
            CriterionSpec::EpsMu { eps, mu } => Criterion::EpsMu { eps, mu },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategySpec {
    FullDyadic,
    GreedyCoordinate,
}

impl From<StrategySpec> for SplitStrategy {
    fn from(s: StrategySpec) -> Self {
        match s {
            StrategySpec::FullDyadic => SplitStrategy::FullDyadic,
            StrategySpec::GreedyCoordinate => SplitStrategy::GreedyCoordinate,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionSpec {
    Oracle,
    Ideal,
    Surrogate,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseParams {
    pub criterion: CriterionSpec,
    pub strategy: StrategySpec,
    pub budget: usize,
    pub selection: SelectionSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkParams {
    pub n: usize,
    pub sigma: f64,
    pub budget: usize,
    pub strategy: StrategySpec,
    pub iters: usize,
    pub sigmas: Vec<f64>,
    pub width_order: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSpec {
    Pbdw(PbdwParams),
    AffineOpt(AffineOptParams),
    OmpPlace(OmpParams),
    Nested(NestedParams),
    Geim(GeimParams),
    Piecewise(PiecewiseParams),
    Benchmark(BenchmarkParams),
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Pbdw(_) => "pbdw",
            MethodSpec::AffineOpt(_) => "affine_opt",
            MethodSpec::OmpPlace(_) => "omp_place",
            MethodSpec::Nested(_) => "nested",
            MethodSpec::Geim(_) => "geim",
            MethodSpec::Piecewise(_) => "piecewise",
            MethodSpec::Benchmark(_) => "benchmark",
        }
    }
}

fn schema(path: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Re-labels a validation failure with the config path that caused it.
fn at<T>(path: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| schema(path, e.to_string()))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            schema(&path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Output directory resolved against the config file's directory.
    pub fn output_dir(&self, config_path: &Path) -> PathBuf {
        let base = config_path.parent().unwrap_or(Path::new("."));
        match &self.output {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => base.join(p),
            None => base.join("runs").join(&self.name),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(schema("name", "must be a nonempty plain file name"));
        }
        let m = &self.model;
        if m.n_h == 0 {
            return Err(schema("model.n_h", "must be positive"));
        }
        let d = match m.testbed {
            Some(_) => {
                if m.abar.is_some() || m.psi.is_some() || m.f.is_some() || m.f_terms.is_some() || m.y.is_some() {
                    return Err(schema("model.testbed", "a named testbed excludes explicit tables"));
                }
                self.build_model()?.param_dim()
            }
            None => {
                let y = m.y.as_ref().ok_or_else(|| schema("model.Y", "missing"))?;
                if y.lo.len() != y.hi.len() {
                    return Err(schema("model.Y.hi", "length differs from Y.lo"));
                }
                if let Some(j) = (0..y.lo.len()).find(|&j| !(y.lo[j] < y.hi[j])) {
                    return Err(schema(
                        "model.Y.lo",
                        format!("requires lo < hi on every axis, violated on axis {j}"),
                    ));
                }
                at("model.Y", y.validate())?;
                for (name, f) in [("abar", &m.abar), ("f", &m.f)] {
                    let f = f.as_ref().ok_or_else(|| schema(&format!("model.{name}"), "missing"))?;
                    at(&format!("model.{name}"), Field::new(f.breaks.clone(), f.values.clone()))?;
                }
                let psi = m.psi.as_ref().ok_or_else(|| schema("model.psi", "missing"))?;
                if psi.len() != y.dim() {
                    return Err(schema("model.psi", format!("expected {} fields, one per parameter", y.dim())));
                }
                for (j, f) in psi.iter().chain(m.f_terms.iter().flatten()).enumerate() {
                    at(&format!("model.psi[{j}]"), Field::new(f.breaks.clone(), f.values.clone()))?;
                }
                if let Some(ft) = &m.f_terms {
                    if ft.len() != y.dim() {
                        return Err(schema("model.f_terms", format!("expected {} fields", y.dim())));
                    }
                }
                y.dim()
            }
        };
        if self.training.grid.len() != d || self.training.grid.contains(&0) {
            return Err(schema("training.grid", format!("expected {d} positive entries")));
        }
        if let Some(h) = &self.training.held_out {
            if h.len() != d || h.contains(&0) {
                return Err(schema("training.held_out", format!("expected {d} positive entries")));
            }
        }
        let s = &self.sensors;
        match (&s.dictionary, &s.placements) {
            (Some(dict), None) => {
                if dict.count == 0 {
                    return Err(schema("sensors.dictionary.count", "must be positive"));
                }
                if dict.kind == SensorKind::LocalAverage && dict.width.is_none_or(|w| !(w > 0.0)) {
                    return Err(schema("sensors.dictionary.width", "local averages need a positive width"));
                }
                if let Some(sel) = &s.select {
                    if let Some(i) = sel.iter().find(|&&i| i >= dict.count) {
                        return Err(schema("sensors.select", format!("index {i} outside the dictionary")));
                    }
                }
            }
            (None, Some(p)) => {
                if p.is_empty() {
                    return Err(schema("sensors.placements", "must not be empty"));
                }
                if s.select.is_some() {
                    return Err(schema("sensors.select", "only valid with a dictionary"));
                }
            }
            _ => return Err(schema("sensors", "give exactly one of `dictionary` or `placements`")),
        }
        if let MethodSpec::Piecewise(p) = &self.method {
            if p.selection == SelectionSpec::Oracle && p.noise.is_some() {
                return Err(schema("method.piecewise.selection", "oracle selection cannot be combined with noise"));
            }
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<ParametricModel> {
        let m = &self.model;
        match m.testbed {
            Some(Testbed::Elliptic2d) => testbed::elliptic_2d(m.n_h),
            Some(Testbed::RotatingLayers) => testbed::rotating_layers(m.n_h),
            Some(Testbed::MisalignedOffset) => testbed::misaligned_offset(m.n_h),
            Some(Testbed::TwoBranch) => testbed::two_branch(m.n_h),
            None => ParametricModel::with_affine_rhs(
                m.n_h,
                m.abar.clone().expect("validated"),
                m.psi.clone().expect("validated"),
                m.f.clone().expect("validated"),
                m.f_terms.clone().unwrap_or_default(),
                m.y.clone().expect("validated"),
            ),
        }
    }

    /// The sensor dictionary (explicit placements form their own dictionary).
    pub fn build_dictionary(&self, model: &ParametricModel) -> Result<Dictionary> {
        let space = model.space();
        match (&self.sensors.dictionary, &self.sensors.placements) {
            (Some(d), _) => match d.kind {
                SensorKind::PointEval => Dictionary::uniform_points(space, d.count),
                SensorKind::LocalAverage => Dictionary::uniform_averages(space, d.count, d.width.unwrap_or(0.0)),
            },
            (None, Some(p)) => Dictionary::new(space, p.clone()),
            (None, None) => Err(schema("sensors", "missing")),
        }
    }

    /// Indices of the sensors used by fixed-sensor methods.
    pub fn selected_sensors(&self, dict: &Dictionary) -> Vec<usize> {
        self.sensors.select.clone().unwrap_or_else(|| (0..dict.len()).collect())
    }
}
