use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifiers::{ModelConfig, ModelFamily};
use crate::error::{Error, Result};
use crate::evaluation::{all_set_names, Variant};
use crate::homals::HomalsOptions;
use crate::psychometrics::{RetentionRule, Rotation};
use crate::survey::{ClassMode, DebtSplit, GeneratorConfig, SurveySchema, VariableGroup, VariableKind};

/// Everything a run needs. Serialized in full into the run manifest, so no
/// default stays hidden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; every random stream of every stage is derived from it.
    pub seed: u64,
    pub paths: PathsConfig,
    #[serde(default)]
    pub cleaning: CleaningConfig,
    #[serde(default)]
    pub homals: HomalsConfig,
    #[serde(default)]
    pub efa: EfaConfig,
    #[serde(default)]
    pub labelling: LabellingConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    /// Generator settings used by `synth`.
    #[serde(default)]
    pub synth: GeneratorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub schema: PathBuf,
    pub data: PathBuf,
    /// Run directory; every stage writes below it.
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningConfig {
    /// Variables whose uncertain answers count towards removal. Empty means
    /// no row is removed.
    pub watch_list: Vec<String>,
    pub min_hits: usize,
    /// Category points further than this multiple of the median distance
    /// from the center of the category cloud are flagged.
    pub flag_multiple: f64,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            watch_list: Vec::new(),
            min_hits: 2,
            flag_multiple: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomalsConfig {
    pub dims: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for HomalsConfig {
    fn default() -> Self {
        let d = HomalsOptions::default();
        HomalsConfig {
            dims: d.dims,
            tol: d.tol,
            max_iter: d.max_iter,
        }
    }
}

impl HomalsConfig {
    pub fn options(&self, seed: u64) -> HomalsOptions {
        HomalsOptions {
            dims: self.dims,
            tol: self.tol,
            max_iter: self.max_iter,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EfaConfig {
    pub n_random: usize,
    pub retention: RetentionRule,
    pub tol: f64,
    pub max_iter: usize,
    pub rotation: Rotation,
    /// Fixed factor count; the parallel-analysis count when absent.
    pub factors: Option<usize>,
    /// Display names for the factors, in factor order.
    pub factor_names: Vec<String>,
}

impl Default for EfaConfig {
    fn default() -> Self {
        EfaConfig {
            n_random: 200,
            retention: RetentionRule::Percentile(95.0),
            tol: 1e-6,
            max_iter: 1000,
            rotation: Rotation::Varimax,
            factors: None,
            factor_names: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabellingConfig {
    pub modes: Vec<ClassMode>,
    pub debt_split: DebtSplit,
    /// Target category meaning "no debt"; the first category when absent.
    pub no_debt: Option<String>,
    /// In three-class mode, undersample NoDebt to the size of the largest
    /// other class.
    pub undersample: bool,
}

impl Default for LabellingConfig {
    fn default() -> Self {
        LabellingConfig {
            modes: vec![ClassMode::TwoClass, ClassMode::ThreeClass],
            debt_split: DebtSplit::Median,
            no_debt: None,
            undersample: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub k: usize,
    pub repeats: usize,
    pub alpha: f64,
    pub families: Vec<ModelFamily>,
    pub variants: Vec<Variant>,
    pub models: ModelConfig,
    /// Predictor sets to evaluate; step2 and step3 are always required.
    pub sets: Vec<String>,
    /// Fit a forest on all Step 3 predictors and report Gini importance.
    pub importance: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            k: 10,
            repeats: 10,
            alpha: 0.025,
            families: ModelFamily::ALL.to_vec(),
            variants: vec![Variant::Original, Variant::Transformed],
            models: ModelConfig::default(),
            sets: all_set_names(),
            importance: true,
        }
    }
}

/// Set `key` (dotted path) to `raw` in `table`. `raw` is read as a TOML
/// value when it parses as one and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::validation(format!("override `{assignment}` is not of the form key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(Error::validation(format!("override `{assignment}` has an empty key")));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(Error::validation(format!("override `{key}`: `{part}` is not a table"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl PipelineConfig {
    /// Parse TOML text after applying `overrides`. Relative paths stay as written.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::validation(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file. Relative paths are resolved against the file's directory.
    pub fn from_path(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text, overrides).map_err(|e| e.context(&path.display().to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.schema = resolve(base, &cfg.paths.schema);
        cfg.paths.data = resolve(base, &cfg.paths.data);
        cfg.paths.out = resolve(base, &cfg.paths.out);
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks that need no schema.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::validation(m));
        if self.cleaning.min_hits == 0 {
            return bad("cleaning.min_hits must be at least 1".into());
        }
        if !(self.cleaning.flag_multiple > 0.0) {
            return bad("cleaning.flag_multiple must be positive".into());
        }
        if self.homals.dims == 0 {
            return bad("homals.dims must be at least 1".into());
        }
        if self.efa.n_random < 20 {
            return bad(format!("efa.n_random must be at least 20, got {}", self.efa.n_random));
        }
        if let RetentionRule::Percentile(q) = self.efa.retention {
            if !(q > 0.0 && q < 100.0) {
                return bad(format!("efa.retention percentile must lie in (0, 100), got {q}"));
            }
        }
        if let Some(m) = self.efa.factors {
            if m == 0 {
                return bad("efa.factors must be at least 1".into());
            }
            if !self.efa.factor_names.is_empty() && self.efa.factor_names.len() != m {
                return bad(format!(
                    "efa.factor_names has {} names for {m} factors",
                    self.efa.factor_names.len()
                ));
            }
        }
        if self.labelling.modes.is_empty() {
            return bad("labelling.modes is empty".into());
        }
        let e = &self.evaluation;
        if e.k < 2 || e.repeats == 0 {
            return bad(format!("evaluation needs k >= 2 and repeats >= 1, got k={} repeats={}", e.k, e.repeats));
        }
        if !(e.alpha > 0.0 && e.alpha < 1.0) {
            return bad(format!("evaluation.alpha must lie in (0, 1), got {}", e.alpha));
        }
        if e.families.is_empty() || e.variants.is_empty() {
            return bad("evaluation needs at least one family and one variant".into());
        }
        let known = all_set_names();
        if let Some(s) = e.sets.iter().find(|s| !known.contains(s)) {
            return bad(format!("evaluation.sets: unknown set `{s}` (known: {})", known.join(", ")));
        }
        if !(e.sets.iter().any(|s| s == "step2") && e.sets.iter().any(|s| s == "step3")) {
            return bad("evaluation.sets must include step2 and step3".into());
        }
        Ok(())
    }

    /// Checks against the survey schema.
    pub fn validate_against(&self, schema: &SurveySchema) -> Result<()> {
        for v in &self.cleaning.watch_list {
            schema.require(v).map_err(|e| e.context("cleaning.watch_list"))?;
        }
        let items = schema.group_members(VariableGroup::Psychological);
        if items.len() < 3 {
            return Err(Error::validation(format!(
                "the schema has {} psychological item(s); factor analysis needs at least 3",
                items.len()
            )));
        }
        for name in &items {
            let v = schema.variable(schema.require(name)?);
            if v.kind != VariableKind::Likert {
                return Err(Error::validation(format!("psychological variable `{name}` is not likert")));
            }
        }
        if let Some(m) = self.efa.factors {
            if m >= items.len() {
                return Err(Error::validation(format!(
                    "efa.factors = {m} needs more than {m} psychological items, found {}",
                    items.len()
                )));
            }
        }
        for g in [VariableGroup::Demographic, VariableGroup::Financial] {
            if schema.group_members(g).is_empty() {
                return Err(Error::validation(format!("the schema has no {} variables", g.as_str())));
            }
        }
        if let Some(label) = &self.labelling.no_debt {
            let t = schema.variable(schema.target_index());
            if t.category_index(label).is_none() {
                return Err(Error::validation(format!("labelling.no_debt `{label}` is not a category of `{}`", t.name)));
            }
        }
        Ok(())
    }
}
