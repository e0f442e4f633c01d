use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::CvPlan;
use super::metrics::{CellMetrics, Confusion, FoldMetrics};
use super::stats::{paired_t_test, TTest};
use crate::classifiers::{fit_model, ModelConfig, ModelFamily, TrainingMatrix};
use crate::error::{Error, Result};
use crate::homals::{fit_homals_codes, CategoryCodes, HomalsOptions};
use crate::numeric::derive_seed;
use crate::survey::{dummy_name, Dataset, VariableGroup};

/// How demographic and financial variables enter the models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Reference-coded dummy variables.
    Original,
    /// Homals object scores per group, fitted on the training folds.
    Transformed,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::Transformed => "transformed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    Financial,
    Demographic,
    Psychological,
}

/// A named predictor set evaluated by the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictorSet {
    pub name: &'static str,
    pub groups: &'static [Group],
}

pub const STEP1: PredictorSet = PredictorSet {
    name: "step1",
    groups: &[Group::Financial],
};
pub const STEP2: PredictorSet = PredictorSet {
    name: "step2",
    groups: &[Group::Financial, Group::Demographic],
};
pub const STEP3: PredictorSet = PredictorSet {
    name: "step3",
    groups: &[Group::Financial, Group::Demographic, Group::Psychological],
};

/// Cumulative steps followed by the single-group baselines not already
/// covered (Step 1 is the financial group on its own).
pub const PREDICTOR_SETS: [PredictorSet; 5] = [
    STEP1,
    STEP2,
    STEP3,
    PredictorSet {
        name: "demographic",
        groups: &[Group::Demographic],
    },
    PredictorSet {
        name: "psychological",
        groups: &[Group::Psychological],
    },
];

/// Predictor groups and labels for the stepwise protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct StepwiseData {
    pub demographic: CategoryCodes,
    pub financial: CategoryCodes,
    pub psychological_names: Vec<String>,
    pub psychological: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

/// Codes of `variables` taken straight from the dataset (all schema categories).
pub fn category_codes(data: &Dataset, variables: &[String]) -> Result<CategoryCodes> {
    let idx: Vec<usize> = variables.iter().map(|v| data.schema().require(v)).collect::<Result<_>>()?;
    Ok(CategoryCodes {
        variables: variables.to_vec(),
        categories: idx.iter().map(|&i| data.schema().variable(i).categories.clone()).collect(),
        codes: (0..data.n_rows())
            .map(|r| idx.iter().map(|&i| data.value(r, i)).collect())
            .collect(),
    })
}

impl StepwiseData {
    /// Demographic and financial groups from the schema, psychological
    /// predictors supplied as numeric columns (factor scores).
    pub fn from_dataset(
        data: &Dataset,
        psychological_names: Vec<String>,
        psychological: DMatrix<f64>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let n = data.n_rows();
        if psychological.nrows() != n || labels.len() != n {
            return Err(Error::validation("predictor groups and labels disagree on row count"));
        }
        let dem = data.schema().group_members(VariableGroup::Demographic);
        let fin = data.schema().group_members(VariableGroup::Financial);
        if dem.is_empty() || fin.is_empty() || psychological.ncols() == 0 {
            return Err(Error::validation("every predictor group needs at least one variable"));
        }
        Ok(StepwiseData {
            demographic: category_codes(data, &dem)?,
            financial: category_codes(data, &fin)?,
            psychological_names,
            psychological,
            labels,
            class_names,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    fn codes(&self, g: Group) -> &CategoryCodes {
        match g {
            Group::Demographic => &self.demographic,
            Group::Financial => &self.financial,
            Group::Psychological => unreachable!("psychological predictors are numeric"),
        }
    }
}

/// Reference-coded dummies (first category dropped) for every row.
pub fn dummy_matrix(codes: &CategoryCodes) -> (Vec<String>, DMatrix<f64>) {
    let mut names = Vec::new();
    let mut cols = Vec::new();
    for (j, var) in codes.variables.iter().enumerate() {
        for (c, cat) in codes.categories[j].iter().enumerate().skip(1) {
            names.push(dummy_name(var, cat));
            cols.push((j, c));
        }
    }
    let m = DMatrix::from_fn(codes.n_rows(), cols.len(), |r, k| {
        let (j, c) = cols[k];
        f64::from(codes.codes[r][j] == c)
    });
    (names, m)
}

/// Fit homals on the `train` rows only and place both train and test rows.
/// Categories without training members are dropped from the fit, and test
/// rows using them are placed at the origin for that variable.
pub fn homals_features(
    codes: &CategoryCodes,
    train: &[usize],
    test: &[usize],
    opts: &HomalsOptions,
    prefix: &str,
) -> Result<(Vec<String>, DMatrix<f64>, DMatrix<f64>)> {
    let mut vars = Vec::new();
    let mut maps = Vec::new();
    for j in 0..codes.n_vars() {
        let mut present = vec![false; codes.categories[j].len()];
        for &r in train {
            present[codes.codes[r][j]] = true;
        }
        let kept: Vec<usize> = (0..present.len()).filter(|&c| present[c]).collect();
        if kept.len() < 2 {
            continue;
        }
        let mut map = vec![usize::MAX; present.len()];
        for (new, &old) in kept.iter().enumerate() {
            map[old] = new;
        }
        vars.push((j, kept));
        maps.push(map);
    }
    if vars.is_empty() {
        return Err(Error::validation(format!("no {prefix} variable varies in the training rows")));
    }
    let remap = |rows: &[usize]| -> Vec<Vec<usize>> {
        rows.iter()
            .map(|&r| vars.iter().zip(&maps).map(|((j, _), m)| m[codes.codes[r][*j]]).collect())
            .collect()
    };
    let fit_codes = CategoryCodes {
        variables: vars.iter().map(|(j, _)| codes.variables[*j].clone()).collect(),
        categories: vars
            .iter()
            .map(|(j, kept)| kept.iter().map(|&c| codes.categories[*j][c].clone()).collect())
            .collect(),
        codes: remap(train),
    };
    let sol = fit_homals_codes(&fit_codes, opts)?;
    let (names, train_x) = sol.transform(prefix);
    let test_x = sol.project(&remap(test));
    Ok((names, train_x, test_x))
}

/// Stepwise protocol settings.
#[derive(Debug, Clone, PartialEq)]
pub struct StepwiseConfig {
    pub families: Vec<ModelFamily>,
    pub variants: Vec<Variant>,
    pub models: ModelConfig,
    pub homals: HomalsOptions,
    pub alpha: f64,
    /// Names of the predictor sets to evaluate; must include step2 and step3.
    pub sets: Vec<String>,
}

/// Names of every predictor set, in protocol order.
pub fn all_set_names() -> Vec<String> {
    PREDICTOR_SETS.iter().map(|s| s.name.to_string()).collect()
}

fn chosen_sets(cfg: &StepwiseConfig) -> Result<Vec<&'static PredictorSet>> {
    for name in &cfg.sets {
        if !PREDICTOR_SETS.iter().any(|s| s.name == name) {
            return Err(Error::validation(format!("unknown predictor set `{name}`")));
        }
    }
    for needed in ["step2", "step3"] {
        if !cfg.sets.iter().any(|s| s == needed) {
            return Err(Error::validation(format!("predictor sets must include `{needed}`")));
        }
    }
    Ok(PREDICTOR_SETS.iter().filter(|s| cfg.sets.iter().any(|n| n == s.name)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepEntry {
    pub variant: Variant,
    pub set: &'static str,
    pub family: ModelFamily,
    pub metrics: FoldMetrics,
}

/// Step 3 against Step 2 for one family and variant.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTest {
    pub variant: Variant,
    pub family: ModelFamily,
    pub step2_mean: f64,
    pub step3_mean: f64,
    pub test: TTest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepwiseResult {
    pub class_names: Vec<String>,
    pub entries: Vec<StepEntry>,
    pub tests: Vec<StepTest>,
}

struct CellFeatures {
    names: Vec<String>,
    train: DMatrix<f64>,
    test: DMatrix<f64>,
}

fn hcat(parts: &[&CellFeatures]) -> CellFeatures {
    let names = parts.iter().flat_map(|p| p.names.clone()).collect();
    let cat = |pick: fn(&CellFeatures) -> &DMatrix<f64>| {
        let rows = pick(parts[0]).nrows();
        let cols: usize = parts.iter().map(|p| pick(p).ncols()).sum();
        let mut m = DMatrix::zeros(rows, cols);
        let mut at = 0;
        for p in parts {
            let x = pick(p);
            m.columns_mut(at, x.ncols()).copy_from(x);
            at += x.ncols();
        }
        m
    };
    CellFeatures {
        names,
        train: cat(|p| &p.train),
        test: cat(|p| &p.test),
    }
}

pub fn run_stepwise(data: &StepwiseData, plan: &CvPlan, cfg: &StepwiseConfig) -> Result<StepwiseResult> {
    if plan.n_rows() != data.n_rows() {
        return Err(Error::validation("CV plan was built for a different number of rows"));
    }
    if cfg.families.is_empty() || cfg.variants.is_empty() {
        return Err(Error::validation("need at least one model family and one variant"));
    }
    let sets = chosen_sets(cfg)?;
    let dummies = [Group::Financial, Group::Demographic].map(|g| dummy_matrix(data.codes(g)));
    let cells: Vec<(usize, usize)> = plan.cells().collect();
    let mut entries: Vec<StepEntry> = Vec::new();
    for &variant in &cfg.variants {
        // the psychological-only set does not depend on the variant
        let reuse = variant == Variant::Transformed && cfg.variants.contains(&Variant::Original);
        let per_cell: Vec<Result<Vec<Option<Confusion>>>> = cells
            .par_iter()
            .map(|&(repeat, fold)| evaluate_cell(data, plan, cfg, &sets, &dummies, variant, reuse, repeat, fold))
            .collect();
        let base = entries.len();
        for set in &sets {
            for &family in &cfg.families {
                entries.push(StepEntry {
                    variant,
                    set: set.name,
                    family,
                    metrics: FoldMetrics {
                        class_names: data.class_names.clone(),
                        cells: Vec::with_capacity(plan.n_cells()),
                    },
                });
            }
        }
        for (&(repeat, fold), result) in cells.iter().zip(per_cell) {
            for (slot, confusion) in result?.into_iter().enumerate() {
                let confusion = match confusion {
                    Some(c) => c,
                    None => {
                        let (set, family) = (entries[base + slot].set, entries[base + slot].family);
                        let prev = entries
                            .iter()
                            .find(|e| e.variant == Variant::Original && e.set == set && e.family == family)
                            .expect("original variant evaluated first");
                        prev.metrics.cells[entries[base + slot].metrics.cells.len()].confusion.clone()
                    }
                };
                entries[base + slot].metrics.cells.push(CellMetrics {
                    repeat,
                    fold,
                    confusion,
                });
            }
        }
        debug_assert!(entries[base..].iter().all(|e| e.metrics.cells.len() == plan.n_cells()));
    }
    let mut tests = Vec::new();
    for &variant in &cfg.variants {
        for &family in &cfg.families {
            let find = |set: &str| {
                entries
                    .iter()
                    .find(|e| e.variant == variant && e.family == family && e.set == set)
                    .expect("entry exists")
            };
            let (s2, s3) = (find("step2"), find("step3"));
            let test = paired_t_test(&s3.metrics.accuracies(), &s2.metrics.accuracies(), cfg.alpha)?;
            tests.push(StepTest {
                variant,
                family,
                step2_mean: s2.metrics.mean_accuracy(),
                step3_mean: s3.metrics.mean_accuracy(),
                test,
            });
        }
    }
    Ok(StepwiseResult {
        class_names: data.class_names.clone(),
        entries,
        tests,
    })
}

/// Confusions of every (set, family) pair for one CV cell, in
/// `sets` x `families` order. `None` marks a psychological-only
/// slot to be copied from the original variant.
#[allow(clippy::too_many_arguments)]
fn evaluate_cell(
    data: &StepwiseData,
    plan: &CvPlan,
    cfg: &StepwiseConfig,
    sets: &[&'static PredictorSet],
    dummies: &[(Vec<String>, DMatrix<f64>); 2],
    variant: Variant,
    reuse_psychological: bool,
    repeat: usize,
    fold: usize,
) -> Result<Vec<Option<Confusion>>> {
    let c = data.class_names.len();
    let train = plan.train_rows(repeat, fold);
    let test = plan.test_rows(repeat, fold);
    let seed = plan.cell_seed(repeat, fold);
    let here = |e: Error, what: &str| {
        e.context(&format!("{what}, {} variant, repeat {}, fold {}", variant.as_str(), repeat + 1, fold + 1))
    };
    let group = |g: Group, gi: usize| -> Result<CellFeatures> {
        match (g, variant) {
            (Group::Psychological, _) => Ok(CellFeatures {
                names: data.psychological_names.clone(),
                train: data.psychological.select_rows(&train),
                test: data.psychological.select_rows(&test),
            }),
            (_, Variant::Original) => {
                let (names, m) = &dummies[gi];
                Ok(CellFeatures {
                    names: names.clone(),
                    train: m.select_rows(&train),
                    test: m.select_rows(&test),
                })
            }
            (_, Variant::Transformed) => {
                let prefix = if g == Group::Financial { "Financial" } else { "Demographic" };
                let opts = HomalsOptions {
                    seed: derive_seed(seed, &[100 + gi as u64]),
                    ..cfg.homals
                };
                let (names, tr, te) = homals_features(data.codes(g), &train, &test, &opts, prefix)?;
                Ok(CellFeatures {
                    names,
                    train: tr,
                    test: te,
                })
            }
        }
    };
    let feats = [
        group(Group::Financial, 0).map_err(|e| here(e, "financial homals"))?,
        group(Group::Demographic, 1).map_err(|e| here(e, "demographic homals"))?,
        group(Group::Psychological, 2)?,
    ];
    let y_train: Vec<usize> = train.iter().map(|&i| data.labels[i]).collect();
    let y_test: Vec<usize> = test.iter().map(|&i| data.labels[i]).collect();
    let mut out = Vec::with_capacity(sets.len() * cfg.families.len());
    for set in sets {
        if reuse_psychological && set.name == "psychological" {
            out.extend(cfg.families.iter().map(|_| None));
            continue;
        }
        let parts: Vec<&CellFeatures> = set
            .groups
            .iter()
            .map(|g| match g {
                Group::Financial => &feats[0],
                Group::Demographic => &feats[1],
                Group::Psychological => &feats[2],
            })
            .collect();
        let x = hcat(&parts);
        let tm = TrainingMatrix::new(x.names.clone(), data.class_names.clone(), x.train, y_train.clone())
            .map_err(|e| here(e, set.name))?;
        for (fi, &family) in cfg.families.iter().enumerate() {
            let model = fit_model(family, &cfg.models, &tm, derive_seed(seed, &[fi as u64]))
                .map_err(|e| here(e, &format!("{} {}", set.name, family)))?;
            let pred = model.predict(&x.test);
            out.push(Some(Confusion::from_predictions(c, &y_test, &pred)));
        }
    }
    Ok(out)
}

impl StepwiseResult {
    pub fn entry(&self, variant: Variant, set: &str, family: ModelFamily) -> Option<&StepEntry> {
        self.entries
            .iter()
            .find(|e| e.variant == variant && e.set == set && e.family == family)
    }

    pub fn test(&self, variant: Variant, family: ModelFamily) -> Option<&StepTest> {
        self.tests.iter().find(|t| t.variant == variant && t.family == family)
    }

    fn metric_header(&self) -> String {
        let names = self.entries.first().map(|e| e.metrics.metric_names()).unwrap_or_default();
        names.join(",")
    }

    /// One row per (variant, set, family, repeat, fold).
    pub fn cells_csv(&self) -> String {
        let mut out = format!("variant,set,family,repeat,fold,accuracy,{}\n", self.metric_header());
        for e in &self.entries {
            let prefix = format!("{},{},{},", e.variant.as_str(), e.set, e.family);
            e.metrics.write_rows(&mut out, &prefix);
        }
        out
    }

    /// Mean and sd of accuracy plus mean per-class metrics per configuration.
    pub fn summary_csv(&self) -> String {
        let header: Vec<String> = self
            .entries
            .first()
            .map(|e| e.metrics.metric_names().iter().map(|m| format!("mean_{m}")).collect())
            .unwrap_or_default();
        let mut out = format!(
            "variant,set,family,cells,mean_accuracy,sd_accuracy,{}\n",
            header.join(",")
        );
        for e in &self.entries {
            let _ = write!(
                out,
                "{},{},{},{},{:.6},{:.6}",
                e.variant.as_str(),
                e.set,
                e.family,
                e.metrics.cells.len(),
                e.metrics.mean_accuracy(),
                e.metrics.sd_accuracy()
            );
            for v in e.metrics.mean_metrics() {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
        out
    }

    /// Step 3 vs Step 2 paired tests, one row per variant and family.
    pub fn significance_csv(&self) -> String {
        let mut out = String::from("variant,family,step2_mean,step3_mean,mean_difference,t,df,p_value,alpha,significant\n");
        for t in &self.tests {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.4},{},{:.4e},{},{}",
                t.variant.as_str(),
                t.family,
                t.step2_mean,
                t.step3_mean,
                t.test.mean_difference,
                t.test.t,
                t.test.df,
                t.test.p,
                t.test.alpha,
                t.test.significant
            );
        }
        out
    }
}
