use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;

use super::config::PipelineConfig;
use super::manifest::{sha256_file, sha256_hex, RunManifest, StageRecord};
use crate::classifiers::{gini_importance, train_random_forest, FittedModel, TrainingMatrix};
use crate::error::{Error, Result};
use crate::evaluation::{
    compare_distributions, dummy_matrix, make_cv_plan, run_stepwise, shifts_csv, undersample, StepwiseConfig,
    StepwiseData, StepwiseResult, Variant,
};
use crate::homals::{category_diagnostics, csv_field, fit_homals};
use crate::numeric::derive_seed;
use crate::plot::{category_plot, grouped_bars, scree_plot};
use crate::psychometrics::{
    correlation, cronbach_alpha, extract_factors, factor_scores, parallel_analysis, scales_from_model, varimax,
    Rotation,
};
use crate::survey::{
    drop_systematic_nonresponse, encode, generate_synthetic_survey, label_rows, load_dataset, ClassMode, Dataset,
    Encoding, GeneratorConfig, SurveySchema, VariableGroup,
};

pub const CLEANED: &str = "clean/cleaned.csv";
pub const ANALYSIS: &str = "factors/analysis.csv";

/// Stage tags mixed into the master seed.
const CLEAN_STREAM: u64 = 1;
const FACTORS_STREAM: u64 = 2;
const EVALUATE_STREAM: u64 = 3;

const GROUPS: [(VariableGroup, &str); 2] = [
    (VariableGroup::Demographic, "demographic"),
    (VariableGroup::Financial, "financial"),
];

/// Collects a stage's inputs and outputs and records them in the manifest.
struct StageRun<'a> {
    name: &'static str,
    cfg: &'a PipelineConfig,
    run_dir: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    started: Instant,
}

impl<'a> StageRun<'a> {
    fn start(name: &'static str, cfg: &'a PipelineConfig) -> Result<Self> {
        let run_dir = cfg.paths.out.clone();
        std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
        Ok(StageRun {
            name,
            cfg,
            run_dir,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started: Instant::now(),
        })
    }

    fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.insert(role.to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Path of an earlier stage's artifact, or a missing-artifact error naming that stage.
    fn artifact(&mut self, stage: &str, rel: &str) -> Result<PathBuf> {
        let path = self.run_dir.join(rel);
        if !path.is_file() {
            return Err(Error::MissingArtifact(vec![format!("{stage}: {rel}")]));
        }
        self.input(rel, &path)?;
        Ok(path)
    }

    fn write(&mut self, rel: &str, contents: &str) -> Result<()> {
        let path = self.run_dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.outputs.insert(rel.to_string(), sha256_hex(contents.as_bytes()));
        Ok(())
    }

    fn finish(self) -> Result<Vec<String>> {
        let config = self.cfg.to_toml_string();
        let mut manifest = RunManifest::load(&self.run_dir)?.unwrap_or_else(|| RunManifest::new(config.clone()));
        manifest.tool_version = env!("CARGO_PKG_VERSION").to_string();
        manifest.config = config.clone();
        let files = self.outputs.keys().cloned().collect();
        manifest.stages.insert(
            self.name.to_string(),
            StageRecord {
                config_sha256: sha256_hex(config.as_bytes()),
                inputs: self.inputs,
                outputs: self.outputs,
                wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            },
        );
        manifest.save(&self.run_dir)?;
        Ok(files)
    }
}

fn load_inputs(cfg: &PipelineConfig, run: &mut StageRun) -> Result<SurveySchema> {
    let schema = SurveySchema::from_path(&cfg.paths.schema)?;
    cfg.validate_against(&schema)?;
    run.input("schema", &cfg.paths.schema)?;
    Ok(schema)
}

/// Files written by [`cmd_synth`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub schema: PathBuf,
    pub data: PathBuf,
    pub config: PathBuf,
    pub rows: usize,
}

/// Generate a synthetic survey into `dir`: schema, data, ground truth and a
/// ready-to-run `pipeline.toml` whose watch-list holds every variable with
/// uncertain categories.
pub fn cmd_synth(generator: &GeneratorConfig, seed: u64, dir: &Path) -> Result<SynthOutput> {
    let (data, truth) = generate_synthetic_survey(generator, seed)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: &str| -> Result<PathBuf> {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    };
    let schema = write("schema.toml", &data.schema().to_toml_string())?;
    let csv = write("survey.csv", &data.to_csv_string())?;
    write("truth_loadings.csv", &truth.loadings_csv())?;
    write("truth_effects.csv", &truth.effects_csv())?;
    write("truth_rows.csv", &truth.rows_csv(data.row_ids()))?;
    let mut cfg = PipelineConfig {
        seed,
        paths: super::config::PathsConfig {
            schema: "schema.toml".into(),
            data: "survey.csv".into(),
            out: "run".into(),
        },
        cleaning: Default::default(),
        homals: Default::default(),
        efa: Default::default(),
        labelling: Default::default(),
        evaluation: Default::default(),
        synth: generator.clone(),
    };
    cfg.cleaning.watch_list = generator.uncertain_variables();
    let config = write("pipeline.toml", &cfg.to_toml_string())?;
    Ok(SynthOutput {
        schema,
        data: csv,
        config,
        rows: data.n_rows(),
    })
}

/// What [`cmd_clean`] did.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanSummary {
    pub rows_before: usize,
    pub rows_after: usize,
    /// (group, variable, category) of every flagged category point.
    pub flagged: Vec<(String, String, String)>,
    pub files: Vec<String>,
}

/// Homals diagnostics per group on the raw data, then rule-based removal of
/// systematic non-responders and a representativeness check.
pub fn cmd_clean(cfg: &PipelineConfig) -> Result<CleanSummary> {
    clean(cfg).map_err(|e| e.in_stage("clean"))
}

fn clean(cfg: &PipelineConfig) -> Result<CleanSummary> {
    let mut run = StageRun::start("clean", cfg)?;
    let schema = load_inputs(cfg, &mut run)?;
    let data = load_dataset(&cfg.paths.schema, &cfg.paths.data)?;
    run.input("data", &cfg.paths.data)?;

    let mut counts = String::from("variable,group,uncertain\n");
    for (name, n) in data.uncertain_counts() {
        let g = schema.variable(schema.require(&name)?).group;
        let _ = writeln!(counts, "{},{},{n}", csv_field(&name), g.as_str());
    }
    run.write("clean/uncertain_counts.csv", &counts)?;

    let mut flagged = Vec::new();
    let mut flagged_csv = String::from("group,variable,category,uncertain,distance_from_center\n");
    for (gi, (group, tag)) in GROUPS.iter().enumerate() {
        let vars = schema.group_members(*group);
        let enc = encode(&data, &vars, Encoding::FullIndicator)?.drop_empty_columns();
        let opts = cfg.homals.options(derive_seed(cfg.seed, &[CLEAN_STREAM, gi as u64]));
        let sol = fit_homals(&enc, &opts).map_err(|e| e.context(&format!("{tag} homals")))?;
        let diag = category_diagnostics(&sol, cfg.cleaning.flag_multiple, |v, c| {
            schema
                .index_of(v)
                .map(|j| schema.variable(j).uncertain.iter().any(|u| u == c))
                .unwrap_or(false)
        });
        run.write(&format!("clean/homals_{tag}_coordinates.csv"), &sol.coordinates_csv())?;
        run.write(&format!("clean/homals_{tag}_loss.csv"), &sol.loss_csv())?;
        run.write(&format!("clean/homals_{tag}_diagnostics.csv"), &diag.to_csv())?;
        let title = format!("{} categories (homals)", capitalize(tag));
        run.write(&format!("clean/category_plot_{tag}.svg"), &category_plot(&title, &diag.points))?;
        for p in diag.flagged() {
            let _ = writeln!(
                flagged_csv,
                "{tag},{},{},{},{}",
                csv_field(&p.variable),
                csv_field(&p.category),
                u8::from(p.uncertain),
                p.distance_from_center
            );
            flagged.push((tag.to_string(), p.variable.clone(), p.category.clone()));
        }
    }
    run.write("clean/flagged_categories.csv", &flagged_csv)?;

    let (cleaned, report) = drop_systematic_nonresponse(&data, &cfg.cleaning.watch_list, cfg.cleaning.min_hits)?;
    run.write("clean/removal_report.csv", &report.to_csv_string())?;
    let mut vars = schema.group_members(VariableGroup::Demographic);
    vars.extend(schema.group_members(VariableGroup::Financial));
    let shifts = compare_distributions(&cleaned, &data, &vars)?;
    run.write("clean/representativeness.csv", &shifts_csv(&shifts))?;
    run.write(CLEANED, &cleaned.to_csv_string())?;
    let files = run.finish()?;
    Ok(CleanSummary {
        rows_before: report.rows_before,
        rows_after: report.rows_after,
        flagged,
        files,
    })
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Cleaned data plus numeric columns (factor scores) appended after the
/// schema columns. Floats use the shortest representation that parses back
/// to the same value.
pub fn write_analysis_table(data: &Dataset, names: &[String], values: &DMatrix<f64>) -> String {
    let base = data.to_csv_string();
    let mut out = String::with_capacity(base.len() * 2);
    for (r, line) in base.lines().enumerate() {
        out.push_str(line);
        if r == 0 {
            for n in names {
                let _ = write!(out, ",{}", csv_field(n));
            }
        } else {
            for c in 0..values.ncols() {
                let _ = write!(out, ",{}", values[(r - 1, c)]);
            }
        }
        out.push('\n');
    }
    out
}

/// Inverse of [`write_analysis_table`].
pub fn read_analysis_table(schema: SurveySchema, text: &str) -> Result<(Dataset, Vec<String>, DMatrix<f64>)> {
    let width = schema.len() + usize::from(schema.id_column.is_some());
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::load("analysis header", e.to_string()))?.clone();
    if header.len() < width {
        return Err(Error::load("analysis header", "fewer columns than the schema declares"));
    }
    let names: Vec<String> = header.iter().skip(width).map(str::to_string).collect();
    let mut base = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::load("analysis table", e.to_string());
    base.write_record(header.iter().take(width)).map_err(to_err)?;
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::load(format!("analysis row {}", r + 1), e.to_string()))?;
        base.write_record(rec.iter().take(width)).map_err(to_err)?;
        for (c, cell) in rec.iter().skip(width).enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::load(format!("analysis row {}, column `{}`", r + 1, names[c]), format!("`{cell}` is not a number"))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let bytes = base.into_inner().map_err(|e| Error::load("analysis table", e.to_string()))?;
    let data = Dataset::from_csv_reader(schema, bytes.as_slice())?;
    let m = DMatrix::from_row_slice(rows, names.len(), &values);
    Ok((data, names, m))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorsSummary {
    pub retained: usize,
    pub factors: usize,
    pub alphas: Vec<(String, f64)>,
    pub files: Vec<String>,
}

/// Scree and parallel analysis, principal-axis extraction, rotation,
/// reliability, and factor scores appended to the cleaned data.
pub fn cmd_factors(cfg: &PipelineConfig) -> Result<FactorsSummary> {
    factors(cfg).map_err(|e| e.in_stage("factors"))
}

fn factors(cfg: &PipelineConfig) -> Result<FactorsSummary> {
    let mut run = StageRun::start("factors", cfg)?;
    load_inputs(cfg, &mut run)?;
    let cleaned = run.artifact("clean", CLEANED)?;
    let data = load_dataset(&cfg.paths.schema, &cleaned)?;
    let items = data.schema().group_members(VariableGroup::Psychological);
    let enc = encode(&data, &items, Encoding::LikertNumeric)?;
    let r = correlation(&enc)?;
    let pa = parallel_analysis(&enc, cfg.efa.n_random, derive_seed(cfg.seed, &[FACTORS_STREAM]), cfg.efa.retention)?;
    let m = cfg.efa.factors.unwrap_or(pa.retained);
    if m == 0 {
        return Err(Error::validation(
            "parallel analysis retained no factors; set efa.factors to force a count",
        ));
    }
    let mut model = extract_factors(&r, m, cfg.efa.max_iter, cfg.efa.tol)?;
    if cfg.efa.rotation == Rotation::Varimax {
        model = varimax(&model, 1e-10);
    }
    let names: Vec<String> = if cfg.efa.factor_names.len() == m {
        cfg.efa.factor_names.clone()
    } else if cfg.efa.factor_names.is_empty() {
        (1..=m).map(|f| format!("Factor {f}")).collect()
    } else {
        return Err(Error::validation(format!(
            "efa.factor_names has {} names but {m} factors were extracted",
            cfg.efa.factor_names.len()
        )));
    };
    run.write("factors/scree.csv", &pa.to_csv())?;
    run.write("factors/scree.svg", &scree_plot("Scree plot and parallel analysis", &pa))?;
    run.write("factors/loadings.csv", &model.loadings_csv(&names))?;

    let mut summary = String::from("factor,ss_loadings,proportion_of_variance\n");
    for (f, name) in names.iter().enumerate() {
        let ss: f64 = model.loadings.column(f).iter().map(|l| l * l).sum();
        let _ = writeln!(summary, "{},{ss:.6},{:.6}", csv_field(name), ss / items.len() as f64);
    }
    run.write("factors/factor_summary.csv", &summary)?;

    let mut log = String::new();
    let _ = writeln!(log, "items: {}", items.len());
    let _ = writeln!(log, "rows: {}", data.n_rows());
    let _ = writeln!(log, "retention rule: {}", pa.rule);
    let _ = writeln!(log, "retained by parallel analysis: {}", pa.retained);
    let _ = writeln!(log, "factors extracted: {m}");
    let _ = writeln!(
        log,
        "rotation: {}",
        if model.rotation == Rotation::Varimax { "varimax" } else { "none" }
    );
    let _ = writeln!(log, "extraction converged: {} ({} iterations)", model.converged, model.iterations);
    let _ = writeln!(log, "variance explained: {:.4}", model.variance_explained);
    for w in &model.warnings {
        let _ = writeln!(log, "warning: {w}");
    }

    let scales: Vec<_> = scales_from_model(&model, &names)
        .into_iter()
        .filter(|s| {
            let keep = s.items.len() >= 2;
            if !keep {
                let _ = writeln!(log, "note: scale `{}` has fewer than two items; no alpha", s.name);
            }
            keep
        })
        .collect();
    let reliability = cronbach_alpha(&enc, &scales)?;
    run.write("factors/reliability.csv", &reliability.to_csv())?;
    run.write("factors/efa_log.txt", &log)?;

    let scores = factor_scores(&model, &enc)?;
    run.write(ANALYSIS, &write_analysis_table(&data, &names, &scores))?;
    let files = run.finish()?;
    Ok(FactorsSummary {
        retained: pa.retained,
        factors: m,
        alphas: reliability.scales.iter().map(|s| (s.name.clone(), s.alpha)).collect(),
        files,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateSummary {
    pub results: Vec<(ClassMode, StepwiseResult)>,
    pub files: Vec<String>,
}

/// The stepwise protocol for every configured class mode.
pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<EvaluateSummary> {
    evaluate(cfg).map_err(|e| e.in_stage("evaluate"))
}

fn evaluate(cfg: &PipelineConfig) -> Result<EvaluateSummary> {
    let mut run = StageRun::start("evaluate", cfg)?;
    let schema = load_inputs(cfg, &mut run)?;
    let path = run.artifact("factors", ANALYSIS)?;
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let (data, score_names, scores) = read_analysis_table(schema, &text)?;
    let e = &cfg.evaluation;
    let mut results = Vec::new();
    for (mi, &mode) in cfg.labelling.modes.iter().enumerate() {
        let tag = mode.as_str();
        let here = |err: Error| err.context(tag);
        let lab = label_rows(&data, mode, cfg.labelling.no_debt.as_deref(), &cfg.labelling.debt_split).map_err(here)?;
        let before = lab.counts();
        let mut keep: Vec<usize> = (0..data.n_rows()).collect();
        if mode == ClassMode::ThreeClass && cfg.labelling.undersample {
            let target = before[1..].iter().copied().max().unwrap_or(0);
            if target > 0 && before[0] > target {
                let seed = derive_seed(cfg.seed, &[EVALUATE_STREAM, mi as u64, 1]);
                keep = undersample(&lab.labels, 0, target, seed).map_err(here)?;
                let class: Vec<usize> = (0..data.n_rows()).filter(|&r| lab.labels[r] == 0).collect();
                let sub: Vec<usize> = keep.iter().copied().filter(|&r| lab.labels[r] == 0).collect();
                let mut vars = data.schema().group_members(VariableGroup::Demographic);
                vars.extend(data.schema().group_members(VariableGroup::Financial));
                let shifts = compare_distributions(&data.subset(&sub), &data.subset(&class), &vars).map_err(here)?;
                run.write(&format!("evaluate/{tag}/undersample_representativeness.csv"), &shifts_csv(&shifts))?;
            }
        }
        let labels: Vec<usize> = keep.iter().map(|&r| lab.labels[r]).collect();
        let mut counts = String::from("class,rows,used\n");
        for (k, name) in lab.class_names.iter().enumerate() {
            let used = labels.iter().filter(|&&l| l == k).count();
            let _ = writeln!(counts, "{name},{},{used}", before[k]);
        }
        run.write(&format!("evaluate/{tag}/class_counts.csv"), &counts)?;

        let sub = data.subset(&keep);
        let sd = StepwiseData::from_dataset(
            &sub,
            score_names.clone(),
            scores.select_rows(&keep),
            labels.clone(),
            lab.class_names.clone(),
        )
        .map_err(here)?;
        let plan = make_cv_plan(&labels, e.k, e.repeats, derive_seed(cfg.seed, &[EVALUATE_STREAM, mi as u64]))
            .map_err(here)?;
        let scfg = StepwiseConfig {
            families: e.families.clone(),
            variants: e.variants.clone(),
            models: e.models.clone(),
            homals: cfg.homals.options(0),
            alpha: e.alpha,
            sets: e.sets.clone(),
        };
        let res = run_stepwise(&sd, &plan, &scfg).map_err(here)?;
        run.write(&format!("evaluate/{tag}/cells.csv"), &res.cells_csv())?;
        run.write(&format!("evaluate/{tag}/summary.csv"), &res.summary_csv())?;
        run.write(&format!("evaluate/{tag}/significance.csv"), &res.significance_csv())?;
        run.write(&format!("evaluate/{tag}/groups.svg"), &groups_chart(&res, e.families.as_slice(), tag))?;
        run.write(&format!("evaluate/{tag}/steps.svg"), &steps_chart(&res, &scfg, tag))?;

        if e.importance {
            let (fin_names, fin) = dummy_matrix(&sd.financial);
            let (dem_names, dem) = dummy_matrix(&sd.demographic);
            let names: Vec<String> = fin_names.into_iter().chain(dem_names).chain(score_names.clone()).collect();
            let n = labels.len();
            let mut x = DMatrix::zeros(n, names.len());
            x.columns_mut(0, fin.ncols()).copy_from(&fin);
            x.columns_mut(fin.ncols(), dem.ncols()).copy_from(&dem);
            x.columns_mut(fin.ncols() + dem.ncols(), sd.psychological.ncols()).copy_from(&sd.psychological);
            let tm = TrainingMatrix::new(names, lab.class_names.clone(), x, labels).map_err(here)?;
            let seed = derive_seed(cfg.seed, &[EVALUATE_STREAM, mi as u64, 2]);
            let forest = train_random_forest(&tm, &e.models.forest, seed).map_err(here)?;
            let imp = gini_importance(&FittedModel::Forest(forest))?;
            run.write(&format!("evaluate/{tag}/importance.csv"), &imp.top_csv(imp.values.len()))?;
            run.write(&format!("evaluate/{tag}/importance_summary.csv"), &imp.summary_csv())?;
        }
        results.push((mode, res));
    }
    let files = run.finish()?;
    Ok(EvaluateSummary { results, files })
}

fn mean_acc(res: &StepwiseResult, variant: Variant, set: &str, family: crate::classifiers::ModelFamily) -> Option<f64> {
    res.entry(variant, set, family).map(|e| e.metrics.mean_accuracy())
}

/// Mean accuracy of each single group, original and transformed.
fn groups_chart(res: &StepwiseResult, families: &[crate::classifiers::ModelFamily], tag: &str) -> String {
    let slots = [
        ("Financial", Variant::Original, "step1"),
        ("Demographic", Variant::Original, "demographic"),
        ("Psychological", Variant::Original, "psychological"),
        ("Financial dims", Variant::Transformed, "step1"),
        ("Demographic dims", Variant::Transformed, "demographic"),
    ];
    let present: Vec<_> = slots
        .iter()
        .filter(|(_, v, s)| families.iter().any(|&f| res.entry(*v, s, f).is_some()))
        .collect();
    let groups: Vec<String> = present.iter().map(|(g, _, _)| g.to_string()).collect();
    let series: Vec<String> = families.iter().map(|f| f.to_string()).collect();
    let values: Vec<Vec<f64>> = families
        .iter()
        .map(|&f| present.iter().map(|(_, v, s)| mean_acc(res, *v, s, f).unwrap_or(0.0)).collect())
        .collect();
    grouped_bars(&format!("Single groups ({tag})"), "Mean accuracy", &groups, &series, &values)
}

/// Mean accuracy per step for every family and variant.
fn steps_chart(res: &StepwiseResult, cfg: &StepwiseConfig, tag: &str) -> String {
    let groups: Vec<String> = ["Step 1", "Step 2", "Step 3"].iter().map(|s| s.to_string()).collect();
    let mut series = Vec::new();
    let mut values = Vec::new();
    for &v in &cfg.variants {
        for &f in &cfg.families {
            series.push(format!("{f} ({})", v.as_str()));
            values.push(
                ["step1", "step2", "step3"]
                    .iter()
                    .map(|s| mean_acc(res, v, s, f).unwrap_or(0.0))
                    .collect(),
            );
        }
    }
    grouped_bars(&format!("Stepwise accuracy ({tag})"), "Mean accuracy", &groups, &series, &values)
}
