use std::fmt::Write as _;
use std::path::Path;

use super::config::PipelineConfig;
use super::manifest::{sha256_hex, RunManifest};
use super::stages::CLEANED;
use crate::error::{Error, Result};

pub const REPORT_FILE: &str = "report.md";

const STAGES: [&str; 3] = ["clean", "factors", "evaluate"];

/// Assemble `report.md` from the artifacts of a completed run.
///
/// The report holds no timestamps, timings or absolute paths, so two runs
/// with the same config and seed produce identical bytes.
pub fn cmd_report(run_dir: &Path) -> Result<String> {
    report(run_dir).map_err(|e| e.in_stage("report"))
}

fn report(run_dir: &Path) -> Result<String> {
    let Some(manifest) = RunManifest::load(run_dir)? else {
        return Err(Error::MissingArtifact(STAGES.iter().map(|s| format!("{s}: manifest.json")).collect()));
    };
    let mut missing: Vec<String> = STAGES
        .iter()
        .filter(|s| !manifest.stages.contains_key(**s))
        .map(|s| format!("{s}: stage has not been run"))
        .collect();
    missing.extend(manifest.verify(run_dir));
    if !missing.is_empty() {
        return Err(Error::MissingArtifact(missing));
    }
    let cfg = PipelineConfig::from_toml_str(&manifest.config, &[])?;
    let read = |rel: &str| -> Result<String> {
        let p = run_dir.join(rel);
        std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    };
    let exists = |rel: &str| run_dir.join(rel).is_file();

    let mut md = String::new();
    md.push_str("# Indebtedness analysis report\n\n");
    let _ = writeln!(md, "Tool version {}, model format {}.\n", manifest.tool_version, manifest.model_format_version);

    md.push_str("## Configuration\n\n```toml\n");
    md.push_str(&config_without_paths(&manifest.config)?);
    md.push_str("```\n\n");

    md.push_str("## Artifacts\n\n| stage | file | sha256 |\n|---|---|---|\n");
    for stage in STAGES {
        for (rel, sum) in &manifest.stages[stage].outputs {
            let _ = writeln!(md, "| {stage} | `{rel}` | `{}` |", &sum[..16]);
        }
    }
    md.push('\n');

    md.push_str("## Data cleaning\n\n### Uncertain answers per variable\n\n");
    md.push_str(&csv_table(&read("clean/uncertain_counts.csv")?, None));
    md.push_str("\n### Category plots\n\n");
    for tag in ["demographic", "financial"] {
        let _ = writeln!(md, "![{tag} categories](clean/category_plot_{tag}.svg)\n");
    }
    md.push_str("### Flagged categories\n\n");
    md.push_str(&csv_table(&read("clean/flagged_categories.csv")?, None));
    md.push_str("\n### Removal of systematic non-responders\n\n");
    md.push_str(&csv_table(&read("clean/removal_report.csv")?, Some(20)));
    md.push_str("\n### Representativeness of the cleaned sample\n\n");
    md.push_str(&csv_table(&read("clean/representativeness.csv")?, None));
    let _ = writeln!(md, "\nCleaned data: `{CLEANED}`.\n");

    md.push_str("## Psychological factors\n\n![scree](factors/scree.svg)\n\n```text\n");
    md.push_str(&read("factors/efa_log.txt")?);
    md.push_str("```\n\n### Loadings\n\n");
    md.push_str(&csv_table(&read("factors/loadings.csv")?, None));
    md.push_str("\n### Variance\n\n");
    md.push_str(&csv_table(&read("factors/factor_summary.csv")?, None));
    md.push_str("\n### Reliability\n\n");
    md.push_str(&csv_table(&read("factors/reliability.csv")?, None));

    md.push_str("\n## Classifier evaluation\n\n");
    let _ = writeln!(
        md,
        "{}-fold cross-validation repeated {} times; significance level {}.\n",
        cfg.evaluation.k, cfg.evaluation.repeats, cfg.evaluation.alpha
    );
    for mode in &cfg.labelling.modes {
        let tag = mode.as_str();
        let dir = format!("evaluate/{tag}");
        let _ = writeln!(md, "### {tag}\n");
        md.push_str(&csv_table(&read(&format!("{dir}/class_counts.csv"))?, None));
        md.push('\n');
        let rep = format!("{dir}/undersample_representativeness.csv");
        if exists(&rep) {
            md.push_str("Undersampled majority class against the full class:\n\n");
            md.push_str(&csv_table(&read(&rep)?, None));
            md.push('\n');
        }
        let _ = writeln!(md, "![groups]({dir}/groups.svg)\n\n![steps]({dir}/steps.svg)\n");
        md.push_str("#### Accuracy by predictor set\n\n");
        md.push_str(&csv_table(&read(&format!("{dir}/summary.csv"))?, None));
        md.push_str("\n#### Step 3 against Step 2\n\n");
        md.push_str(&csv_table(&read(&format!("{dir}/significance.csv"))?, None));
        let imp = format!("{dir}/importance.csv");
        if exists(&imp) {
            md.push_str("\n#### Gini importance\n\n");
            md.push_str(&csv_table(&read(&format!("{dir}/importance_summary.csv"))?, None));
            md.push_str("\nTop predictors:\n\n");
            md.push_str(&csv_table(&read(&imp)?, Some(15)));
        }
        md.push('\n');
    }

    let path = run_dir.join(REPORT_FILE);
    std::fs::write(&path, &md).map_err(|e| Error::io(&path, e))?;
    let mut manifest = manifest;
    manifest.stages.insert(
        "report".to_string(),
        super::manifest::StageRecord {
            config_sha256: sha256_hex(manifest.config.as_bytes()),
            inputs: Default::default(),
            outputs: [(REPORT_FILE.to_string(), sha256_hex(md.as_bytes()))].into(),
            wall_clock_seconds: 0.0,
        },
    );
    manifest.save(run_dir)?;
    Ok(md)
}

fn config_without_paths(config: &str) -> Result<String> {
    let mut table: toml::Table =
        toml::from_str(config).map_err(|e| Error::load("manifest config", e.to_string()))?;
    table.remove("paths");
    Ok(toml::to_string(&table).expect("table serializes"))
}

/// Render CSV text as a markdown table, keeping at most `limit` data rows.
fn csv_table(text: &str, limit: Option<usize>) -> String {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let rows: Vec<Vec<String>> = rdr
        .records()
        .filter_map(|r| r.ok())
        .map(|r| r.iter().map(|c| c.replace('|', "\\|")).collect())
        .collect();
    let Some((head, body)) = rows.split_first() else {
        return String::from("(empty)\n");
    };
    let mut out = format!("| {} |\n|{}\n", head.join(" | "), "---|".repeat(head.len()));
    let shown = limit.unwrap_or(body.len()).min(body.len());
    if body.is_empty() {
        out = format!("{out}| {} |\n", vec!["-"; head.len()].join(" | "));
    }
    for row in &body[..shown] {
        let _ = writeln!(out, "| {} |", row.join(" | "));
    }
    if shown < body.len() {
        let _ = writeln!(out, "\n({} more rows)", body.len() - shown);
    }
    out
}
