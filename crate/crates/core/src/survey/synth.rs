//! Synthetic survey generator shaped like a household debt survey:
//! demographic and financial categoricals with "Don't know" style answers,
//! a likert battery driven by planted latent factors, and a debt target from
//! a logistic model over all three groups.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::numeric::rng_from;
use crate::survey::dataset::Dataset;
use crate::survey::schema::{SurveySchema, VariableGroup, VariableKind, VariableSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalConfig {
    pub name: String,
    /// Informative categories; `uncertain` labels are appended after these.
    pub categories: Vec<String>,
    #[serde(default)]
    pub uncertain: Vec<String>,
}

impl CategoricalConfig {
    fn new(name: &str, cats: &[&str], uncertain: &[&str]) -> Self {
        CategoricalConfig {
            name: name.to_string(),
            categories: cats.iter().map(|s| s.to_string()).collect(),
            uncertain: uncertain.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n: usize,
    pub demographic: Vec<CategoricalConfig>,
    pub financial: Vec<CategoricalConfig>,
    pub n_items: usize,
    pub n_factors: usize,
    /// Magnitude of each item's loading on its factor.
    pub loading: f64,
    /// Every `reverse_keyed_every`-th item loads negatively (0 disables).
    pub reverse_keyed_every: usize,
    pub likert_points: usize,
    /// Strength of the shared socio-economic latent behind the categoricals.
    pub association: f64,
    pub debt_intercept: f64,
    pub demographic_effect: f64,
    pub financial_effect: f64,
    /// Log-odds effect of each latent factor on being in debt.
    pub factor_effects: Vec<f64>,
    /// Share of rows that answer an uncertain code on every variable that has one.
    pub nonresponse_fraction: f64,
    /// Probability that any other row gives one stray uncertain answer.
    pub sporadic_uncertain_rate: f64,
    pub target_name: String,
    /// Target categories; the first means "no debt".
    pub debt_levels: Vec<String>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let yes_no = ["No", "Yes"];
        let mut demographic = vec![
            CategoricalConfig::new(
                "Marital_Status",
                &["Married", "Cohabiting", "Single", "Divorced", "Widowed"],
                &["Prefer not to answer"],
            ),
            CategoricalConfig::new(
                "Emp_Status",
                &["full time", "part time", "self employed", "unemployed", "retired", "student"],
                &["Don't know"],
            ),
            CategoricalConfig::new(
                "Age_Sex",
                &["Male 18-34", "Male 35-54", "Male 55+", "Female 18-34", "Female 35-54", "Female 55+"],
                &[],
            ),
            CategoricalConfig::new("Social_Grade", &["AB", "C1", "C2", "DE"], &[]),
            CategoricalConfig::new(
                "Education",
                &["Degree", "A level", "GCSE", "No qualification"],
                &["Prefer not to answer"],
            ),
        ];
        for i in 1..=5 {
            demographic.push(CategoricalConfig::new(&format!("Guardian_{i}"), &yes_no, &[]));
        }
        let mut financial = vec![
            CategoricalConfig::new(
                "Household_Income",
                &["Under 15k", "15k-30k", "30k-50k", "50k+"],
                &["Don't know", "Prefer not to answer"],
            ),
            CategoricalConfig::new(
                "Income",
                &["Under 10k", "10k-20k", "20k-35k", "35k+"],
                &["Don't know", "Prefer not to answer"],
            ),
            CategoricalConfig::new(
                "Liquid_Assets",
                &["None", "Under 1k", "1k-5k", "5k-20k", "20k+"],
                &["Don't know"],
            ),
            CategoricalConfig::new(
                "House_Status",
                &["Own outright", "Mortgage", "Rent", "Other"],
                &["Prefer not to answer"],
            ),
        ];
        for name in [
            "Life_Insurance",
            "Home_Insurance",
            "Car_Insurance",
            "Travel_Insurance",
            "Pet_Insurance",
            "Health_Insurance",
            "Income_Protection",
            "Critical_Illness",
            "Mortgage_Protection",
            "Payment_Protection",
            "Other_Insurance",
        ] {
            financial.push(CategoricalConfig::new(name, &yes_no, &[]));
        }
        GeneratorConfig {
            n: 2084,
            demographic,
            financial,
            n_items: 28,
            n_factors: 5,
            loading: 0.6,
            reverse_keyed_every: 4,
            likert_points: 5,
            association: 1.0,
            debt_intercept: 0.0,
            demographic_effect: 0.3,
            financial_effect: 0.5,
            factor_effects: vec![1.0, 0.5, 0.5, 0.4, 0.6],
            nonresponse_fraction: 0.4,
            sporadic_uncertain_rate: 0.05,
            target_name: "Unsecured_Debt".to_string(),
            debt_levels: [
                "None", "Under 250", "250-999", "1000-2499", "2500-4999", "5000-9999", "10000+",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_factors > 0 && self.n < 10 * self.n_factors {
            return Err(Error::validation(format!(
                "n = {} is below 10 x {} factors; the factor model is unidentifiable",
                self.n, self.n_factors
            )));
        }
        if self.n < 10 {
            return Err(Error::validation("n must be at least 10"));
        }
        if self.n_factors > 0 && self.n_items < self.n_factors {
            return Err(Error::validation("need at least one item per factor"));
        }
        if self.factor_effects.len() != self.n_factors {
            return Err(Error::validation(format!(
                "factor_effects has {} entries for {} factors",
                self.factor_effects.len(),
                self.n_factors
            )));
        }
        if !(0.0..=1.0).contains(&self.loading.abs()) {
            return Err(Error::validation("|loading| must be at most 1"));
        }
        if self.likert_points < 2 {
            return Err(Error::validation("likert_points must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.nonresponse_fraction) {
            return Err(Error::validation("nonresponse_fraction must be in [0, 1)"));
        }
        if self.debt_levels.len() < 3 {
            return Err(Error::validation("need a no-debt level and at least two debt levels"));
        }
        for v in self.demographic.iter().chain(&self.financial) {
            if v.categories.is_empty() {
                return Err(Error::validation(format!("`{}` has no informative categories", v.name)));
            }
        }
        Ok(())
    }

    pub fn item_names(&self) -> Vec<String> {
        (0..self.n_items)
            .map(|i| {
                if self.n_items == 28 && i >= 17 {
                    format!("Q71r{}", i - 16)
                } else {
                    format!("Q70r{}", i + 1)
                }
            })
            .collect()
    }

    /// Planted p×m loading matrix: item i loads on factor i mod m.
    pub fn planted_loadings(&self) -> DMatrix<f64> {
        let m = self.n_factors;
        DMatrix::from_fn(self.n_items, m, |i, f| {
            if m == 0 || i % m != f {
                return 0.0;
            }
            let every = self.reverse_keyed_every;
            if every > 0 && i % every == every - 1 {
                -self.loading
            } else {
                self.loading
            }
        })
    }

    /// Names of the categoricals carrying uncertain codes (the natural watch list).
    pub fn uncertain_variables(&self) -> Vec<String> {
        self.demographic
            .iter()
            .chain(&self.financial)
            .filter(|v| !v.uncertain.is_empty())
            .map(|v| v.name.clone())
            .collect()
    }

    pub fn schema(&self) -> Result<SurveySchema> {
        let mut vars = Vec::new();
        for (group, list) in [
            (VariableGroup::Demographic, &self.demographic),
            (VariableGroup::Financial, &self.financial),
        ] {
            for v in list {
                let mut categories = v.categories.clone();
                categories.extend(v.uncertain.iter().cloned());
                vars.push(VariableSpec {
                    name: v.name.clone(),
                    kind: VariableKind::Categorical,
                    group,
                    categories,
                    uncertain: v.uncertain.clone(),
                });
            }
        }
        let scale = likert_labels(self.likert_points);
        for name in self.item_names() {
            vars.push(VariableSpec {
                name,
                kind: VariableKind::Likert,
                group: VariableGroup::Psychological,
                categories: scale.clone(),
                uncertain: vec![],
            });
        }
        vars.push(VariableSpec {
            name: self.target_name.clone(),
            kind: VariableKind::NumericBand,
            group: VariableGroup::Target,
            categories: self.debt_levels.clone(),
            uncertain: vec![],
        });
        SurveySchema::new(Some("respondent_id".to_string()), vars)
    }
}

fn likert_labels(k: usize) -> Vec<String> {
    if k == 5 {
        ["Strongly disagree", "Disagree", "Neither", "Agree", "Strongly agree"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    } else {
        (1..=k).map(|i| i.to_string()).collect()
    }
}

/// Parameters and latent quantities behind a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub item_names: Vec<String>,
    pub loadings: DMatrix<f64>,
    /// n×m matrix of the latent factor values per row.
    pub latent_factors: DMatrix<f64>,
    pub factor_effects: Vec<f64>,
    pub intercept: f64,
    /// (variable, category, log-odds effect) for every informative category.
    pub category_effects: Vec<(String, String, f64)>,
    /// Linear predictor of the debt model per row.
    pub eta: Vec<f64>,
    pub planted_nonresponse: Vec<bool>,
}

impl GroundTruth {
    pub fn loadings_csv(&self) -> String {
        let m = self.loadings.ncols();
        let mut out = String::from("item");
        for f in 1..=m {
            out.push_str(&format!(",factor{f}"));
        }
        out.push('\n');
        for (i, name) in self.item_names.iter().enumerate() {
            out.push_str(name);
            for f in 0..m {
                out.push_str(&format!(",{}", self.loadings[(i, f)]));
            }
            out.push('\n');
        }
        out
    }

    pub fn effects_csv(&self) -> String {
        let mut out = String::from("term,category,effect\n");
        out.push_str(&format!("_intercept,,{}\n", self.intercept));
        for (f, b) in self.factor_effects.iter().enumerate() {
            out.push_str(&format!("_factor{},,{}\n", f + 1, b));
        }
        for (v, c, e) in &self.category_effects {
            out.push_str(&format!("{v},{c},{e}\n"));
        }
        out
    }

    pub fn rows_csv(&self, row_ids: &[String]) -> String {
        let m = self.latent_factors.ncols();
        let mut out = String::from("respondent_id,planted_nonresponse,eta");
        for f in 1..=m {
            out.push_str(&format!(",latent{f}"));
        }
        out.push('\n');
        for (r, id) in row_ids.iter().enumerate() {
            out.push_str(&format!("{id},{},{}", u8::from(self.planted_nonresponse[r]), self.eta[r]));
            for f in 0..m {
                out.push_str(&format!(",{}", self.latent_factors[(r, f)]));
            }
            out.push('\n');
        }
        out
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Generate a dataset and its ground truth. Identical `(config, seed)` gives
/// bit-identical output.
pub fn generate_synthetic_survey(config: &GeneratorConfig, seed: u64) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let schema = config.schema()?;
    let n = config.n;
    let m = config.n_factors;
    let categoricals: Vec<&CategoricalConfig> =
        config.demographic.iter().chain(&config.financial).collect();
    let n_dem = config.demographic.len();

    // Per-variable parameters: baseline logits, slope on the socio-economic
    // latent, and debt effects of each informative category.
    let mut prng = rng_from(seed, &[0]);
    struct VarParams {
        base: Vec<f64>,
        slope: Vec<f64>,
        effect: Vec<f64>,
    }
    let mut params = Vec::with_capacity(categoricals.len());
    let mut category_effects = Vec::new();
    for (j, v) in categoricals.iter().enumerate() {
        let k = v.categories.len();
        let base: Vec<f64> = (0..k).map(|_| 0.5 * normal(&mut prng)).collect();
        let slope: Vec<f64> = (0..k).map(|_| config.association * normal(&mut prng)).collect();
        let scale = if j < n_dem {
            config.demographic_effect
        } else {
            config.financial_effect
        };
        let raw: Vec<f64> = (0..k).map(|_| scale * normal(&mut prng)).collect();
        let mu = raw.iter().sum::<f64>() / k as f64;
        let effect: Vec<f64> = raw.iter().map(|e| e - mu).collect();
        for (c, e) in effect.iter().enumerate() {
            category_effects.push((v.name.clone(), v.categories[c].clone(), *e));
        }
        params.push(VarParams { base, slope, effect });
    }

    let loadings = config.planted_loadings();
    let uniq: Vec<f64> = (0..config.n_items)
        .map(|i| {
            let h2: f64 = loadings.row(i).iter().map(|l| l * l).sum();
            (1.0 - h2).max(0.0).sqrt()
        })
        .collect();
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let k_lik = config.likert_points;
    let thresholds: Vec<f64> = (1..k_lik)
        .map(|c| std_normal.inverse_cdf(c as f64 / k_lik as f64))
        .collect();

    let n_cat = categoricals.len();
    let n_vars = schema.len();
    let mut rows: Vec<Vec<u32>> = Vec::with_capacity(n);
    let mut latent = DMatrix::zeros(n, m);
    let mut eta = Vec::with_capacity(n);
    let mut in_debt = Vec::with_capacity(n);
    let mut depth = Vec::with_capacity(n);

    let mut rrng = rng_from(seed, &[1]);
    for r in 0..n {
        let mut row = vec![0u32; n_vars];
        let ses = normal(&mut rrng);
        let mut lin = config.debt_intercept;
        for (j, p) in params.iter().enumerate() {
            let logits: Vec<f64> = p.base.iter().zip(&p.slope).map(|(b, s)| b + s * ses).collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let total: f64 = w.iter().sum();
            let u: f64 = rrng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut c = w.len() - 1;
            for (i, wi) in w.iter().enumerate() {
                acc += wi;
                if u < acc {
                    c = i;
                    break;
                }
            }
            row[j] = c as u32;
            lin += p.effect[c];
        }
        for f in 0..m {
            latent[(r, f)] = normal(&mut rrng);
            lin += config.factor_effects[f] * latent[(r, f)];
        }
        for i in 0..config.n_items {
            let mut z = uniq[i] * normal(&mut rrng);
            for f in 0..m {
                z += loadings[(i, f)] * latent[(r, f)];
            }
            let code = thresholds.iter().filter(|&&t| z > t).count();
            row[n_cat + i] = code as u32;
        }
        let debt = rrng.random::<f64>() < sigmoid(lin);
        // Debt depth follows the same linear predictor plus logistic noise.
        let u: f64 = rrng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
        depth.push(lin + (u / (1.0 - u)).ln());
        eta.push(lin);
        in_debt.push(debt);
        rows.push(row);
    }

    // Debt levels: cut the depth of debtors at fixed quantiles.
    let target = n_vars - 1;
    let n_pos_levels = config.debt_levels.len() - 1;
    let mut debtor_depth: Vec<f64> = (0..n).filter(|&r| in_debt[r]).map(|r| depth[r]).collect();
    debtor_depth.sort_by(|a, b| a.total_cmp(b));
    let cuts: Vec<f64> = (1..n_pos_levels)
        .map(|l| {
            let q = 1.0 - 0.7f64.powi(l as i32);
            if debtor_depth.is_empty() {
                0.0
            } else {
                debtor_depth[((debtor_depth.len() - 1) as f64 * q).round() as usize]
            }
        })
        .collect();
    for r in 0..n {
        rows[r][target] = if in_debt[r] {
            (1 + cuts.iter().filter(|&&c| depth[r] > c).count()) as u32
        } else {
            0
        };
    }

    // Uncertain answers: planted systematic non-responders plus sporadic strays.
    let mut urng = rng_from(seed, &[2]);
    let with_uncertain: Vec<usize> = (0..n_cat)
        .filter(|&j| !categoricals[j].uncertain.is_empty())
        .collect();
    let n_planted = (n as f64 * config.nonresponse_fraction).round() as usize;
    let mut planted = vec![false; n];
    if !with_uncertain.is_empty() {
        for r in sample(&mut urng, n, n_planted).into_iter() {
            planted[r] = true;
        }
    }
    for r in 0..n {
        if planted[r] {
            for &j in &with_uncertain {
                let v = categoricals[j];
                let pick = urng.random_range(0..v.uncertain.len());
                rows[r][j] = (v.categories.len() + pick) as u32;
            }
        } else if !with_uncertain.is_empty() && urng.random::<f64>() < config.sporadic_uncertain_rate {
            let j = with_uncertain[urng.random_range(0..with_uncertain.len())];
            let v = categoricals[j];
            let pick = urng.random_range(0..v.uncertain.len());
            rows[r][j] = (v.categories.len() + pick) as u32;
        }
    }

    let row_ids = (1..=n).map(|i| format!("R{i:05}")).collect();
    let data = Dataset::new(schema, row_ids, rows)?;
    let truth = GroundTruth {
        item_names: config.item_names(),
        loadings,
        latent_factors: latent,
        factor_effects: config.factor_effects.clone(),
        intercept: config.debt_intercept,
        category_effects,
        eta,
        planted_nonresponse: planted,
    };
    Ok((data, truth))
}
