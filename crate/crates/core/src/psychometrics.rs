//! Exploratory factor analysis of likert items: correlation, scree,
//! parallel analysis, iterated principal-axis factoring, varimax rotation,
//! regression factor scores and Cronbach's alpha.

use std::fmt::{self, Write as _};

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{quantile, rng_from, sample_variance, sym_eigen_desc};
use crate::survey::EncodedMatrix;

/// Loadings with smaller magnitude are left blank in printed tables.
pub const LOADING_DISPLAY_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub r: DMatrix<f64>,
}

impl CorrelationMatrix {
    pub fn dim(&self) -> usize {
        self.r.nrows()
    }
}

/// Pearson correlations between the columns of `values`.
pub fn correlation_of(names: &[String], values: &DMatrix<f64>) -> Result<CorrelationMatrix> {
    let (n, p) = values.shape();
    if p < 2 {
        return Err(Error::validation("correlation needs at least two items"));
    }
    if n < 2 {
        return Err(Error::validation("correlation needs at least two rows"));
    }
    let mut z = values.clone();
    for (j, mut col) in z.column_iter_mut().enumerate() {
        let mu = col.mean();
        col.add_scalar_mut(-mu);
        let ss = col.norm_squared();
        if !(ss > 0.0) {
            return Err(Error::validation(format!("item `{}` has zero variance", names[j])));
        }
        col.scale_mut(1.0 / ss.sqrt());
    }
    let mut r = z.transpose() * &z;
    for i in 0..p {
        r[(i, i)] = 1.0;
        for j in 0..i {
            let v = 0.5 * (r[(i, j)] + r[(j, i)]);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    Ok(CorrelationMatrix {
        names: names.to_vec(),
        r,
    })
}

pub fn correlation(items: &EncodedMatrix) -> Result<CorrelationMatrix> {
    correlation_of(&items.names, &items.values)
}

/// All eigenvalues of `r`, descending.
pub fn scree(r: &CorrelationMatrix) -> Vec<f64> {
    sym_eigen_desc(&r.r).0.iter().copied().collect()
}

/// Reference eigenvalue that an observed eigenvalue must exceed to be retained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetentionRule {
    /// Mean eigenvalue of the random replicates at the same rank.
    Mean,
    /// Given percentile (0-100) of the random eigenvalues at the same rank.
    Percentile(f64),
}

impl fmt::Display for RetentionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RetentionRule::Mean => write!(f, "mean"),
            RetentionRule::Percentile(p) => write!(f, "percentile {p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelAnalysis {
    pub observed: Vec<f64>,
    pub random_mean: Vec<f64>,
    pub random_percentile: Vec<f64>,
    pub percentile: f64,
    pub rule: RetentionRule,
    /// Leading ranks whose observed eigenvalue exceeds the reference.
    pub retained: usize,
}

impl ParallelAnalysis {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "rank,observed,random_mean,random_p{}\n",
            self.percentile
        );
        for i in 0..self.observed.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                i + 1,
                self.observed[i],
                self.random_mean[i],
                self.random_percentile[i]
            );
        }
        out
    }
}

/// Compare the eigenvalues of `items`' correlation matrix with those of
/// `n_random` same-shaped standard-normal datasets. Replicate `i` draws from
/// a stream derived from `(seed, i)`.
pub fn parallel_analysis(
    items: &EncodedMatrix,
    n_random: usize,
    seed: u64,
    rule: RetentionRule,
) -> Result<ParallelAnalysis> {
    if n_random < 20 {
        return Err(Error::validation("parallel analysis needs at least 20 random datasets"));
    }
    let observed = scree(&correlation(items)?);
    let (n, p) = items.values.shape();
    let names: Vec<String> = (0..p).map(|j| format!("r{j}")).collect();
    let mut per_rank: Vec<Vec<f64>> = vec![Vec::with_capacity(n_random); p];
    for rep in 0..n_random {
        let mut rng = rng_from(seed, &[rep as u64]);
        let sim = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let ev = scree(&correlation_of(&names, &sim)?);
        for (k, v) in ev.into_iter().enumerate() {
            per_rank[k].push(v);
        }
    }
    let percentile = match rule {
        RetentionRule::Percentile(q) => q,
        RetentionRule::Mean => 95.0,
    };
    let random_mean: Vec<f64> = per_rank.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    let random_percentile: Vec<f64> = per_rank
        .iter_mut()
        .map(|v| {
            v.sort_by(|a, b| a.total_cmp(b));
            quantile(v, percentile / 100.0)
        })
        .collect();
    let reference = match rule {
        RetentionRule::Mean => &random_mean,
        RetentionRule::Percentile(_) => &random_percentile,
    };
    let retained = observed
        .iter()
        .zip(reference)
        .take_while(|(o, r)| o > r)
        .count();
    Ok(ParallelAnalysis {
        observed,
        random_mean,
        random_percentile,
        percentile,
        rule,
        retained,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rotation {
    None,
    Varimax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub item_names: Vec<String>,
    pub factors: usize,
    /// p×m loadings (rotated when `rotation` is varimax).
    pub loadings: DMatrix<f64>,
    /// Eigenvalues of the item correlation matrix, descending.
    pub eigenvalues: Vec<f64>,
    pub communalities: Vec<f64>,
    pub variance_explained: f64,
    pub rotation: Rotation,
    /// m×m orthogonal matrix with `loadings = unrotated * rotation_matrix`.
    pub rotation_matrix: DMatrix<f64>,
    pub correlation: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

impl FactorModel {
    /// Index of the factor with the largest absolute loading, per item.
    pub fn item_assignment(&self) -> Vec<usize> {
        (0..self.loadings.nrows())
            .map(|i| {
                let row: Vec<f64> = self.loadings.row(i).iter().map(|v| v.abs()).collect();
                crate::numeric::argmax(&row)
            })
            .collect()
    }

    /// Loadings table with |loading| below the display threshold left blank.
    pub fn loadings_csv(&self, factor_names: &[String]) -> String {
        let mut out = String::from("item");
        for f in 0..self.factors {
            let name = factor_names.get(f).cloned().unwrap_or_else(|| format!("Factor {}", f + 1));
            let _ = write!(out, ",{name}");
        }
        out.push('\n');
        for (i, item) in self.item_names.iter().enumerate() {
            out.push_str(item);
            for f in 0..self.factors {
                let l = self.loadings[(i, f)];
                if l.abs() < LOADING_DISPLAY_THRESHOLD {
                    out.push(',');
                } else {
                    let _ = write!(out, ",{l:.3}");
                }
            }
            out.push('\n');
        }
        out
    }
}

fn communalities_of(loadings: &DMatrix<f64>) -> Vec<f64> {
    loadings
        .row_iter()
        .map(|row| row.iter().map(|l| l * l).sum())
        .collect()
}

/// Squared multiple correlations, the usual starting communalities.
fn squared_multiple_correlations(r: &DMatrix<f64>) -> Vec<f64> {
    let p = r.nrows();
    let inv = r.clone().cholesky().map(|c| c.inverse()).or_else(|| r.clone().try_inverse());
    match inv {
        Some(inv) => (0..p).map(|i| (1.0 - 1.0 / inv[(i, i)]).clamp(0.0, 1.0)).collect(),
        // singular R: fall back to the largest absolute off-diagonal correlation
        None => (0..p)
            .map(|i| {
                (0..p)
                    .filter(|&j| j != i)
                    .map(|j| r[(i, j)].abs())
                    .fold(0.0, f64::max)
            })
            .collect(),
    }
}

/// Iterated principal-axis factoring of `r` with `m` factors.
pub fn extract_factors(r: &CorrelationMatrix, m: usize, max_iter: usize, tol: f64) -> Result<FactorModel> {
    let p = r.dim();
    if m == 0 || m >= p {
        return Err(Error::validation(format!("factor count must satisfy 1 <= m < {p}, got {m}")));
    }
    let eigenvalues = scree(r);
    let mut h2 = squared_multiple_correlations(&r.r);
    let mut warnings = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut loadings = DMatrix::zeros(p, m);
    while iterations < max_iter {
        iterations += 1;
        let mut reduced = r.r.clone();
        for i in 0..p {
            reduced[(i, i)] = h2[i];
        }
        let (vals, vecs) = sym_eigen_desc(&reduced);
        for f in 0..m {
            let s = vals[f].max(0.0).sqrt();
            for i in 0..p {
                loadings[(i, f)] = vecs[(i, f)] * s;
            }
        }
        let new_h2: Vec<f64> = communalities_of(&loadings);
        let delta = new_h2
            .iter()
            .zip(&h2)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        h2 = new_h2.iter().map(|h| h.clamp(0.0, 1.0)).collect();
        if delta < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warnings.push(format!("principal-axis iteration did not converge in {max_iter} iterations"));
    }
    let heywood: Vec<&str> = h2
        .iter()
        .zip(&r.names)
        .filter(|(h, _)| **h >= 1.0 - 1e-12)
        .map(|(_, n)| n.as_str())
        .collect();
    if !heywood.is_empty() {
        warnings.push(format!("Heywood case: communality reached 1 for {}", heywood.join(", ")));
    }
    // Fix column signs so every factor's loadings sum to a non-negative value.
    for f in 0..m {
        if loadings.column(f).sum() < 0.0 {
            loadings.column_mut(f).neg_mut();
        }
    }
    let communalities = communalities_of(&loadings);
    let variance_explained = communalities.iter().sum::<f64>() / p as f64;
    Ok(FactorModel {
        item_names: r.names.clone(),
        factors: m,
        loadings,
        eigenvalues,
        communalities,
        variance_explained,
        rotation: Rotation::None,
        rotation_matrix: DMatrix::identity(m, m),
        correlation: r.r.clone(),
        converged,
        iterations,
        warnings,
    })
}

/// Raw varimax criterion: sum over factors of the variance of squared loadings.
pub fn varimax_criterion(loadings: &DMatrix<f64>) -> f64 {
    let p = loadings.nrows() as f64;
    loadings
        .column_iter()
        .map(|col| {
            let s2: f64 = col.iter().map(|l| l * l).sum::<f64>() / p;
            let s4: f64 = col.iter().map(|l| l.powi(4)).sum::<f64>() / p;
            s4 - s2 * s2
        })
        .sum()
}

/// Rows scaled to unit length (Kaiser normalisation); zero rows stay zero.
pub fn kaiser_normalize(loadings: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let mut out = loadings.clone();
    let norms: Vec<f64> = loadings.row_iter().map(|r| r.norm()).collect();
    for (i, &h) in norms.iter().enumerate() {
        if h > 0.0 {
            out.row_mut(i).scale_mut(1.0 / h);
        }
    }
    (out, norms)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarimaxTrace {
    /// Criterion (on the normalised loadings) after each sweep, starting value first.
    pub criterion: Vec<f64>,
    pub sweeps: usize,
}

/// Varimax rotation with Kaiser normalisation by pairwise planar rotations.
pub fn varimax(model: &FactorModel, tol: f64) -> FactorModel {
    varimax_traced(model, tol, 1000).0
}

pub fn varimax_traced(model: &FactorModel, tol: f64, max_sweeps: usize) -> (FactorModel, VarimaxTrace) {
    let m = model.factors;
    if m < 2 {
        return (
            model.clone(),
            VarimaxTrace {
                criterion: vec![varimax_criterion(&model.loadings)],
                sweeps: 0,
            },
        );
    }
    let p = model.loadings.nrows();
    let pf = p as f64;
    let (mut l, norms) = kaiser_normalize(&model.loadings);
    let mut t = DMatrix::<f64>::identity(m, m);
    let mut criterion = vec![varimax_criterion(&l)];
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        for j in 0..m {
            for k in (j + 1)..m {
                let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..p {
                    let (x, y) = (l[(i, j)], l[(i, k)]);
                    let u = x * x - y * y;
                    let v = 2.0 * x * y;
                    a += u;
                    b += v;
                    c += u * u - v * v;
                    d += 2.0 * u * v;
                }
                let num = d - 2.0 * a * b / pf;
                let den = c - (a * a - b * b) / pf;
                let phi = num.atan2(den) / 4.0;
                if phi.abs() < 1e-15 {
                    continue;
                }
                let (s, co) = phi.sin_cos();
                for i in 0..p {
                    let (x, y) = (l[(i, j)], l[(i, k)]);
                    l[(i, j)] = co * x + s * y;
                    l[(i, k)] = -s * x + co * y;
                }
                for i in 0..m {
                    let (x, y) = (t[(i, j)], t[(i, k)]);
                    t[(i, j)] = co * x + s * y;
                    t[(i, k)] = -s * x + co * y;
                }
            }
        }
        let v = varimax_criterion(&l);
        let prev = *criterion.last().expect("non-empty");
        criterion.push(v);
        if (v - prev).abs() < tol {
            break;
        }
    }
    // Undo normalisation, then orient each factor so its loadings sum >= 0.
    for (i, &h) in norms.iter().enumerate() {
        l.row_mut(i).scale_mut(h);
    }
    for f in 0..m {
        if l.column(f).sum() < 0.0 {
            l.column_mut(f).neg_mut();
            t.column_mut(f).neg_mut();
        }
    }
    let communalities = communalities_of(&l);
    let variance_explained = communalities.iter().sum::<f64>() / p as f64;
    let rotated = FactorModel {
        loadings: l,
        communalities,
        variance_explained,
        rotation: Rotation::Varimax,
        rotation_matrix: &model.rotation_matrix * &t,
        ..model.clone()
    };
    (rotated, VarimaxTrace { criterion, sweeps })
}

/// Regression-method scoring weights learnt from the fitting data.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorScorer {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// p×m weights `R^-1 Λ`.
    pub weights: DMatrix<f64>,
}

impl FactorScorer {
    pub fn new(model: &FactorModel, items: &DMatrix<f64>) -> Result<Self> {
        let p = model.loadings.nrows();
        if items.ncols() != p {
            return Err(Error::validation(format!(
                "model has {p} items, data has {} columns",
                items.ncols()
            )));
        }
        let means: Vec<f64> = items.column_iter().map(|c| c.mean()).collect();
        let sds: Vec<f64> = items
            .column_iter()
            .map(|c| sample_variance(c.as_slice()).sqrt())
            .collect();
        let mut r = model.correlation.clone();
        let mut solved = r.clone().cholesky().map(|ch| ch.solve(&model.loadings));
        if solved.is_none() {
            for i in 0..p {
                r[(i, i)] += 1e-8;
            }
            solved = r.cholesky().map(|ch| ch.solve(&model.loadings));
        }
        let weights =
            solved.ok_or_else(|| Error::numerical("item correlation matrix is singular beyond ridge rescue"))?;
        Ok(FactorScorer { means, sds, weights })
    }

    pub fn apply(&self, items: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = items.clone();
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.means[j]);
            if self.sds[j] > 0.0 {
                col.scale_mut(1.0 / self.sds[j]);
            }
        }
        z * &self.weights
    }
}

/// Regression (Thurstone) factor scores `F = Z R^-1 Λ`.
pub fn factor_scores(model: &FactorModel, items: &EncodedMatrix) -> Result<DMatrix<f64>> {
    let scorer = FactorScorer::new(model, &items.values)?;
    Ok(scorer.apply(&items.values))
}

/// Reverse an item coded 1..k (or any numeric coding) around `low + high`.
/// Applying it twice returns the original column.
pub fn reverse_code(column: &[f64], low: f64, high: f64) -> Vec<f64> {
    column.iter().map(|x| low + high - x).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReliabilityBand {
    Good,
    Acceptable,
    Poor,
    Unacceptable,
}

impl ReliabilityBand {
    pub fn of(alpha: f64) -> Self {
        if alpha > 0.7 {
            ReliabilityBand::Good
        } else if alpha > 0.6 {
            ReliabilityBand::Acceptable
        } else if alpha > 0.5 {
            ReliabilityBand::Poor
        } else {
            ReliabilityBand::Unacceptable
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ReliabilityBand::Good => "good",
            ReliabilityBand::Acceptable => "acceptable",
            ReliabilityBand::Poor => "poor",
            ReliabilityBand::Unacceptable => "unacceptable",
        }
    }
}

/// Cronbach's alpha of the columns of `items` (n×k, k >= 2).
pub fn alpha_of(items: &DMatrix<f64>) -> Result<f64> {
    let k = items.ncols();
    if k < 2 {
        return Err(Error::validation("Cronbach's alpha needs at least two items"));
    }
    let item_var: f64 = items.column_iter().map(|c| sample_variance(c.as_slice())).sum();
    let totals: Vec<f64> = items.row_iter().map(|r| r.sum()).collect();
    let total_var = sample_variance(&totals);
    if !(total_var > 0.0) {
        return Err(Error::validation("scale total has zero variance"));
    }
    let kf = k as f64;
    Ok(kf / (kf - 1.0) * (1.0 - item_var / total_var))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleReliability {
    pub name: String,
    pub items: Vec<String>,
    pub reversed: Vec<String>,
    pub alpha: f64,
    pub band: ReliabilityBand,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReliabilityReport {
    pub scales: Vec<ScaleReliability>,
}

impl ReliabilityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("factor,cronbach_alpha,band,items,reversed\n");
        for s in &self.scales {
            let _ = writeln!(
                out,
                "{},{:.2},{},{},{}",
                s.name,
                s.alpha,
                s.band.as_str(),
                s.items.join(" "),
                s.reversed.join(" ")
            );
        }
        out
    }
}

/// One scale to score: member item columns and which of them to reverse.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSpec {
    pub name: String,
    pub items: Vec<usize>,
    pub reversed: Vec<bool>,
}

/// Scales from a fitted model: items grouped by their largest-|loading|
/// factor, items loading negatively on it marked for reversal.
pub fn scales_from_model(model: &FactorModel, factor_names: &[String]) -> Vec<ScaleSpec> {
    let assign = model.item_assignment();
    (0..model.factors)
        .map(|f| {
            let items: Vec<usize> = (0..assign.len()).filter(|&i| assign[i] == f).collect();
            let reversed = items.iter().map(|&i| model.loadings[(i, f)] < 0.0).collect();
            ScaleSpec {
                name: factor_names.get(f).cloned().unwrap_or_else(|| format!("Factor {}", f + 1)),
                items,
                reversed,
            }
        })
        .collect()
}

/// Cronbach's alpha per scale. Reversed items are negated (the items are
/// centered likert codes, so negation is reverse-coding).
pub fn cronbach_alpha(items: &EncodedMatrix, scales: &[ScaleSpec]) -> Result<ReliabilityReport> {
    let mut report = ReliabilityReport::default();
    for s in scales {
        if s.items.len() < 2 {
            return Err(Error::validation(format!(
                "scale `{}` has {} item(s); Cronbach's alpha needs at least two",
                s.name,
                s.items.len()
            )));
        }
        let n = items.n_rows();
        let cols = DMatrix::from_fn(n, s.items.len(), |r, c| {
            let v = items.values[(r, s.items[c])];
            if s.reversed[c] {
                -v
            } else {
                v
            }
        });
        let alpha = alpha_of(&cols)
            .map_err(|e| Error::validation(format!("scale `{}`: {e}", s.name)))?;
        report.scales.push(ScaleReliability {
            name: s.name.clone(),
            items: s.items.iter().map(|&i| items.names[i].clone()).collect(),
            reversed: s
                .items
                .iter()
                .zip(&s.reversed)
                .filter(|(_, r)| **r)
                .map(|(&i, _)| items.names[i].clone())
                .collect(),
            alpha,
            band: ReliabilityBand::of(alpha),
        });
    }
    Ok(report)
}
