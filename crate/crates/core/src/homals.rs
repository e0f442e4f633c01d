//! Homogeneity analysis (multiple correspondence analysis in the Gifi
//! formulation) fitted by alternating least squares.
//!
//! Object scores `X` (n×p) and per-variable category quantifications `Y_j`
//! (k_j×p) minimise the departure from homogeneity
//! `sigma(X; Y) = sum_j SSQ(X - G_j Y_j)` subject to `1'X = 0` and `X'X = n I`.
//! Each sweep sets `Y_j` to the category centroids of `X`, then replaces `X`
//! by the centered and re-orthonormalised average of `G_j Y_j`.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numeric::{center_columns, orthonormalize, rng_from};
use crate::survey::{EncodedMatrix, Encoding};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomalsOptions {
    pub dims: usize,
    /// Relative loss decrease below which the fit is declared converged.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for HomalsOptions {
    fn default() -> Self {
        HomalsOptions {
            dims: 2,
            tol: 1e-8,
            max_iter: 500,
            seed: 0,
        }
    }
}

/// Categorical codes of the fitted variables, one column per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryCodes {
    pub variables: Vec<String>,
    pub categories: Vec<Vec<String>>,
    /// rows × variables matrix of category indices.
    pub codes: Vec<Vec<usize>>,
}

impl CategoryCodes {
    /// Recover per-variable category codes from a full-indicator matrix.
    pub fn from_indicator(m: &EncodedMatrix) -> Result<Self> {
        if m.encoding != Encoding::FullIndicator {
            return Err(Error::validation("homals needs a full-indicator encoding"));
        }
        let mut codes = vec![vec![0usize; m.blocks.len()]; m.n_rows()];
        for (j, b) in m.blocks.iter().enumerate() {
            for (r, row) in codes.iter_mut().enumerate() {
                let hits: Vec<usize> = (0..b.len).filter(|&c| m.values[(r, b.start + c)] == 1.0).collect();
                if hits.len() != 1 {
                    return Err(Error::validation(format!(
                        "row {} of `{}` is not a single indicator",
                        r + 1,
                        b.variable
                    )));
                }
                row[j] = hits[0];
            }
        }
        Ok(CategoryCodes {
            variables: m.blocks.iter().map(|b| b.variable.clone()).collect(),
            categories: m
                .blocks
                .iter()
                .map(|b| {
                    (b.start..b.start + b.len)
                        .map(|c| m.columns[c].category.clone().unwrap_or_default())
                        .collect()
                })
                .collect(),
            codes,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.codes.len()
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn counts(&self, var: usize) -> Vec<usize> {
        let mut c = vec![0; self.categories[var].len()];
        for row in &self.codes {
            c[row[var]] += 1;
        }
        c
    }
}

#[derive(Debug, Clone)]
pub struct HomalsSolution {
    pub dims: usize,
    pub object_scores: DMatrix<f64>,
    pub variables: Vec<String>,
    pub categories: Vec<Vec<String>>,
    /// Per variable: k_j × p category quantifications.
    pub quantifications: Vec<DMatrix<f64>>,
    pub counts: Vec<Vec<usize>>,
    pub loss_history: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// p×p map from averaged category points to object scores, used to place
    /// rows that were not part of the fit.
    pub projection: DMatrix<f64>,
}

fn category_centroids(x: &DMatrix<f64>, codes: &CategoryCodes, var: usize, k: usize) -> DMatrix<f64> {
    let p = x.ncols();
    let mut sums = DMatrix::zeros(k, p);
    let mut counts = vec![0usize; k];
    for (r, row) in codes.codes.iter().enumerate() {
        let c = row[var];
        counts[c] += 1;
        for d in 0..p {
            sums[(c, d)] += x[(r, d)];
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            for d in 0..p {
                sums[(c, d)] *= inv;
            }
        }
    }
    sums
}

fn homals_loss(x: &DMatrix<f64>, codes: &CategoryCodes, ys: &[DMatrix<f64>]) -> f64 {
    let p = x.ncols();
    let mut loss = 0.0;
    for (r, row) in codes.codes.iter().enumerate() {
        for (j, y) in ys.iter().enumerate() {
            let c = row[j];
            for d in 0..p {
                let e = x[(r, d)] - y[(c, d)];
                loss += e * e;
            }
        }
    }
    loss
}

fn average_category_points(codes: &CategoryCodes, ys: &[DMatrix<f64>], p: usize) -> DMatrix<f64> {
    let m = ys.len() as f64;
    let mut z = DMatrix::zeros(codes.n_rows(), p);
    for (r, row) in codes.codes.iter().enumerate() {
        for (j, y) in ys.iter().enumerate() {
            for d in 0..p {
                z[(r, d)] += y[(row[j], d)];
            }
        }
        for d in 0..p {
            z[(r, d)] /= m;
        }
    }
    z
}

fn normalize_scores(z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut c = z.clone();
    center_columns(&mut c);
    let q = orthonormalize(&c)
        .ok_or_else(|| Error::numerical("object scores collapsed to a lower-rank space"))?;
    Ok(q * (z.nrows() as f64).sqrt())
}

/// Fit homogeneity analysis to a full-indicator matrix.
pub fn fit_homals(data: &EncodedMatrix, opts: &HomalsOptions) -> Result<HomalsSolution> {
    let codes = CategoryCodes::from_indicator(data)?;
    fit_homals_codes(&codes, opts)
}

pub fn fit_homals_codes(codes: &CategoryCodes, opts: &HomalsOptions) -> Result<HomalsSolution> {
    let n = codes.n_rows();
    let m = codes.n_vars();
    let p = opts.dims;
    if p == 0 {
        return Err(Error::validation("homals needs at least one dimension"));
    }
    if m == 0 || n < 2 {
        return Err(Error::validation("homals needs at least one variable and two rows"));
    }
    let counts: Vec<Vec<usize>> = (0..m).map(|j| codes.counts(j)).collect();
    for (j, c) in counts.iter().enumerate() {
        if let Some(empty) = c.iter().position(|&x| x == 0) {
            return Err(Error::validation(format!(
                "empty category `{}` of `{}`; drop empty categories before fitting",
                codes.categories[j][empty], codes.variables[j]
            )));
        }
    }
    let total_cats: usize = counts.iter().map(Vec::len).sum();
    if p > total_cats - m {
        return Err(Error::validation(format!(
            "{p} dimensions requested but only {} are available (categories - variables)",
            total_cats - m
        )));
    }
    if p >= n {
        return Err(Error::validation("dimensions must be fewer than rows"));
    }

    let mut rng = rng_from(opts.seed, &[0x686f_6d61]);
    let init = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    let mut x = normalize_scores(&init)?;

    let mut loss_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut ys: Vec<DMatrix<f64>> = (0..m)
        .map(|j| category_centroids(&x, codes, j, counts[j].len()))
        .collect();
    loss_history.push(homals_loss(&x, codes, &ys));

    while iterations < opts.max_iter {
        iterations += 1;
        let z = average_category_points(codes, &ys, p);
        x = normalize_scores(&z)?;
        ys = (0..m)
            .map(|j| category_centroids(&x, codes, j, counts[j].len()))
            .collect();
        let loss = homals_loss(&x, codes, &ys);
        let prev = *loss_history.last().expect("non-empty");
        loss_history.push(loss);
        let scale = (n * m * p) as f64;
        if prev - loss <= opts.tol * prev.max(scale * f64::EPSILON) {
            converged = true;
            break;
        }
    }

    // Sign convention: in every dimension the category point with the largest
    // absolute coordinate is positive.
    for d in 0..p {
        let mut best = 0.0f64;
        for y in &ys {
            for c in 0..y.nrows() {
                if y[(c, d)].abs() > best.abs() {
                    best = y[(c, d)];
                }
            }
        }
        if best < 0.0 {
            x.column_mut(d).neg_mut();
            for y in ys.iter_mut() {
                y.column_mut(d).neg_mut();
            }
        }
    }

    let z = average_category_points(codes, &ys, p);
    let ztz = z.transpose() * &z;
    let projection = ztz
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&(z.transpose() * &x)))
        .or_else(|| ztz.pseudo_inverse(1e-12).ok().map(|pinv| pinv * z.transpose() * &x))
        .ok_or_else(|| Error::numerical("cannot build out-of-sample projection"))?;

    Ok(HomalsSolution {
        dims: p,
        object_scores: x,
        variables: codes.variables.clone(),
        categories: codes.categories.clone(),
        quantifications: ys,
        counts,
        loss_history,
        converged,
        iterations,
        projection,
    })
}

impl HomalsSolution {
    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("loss recorded")
    }

    /// Object scores of the fitted rows as named predictors `<prefix>_dim<d>`.
    pub fn transform(&self, prefix: &str) -> (Vec<String>, DMatrix<f64>) {
        let names = (1..=self.dims).map(|d| format!("{prefix}_dim{d}")).collect();
        (names, self.object_scores.clone())
    }

    /// Place new rows (coded against the same categories) by averaging their
    /// category points and applying the fitted projection. Categories with no
    /// fitted members sit at the origin.
    pub fn project(&self, codes: &[Vec<usize>]) -> DMatrix<f64> {
        let m = self.quantifications.len() as f64;
        let p = self.dims;
        let mut z = DMatrix::zeros(codes.len(), p);
        for (r, row) in codes.iter().enumerate() {
            for (j, y) in self.quantifications.iter().enumerate() {
                let c = row[j];
                if c < y.nrows() {
                    for d in 0..p {
                        z[(r, d)] += y[(c, d)];
                    }
                }
            }
            for d in 0..p {
                z[(r, d)] /= m;
            }
        }
        z * &self.projection
    }

    pub fn loss_csv(&self) -> String {
        let mut out = String::from("iteration,loss\n");
        for (i, l) in self.loss_history.iter().enumerate() {
            let _ = writeln!(out, "{i},{l}");
        }
        out
    }

    pub fn coordinates_csv(&self) -> String {
        let mut out = String::from("variable,category,count");
        for d in 1..=self.dims {
            let _ = write!(out, ",dim{d}");
        }
        out.push('\n');
        for (j, y) in self.quantifications.iter().enumerate() {
            for c in 0..y.nrows() {
                let _ = write!(
                    out,
                    "{},{},{}",
                    csv_field(&self.variables[j]),
                    csv_field(&self.categories[j][c]),
                    self.counts[j][c]
                );
                for d in 0..self.dims {
                    let _ = write!(out, ",{}", y[(c, d)]);
                }
                out.push('\n');
            }
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One category point with its distances and outlier flag.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryPoint {
    pub variable: String,
    pub category: String,
    pub coordinates: Vec<f64>,
    pub count: usize,
    pub distance_from_origin: f64,
    /// Distance from the coordinate-wise median of all category points.
    pub distance_from_center: f64,
    pub uncertain: bool,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryDiagnostics {
    pub flag_multiple: f64,
    pub center: Vec<f64>,
    pub median_distance: f64,
    pub points: Vec<CategoryPoint>,
}

impl CategoryDiagnostics {
    pub fn flagged(&self) -> impl Iterator<Item = &CategoryPoint> {
        self.points.iter().filter(|p| p.flagged)
    }

    pub fn uncertain(&self) -> impl Iterator<Item = &CategoryPoint> {
        self.points.iter().filter(|p| p.uncertain)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "section,variable,category,count,distance_from_origin,distance_from_center,flagged\n",
        );
        let sections: [(&str, Box<dyn Fn(&CategoryPoint) -> bool>); 2] = [
            ("category", Box::new(|_| true)),
            ("uncertain", Box::new(|p| p.uncertain)),
        ];
        for (name, keep) in sections.iter() {
            for p in self.points.iter().filter(|p| keep(p)) {
                let _ = writeln!(
                    out,
                    "{name},{},{},{},{},{},{}",
                    csv_field(&p.variable),
                    csv_field(&p.category),
                    p.count,
                    p.distance_from_origin,
                    p.distance_from_center,
                    u8::from(p.flagged)
                );
            }
        }
        out
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Flag category points lying further than `flag_multiple` times the median
/// distance from the robust center (coordinate-wise median) of the category
/// cloud. `is_uncertain(variable, category)` marks the non-informative codes
/// reported in their own section.
pub fn category_diagnostics(
    sol: &HomalsSolution,
    flag_multiple: f64,
    is_uncertain: impl Fn(&str, &str) -> bool,
) -> CategoryDiagnostics {
    let p = sol.dims;
    let mut coords = Vec::new();
    for (j, y) in sol.quantifications.iter().enumerate() {
        for c in 0..y.nrows() {
            coords.push((j, c, y.row(c).iter().copied().collect::<Vec<f64>>()));
        }
    }
    let center: Vec<f64> = (0..p)
        .map(|d| median(&mut coords.iter().map(|(_, _, v)| v[d]).collect::<Vec<_>>()))
        .collect();
    let dist = |v: &[f64], c: &[f64]| -> f64 {
        v.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let mut dc: Vec<f64> = coords.iter().map(|(_, _, v)| dist(v, &center)).collect();
    let median_distance = median(&mut dc.clone());
    let threshold = flag_multiple * median_distance;
    let points = coords
        .into_iter()
        .zip(dc.drain(..))
        .map(|((j, c, v), d)| {
            let variable = sol.variables[j].clone();
            let category = sol.categories[j][c].clone();
            CategoryPoint {
                uncertain: is_uncertain(&variable, &category),
                distance_from_origin: dist(&v, &vec![0.0; p]),
                distance_from_center: d,
                flagged: d > threshold,
                count: sol.counts[j][c],
                variable,
                category,
                coordinates: v,
            }
        })
        .collect();
    CategoryDiagnostics {
        flag_multiple,
        center,
        median_distance,
        points,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codes(cols: &[&[usize]]) -> CategoryCodes {
        let n = cols[0].len();
        let m = cols.len();
        CategoryCodes {
            variables: (0..m).map(|j| format!("v{j}")).collect(),
            categories: cols
                .iter()
                .map(|c| {
                    let k = c.iter().max().unwrap() + 1;
                    (0..k).map(|i| format!("c{i}")).collect()
                })
                .collect(),
            codes: (0..n).map(|r| cols.iter().map(|c| c[r]).collect()).collect(),
        }
    }

    #[test]
    fn single_variable_is_perfectly_homogeneous() {
        let c = codes(&[&[0, 0, 0, 1, 1, 1, 2, 2, 2]]);
        let sol = fit_homals_codes(
            &c,
            &HomalsOptions {
                dims: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(sol.final_loss() < 1e-20, "{}", sol.final_loss());
        for r in 0..9 {
            let cat = c.codes[r][0];
            assert!((sol.object_scores[(r, 0)] - sol.quantifications[0][(cat, 0)]).abs() < 1e-10);
        }
    }

    #[test]
    fn constraints_hold_and_loss_is_monotone() {
        let c = codes(&[
            &[0, 1, 2, 0, 1, 2, 0, 1, 2, 1, 0, 2],
            &[1, 1, 0, 0, 1, 0, 1, 0, 0, 1, 1, 0],
            &[2, 0, 1, 1, 2, 0, 0, 2, 1, 1, 0, 2],
        ]);
        let sol = fit_homals_codes(
            &c,
            &HomalsOptions {
                dims: 2,
                tol: 1e-13,
                max_iter: 20000,
                seed: 3,
            },
        )
        .unwrap();
        assert!(sol.converged);
        let n = 12.0;
        let xtx = sol.object_scores.transpose() * &sol.object_scores;
        assert!((xtx - DMatrix::identity(2, 2) * n).amax() < 1e-7);
        for col in sol.object_scores.column_iter() {
            assert!(col.mean().abs() < 1e-9);
        }
        for w in sol.loss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn empty_category_is_named() {
        let mut c = codes(&[&[0, 1, 0, 1]]);
        c.categories[0].push("ghost".into());
        let err = fit_homals_codes(&c, &HomalsOptions { dims: 1, ..Default::default() }).unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }

    #[test]
    fn too_many_dimensions_rejected() {
        let c = codes(&[&[0, 1, 0, 1], &[1, 0, 0, 1]]);
        assert!(fit_homals_codes(&c, &HomalsOptions { dims: 3, ..Default::default() }).is_err());
    }

    #[test]
    fn infinite_flag_multiple_flags_nothing() {
        let c = codes(&[&[0, 1, 2, 0, 1, 2, 2, 1], &[1, 0, 0, 1, 1, 0, 1, 0]]);
        let sol = fit_homals_codes(&c, &HomalsOptions { dims: 2, ..Default::default() }).unwrap();
        let diag = category_diagnostics(&sol, f64::INFINITY, |_, _| false);
        assert_eq!(diag.flagged().count(), 0);
    }

    #[test]
    fn projection_reproduces_fitted_scores() {
        let c = codes(&[
            &[0, 1, 2, 0, 1, 2, 0, 1, 2, 1, 0, 2],
            &[1, 1, 0, 0, 1, 0, 1, 0, 0, 1, 1, 0],
            &[2, 0, 1, 1, 2, 0, 0, 2, 1, 1, 0, 2],
        ]);
        let sol = fit_homals_codes(
            &c,
            &HomalsOptions {
                dims: 2,
                tol: 1e-14,
                max_iter: 50000,
                seed: 1,
            },
        )
        .unwrap();
        let proj = sol.project(&c.codes);
        assert!((proj - &sol.object_scores).amax() < 1e-5);
    }
}
