use std::fmt::Write as _;

use rand::seq::index::sample;

use super::stats::chi_square_homogeneity;
use crate::error::{Error, Result};
use crate::numeric::rng_from;
use crate::survey::Dataset;

/// Keep a uniform random `target_count` rows of `target_class` and every row
/// of the other classes. Returns kept row indices in their original order.
pub fn undersample(labels: &[usize], target_class: usize, target_count: usize, seed: u64) -> Result<Vec<usize>> {
    let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == target_class).collect();
    if target_count > members.len() {
        return Err(Error::validation(format!(
            "cannot keep {target_count} rows of class {target_class}: it has only {}",
            members.len()
        )));
    }
    let mut keep = vec![true; labels.len()];
    for &i in &members {
        keep[i] = false;
    }
    for j in sample(&mut rng_from(seed, &[]), members.len(), target_count).into_iter() {
        keep[members[j]] = true;
    }
    Ok((0..labels.len()).filter(|&i| keep[i]).collect())
}

/// Chi-square comparison of one variable's category distribution in two samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionShift {
    pub variable: String,
    pub statistic: f64,
    pub df: usize,
    pub p: f64,
    pub max_shift: f64,
}

/// Compare `a` and `b` variable by variable. Categories empty in both samples
/// are left out; variables with fewer than two occupied categories are skipped.
pub fn compare_distributions(a: &Dataset, b: &Dataset, variables: &[String]) -> Result<Vec<DistributionShift>> {
    let mut out = Vec::new();
    for v in variables {
        let ia = a.schema().require(v)?;
        let ib = b.schema().require(v)?;
        let ca = a.category_counts(ia);
        let cb = b.category_counts(ib);
        if ca.len() != cb.len() {
            return Err(Error::validation(format!("`{v}` has different categories in the two samples")));
        }
        let occupied: Vec<usize> = (0..ca.len()).filter(|&k| ca[k] + cb[k] > 0).collect();
        if occupied.len() < 2 {
            continue;
        }
        let xa: Vec<usize> = occupied.iter().map(|&k| ca[k]).collect();
        let xb: Vec<usize> = occupied.iter().map(|&k| cb[k]).collect();
        let t = chi_square_homogeneity(&xa, &xb)?;
        out.push(DistributionShift {
            variable: v.clone(),
            statistic: t.statistic,
            df: t.df,
            p: t.p,
            max_shift: t.max_shift,
        });
    }
    Ok(out)
}

pub fn shifts_csv(rows: &[DistributionShift]) -> String {
    let mut out = String::from("variable,chi_square,df,p_value,max_shift\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.6},{},{:.6},{:.6}", r.variable, r.statistic, r.df, r.p, r.max_shift);
    }
    out
}
