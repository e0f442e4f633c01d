use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::numeric::mean;

#[derive(Debug, Clone, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub p: f64,
    pub mean_difference: f64,
    pub alpha: f64,
    pub significant: bool,
    /// All differences were exactly zero.
    pub degenerate: bool,
}

/// Two-sided paired t-test of `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64], alpha: f64) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::validation("paired t-test needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let md = mean(&d);
    let df = n - 1;
    if d.iter().all(|&v| v == 0.0) {
        return Ok(TTest {
            t: 0.0,
            df,
            p: 1.0,
            mean_difference: 0.0,
            alpha,
            significant: false,
            degenerate: true,
        });
    }
    let ss: f64 = d.iter().map(|v| (v - md) * (v - md)).sum();
    let se = (ss / df as f64 / n as f64).sqrt();
    let (t, p) = if se == 0.0 {
        // constant nonzero difference: infinitely strong evidence
        (f64::INFINITY.copysign(md), 0.0)
    } else {
        let t = md / se;
        let dist = StudentsT::new(0.0, 1.0, df as f64).expect("valid t distribution");
        (t, (2.0 * dist.sf(t.abs())).min(1.0))
    };
    Ok(TTest {
        t,
        df,
        p,
        mean_difference: md,
        alpha,
        significant: p < alpha,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub df: usize,
    pub p: f64,
    /// Largest absolute difference between the two samples' category proportions.
    pub max_shift: f64,
}

/// Chi-square test of homogeneity for two samples over the same categories.
pub fn chi_square_homogeneity(a: &[usize], b: &[usize]) -> Result<ChiSquare> {
    if a.len() != b.len() {
        return Err(Error::validation("samples have different category sets"));
    }
    if a.len() < 2 {
        return Err(Error::validation("chi-square test needs at least two categories"));
    }
    let na: usize = a.iter().sum();
    let nb: usize = b.iter().sum();
    if na == 0 || nb == 0 {
        return Err(Error::validation("a sample is empty, so expected counts are zero"));
    }
    let total = (na + nb) as f64;
    let mut stat = 0.0;
    let mut max_shift: f64 = 0.0;
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        let col = (x + y) as f64;
        if col == 0.0 {
            return Err(Error::validation(format!(
                "category {} has zero expected count; merge it with a neighbour",
                i + 1
            )));
        }
        for (o, n) in [(x, na), (y, nb)] {
            let e = n as f64 * col / total;
            stat += (o as f64 - e).powi(2) / e;
        }
        max_shift = max_shift.max((x as f64 / na as f64 - y as f64 / nb as f64).abs());
    }
    let df = a.len() - 1;
    let p = if stat <= 0.0 {
        1.0
    } else {
        ChiSquared::new(df as f64).expect("valid chi-square").sf(stat)
    };
    Ok(ChiSquare {
        statistic: stat,
        df,
        p,
        max_shift,
    })
}
