//! Test-only oracles and data builders shared by the integration tests.
#![allow(dead_code)]

use debtmine::homals::CategoryCodes;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random categorical instance where every category has at least one member.
pub fn random_codes(rng: &mut ChaCha8Rng, n: usize, ks: &[usize]) -> CategoryCodes {
    loop {
        let codes: Vec<Vec<usize>> = (0..n)
            .map(|_| ks.iter().map(|&k| rng.random_range(0..k)).collect())
            .collect();
        let ok = ks.iter().enumerate().all(|(j, &k)| (0..k).all(|c| codes.iter().any(|r| r[j] == c)));
        if ok {
            return CategoryCodes {
                variables: (0..ks.len()).map(|j| format!("v{j}")).collect(),
                categories: ks.iter().map(|&k| (0..k).map(|c| format!("c{c}")).collect()).collect(),
                codes,
            };
        }
    }
}

/// Closed-form MCA: eigenvectors of the normalised Burt matrix
/// D^{-1/2} B D^{-1/2} with the trivial solution deflated, mapped to object
/// scores x = G D^{-1/2} u. Returns (eigenvalues desc, n×p scores).
pub fn burt_oracle(codes: &CategoryCodes, p: usize) -> (Vec<f64>, DMatrix<f64>) {
    let n = codes.codes.len();
    let ks: Vec<usize> = codes.categories.iter().map(Vec::len).collect();
    let offsets: Vec<usize> = ks
        .iter()
        .scan(0, |acc, &k| {
            let o = *acc;
            *acc += k;
            Some(o)
        })
        .collect();
    let q: usize = ks.iter().sum();
    let m = ks.len() as f64;
    let mut g = DMatrix::zeros(n, q);
    for (r, row) in codes.codes.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            g[(r, offsets[j] + c)] = 1.0;
        }
    }
    let b = g.transpose() * &g;
    let d: Vec<f64> = (0..q).map(|i| b[(i, i)]).collect();
    let dinv_sqrt = DMatrix::from_fn(q, q, |i, j| if i == j { 1.0 / d[i].sqrt() } else { 0.0 });
    let mut s = &dinv_sqrt * &b * &dinv_sqrt;
    let u0 = nalgebra::DVector::from_iterator(q, d.iter().map(|x| x.sqrt()));
    let u0 = &u0 / u0.norm();
    s -= (&u0 * u0.transpose()) * m;
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut u = DMatrix::zeros(q, p);
    for (dst, &src) in order.iter().take(p).enumerate() {
        u.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, &g * &dinv_sqrt * u)
}

fn orth(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().qr().q()
}

/// Largest principal angle (radians) between the column spaces of `a` and `b`.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = orth(a);
    let qb = orth(b);
    let resid = &qb - &qa * (qa.transpose() * &qb);
    let sv = resid.svd(false, false).singular_values;
    sv.iter().cloned().fold(0.0, f64::max).min(1.0).asin()
}

/// Tucker congruence between two vectors.
pub fn congruence(a: &[f64], b: &[f64]) -> f64 {
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    ab / (aa * bb).sqrt()
}

/// Best per-factor congruence after matching columns (permutation and sign).
pub fn matched_congruences(truth: &DMatrix<f64>, est: &DMatrix<f64>) -> Vec<f64> {
    let m = truth.ncols();
    let perms = permutations(m);
    let mut best: Option<Vec<f64>> = None;
    for perm in perms {
        let cs: Vec<f64> = (0..m)
            .map(|f| {
                let t: Vec<f64> = truth.column(f).iter().copied().collect();
                let e: Vec<f64> = est.column(perm[f]).iter().copied().collect();
                congruence(&t, &e).abs()
            })
            .collect();
        let min = cs.iter().cloned().fold(f64::INFINITY, f64::min);
        if best.as_ref().is_none_or(|b| min > b.iter().cloned().fold(f64::INFINITY, f64::min)) {
            best = Some(cs);
        }
    }
    best.unwrap()
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(m - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, m - 1);
            out.push(q);
        }
    }
    out
}

/// Regularized incomplete beta via continued fraction (Numerical Recipes),
/// used as an independent Student-t CDF oracle.
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    d = 1.0 / d;
    let mut h = d;
    for m in 1..300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        c = 1.0 + aa / c;
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        c = 1.0 + aa / c;
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation (g = 7, n = 9)
    let coef = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let x = x - 1.0;
    let mut a = coef[0];
    let t = x + 7.5;
    for (i, c) in coef.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let bt = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        bt * betacf(a, b, x) / a
    } else {
        1.0 - bt * betacf(b, a, 1.0 - x) / b
    }
}

/// Two-sided p-value of Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    reg_inc_beta(df / 2.0, 0.5, df / (df + t * t))
}
