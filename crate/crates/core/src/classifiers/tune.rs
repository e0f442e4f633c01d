use std::ops::RangeInclusive;

use super::{train_neural_net, NetConfig, NeuralNet, TrainingMatrix};
use crate::error::{Error, Result};
use crate::evaluation::stratified_fold_ids;
use crate::numeric::{derive_seed, rng_from};

#[derive(Debug, Clone, PartialEq)]
pub struct TuneReport {
    pub hidden: usize,
    /// (hidden size, mean inner-CV accuracy) for every candidate.
    pub scores: Vec<(usize, f64)>,
    /// Final network refit on all rows at the chosen size.
    pub model: NeuralNet,
}

/// Pick the hidden size with the best mean accuracy over an inner stratified
/// `folds`-fold split; ties go to the smaller network.
pub fn tune_neural_net(
    data: &TrainingMatrix,
    hidden: RangeInclusive<usize>,
    folds: usize,
    cfg: &NetConfig,
    seed: u64,
) -> Result<TuneReport> {
    if *hidden.start() == 0 || hidden.is_empty() {
        return Err(Error::validation("hidden sizes must be a non-empty range starting at 1 or more"));
    }
    let smallest = data.class_counts().into_iter().min().unwrap_or(0);
    let folds = folds.min(smallest);
    if folds < 2 {
        return Err(Error::validation("inner cross-validation needs at least two rows per class"));
    }
    let ids = stratified_fold_ids(&data.y, folds, &mut rng_from(seed, &[0]))?;
    let splits: Vec<(TrainingMatrix, Vec<usize>)> = (0..folds)
        .map(|f| {
            let train: Vec<usize> = (0..ids.len()).filter(|&i| ids[i] != f).collect();
            let test: Vec<usize> = (0..ids.len()).filter(|&i| ids[i] == f).collect();
            Ok((data.subset(&train)?, test))
        })
        .collect::<Result<_>>()?;
    let mut scores = Vec::new();
    for h in hidden {
        let net_cfg = NetConfig { hidden: h, ..cfg.clone() };
        let mut correct = 0.0;
        let mut total = 0.0;
        for (f, (train, test)) in splits.iter().enumerate() {
            let net = train_neural_net(train, &net_cfg, derive_seed(seed, &[1, h as u64, f as u64]))?;
            let p = super::argmax_rows(&net.predict_proba(&data.x.select_rows(test)));
            correct += test.iter().zip(&p).filter(|(&i, &k)| data.y[i] == k).count() as f64;
            total += test.len() as f64;
        }
        scores.push((h, correct / total));
    }
    let (best_h, _) = scores
        .iter()
        .copied()
        .fold((0, f64::NEG_INFINITY), |b, s| if s.1 > b.1 { s } else { b });
    let model = train_neural_net(data, &NetConfig { hidden: best_h, ..cfg.clone() }, derive_seed(seed, &[2]))?;
    Ok(TuneReport {
        hidden: best_h,
        scores,
        model,
    })
}
