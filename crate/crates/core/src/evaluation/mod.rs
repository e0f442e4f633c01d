//! Experiment harness: undersampling, repeated stratified cross-validation,
//! metrics, paired t-tests, chi-square checks and the stepwise group protocol.

mod balance;
mod cv;
mod metrics;
mod stats;
mod stepwise;

pub use balance::{compare_distributions, shifts_csv, undersample, DistributionShift};
pub use cv::{make_cv_plan, stratified_fold_ids, CvPlan};
pub use metrics::{CellMetrics, Confusion, FoldMetrics};
pub use stats::{chi_square_homogeneity, paired_t_test, ChiSquare, TTest};
pub use stepwise::{
    all_set_names, category_codes, dummy_matrix, homals_features, run_stepwise, Group, PredictorSet, StepEntry, StepTest,
    StepwiseConfig, StepwiseData, StepwiseResult, Variant, PREDICTOR_SETS, STEP1, STEP2, STEP3,
};

use rayon::prelude::*;

use crate::classifiers::{fit_model, FittedModel, ModelConfig, ModelFamily, TrainingMatrix};
use crate::error::{Error, Result};
use crate::numeric::derive_seed;

/// Cross-validate one family on fixed predictors. Each cell trains on the
/// plan's training rows only; the model's own preprocessing is fitted there.
pub fn cross_validate(
    family: ModelFamily,
    cfg: &ModelConfig,
    data: &TrainingMatrix,
    plan: &CvPlan,
) -> Result<FoldMetrics> {
    if plan.n_rows() != data.n_rows() {
        return Err(Error::validation("CV plan was built for a different number of rows"));
    }
    let cells: Vec<(usize, usize)> = plan.cells().collect();
    let cells = cells
        .par_iter()
        .map(|&(repeat, fold)| {
            let test = plan.test_rows(repeat, fold);
            let model = fit_cell(family, cfg, data, plan, repeat, fold)?;
            let pred = model.predict(&data.x.select_rows(&test));
            let truth: Vec<usize> = test.iter().map(|&i| data.y[i]).collect();
            Ok(CellMetrics {
                repeat,
                fold,
                confusion: Confusion::from_predictions(data.n_classes(), &truth, &pred),
            })
        })
        .collect::<Vec<Result<CellMetrics>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldMetrics {
        class_names: data.class_names.clone(),
        cells,
    })
}

/// The model trained for one cell. It sees only the cell's training rows.
pub fn fit_cell(
    family: ModelFamily,
    cfg: &ModelConfig,
    data: &TrainingMatrix,
    plan: &CvPlan,
    repeat: usize,
    fold: usize,
) -> Result<FittedModel> {
    let here = |e: Error| e.context(&format!("{family}, repeat {}, fold {}", repeat + 1, fold + 1));
    let tm = data.subset(&plan.train_rows(repeat, fold)).map_err(here)?;
    fit_model(family, cfg, &tm, derive_seed(plan.cell_seed(repeat, fold), &[0])).map_err(here)
}
