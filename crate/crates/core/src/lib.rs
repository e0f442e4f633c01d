//! Survey-data mining toolkit for modelling consumer indebtedness.
//!
//! - [`survey`]: schema, coded datasets, encodings, synthetic generator
//! - [`homals`]: homogeneity analysis (multiple correspondence analysis) by alternating least squares
//! - [`psychometrics`]: correlation, scree, parallel analysis, principal-axis factoring, varimax, Cronbach's alpha
//! - [`classifiers`]: multinomial logistic regression, random forest, one-hidden-layer network
//! - [`evaluation`]: undersampling, stratified repeated CV, paired t-tests, stepwise group protocol
//! - [`pipeline`]: config-driven clean / factors / evaluate / report stages

pub mod classifiers;
pub mod error;
pub mod evaluation;
pub mod homals;
pub mod numeric;
pub mod pipeline;
pub mod plot;
pub mod psychometrics;
pub mod survey;

pub use error::{Error, Result};
