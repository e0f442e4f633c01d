//! Survey data model: schema, coded dataset, encodings, target labelling and
//! the synthetic survey generator.

mod dataset;
mod encode;
mod labels;
mod schema;
mod synth;

pub use dataset::{drop_systematic_nonresponse, load_dataset, Dataset, RemovalReport};
pub use encode::{dummy_name, encode, EncodedColumn, EncodedMatrix, Encoding, VariableBlock};
pub use labels::{label_rows, ClassMode, DebtSplit, TargetLabelling};
pub use schema::{SurveySchema, VariableGroup, VariableKind, VariableSpec};
pub use synth::{generate_synthetic_survey, CategoricalConfig, GeneratorConfig, GroundTruth};
