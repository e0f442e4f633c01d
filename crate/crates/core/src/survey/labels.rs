use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survey::dataset::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassMode {
    TwoClass,
    ThreeClass,
}

impl ClassMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassMode::TwoClass => "two-class",
            ClassMode::ThreeClass => "three-class",
        }
    }
}

/// Rule splitting positive debt levels into Low and High.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DebtSplit {
    /// Low = levels at or below the median positive level among debtors.
    Median,
    /// Low = levels at or below the named category.
    AtLevel(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetLabelling {
    pub mode: ClassMode,
    /// `["NoDebt", "InDebt"]` or `["NoDebt", "Low", "High"]`.
    pub class_names: Vec<String>,
    pub labels: Vec<usize>,
    /// Highest target level counted as Low (three-class mode).
    pub split_level: Option<usize>,
}

impl TargetLabelling {
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.class_names.len()];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

/// Derive class labels from the target variable. The first target category
/// (or `no_debt` if given) means no debt; all others are debt levels in order.
pub fn label_rows(
    data: &Dataset,
    mode: ClassMode,
    no_debt: Option<&str>,
    split: &DebtSplit,
) -> Result<TargetLabelling> {
    let t = data.schema().target_index();
    let spec = data.schema().variable(t);
    let none = match no_debt {
        Some(label) => spec.category_index(label).ok_or_else(|| {
            Error::validation(format!("`{label}` is not a category of target `{}`", spec.name))
        })?,
        None => 0,
    };
    let levels = data.column(t);
    for (r, &l) in levels.iter().enumerate() {
        if spec.is_uncertain_code(l) {
            return Err(Error::validation(format!(
                "row `{}` has an uncertain target answer",
                data.row_ids()[r]
            )));
        }
    }
    match mode {
        ClassMode::TwoClass => Ok(TargetLabelling {
            mode,
            class_names: vec!["NoDebt".into(), "InDebt".into()],
            labels: levels.iter().map(|&l| usize::from(l != none)).collect(),
            split_level: None,
        }),
        ClassMode::ThreeClass => {
            let split_level = match split {
                DebtSplit::AtLevel(label) => spec.category_index(label).ok_or_else(|| {
                    Error::validation(format!("`{label}` is not a category of target `{}`", spec.name))
                })?,
                DebtSplit::Median => {
                    let mut pos: Vec<usize> = levels.iter().copied().filter(|&l| l != none).collect();
                    if pos.is_empty() {
                        return Err(Error::validation("no debtors to split into Low/High"));
                    }
                    pos.sort_unstable();
                    pos[(pos.len() - 1) / 2]
                }
            };
            let labels = levels
                .iter()
                .map(|&l| {
                    if l == none {
                        0
                    } else if l <= split_level {
                        1
                    } else {
                        2
                    }
                })
                .collect();
            Ok(TargetLabelling {
                mode,
                class_names: vec!["NoDebt".into(), "Low".into(), "High".into()],
                labels,
                split_level: Some(split_level),
            })
        }
    }
}
