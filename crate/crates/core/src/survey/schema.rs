use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a variable is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariableKind {
    Categorical,
    Likert,
    NumericBand,
}

/// Which block of the analysis a variable belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariableGroup {
    Demographic,
    Financial,
    Psychological,
    Target,
}

impl VariableGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            VariableGroup::Demographic => "demographic",
            VariableGroup::Financial => "financial",
            VariableGroup::Psychological => "psychological",
            VariableGroup::Target => "target",
        }
    }
}

impl fmt::Display for VariableGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VariableKind,
    pub group: VariableGroup,
    pub categories: Vec<String>,
    /// Categories that carry no information about the quantity asked
    /// ("Don't know", "Prefer not to answer").
    #[serde(default)]
    pub uncertain: Vec<String>,
}

impl VariableSpec {
    pub fn category_index(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }

    pub fn is_uncertain_code(&self, code: usize) -> bool {
        self.categories
            .get(code)
            .is_some_and(|c| self.uncertain.iter().any(|u| u == c))
    }

    pub fn uncertain_codes(&self) -> Vec<usize> {
        (0..self.categories.len())
            .filter(|&c| self.is_uncertain_code(c))
            .collect()
    }
}

/// Ordered list of variable declarations plus an optional row-identifier column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveySchema {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_column: Option<String>,
    #[serde(rename = "variable")]
    pub variables: Vec<VariableSpec>,
}

impl SurveySchema {
    pub fn new(id_column: Option<String>, variables: Vec<VariableSpec>) -> Result<Self> {
        let schema = SurveySchema {
            id_column,
            variables,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: SurveySchema =
            toml::from_str(text).map_err(|e| Error::load("schema", e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Load { message, .. } => Error::load(path.display().to_string(), message),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.variables.is_empty() {
            return Err(Error::validation("schema declares no variables"));
        }
        let mut seen = HashSet::new();
        for v in &self.variables {
            if !seen.insert(v.name.as_str()) {
                return Err(Error::validation(format!("duplicate variable `{}`", v.name)));
            }
            if Some(&v.name) == self.id_column.as_ref() {
                return Err(Error::validation(format!(
                    "variable `{}` collides with the id column",
                    v.name
                )));
            }
            if v.categories.is_empty() {
                return Err(Error::validation(format!("variable `{}` has no categories", v.name)));
            }
            let cats: HashSet<&str> = v.categories.iter().map(String::as_str).collect();
            if cats.len() != v.categories.len() {
                return Err(Error::validation(format!(
                    "variable `{}` repeats a category label",
                    v.name
                )));
            }
            if let Some(u) = v.uncertain.iter().find(|u| !cats.contains(u.as_str())) {
                return Err(Error::validation(format!(
                    "variable `{}`: uncertain code `{u}` is not one of its categories",
                    v.name
                )));
            }
            if v.kind == VariableKind::Likert && v.categories.len() < 2 {
                return Err(Error::validation(format!(
                    "likert variable `{}` needs at least 2 ordered categories",
                    v.name
                )));
            }
        }
        let targets = self
            .variables
            .iter()
            .filter(|v| v.group == VariableGroup::Target)
            .count();
        if targets != 1 {
            return Err(Error::validation(format!(
                "schema must declare exactly one target variable, found {targets}"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::validation(format!("unknown variable `{name}`")))
    }

    pub fn variable(&self, index: usize) -> &VariableSpec {
        &self.variables[index]
    }

    pub fn target_index(&self) -> usize {
        self.variables
            .iter()
            .position(|v| v.group == VariableGroup::Target)
            .expect("validated schema has a target")
    }

    /// Names of the variables in `group`, in schema order.
    pub fn group_members(&self, group: VariableGroup) -> Vec<String> {
        self.variables
            .iter()
            .filter(|v| v.group == group)
            .map(|v| v.name.clone())
            .collect()
    }
}
