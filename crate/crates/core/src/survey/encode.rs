use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::survey::dataset::Dataset;
use crate::survey::schema::VariableKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    /// One 0/1 column per category.
    FullIndicator,
    /// One 0/1 column per category except the first.
    ReferenceDropped,
    /// Ordinal position 1..k, centered to mean zero. Likert variables only.
    LikertNumeric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedColumn {
    pub variable: String,
    /// Category label for indicator columns, `None` for likert-numeric columns.
    pub category: Option<String>,
}

/// Contiguous run of columns produced by one source variable.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableBlock {
    pub variable: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub columns: Vec<EncodedColumn>,
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
    pub blocks: Vec<VariableBlock>,
    pub encoding: Encoding,
}

impl EncodedMatrix {
    /// Plain numeric columns, one per name, tagged likert-numeric.
    pub fn numeric(names: Vec<String>, values: DMatrix<f64>) -> EncodedMatrix {
        assert_eq!(names.len(), values.ncols(), "one name per column");
        EncodedMatrix {
            columns: names
                .iter()
                .map(|n| EncodedColumn {
                    variable: n.clone(),
                    category: None,
                })
                .collect(),
            blocks: (0..names.len())
                .map(|i| VariableBlock {
                    variable: names[i].clone(),
                    start: i,
                    len: 1,
                })
                .collect(),
            names,
            values,
            encoding: Encoding::LikertNumeric,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.values.column_iter().map(|c| c.sum()).collect()
    }

    /// Drop indicator columns with no members, keeping the block table consistent.
    pub fn drop_empty_columns(&self) -> EncodedMatrix {
        let sums = self.column_sums();
        let keep: Vec<usize> = (0..self.n_cols()).filter(|&c| sums[c] != 0.0).collect();
        let mut blocks = Vec::new();
        let mut pos = 0;
        for b in &self.blocks {
            let len = (b.start..b.start + b.len).filter(|c| sums[*c] != 0.0).count();
            if len > 0 {
                blocks.push(VariableBlock {
                    variable: b.variable.clone(),
                    start: pos,
                    len,
                });
            }
            pos += len;
        }
        EncodedMatrix {
            columns: keep.iter().map(|&c| self.columns[c].clone()).collect(),
            names: keep.iter().map(|&c| self.names[c].clone()).collect(),
            values: self.values.select_columns(&keep),
            blocks,
            encoding: self.encoding,
        }
    }

    /// Rows `indices` only (column structure unchanged).
    pub fn select_rows(&self, indices: &[usize]) -> EncodedMatrix {
        EncodedMatrix {
            values: self.values.select_rows(indices),
            ..self.clone()
        }
    }
}

/// Dummy-column name: the variable name followed by the category label with
/// every character outside `[A-Za-z0-9._]` replaced by a dot.
pub fn dummy_name(variable: &str, category: &str) -> String {
    let cat: String = category
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' { c } else { '.' })
        .collect();
    format!("{variable}{cat}")
}

/// Encode `variables` (schema order is not imposed; the given order is kept)
/// into a numeric matrix.
pub fn encode(data: &Dataset, variables: &[String], scheme: Encoding) -> Result<EncodedMatrix> {
    if variables.is_empty() {
        return Err(Error::validation("encode needs at least one variable"));
    }
    let schema = data.schema();
    let idx = variables
        .iter()
        .map(|name| schema.require(name))
        .collect::<Result<Vec<_>>>()?;
    let mut idx_sorted = idx.clone();
    idx_sorted.sort_unstable();
    let n = data.n_rows();

    let mut columns = Vec::new();
    let mut names = Vec::new();
    let mut blocks = Vec::new();
    let mut col_data: Vec<Vec<f64>> = Vec::new();

    for &j in &idx_sorted {
        let spec = schema.variable(j);
        let start = columns.len();
        match scheme {
            Encoding::FullIndicator | Encoding::ReferenceDropped => {
                let first = usize::from(scheme == Encoding::ReferenceDropped);
                for (c, label) in spec.categories.iter().enumerate().skip(first) {
                    columns.push(EncodedColumn {
                        variable: spec.name.clone(),
                        category: Some(label.clone()),
                    });
                    names.push(dummy_name(&spec.name, label));
                    col_data.push(
                        (0..n)
                            .map(|r| if data.value(r, j) == c { 1.0 } else { 0.0 })
                            .collect(),
                    );
                }
            }
            Encoding::LikertNumeric => {
                if spec.kind != VariableKind::Likert {
                    return Err(Error::validation(format!(
                        "likert-numeric encoding requested for non-likert variable `{}`",
                        spec.name
                    )));
                }
                let codes: Vec<f64> = (0..n).map(|r| (data.value(r, j) + 1) as f64).collect();
                let mu = codes.iter().sum::<f64>() / n as f64;
                columns.push(EncodedColumn {
                    variable: spec.name.clone(),
                    category: None,
                });
                names.push(spec.name.clone());
                col_data.push(codes.into_iter().map(|x| x - mu).collect());
            }
        }
        blocks.push(VariableBlock {
            variable: spec.name.clone(),
            start,
            len: columns.len() - start,
        });
    }

    let q = col_data.len();
    let values = DMatrix::from_fn(n, q, |r, c| col_data[c][r]);
    Ok(EncodedMatrix {
        columns,
        names,
        values,
        blocks,
        encoding: scheme,
    })
}
