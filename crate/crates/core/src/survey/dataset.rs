use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::survey::schema::SurveySchema;

/// Rectangular table of coded survey responses. Values are category indices
/// into the corresponding variable's category list.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: SurveySchema,
    row_ids: Vec<String>,
    rows: Vec<Vec<u32>>,
}

impl Dataset {
    pub fn new(schema: SurveySchema, row_ids: Vec<String>, rows: Vec<Vec<u32>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::validation("dataset must contain at least one row"));
        }
        if row_ids.len() != rows.len() {
            return Err(Error::validation(format!(
                "{} row ids for {} rows",
                row_ids.len(),
                rows.len()
            )));
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::validation(format!(
                    "row {} has {} values, schema has {} variables",
                    r + 1,
                    row.len(),
                    schema.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                let k = schema.variable(j).categories.len();
                if v as usize >= k {
                    return Err(Error::validation(format!(
                        "row {}: value {v} out of range for `{}` ({k} categories)",
                        r + 1,
                        schema.variable(j).name
                    )));
                }
            }
        }
        Ok(Dataset {
            schema,
            row_ids,
            rows,
        })
    }

    pub fn schema(&self) -> &SurveySchema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.rows[r]
    }

    pub fn value(&self, r: usize, var: usize) -> usize {
        self.rows[r][var] as usize
    }

    pub fn column(&self, var: usize) -> Vec<usize> {
        self.rows.iter().map(|row| row[var] as usize).collect()
    }

    pub fn label(&self, r: usize, var: usize) -> &str {
        &self.schema.variable(var).categories[self.value(r, var)]
    }

    pub fn is_uncertain(&self, r: usize, var: usize) -> bool {
        self.schema.variable(var).is_uncertain_code(self.value(r, var))
    }

    /// Rows `indices` in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            row_ids: indices.iter().map(|&i| self.row_ids[i].clone()).collect(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Per-category member counts of one variable.
    pub fn category_counts(&self, var: usize) -> Vec<usize> {
        let mut counts = vec![0; self.schema.variable(var).categories.len()];
        for row in &self.rows {
            counts[row[var] as usize] += 1;
        }
        counts
    }

    /// Number of uncertain answers per variable, in schema order.
    pub fn uncertain_counts(&self) -> Vec<(String, usize)> {
        (0..self.schema.len())
            .map(|j| {
                let n = (0..self.n_rows()).filter(|&r| self.is_uncertain(r, j)).count();
                (self.schema.variable(j).name.clone(), n)
            })
            .collect()
    }

    /// Parse CSV text against `schema`. Data rows are numbered from 1
    /// (the header is not counted) in error messages.
    pub fn from_csv_reader<R: Read>(schema: SurveySchema, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::load("header", e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();

        let offset = usize::from(schema.id_column.is_some());
        if let Some(id) = &schema.id_column {
            if header.first() != Some(id) {
                return Err(Error::load(
                    "header",
                    format!("expected id column `{id}` first, found {:?}", header.first()),
                ));
            }
        }
        let expected: Vec<&str> = schema.variables.iter().map(|v| v.name.as_str()).collect();
        let found: Vec<&str> = header[offset.min(header.len())..].iter().map(String::as_str).collect();
        if let Some(unknown) = found.iter().find(|h| !expected.contains(h)) {
            return Err(Error::load(
                "header",
                format!("unknown column `{unknown}`"),
            ));
        }
        if found != expected {
            return Err(Error::load(
                "header",
                format!("columns {found:?} do not match schema variables {expected:?}"),
            ));
        }

        let width = header.len();
        let mut row_ids = Vec::new();
        let mut rows = Vec::new();
        for (r, record) in rdr.records().enumerate() {
            let row_no = r + 1;
            let record = record.map_err(|e| Error::load(format!("row {row_no}"), e.to_string()))?;
            if record.len() != width {
                return Err(Error::load(
                    format!("row {row_no}"),
                    format!("ragged row: {} fields, header has {width}", record.len()),
                ));
            }
            let id = if offset == 1 {
                record[0].to_string()
            } else {
                row_no.to_string()
            };
            let mut coded = Vec::with_capacity(schema.len());
            for (j, var) in schema.variables.iter().enumerate() {
                let cell = &record[j + offset];
                let code = var.category_index(cell).ok_or_else(|| {
                    Error::load(
                        format!("row {row_no}, column `{}`", var.name),
                        format!("unknown category label `{cell}`"),
                    )
                })?;
                coded.push(code as u32);
            }
            row_ids.push(id);
            rows.push(coded);
        }
        if rows.is_empty() {
            return Err(Error::load("data", "no data rows"));
        }
        Dataset::new(schema, row_ids, rows)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        let mut header: Vec<&str> = Vec::new();
        if let Some(id) = &self.schema.id_column {
            header.push(id);
        }
        header.extend(self.schema.variables.iter().map(|v| v.name.as_str()));
        w.write_record(&header).map_err(csv_err)?;
        for r in 0..self.n_rows() {
            let mut rec: Vec<&str> = Vec::with_capacity(header.len());
            if self.schema.id_column.is_some() {
                rec.push(&self.row_ids[r]);
            }
            rec.extend((0..self.schema.len()).map(|j| self.label(r, j)));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8 labels")
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::validation(format!("csv write: {e}"))
}

/// Load a schema file and a CSV file into a [`Dataset`].
pub fn load_dataset(schema_path: &Path, csv_path: &Path) -> Result<Dataset> {
    let schema = SurveySchema::from_path(schema_path)?;
    let file = std::fs::File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
    Dataset::from_csv_reader(schema, std::io::BufReader::new(file)).map_err(|e| match e {
        Error::Load { location, message } => {
            Error::load(format!("{}: {location}", csv_path.display()), message)
        }
        other => other,
    })
}

/// Outcome of [`drop_systematic_nonresponse`].
#[derive(Debug, Clone, PartialEq)]
pub struct RemovalReport {
    pub rows_before: usize,
    pub rows_after: usize,
    pub removed_ids: Vec<String>,
    /// (variable, uncertain count before, uncertain count after), schema order.
    pub tallies: Vec<(String, usize, usize)>,
}

impl RemovalReport {
    pub fn removed(&self) -> usize {
        self.rows_before - self.rows_after
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("variable,uncertain_before,uncertain_after\n");
        for (name, b, a) in &self.tallies {
            out.push_str(&format!("{name},{b},{a}\n"));
        }
        out.push_str(&format!(
            "_rows,{},{}\n_removed,{},0\n",
            self.rows_before,
            self.rows_after,
            self.removed()
        ));
        out
    }
}

/// Remove every row whose count of uncertain answers over `watched` is at
/// least `min_hits`.
pub fn drop_systematic_nonresponse(
    data: &Dataset,
    watched: &[String],
    min_hits: usize,
) -> Result<(Dataset, RemovalReport)> {
    if min_hits == 0 {
        return Err(Error::validation("min_hits must be at least 1"));
    }
    let watched_idx = watched
        .iter()
        .map(|name| data.schema().require(name))
        .collect::<Result<Vec<_>>>()?;

    let mut keep = Vec::with_capacity(data.n_rows());
    let mut removed_ids = Vec::new();
    for r in 0..data.n_rows() {
        let hits = watched_idx.iter().filter(|&&j| data.is_uncertain(r, j)).count();
        if hits >= min_hits {
            removed_ids.push(data.row_ids()[r].clone());
        } else {
            keep.push(r);
        }
    }
    if keep.len() < 2 {
        return Err(Error::validation(format!(
            "removing systematic non-responders would leave {} row(s)",
            keep.len()
        )));
    }
    let cleaned = data.subset(&keep);
    let before = data.uncertain_counts();
    let after = cleaned.uncertain_counts();
    let tallies = before
        .into_iter()
        .zip(after)
        .map(|((name, b), (_, a))| (name, b, a))
        .collect();
    let report = RemovalReport {
        rows_before: data.n_rows(),
        rows_after: cleaned.n_rows(),
        removed_ids,
        tallies,
    };
    Ok((cleaned, report))
}
