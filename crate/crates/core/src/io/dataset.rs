use super::DataError;
use std::collections::BTreeSet;
use std::path::Path;

/// A typed column. Missing numeric entries are stored as NaN, missing
/// categorical entries as the empty string.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn is_missing(&self, row: usize) -> bool {
        match self {
            Column::Numeric(v) => v[row].is_nan(),
            Column::Categorical(v) => v[row].is_empty(),
        }
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&r| v[r]).collect()),
            Column::Categorical(v) => {
                Column::Categorical(rows.iter().map(|&r| v[r].clone()).collect())
            }
        }
    }

    /// Sorted distinct non-missing levels of a categorical column.
    pub fn levels(&self) -> Vec<String> {
        match self {
            Column::Numeric(_) => Vec::new(),
            Column::Categorical(v) => v
                .iter()
                .filter(|s| !s.is_empty())
                .cloned()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Column>,
    n_rows: usize,
}

impl Dataset {
    pub fn new(names: Vec<String>, columns: Vec<Column>) -> Result<Self, DataError> {
        if names.len() != columns.len() {
            return Err(DataError::Invalid(
                "column names and columns differ in length".into(),
            ));
        }
        let n_rows = columns.first().map_or(0, Column::len);
        if columns.iter().any(|c| c.len() != n_rows) {
            return Err(DataError::Invalid("columns have different lengths".into()));
        }
        if n_rows == 0 {
            return Err(DataError::EmptyData);
        }
        Ok(Dataset {
            names,
            columns,
            n_rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &Column)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.columns.iter())
    }

    pub fn column(&self, name: &str) -> Result<&Column, DataError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| DataError::UnknownVariable(name.to_string()))
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64], DataError> {
        match self.column(name)? {
            Column::Numeric(v) => Ok(v),
            Column::Categorical(_) => Err(DataError::NotNumeric(name.to_string())),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset, DataError> {
        Dataset::new(
            self.names.clone(),
            self.columns.iter().map(|c| c.select(rows)).collect(),
        )
    }

    /// Drops rows with a missing value in any of `used`. Returns the reduced
    /// dataset and the number of dropped rows.
    pub fn complete_cases(&self, used: &[&str]) -> Result<(Dataset, usize), DataError> {
        let cols = used
            .iter()
            .map(|name| self.column(name))
            .collect::<Result<Vec<_>, _>>()?;
        let keep: Vec<usize> = (0..self.n_rows)
            .filter(|&r| cols.iter().all(|c| !c.is_missing(r)))
            .collect();
        let dropped = self.n_rows - keep.len();
        if dropped > 0 {
            log::warn!("dropped {dropped} rows with missing values");
        }
        Ok((self.select_rows(&keep)?, dropped))
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<(), DataError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.names)?;
        for r in 0..self.n_rows {
            let row: Vec<String> = self
                .columns
                .iter()
                .map(|c| match c {
                    Column::Numeric(v) if v[r].is_nan() => String::new(),
                    Column::Numeric(v) => format!("{:?}", v[r]),
                    Column::Categorical(v) => v[r].clone(),
                })
                .collect();
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| DataError::Io(e.to_string()))?;
        Ok(())
    }
}

/// Reads a headed, comma-separated file. A column is numeric iff every
/// non-empty field parses as a decimal number.
pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let names: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut raw: Vec<Vec<String>> = vec![Vec::new(); names.len()];
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Parse {
            row: i + 2,
            column: String::new(),
            message: e.to_string(),
        })?;
        if record.len() != names.len() {
            return Err(DataError::Parse {
                row: i + 2,
                column: String::new(),
                message: format!("expected {} fields, found {}", names.len(), record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            raw[j].push(field.to_string());
        }
    }
    if raw.first().is_none_or(Vec::is_empty) {
        return Err(DataError::EmptyData);
    }
    let columns = raw
        .into_iter()
        .map(|fields| {
            let parsed: Option<Vec<f64>> = fields
                .iter()
                .map(|f| {
                    if f.is_empty() {
                        Some(f64::NAN)
                    } else {
                        f.parse::<f64>().ok().filter(|v| v.is_finite())
                    }
                })
                .collect();
            match parsed {
                Some(v) if v.iter().any(|x| !x.is_nan()) => Column::Numeric(v),
                _ => Column::Categorical(fields),
            }
        })
        .collect();
    Dataset::new(names, columns)
}
