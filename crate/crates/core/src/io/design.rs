use super::{Column, DataError, Dataset, Formula, Term};
use nalgebra::DMatrix;

pub const INTERCEPT: &str = "(Intercept)";

/// Numeric model matrix with column labels. Column 0 is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub matrix: DMatrix<f64>,
    pub labels: Vec<String>,
    /// Formula term that produced each column; `None` for the intercept.
    pub term_of_column: Vec<Option<usize>>,
    /// `(variable, reference level)` for every categorical variable used.
    pub reference_levels: Vec<(String, String)>,
}

struct Encoded {
    labels: Vec<String>,
    columns: Vec<Vec<f64>>,
}

fn encode_variable(
    data: &Dataset,
    name: &str,
    refs: &mut Vec<(String, String)>,
) -> Result<Encoded, DataError> {
    match data.column(name)? {
        Column::Numeric(v) => Ok(Encoded {
            labels: vec![name.to_string()],
            columns: vec![v.clone()],
        }),
        col @ Column::Categorical(values) => {
            let levels = col.levels();
            if let Some(reference) = levels.first() {
                if !refs.iter().any(|(v, _)| v == name) {
                    refs.push((name.to_string(), reference.clone()));
                }
            }
            let (labels, columns) = levels
                .iter()
                .skip(1)
                .map(|level| {
                    let dummy = values
                        .iter()
                        .map(|s| if s == level { 1.0 } else { 0.0 })
                        .collect();
                    (format!("{name}{level}"), dummy)
                })
                .unzip();
            Ok(Encoded { labels, columns })
        }
    }
}

fn encode_term(
    data: &Dataset,
    term: &Term,
    refs: &mut Vec<(String, String)>,
) -> Result<Encoded, DataError> {
    match term {
        Term::Var(name) => encode_variable(data, name, refs),
        Term::Square(name) => {
            let v = data.numeric(name).map_err(|e| match e {
                DataError::NotNumeric(n) => {
                    DataError::Formula(format!("cannot square categorical variable {n}"))
                }
                other => other,
            })?;
            Ok(Encoded {
                labels: vec![format!("{name}^2")],
                columns: vec![v.iter().map(|x| x * x).collect()],
            })
        }
        Term::Interaction(names) => {
            let mut acc = Encoded {
                labels: vec![String::new()],
                columns: vec![vec![1.0; data.n_rows()]],
            };
            for name in names {
                let part = encode_variable(data, name, refs)?;
                let mut labels = Vec::new();
                let mut columns = Vec::new();
                for (la, ca) in acc.labels.iter().zip(&acc.columns) {
                    for (lb, cb) in part.labels.iter().zip(&part.columns) {
                        labels.push(if la.is_empty() {
                            lb.clone()
                        } else {
                            format!("{la}:{lb}")
                        });
                        columns.push(ca.iter().zip(cb).map(|(a, b)| a * b).collect());
                    }
                }
                acc = Encoded { labels, columns };
            }
            Ok(acc)
        }
    }
}

/// Builds the model matrix: intercept first, categorical variables dummy-coded
/// against their lexicographically smallest level, interactions as products.
pub fn build_design(data: &Dataset, formula: &Formula) -> Result<DesignMatrix, DataError> {
    let n = data.n_rows();
    let mut labels = vec![INTERCEPT.to_string()];
    let mut columns = vec![vec![1.0; n]];
    let mut term_of_column = vec![None];
    let mut reference_levels = Vec::new();
    for (t, term) in formula.terms.iter().enumerate() {
        let enc = encode_term(data, term, &mut reference_levels)?;
        for (label, col) in enc.labels.into_iter().zip(enc.columns) {
            if col.iter().any(|x| x.is_nan()) {
                return Err(DataError::Invalid(format!(
                    "missing values in column {label}"
                )));
            }
            labels.push(label);
            columns.push(col);
            term_of_column.push(Some(t));
        }
    }
    let matrix = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
    Ok(DesignMatrix {
        matrix,
        labels,
        term_of_column,
        reference_levels,
    })
}

impl DesignMatrix {
    /// Intercept-only design with `n` rows.
    pub fn intercept_only(n: usize) -> DesignMatrix {
        DesignMatrix {
            matrix: DMatrix::from_element(n, 1, 1.0),
            labels: vec![INTERCEPT.to_string()],
            term_of_column: vec![None],
            reference_levels: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn rank(&self) -> usize {
        let svd = self.matrix.clone().svd(false, false);
        let max = svd.singular_values.max();
        if max == 0.0 {
            return 0;
        }
        let tol = max * 1e-10 * (self.n_rows().max(self.n_cols()) as f64);
        svd.singular_values.iter().filter(|&&s| s > tol).count()
    }

    pub fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        DesignMatrix {
            matrix: self.matrix.select_rows(rows.iter()),
            ..self.clone()
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> DesignMatrix {
        DesignMatrix {
            matrix: self.matrix.select_columns(cols.iter()),
            labels: cols.iter().map(|&c| self.labels[c].clone()).collect(),
            term_of_column: cols.iter().map(|&c| self.term_of_column[c]).collect(),
            reference_levels: self.reference_levels.clone(),
        }
    }

    /// Removes every column generated by one of `terms` (indices into the formula).
    pub fn drop_terms(&self, terms: &[usize]) -> DesignMatrix {
        let keep: Vec<usize> = (0..self.n_cols())
            .filter(|&c| !matches!(self.term_of_column[c], Some(t) if terms.contains(&t)))
            .collect();
        self.select_columns(&keep)
    }

    pub fn column_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}
