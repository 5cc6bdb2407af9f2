use super::{Column, Dataset};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnSummary {
    Numeric {
        name: String,
        n: usize,
        min: f64,
        max: f64,
        mean: f64,
        sd: f64,
    },
    /// 0/1 indicator: percentage of ones.
    Binary {
        name: String,
        n: usize,
        percentage: f64,
    },
    Categorical {
        name: String,
        n: usize,
        levels: Vec<(String, f64)>,
    },
}

/// Per-column summaries: min/max/mean/sd for numeric columns, percentage of
/// ones for indicators and level percentages for categorical columns.
/// Missing entries are ignored.
pub fn summarize(data: &Dataset) -> Vec<ColumnSummary> {
    data.columns()
        .map(|(name, col)| match col {
            Column::Numeric(v) => {
                let vals: Vec<f64> = v.iter().copied().filter(|x| !x.is_nan()).collect();
                let n = vals.len();
                if vals.iter().all(|&x| x == 0.0 || x == 1.0) {
                    let ones = vals.iter().filter(|&&x| x == 1.0).count();
                    return ColumnSummary::Binary {
                        name: name.to_string(),
                        n,
                        percentage: 100.0 * ones as f64 / n as f64,
                    };
                }
                let mean = vals.iter().sum::<f64>() / n as f64;
                let ss: f64 = vals.iter().map(|x| (x - mean).powi(2)).sum();
                let sd = if n > 1 {
                    (ss / (n - 1) as f64).sqrt()
                } else {
                    0.0
                };
                ColumnSummary::Numeric {
                    name: name.to_string(),
                    n,
                    min: vals.iter().copied().fold(f64::INFINITY, f64::min),
                    max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    mean,
                    sd,
                }
            }
            Column::Categorical(v) => {
                let present: Vec<&String> = v.iter().filter(|s| !s.is_empty()).collect();
                let n = present.len();
                let levels = col
                    .levels()
                    .into_iter()
                    .map(|level| {
                        let count = present.iter().filter(|s| ***s == level).count();
                        (level, 100.0 * count as f64 / n as f64)
                    })
                    .collect();
                ColumnSummary::Categorical {
                    name: name.to_string(),
                    n,
                    levels,
                }
            }
        })
        .collect()
}
