use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Dataset, Design};
use crate::error::{Error, Result};

/// Column mapping for CSV input.
///
/// The fixed-effects design is an intercept (unless disabled) followed by the
/// `fixed` columns; the random-effect design is likewise an intercept
/// followed by the `random` columns. `a_matrix` defaults to the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub response: String,
    pub group: String,
    pub fixed: Vec<String>,
    pub fixed_intercept: bool,
    pub random: Vec<String>,
    pub random_intercept: bool,
    pub a_matrix: Option<Vec<Vec<f64>>>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            response: "response".into(),
            group: "group".into(),
            fixed: Vec::new(),
            fixed_intercept: true,
            random: Vec::new(),
            random_intercept: true,
            a_matrix: None,
        }
    }
}

impl Schema {
    pub fn random_intercept(response: &str, group: &str) -> Self {
        Self {
            response: response.into(),
            group: group.into(),
            ..Self::default()
        }
    }
}

/// Load and validate a dataset from a CSV file.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_dataset(file, schema)
}

/// Parse a dataset from any CSV reader.
pub fn read_dataset<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let response_col = column(&schema.response)?;
    let group_col = column(&schema.group)?;
    let fixed_cols = schema
        .fixed
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;
    let random_cols = schema
        .random
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;

    let mut y = Vec::new();
    let mut groups = Vec::new();
    let mut fixed_rows: Vec<Vec<f64>> = Vec::new();
    let mut random_rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let parse = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::NonNumeric {
                    column: headers[col].to_string(),
                    row,
                    value: raw.to_string(),
                })
        };
        y.push(parse(response_col)?);
        let label = record.get(group_col).unwrap_or("").to_string();
        if label.is_empty() {
            return Err(Error::Validation(format!("empty group label at row {row}")));
        }
        groups.push(label);

        let mut xr = Vec::with_capacity(fixed_cols.len() + 1);
        if schema.fixed_intercept {
            xr.push(1.0);
        }
        for &c in &fixed_cols {
            xr.push(parse(c)?);
        }
        fixed_rows.push(xr);

        let mut zr = Vec::with_capacity(random_cols.len() + 1);
        if schema.random_intercept {
            zr.push(1.0);
        }
        for &c in &random_cols {
            zr.push(parse(c)?);
        }
        random_rows.push(zr);
    }

    let n = y.len();
    if n == 0 {
        return Err(Error::Validation("CSV has no data rows".into()));
    }
    let p = fixed_rows[0].len();
    let a_dim = random_rows[0].len();
    if p == 0 {
        return Err(Error::Validation("no fixed-effect columns".into()));
    }
    if a_dim == 0 {
        return Err(Error::Validation("no random-effect columns".into()));
    }
    let x = DMatrix::from_fn(n, p, |i, j| fixed_rows[i][j]);
    let z = DMatrix::from_fn(n, a_dim, |i, j| random_rows[i][j]);
    let a = match &schema.a_matrix {
        None => DMatrix::identity(a_dim, a_dim),
        Some(rows) => {
            if rows.len() != a_dim || rows.iter().any(|r| r.len() != a_dim) {
                return Err(Error::Dimension(format!("A must be {a_dim}x{a_dim}")));
            }
            DMatrix::from_fn(a_dim, a_dim, |i, j| rows[i][j])
        }
    };
    let design = Design::new(x, z, a, &groups)?;
    let rank = {
        let sv = design.x().clone().singular_values();
        let tol = sv.max() * 1e-10 * n.max(p) as f64;
        sv.iter().filter(|&&s| s > tol).count()
    };
    if rank < p {
        return Err(Error::RankDeficientDesign { rank, p });
    }
    Dataset::new(Arc::new(design), DVector::from_vec(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_intercept_from_csv() {
        let mut csv = String::from("y,farm\n");
        for i in 0..30 {
            csv.push_str(&format!(
                "{},{}\n",
                i as f64 * 0.5,
                ["f1", "f2", "f3", "f4", "f5"][i / 6]
            ));
        }
        let ds = read_dataset(csv.as_bytes(), &Schema::random_intercept("y", "farm")).unwrap();
        let d = ds.design();
        assert_eq!(d.n_groups(), 5);
        assert_eq!(d.group_sizes(), &[6; 5]);
        assert!(d.is_random_intercept());
    }

    #[test]
    fn duplicated_constant_column_is_rank_deficient() {
        let csv = "response,group,c\n1,a,1\n2,a,1\n3,b,1\n4,b,1\n";
        let schema = Schema {
            fixed: vec!["c".into()],
            ..Schema::default()
        };
        assert!(matches!(
            read_dataset(csv.as_bytes(), &schema),
            Err(Error::RankDeficientDesign { rank: 1, p: 2 })
        ));
    }

    #[test]
    fn missing_column() {
        let csv = "response,grp\n1,a\n";
        assert!(matches!(
            read_dataset(csv.as_bytes(), &Schema::default()),
            Err(Error::MissingColumn(c)) if c == "group"
        ));
    }

    #[test]
    fn non_numeric_cell() {
        let csv = "response,group\n1,a\nabc,b\n";
        match read_dataset(csv.as_bytes(), &Schema::default()) {
            Err(Error::NonNumeric { column, row, value }) => {
                assert_eq!(column, "response");
                assert_eq!(row, 3);
                assert_eq!(value, "abc");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_group_label() {
        let csv = "response,group\n1,a\n2,\n";
        assert!(matches!(
            read_dataset(csv.as_bytes(), &Schema::default()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn covariates_and_random_slopes() {
        let csv = "response,group,w,s\n1,a,0.5,1\n2,a,1.5,2\n3,b,0.1,1\n4,b,2.0,3\n5,c,1.0,0\n6,c,0.3,1\n";
        let schema = Schema {
            fixed: vec!["w".into()],
            random: vec!["s".into()],
            a_matrix: Some(vec![vec![1.0, 0.2], vec![0.2, 0.5]]),
            ..Schema::default()
        };
        let ds = read_dataset(csv.as_bytes(), &schema).unwrap();
        assert_eq!(ds.design().p(), 2);
        assert_eq!(ds.design().a_dim(), 2);
        assert_eq!(ds.design().x()[(1, 1)], 1.5);
        assert_eq!(ds.design().z()[(3, 1)], 3.0);
    }
}
