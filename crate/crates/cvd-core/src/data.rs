//! Tabular data loading, validation, and categorical encoding.
//!
//! A [`Dataset`] holds the outcome `y`, hospital codes `a` in `1..=J`, group
//! codes `z` in `1..=K`, and a row-major covariate block. Code 1 is always the
//! reference category; by default codes are assigned in order of first
//! appearance in the file, overridable through an explicit level order.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Binary,
    Continuous,
}

/// Maps original categorical labels to integer codes starting at 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryMap {
    /// Level labels in code order; `levels[0]` is the reference (code 1).
    pub levels: Vec<String>,
}

impl CategoryMap {
    pub fn code(&self, label: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == label).map(|i| i + 1)
    }

    pub fn label(&self, code: usize) -> &str {
        &self.levels[code - 1]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Column-role mapping used when reading a CSV file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub outcome: String,
    pub hospital: String,
    pub group: String,
    pub covariates: Vec<String>,
    pub outcome_kind: OutcomeKind,
    /// Explicit hospital level order; first entry becomes the reference.
    #[serde(default)]
    pub hospital_levels: Option<Vec<String>>,
    /// Explicit group level order; first entry becomes the reference.
    #[serde(default)]
    pub group_levels: Option<Vec<String>>,
}

/// Encoded analysis dataset. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub y: Vec<f64>,
    /// Hospital codes in 1..=J.
    pub a: Vec<usize>,
    /// Group codes in 1..=K.
    pub z: Vec<usize>,
    /// Covariates, row-major, `n * p` values.
    x: Vec<f64>,
    pub j: usize,
    pub k: usize,
    p: usize,
    pub outcome_kind: OutcomeKind,
    pub hospital_map: CategoryMap,
    pub group_map: CategoryMap,
    pub covariate_names: Vec<String>,
    pub outcome_name: String,
}

impl Dataset {
    /// Builds a dataset from already-encoded columns, checking every invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        y: Vec<f64>,
        a: Vec<usize>,
        z: Vec<usize>,
        x: Vec<f64>,
        p: usize,
        outcome_kind: OutcomeKind,
        hospital_map: CategoryMap,
        group_map: CategoryMap,
        covariate_names: Vec<String>,
        outcome_name: String,
    ) -> Result<Self> {
        let n = y.len();
        if a.len() != n || z.len() != n || x.len() != n * p || covariate_names.len() != p {
            return Err(Error::Invalid("column lengths are inconsistent".into()));
        }
        if n == 0 {
            return Err(Error::Invalid("dataset is empty".into()));
        }
        let j = hospital_map.len();
        let k = group_map.len();
        if j < 2 {
            return Err(Error::SingleLevelFactor("hospital".into()));
        }
        if k < 2 {
            return Err(Error::SingleLevelFactor("group".into()));
        }
        let mut seen_a = vec![false; j];
        let mut seen_z = vec![false; k];
        for i in 0..n {
            if a[i] < 1 || a[i] > j {
                return Err(Error::Invalid(format!("hospital code {} at row {i} out of 1..={j}", a[i])));
            }
            if z[i] < 1 || z[i] > k {
                return Err(Error::Invalid(format!("group code {} at row {i} out of 1..={k}", z[i])));
            }
            seen_a[a[i] - 1] = true;
            seen_z[z[i] - 1] = true;
            if !y[i].is_finite() {
                return Err(Error::MissingValue { row: i, col: outcome_name.clone() });
            }
            if outcome_kind == OutcomeKind::Binary && y[i] != 0.0 && y[i] != 1.0 {
                return Err(Error::NonBinaryOutcome { row: i, value: y[i] });
            }
        }
        if !seen_a.iter().all(|&s| s) {
            return Err(Error::SingleLevelFactor("hospital".into()));
        }
        if !seen_z.iter().all(|&s| s) {
            return Err(Error::SingleLevelFactor("group".into()));
        }
        for (idx, &v) in x.iter().enumerate() {
            if !v.is_finite() {
                let col = idx % p;
                return Err(Error::MissingValue { row: idx / p, col: covariate_names[col].clone() });
            }
        }
        Ok(Self {
            y,
            a,
            z,
            x,
            j,
            k,
            p,
            outcome_kind,
            hospital_map,
            group_map,
            covariate_names,
            outcome_name,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    /// Length of the outcome-model regressor vector:
    /// intercept + covariates + hospital dummies + group dummies + interactions.
    pub fn design_width(&self) -> usize {
        design_width(self.j, self.k, self.p)
    }

    /// Regressor vector for row `i` evaluated at the counterfactual cell `(a, z)`.
    ///
    /// Layout: `[1, X, I(A=2..J), I(Z=2..K), I(A=a)I(Z=z) for z=2..K, a=2..J]`.
    /// The interaction block is ordered z-outer, a-inner. Reference codes
    /// (a=1, z=1) contribute no dummy.
    pub fn design_row(&self, i: usize, a: usize, z: usize) -> Result<DVector<f64>> {
        if i >= self.n() {
            return Err(Error::IndexOutOfRange(i));
        }
        if a < 1 || a > self.j || z < 1 || z > self.k {
            return Err(Error::IndexOutOfRange(a.max(z)));
        }
        let mut row = DVector::zeros(self.design_width());
        row[0] = 1.0;
        for (c, &v) in self.x_row(i).iter().enumerate() {
            row[1 + c] = v;
        }
        let a_off = 1 + self.p;
        let z_off = a_off + (self.j - 1);
        let int_off = z_off + (self.k - 1);
        if a > 1 {
            row[a_off + (a - 2)] = 1.0;
        }
        if z > 1 {
            row[z_off + (z - 2)] = 1.0;
        }
        if a > 1 && z > 1 {
            row[int_off + (z - 2) * (self.j - 1) + (a - 2)] = 1.0;
        }
        Ok(row)
    }

    /// Names of the outcome-model regressors, matching [`Dataset::design_row`].
    pub fn design_names(&self) -> Vec<String> {
        let mut names = vec!["(intercept)".to_string()];
        names.extend(self.covariate_names.iter().cloned());
        for a in 2..=self.j {
            names.push(format!("A={}", self.hospital_map.label(a)));
        }
        for z in 2..=self.k {
            names.push(format!("Z={}", self.group_map.label(z)));
        }
        for z in 2..=self.k {
            for a in 2..=self.j {
                names.push(format!(
                    "A={}:Z={}",
                    self.hospital_map.label(a),
                    self.group_map.label(z)
                ));
            }
        }
        names
    }

    /// Observed `(a, z)` cells with no rows; these cells are evaluated by
    /// parametric extrapolation during decomposition.
    pub fn empty_cells(&self) -> Vec<(usize, usize)> {
        let mut counts = vec![0usize; self.j * self.k];
        for i in 0..self.n() {
            counts[(self.a[i] - 1) * self.k + (self.z[i] - 1)] += 1;
        }
        let mut empty = Vec::new();
        for a in 1..=self.j {
            for z in 1..=self.k {
                if counts[(a - 1) * self.k + (z - 1)] == 0 {
                    empty.push((a, z));
                }
            }
        }
        empty
    }

    /// Writes the dataset back out as CSV with original category labels.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header = vec![self.outcome_name.clone(), "hospital".to_string(), "group".to_string()];
        header.extend(self.covariate_names.iter().cloned());
        writeln!(file, "{}", header.join(","))?;
        for i in 0..self.n() {
            let mut fields = vec![
                format_value(self.y[i]),
                self.hospital_map.label(self.a[i]).to_string(),
                self.group_map.label(self.z[i]).to_string(),
            ];
            fields.extend(self.x_row(i).iter().map(|&v| format_value(v)));
            writeln!(file, "{}", fields.join(","))?;
        }
        Ok(())
    }

    /// Dataset made of rows `indices` (with repetition), e.g. a bootstrap
    /// resample. Category maps are inherited; errors if a level disappears.
    pub fn resample(&self, indices: &[usize]) -> Result<Dataset> {
        let mut y = Vec::with_capacity(indices.len());
        let mut a = Vec::with_capacity(indices.len());
        let mut z = Vec::with_capacity(indices.len());
        let mut x = Vec::with_capacity(indices.len() * self.p);
        for &i in indices {
            if i >= self.n() {
                return Err(Error::IndexOutOfRange(i));
            }
            y.push(self.y[i]);
            a.push(self.a[i]);
            z.push(self.z[i]);
            x.extend_from_slice(self.x_row(i));
        }
        Dataset::from_parts(
            y,
            a,
            z,
            x,
            self.p,
            self.outcome_kind,
            self.hospital_map.clone(),
            self.group_map.clone(),
            self.covariate_names.clone(),
            self.outcome_name.clone(),
        )
    }
}

/// `1 + p + (J-1) + (K-1) + (J-1)(K-1)`.
pub fn design_width(j: usize, k: usize, p: usize) -> usize {
    1 + p + (j - 1) + (k - 1) + (j - 1) * (k - 1)
}

fn format_value(v: f64) -> String {
    // Shortest round-trip representation keeps CSV round trips exact.
    let mut buf = ryu_format(v);
    if buf.ends_with(".0") {
        buf.truncate(buf.len() - 2);
    }
    buf
}

fn ryu_format(v: f64) -> String {
    format!("{v:?}")
}

/// Loads and encodes a CSV file according to the column-role mapping.
pub fn load_csv(path: &Path, roles: &ColumnRoles) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let y_col = col(&roles.outcome)?;
    let a_col = col(&roles.hospital)?;
    let z_col = col(&roles.group)?;
    let x_cols: Vec<usize> = roles
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;

    let mut encoder_a = Encoder::new(&roles.hospital, roles.hospital_levels.as_deref());
    let mut encoder_z = Encoder::new(&roles.group, roles.group_levels.as_deref());

    let mut y = Vec::new();
    let mut a = Vec::new();
    let mut z = Vec::new();
    let mut x = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let get = |c: usize, name: &str| -> Result<&str> {
            let v = record.get(c).unwrap_or("").trim();
            if v.is_empty() {
                Err(Error::MissingValue { row: i, col: name.to_string() })
            } else {
                Ok(v)
            }
        };
        let y_raw = get(y_col, &roles.outcome)?;
        let y_val: f64 = y_raw
            .parse()
            .map_err(|_| Error::Invalid(format!("non-numeric outcome `{y_raw}` at row {i}")))?;
        if roles.outcome_kind == OutcomeKind::Binary && y_val != 0.0 && y_val != 1.0 {
            return Err(Error::NonBinaryOutcome { row: i, value: y_val });
        }
        y.push(y_val);
        a.push(encoder_a.encode(get(a_col, &roles.hospital)?, i)?);
        z.push(encoder_z.encode(get(z_col, &roles.group)?, i)?);
        for (&c, name) in x_cols.iter().zip(&roles.covariates) {
            let raw = get(c, name)?;
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::Invalid(format!("non-numeric value `{raw}` in column `{name}` at row {i}")))?;
            x.push(v);
        }
    }

    Dataset::from_parts(
        y,
        a,
        z,
        x,
        roles.covariates.len(),
        roles.outcome_kind,
        encoder_a.into_map(),
        encoder_z.into_map(),
        roles.covariates.clone(),
        roles.outcome.clone(),
    )
}

struct Encoder {
    column: String,
    levels: Vec<String>,
    codes: HashMap<String, usize>,
    fixed: bool,
}

impl Encoder {
    fn new(column: &str, explicit: Option<&[String]>) -> Self {
        let levels: Vec<String> = explicit.map(|l| l.to_vec()).unwrap_or_default();
        let codes = levels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i + 1))
            .collect();
        Self {
            column: column.to_string(),
            fixed: explicit.is_some(),
            levels,
            codes,
        }
    }

    fn encode(&mut self, label: &str, row: usize) -> Result<usize> {
        if let Some(&code) = self.codes.get(label) {
            return Ok(code);
        }
        if self.fixed {
            return Err(Error::Invalid(format!(
                "label `{label}` at row {row} not in the declared levels of column `{}`",
                self.column
            )));
        }
        self.levels.push(label.to_string());
        let code = self.levels.len();
        self.codes.insert(label.to_string(), code);
        Ok(code)
    }

    fn into_map(self) -> CategoryMap {
        CategoryMap { levels: self.levels }
    }
}
