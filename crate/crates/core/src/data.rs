//! Observation container, validation and CSV input/output.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub y: f64,
    pub s: f64,
    pub a: u8,
    pub x: Vec<f64>,
}

/// Potential outcomes retained for simulated data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialOutcomes {
    pub y0: f64,
    pub y1: f64,
    pub s0: f64,
    pub s1: f64,
}

/// Column names for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub y: String,
    pub s: String,
    pub a: String,
    pub x: Vec<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            y: "y".into(),
            s: "s".into(),
            a: "a".into(),
            x: Vec::new(),
        }
    }
}

/// Validated sample of `n` records sharing covariate dimension `p`.
///
/// Storage is columnar; [`Dataset::record`] reassembles a single record.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    s: Vec<f64>,
    a: Vec<u8>,
    x: Array2<f64>,
    names: Vec<String>,
    truth: Option<Vec<PotentialOutcomes>>,
}

impl Dataset {
    /// Build from columns. Rejects non-finite values, treatment codes other
    /// than 0/1 and empty arms.
    pub fn new(
        y: Vec<f64>,
        s: Vec<f64>,
        a: Vec<u8>,
        x: Array2<f64>,
        names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        for (len, _) in [(s.len(), "s"), (a.len(), "a"), (x.nrows(), "x")] {
            if len != n {
                return Err(Error::Dimension {
                    expected: n,
                    actual: len,
                });
            }
        }
        if names.len() != x.ncols() {
            return Err(Error::Dimension {
                expected: x.ncols(),
                actual: names.len(),
            });
        }
        for i in 0..n {
            if a[i] > 1 {
                return Err(Error::Parse {
                    row: i + 1,
                    message: format!("treatment must be 0 or 1, found {}", a[i]),
                });
            }
            if !y[i].is_finite() || !s[i].is_finite() || x.row(i).iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    row: i + 1,
                    message: "non-finite value".into(),
                });
            }
        }
        let data = Dataset {
            y,
            s,
            a,
            x,
            names,
            truth: None,
        };
        let (n0, n1) = data.arm_sizes();
        if n0 == 0 {
            return Err(Error::DegenerateArm(0));
        }
        if n1 == 0 {
            return Err(Error::DegenerateArm(1));
        }
        Ok(data)
    }

    pub fn from_records(records: &[ObservationRecord], names: Vec<String>) -> Result<Self> {
        let p = names.len();
        let mut x = Array2::zeros((records.len(), p));
        for (i, r) in records.iter().enumerate() {
            if r.x.len() != p {
                return Err(Error::Dimension {
                    expected: p,
                    actual: r.x.len(),
                });
            }
            for (j, v) in r.x.iter().enumerate() {
                x[[i, j]] = *v;
            }
        }
        Dataset::new(
            records.iter().map(|r| r.y).collect(),
            records.iter().map(|r| r.s).collect(),
            records.iter().map(|r| r.a).collect(),
            x,
            names,
        )
    }

    pub fn with_truth(mut self, truth: Vec<PotentialOutcomes>) -> Result<Self> {
        if truth.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                actual: truth.len(),
            });
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn a(&self) -> &[u8] {
        &self.a
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.names
    }

    pub fn truth(&self) -> Option<&[PotentialOutcomes]> {
        self.truth.as_deref()
    }

    pub fn record(&self, i: usize) -> ObservationRecord {
        ObservationRecord {
            y: self.y[i],
            s: self.s[i],
            a: self.a[i],
            x: self.x.row(i).to_vec(),
        }
    }

    /// Column of covariate `name`, if present.
    pub fn covariate(&self, name: &str) -> Option<ndarray::ArrayView1<'_, f64>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| self.x.column(j))
    }

    /// Counts `(n0, n1)` per treatment arm.
    pub fn arm_sizes(&self) -> (usize, usize) {
        let n1 = self.a.iter().filter(|&&a| a == 1).count();
        (self.a.len() - n1, n1)
    }

    /// Indices of records in arm `a`.
    pub fn arm_indices(&self, arm: u8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.a[i] == arm).collect()
    }

    /// Copy with the outcome replaced.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Self> {
        let mut d = Dataset::new(
            y,
            self.s.clone(),
            self.a.clone(),
            self.x.clone(),
            self.names.clone(),
        )?;
        d.truth = self.truth.clone();
        Ok(d)
    }

    /// Minimum sample size accepted by the estimation entry points.
    pub fn require_estimable(&self) -> Result<()> {
        if self.len() < MIN_ESTIMATION_SIZE {
            return Err(Error::SampleTooSmall {
                required: MIN_ESTIMATION_SIZE,
                actual: self.len(),
            });
        }
        Ok(())
    }

    /// Write as CSV with header `y,s,a,<covariates>` followed by
    /// `y0,y1,s0,s1` when potential outcomes are attached.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = vec!["y".into(), "s".into(), "a".into()];
        header.extend(self.names.iter().cloned());
        if self.truth.is_some() {
            header.extend(["y0", "y1", "s0", "s1"].iter().map(|s| s.to_string()));
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row: Vec<String> = vec![
                fmt_f64(self.y[i]),
                fmt_f64(self.s[i]),
                self.a[i].to_string(),
            ];
            row.extend(self.x.row(i).iter().map(|v| fmt_f64(*v)));
            if let Some(t) = &self.truth {
                let t = t[i];
                row.extend([t.y0, t.y1, t.s0, t.s1].iter().map(|v| fmt_f64(*v)));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const MIN_ESTIMATION_SIZE: usize = 20;

// shortest representation that parses back to the same f64
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Read a CSV file, mapping columns by name. Rows are kept in file order.
/// Potential-outcome columns `y0,y1,s0,s1` are attached when all four exist.
pub fn load_csv<P: AsRef<Path>>(path: P, schema: &ColumnMap) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let find = |name: &str| -> Result<usize> {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    };
    let iy = find(&schema.y)?;
    let is = find(&schema.s)?;
    let ia = find(&schema.a)?;
    let ix: Vec<usize> = schema.x.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let truth_cols: Option<Vec<usize>> = ["y0", "y1", "s0", "s1"]
        .iter()
        .map(|c| index.get(c).copied())
        .collect();

    let mut y = Vec::new();
    let mut s = Vec::new();
    let mut a = Vec::new();
    let mut xs = Vec::new();
    let mut truth = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let row = r + 1;
        let rec = rec?;
        let num = |col: usize, name: &str| -> Result<f64> {
            let cell = rec.get(col).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                message: format!("column '{name}': cannot parse '{cell}' as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    message: format!("column '{name}': non-finite value"),
                });
            }
            Ok(v)
        };
        y.push(num(iy, &schema.y)?);
        s.push(num(is, &schema.s)?);
        let av = num(ia, &schema.a)?;
        if av != 0.0 && av != 1.0 {
            return Err(Error::Parse {
                row,
                message: format!("treatment column '{}' must be 0 or 1, found {av}", schema.a),
            });
        }
        a.push(av as u8);
        for (j, &c) in ix.iter().enumerate() {
            xs.push(num(c, &schema.x[j])?);
        }
        if let Some(tc) = &truth_cols {
            truth.push(PotentialOutcomes {
                y0: num(tc[0], "y0")?,
                y1: num(tc[1], "y1")?,
                s0: num(tc[2], "s0")?,
                s1: num(tc[3], "s1")?,
            });
        }
    }
    let n = y.len();
    let x = Array2::from_shape_vec((n, schema.x.len()), xs)
        .map_err(|e| Error::Schema(e.to_string()))?;
    let data = Dataset::new(y, s, a, x, schema.x.clone())?;
    if truth_cols.is_some() {
        data.with_truth(truth)
    } else {
        Ok(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn schema() -> ColumnMap {
        ColumnMap {
            x: vec!["x1".into()],
            ..ColumnMap::default()
        }
    }

    #[test]
    fn loads_small_file() {
        let f = write("y,s,a,x1\n1.0,2.0,0,0.5\n2,3,1,0.1\n3,4,0,0.2\n4,5,1,-1\n");
        let d = load_csv(f.path(), &schema()).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.p(), 1);
        assert_eq!(d.a(), &[0, 1, 0, 1]);
        assert_eq!(d.arm_sizes(), (2, 2));
        assert_eq!(d.record(3).x, vec![-1.0]);
    }

    #[test]
    fn bad_treatment_names_row() {
        let f = write("y,s,a,x1\n1,2,0,0\n2,3,1,0\n3,4,2,0\n4,5,1,0\n");
        match load_csv(f.path(), &schema()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_arm_rejected() {
        let f = write("y,s,a,x1\n1,2,1,0\n2,3,1,0\n");
        assert!(matches!(
            load_csv(f.path(), &schema()),
            Err(Error::DegenerateArm(0))
        ));
    }

    #[test]
    fn missing_column_and_bad_cells() {
        let f = write("y,s,a\n1,2,1\n2,3,0\n");
        assert!(matches!(
            load_csv(f.path(), &schema()),
            Err(Error::Schema(_))
        ));
        let f = write("y,s,a,x1\n1,2,1,0\n,3,0,0\n");
        assert!(matches!(
            load_csv(f.path(), &schema()),
            Err(Error::Parse { row: 2, .. })
        ));
        let f = write("y,s,a,x1\n1,2,1,abc\n2,3,0,0\n");
        assert!(matches!(
            load_csv(f.path(), &schema()),
            Err(Error::Parse { row: 1, .. })
        ));
    }

    #[test]
    fn arm_counts() {
        let x = Array2::zeros((4, 1));
        let d = Dataset::new(
            vec![0.0; 4],
            vec![0.0; 4],
            vec![1, 1, 1, 0],
            x,
            vec!["x1".into()],
        )
        .unwrap();
        assert_eq!(d.arm_sizes(), (1, 3));
        assert!(d.require_estimable().is_err());
    }

    #[test]
    fn csv_round_trip_with_truth() {
        let x =
            Array2::from_shape_vec((3, 2), vec![0.1, 1e-17, -3.3, 2.0, 1.0 / 3.0, 5.0]).unwrap();
        let d = Dataset::new(
            vec![1.0 / 7.0, 2.0, -3.25],
            vec![0.3, 0.1 + 0.2, 9.0],
            vec![0, 1, 1],
            x,
            vec!["x1".into(), "x2".into()],
        )
        .unwrap()
        .with_truth(vec![
            PotentialOutcomes {
                y0: 1.0,
                y1: 2.0,
                s0: 3.0,
                s1: 4.0
            };
            3
        ])
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        d.write_csv(f.path()).unwrap();
        let schema = ColumnMap {
            x: vec!["x1".into(), "x2".into()],
            ..ColumnMap::default()
        };
        let back = load_csv(f.path(), &schema).unwrap();
        assert_eq!(back, d);
    }
}
