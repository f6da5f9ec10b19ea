//! Covariate basis expansions and their textual form.
//!
//! A basis is a comma-separated list of terms. Each term is either a product
//! of columns raised to positive integer powers (`x1`, `x1*x3`, `x2^2`) or the
//! logarithm of a single, optionally shifted, column (`log(x3)`,
//! `log(x3+1.001)`).

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Term {
    Product(Vec<(String, u32)>),
    Log { column: String, shift: f64 },
}

impl Term {
    fn columns(&self) -> Vec<&str> {
        match self {
            Term::Product(f) => f.iter().map(|(c, _)| c.as_str()).collect(),
            Term::Log { column, .. } => vec![column.as_str()],
        }
    }

    fn parse(text: &str) -> Result<Term> {
        let t: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        if t.is_empty() {
            return Err(Error::Basis("empty term".into()));
        }
        if let Some(inner) = t.strip_prefix("log(").and_then(|r| r.strip_suffix(')')) {
            let (column, shift) = match inner.split_once('+') {
                Some((c, k)) => {
                    let shift: f64 = k
                        .parse()
                        .map_err(|_| Error::Basis(format!("bad shift in '{text}'")))?;
                    (c.to_string(), shift)
                }
                None => (inner.to_string(), 0.0),
            };
            check_name(&column, text)?;
            return Ok(Term::Log { column, shift });
        }
        let mut factors = Vec::new();
        for f in t.split('*') {
            let (name, pow) = match f.split_once('^') {
                Some((n, p)) => {
                    let pow: u32 = p
                        .parse()
                        .map_err(|_| Error::Basis(format!("bad power in '{text}'")))?;
                    if pow == 0 {
                        return Err(Error::Basis(format!("zero power in '{text}'")));
                    }
                    (n, pow)
                }
                None => (f, 1),
            };
            check_name(name, text)?;
            factors.push((name.to_string(), pow));
        }
        Ok(Term::Product(factors))
    }
}

fn check_name(name: &str, term: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        && !name.chars().next().unwrap().is_ascii_digit();
    if ok {
        Ok(())
    } else {
        Err(Error::Basis(format!("invalid column name in '{term}'")))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Product(factors) => {
                for (k, (c, p)) in factors.iter().enumerate() {
                    if k > 0 {
                        write!(f, "*")?;
                    }
                    if *p == 1 {
                        write!(f, "{c}")?;
                    } else {
                        write!(f, "{c}^{p}")?;
                    }
                }
                Ok(())
            }
            Term::Log { column, shift } if *shift == 0.0 => write!(f, "log({column})"),
            Term::Log { column, shift } => write!(f, "log({column}+{shift})"),
        }
    }
}

/// Ordered list of basis terms plus an intercept flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub terms: Vec<Term>,
    pub intercept: bool,
}

impl BasisSpec {
    pub fn parse(text: &str, intercept: bool) -> Result<Self> {
        let terms = if text.trim().is_empty() {
            Vec::new()
        } else {
            text.split(',').map(Term::parse).collect::<Result<_>>()?
        };
        Ok(BasisSpec { terms, intercept })
    }

    /// Basis of the named columns, untransformed.
    pub fn linear<S: AsRef<str>>(columns: &[S], intercept: bool) -> Self {
        BasisSpec {
            terms: columns
                .iter()
                .map(|c| Term::Product(vec![(c.as_ref().to_string(), 1)]))
                .collect(),
            intercept,
        }
    }

    pub fn width(&self) -> usize {
        self.terms.len() + usize::from(self.intercept)
    }

    /// Fails if any term references a column missing from `data`.
    pub fn check_columns(&self, data: &Dataset) -> Result<()> {
        for t in &self.terms {
            for c in t.columns() {
                if data.covariate(c).is_none() {
                    return Err(Error::Basis(format!("unknown column '{c}' in term '{t}'")));
                }
            }
        }
        Ok(())
    }

    /// Design matrix, intercept column first when present.
    pub fn design(&self, data: &Dataset) -> Result<Array2<f64>> {
        self.check_columns(data)?;
        let n = data.len();
        let mut out = Array2::zeros((n, self.width()));
        let mut col = 0;
        if self.intercept {
            out.column_mut(0).fill(1.0);
            col = 1;
        }
        for t in &self.terms {
            match t {
                Term::Product(factors) => {
                    let mut v = vec![1.0; n];
                    for (c, p) in factors {
                        let x = data.covariate(c).expect("checked above");
                        for (vi, xi) in v.iter_mut().zip(x.iter()) {
                            *vi *= xi.powi(*p as i32);
                        }
                    }
                    out.column_mut(col).assign(&ndarray::Array1::from(v));
                }
                Term::Log { column, shift } => {
                    let x = data.covariate(column).expect("checked above");
                    for (i, xi) in x.iter().enumerate() {
                        let arg = xi + shift;
                        if arg <= 0.0 {
                            return Err(Error::Basis(format!(
                                "term '{t}' needs positive values, row {} gives {arg}",
                                i + 1
                            )));
                        }
                        out[[i, col]] = arg.ln();
                    }
                }
            }
            col += 1;
        }
        Ok(out)
    }
}

impl fmt::Display for BasisSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.terms.iter().map(|t| t.to_string()).collect();
        write!(f, "{}", parts.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> Dataset {
        let x = Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 0.5, -1.0, 3.0, 2.0]).unwrap();
        Dataset::new(
            vec![0.0, 1.0],
            vec![0.0, 1.0],
            vec![0, 1],
            x,
            vec!["x1".into(), "x2".into(), "x3".into()],
        )
        .unwrap()
    }

    #[test]
    fn parses_and_prints() {
        let b = BasisSpec::parse("x1, x2, log(x3), x1*x3, x2^2, log(x3 + 1.001)", true).unwrap();
        assert_eq!(b.width(), 7);
        assert_eq!(b.to_string(), "x1, x2, log(x3), x1*x3, x2^2, log(x3+1.001)");
        let again = BasisSpec::parse(&b.to_string(), true).unwrap();
        assert_eq!(again, b);
        assert_eq!(BasisSpec::parse("  ", true).unwrap().width(), 1);
    }

    #[test]
    fn rejects_malformed_terms() {
        assert!(BasisSpec::parse("x1,,x2", true).is_err());
        assert!(BasisSpec::parse("x1^0", true).is_err());
        assert!(BasisSpec::parse("log(x1+abc)", true).is_err());
        assert!(BasisSpec::parse("2x", true).is_err());
    }

    #[test]
    fn design_values() {
        let b = BasisSpec::parse("x1*x3, x2^2, log(x3)", true).unwrap();
        let d = b.design(&data()).unwrap();
        assert_eq!(d.row(0).to_vec(), vec![1.0, 0.5, 4.0, 0.5f64.ln()]);
        assert_eq!(d.row(1).to_vec(), vec![1.0, -2.0, 9.0, 2.0f64.ln()]);
    }

    #[test]
    fn design_errors() {
        let b = BasisSpec::parse("x9", true).unwrap();
        assert!(matches!(b.design(&data()), Err(Error::Basis(_))));
        let b = BasisSpec::parse("log(x1)", false).unwrap();
        assert!(matches!(b.design(&data()), Err(Error::Basis(_))));
    }
}
