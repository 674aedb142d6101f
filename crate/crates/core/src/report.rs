//! Verdicts and CSV tables produced by the harness.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::stats::EstimatorResult;

/// Formats with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub criterion: u32,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(criterion: u32, name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            criterion,
            name: name.to_string(),
            pass,
            detail: detail.into(),
        }
    }

    pub fn label(&self) -> &'static str {
        if self.pass {
            "PASS"
        } else {
            "FAIL"
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {} ({}): {} | {}",
            self.criterion,
            self.name,
            self.label(),
            self.detail
        )
    }
}

/// One CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "row width in {}", self.name);
        self.rows.push(row);
    }

    /// Index of `column`, panicking on a typo.
    pub fn column(&self, column: &str) -> usize {
        self.header
            .iter()
            .position(|h| h == column)
            .unwrap_or_else(|| panic!("{} has no column {column}", self.name))
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| std::io::Error::other(e.to_string()).into())
    }

    pub fn write_to(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("{}.csv", self.name));
        std::fs::write(&path, self.to_csv()?)?;
        Ok(path)
    }
}

/// Rows `(scenario, quantity, mean, stderr, n, seed)`.
pub fn estimator_table(name: &str) -> Table {
    Table::new(name, &["scenario", "quantity", "mean", "stderr", "n", "seed"])
}

pub fn estimator_row(scenario: &str, quantity: &str, e: &EstimatorResult) -> Vec<String> {
    vec![
        scenario.to_string(),
        quantity.to_string(),
        num(e.mean),
        num(e.stderr),
        e.n.to_string(),
        e.seed.to_string(),
    ]
}

/// Rows `(experiment, t, value, stderr, theory_value, verdict)`.
pub fn curve_table(name: &str) -> Table {
    Table::new(name, &["experiment", "t", "value", "stderr", "theory_value", "verdict"])
}

pub fn curve_row(experiment: &str, t: f64, value: f64, stderr: f64, theory: f64, pass: bool) -> Vec<String> {
    vec![
        experiment.to_string(),
        num(t),
        num(value),
        num(stderr),
        num(theory),
        if pass { "PASS" } else { "FAIL" }.to_string(),
    ]
}

/// Everything one harness invocation produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub verdicts: Vec<Verdict>,
    pub tables: Vec<Table>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn verdict(&self, criterion: u32) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.criterion == criterion)
    }

    pub fn extend(&mut self, other: Report) {
        self.verdicts.extend(other.verdicts);
        self.tables.extend(other.tables);
    }

    pub fn summary(&self) -> Table {
        let mut t = Table::new("summary", &["criterion", "name", "verdict", "detail"]);
        let mut vs = self.verdicts.clone();
        vs.sort_by_key(|v| v.criterion);
        for v in vs {
            t.push(vec![
                v.criterion.to_string(),
                v.name.clone(),
                v.label().to_string(),
                v.detail.clone(),
            ]);
        }
        t
    }

    /// Writes every table plus `summary.csv` into `dir`, creating it.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut out = Vec::with_capacity(self.tables.len() + 1);
        for t in &self.tables {
            out.push(t.write_to(dir)?);
        }
        out.push(self.summary().write_to(dir)?);
        Ok(out)
    }
}
