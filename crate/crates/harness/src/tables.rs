//! CSV tables and the question/answer summary. All output here is a pure
//! function of its inputs so regenerated files compare byte-equal.

use std::path::Path;

use crate::error::{HarnessError, Result};

/// Shortest round-trip form; infinities spelled out. Exponent notation
/// outside a moderate magnitude window keeps tiny values readable (plain
/// Display would pad 1e-300 to three hundred digits).
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        return "nan".to_string();
    }
    if v == f64::INFINITY {
        return "inf".to_string();
    }
    if v == f64::NEG_INFINITY {
        return "-inf".to_string();
    }
    let a = v.abs();
    if a != 0.0 && (a < 1e-4 || a >= 1e16) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: Vec<S>) -> Self {
        Table {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row<S: Into<String>>(&mut self, cells: Vec<S>) -> Result<()> {
        let cells: Vec<String> = cells.into_iter().map(Into::into).collect();
        if cells.len() != self.columns.len() {
            return Err(HarnessError::runtime(format!(
                "row arity {} against {} columns",
                cells.len(),
                self.columns.len()
            )));
        }
        self.rows.push(cells);
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| HarnessError::runtime(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| HarnessError::runtime(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }
}

/// Findings rendered as question-and-answer markdown.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    title: String,
    preamble: Vec<String>,
    items: Vec<(String, String)>,
}

impl Summary {
    pub fn new(title: impl Into<String>) -> Self {
        Summary {
            title: title.into(),
            preamble: Vec::new(),
            items: Vec::new(),
        }
    }

    /// Context lines shown before the first question.
    pub fn note(&mut self, line: impl Into<String>) {
        self.preamble.push(line.into());
    }

    pub fn add(&mut self, question: impl Into<String>, answer: impl Into<String>) {
        self.items.push((question.into(), answer.into()));
    }

    pub fn render(&self) -> String {
        let mut out = format!("# {}\n", self.title);
        for line in &self.preamble {
            out.push('\n');
            out.push_str(line);
            out.push('\n');
        }
        for (q, a) in &self.items {
            out.push_str(&format!("\n## {q}\n\n{a}\n"));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}
