//! Sparse `label idx:val ...` text format.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::model::FeatureMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LibsvmData {
    pub features: FeatureMatrix<f64>,
    /// 0-based class indices into `label_values`.
    pub labels: Vec<usize>,
    /// Original label values in sorted order; class `c` was `label_values[c]`.
    pub label_values: Vec<f64>,
}

impl LibsvmData {
    pub fn k(&self) -> usize {
        self.label_values.len()
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<LibsvmData> {
    let mut raw_labels = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut d = 0;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut tokens = body.split_whitespace();
        let label_tok = tokens.next().expect("nonempty line has a token");
        let label: f64 = label_tok
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_err(lineno, format!("malformed label '{label_tok}'")))?;
        let mut entries = Vec::new();
        let mut last = 0;
        for tok in tokens {
            let (i, v) = tok.split_once(':').ok_or_else(|| parse_err(lineno, format!("malformed token '{tok}'")))?;
            let i: usize = i
                .parse()
                .ok()
                .filter(|&i| i >= 1)
                .ok_or_else(|| parse_err(lineno, format!("malformed index in '{tok}'")))?;
            let v: f64 = v
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_err(lineno, format!("malformed value in '{tok}'")))?;
            if i <= last {
                return Err(parse_err(lineno, format!("index {i} does not increase past {last}")));
            }
            last = i;
            entries.push((i - 1, v));
        }
        d = d.max(last);
        raw_labels.push((lineno, label));
        rows.push(entries);
    }
    if rows.is_empty() {
        return Err(parse_err(0, "no data lines"));
    }

    let mut label_values: Vec<f64> = raw_labels.iter().map(|&(_, l)| l).collect();
    label_values.sort_by(f64::total_cmp);
    label_values.dedup();
    let labels = raw_labels
        .iter()
        .map(|&(_, l)| label_values.binary_search_by(|v| v.total_cmp(&l)).expect("label present"))
        .collect();

    let mut data = vec![0.0; rows.len() * d];
    for (j, row) in rows.iter().enumerate() {
        for &(i, v) in row {
            data[j * d + i] = v;
        }
    }
    Ok(LibsvmData { features: FeatureMatrix::from_flat(rows.len(), d, data)?, labels, label_values })
}

/// Writes nonzero entries only; labels are written as original values.
pub fn write_libsvm<W: Write>(out: &mut W, data: &LibsvmData) -> std::io::Result<()> {
    for (j, row) in data.features.rows().enumerate() {
        write!(out, "{}", data.label_values[data.labels[j]])?;
        for (i, &v) in row.iter().enumerate() {
            if v != 0.0 {
                write!(out, " {}:{}", i + 1, v)?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}
