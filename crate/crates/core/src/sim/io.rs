//! Text file formats: annotation and label CSVs, the confusion-matrix model
//! file, and sweep results.
//!
//! Worker, item and label ids are 1-based in every file and 0-based in
//! memory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnnotationMatrix, ConfusionMatrix, DsParams};
use crate::sim::experiment::{SweepResult, SweepRow};

pub const ANNOTATION_HEADER: [&str; 3] = ["worker_id", "item_id", "label"];
pub const LABEL_HEADER: [&str; 2] = ["item_id", "label"];
pub const SWEEP_HEADER: [&str; 6] = ["method", "param_name", "param_value", "replicate", "cost_per_item", "accuracy"];
pub const CONFUSION_MAGIC: &str = "drc-confusions v1";

pub fn open_file(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

fn io_err(path: &str, source: std::io::Error) -> Error {
    Error::Io { path: path.to_string(), source }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err("<csv>", source),
        csv::ErrorKind::Deserialize { err, .. } => Error::Parse { line, msg: err.to_string() },
        other => Error::Parse { line, msg: format!("{other:?}") },
    }
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, want: &[&str]) -> Result<()> {
    let got = rdr.headers().map_err(csv_err)?;
    if got.iter().map(str::trim).ne(want.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header '{}', found '{}'", want.join(","), got.iter().collect::<Vec<_>>().join(",")),
        });
    }
    Ok(())
}

/// Deserialized rows paired with their 1-based line numbers.
fn records<T: serde::de::DeserializeOwned, R: Read>(rdr: &mut csv::Reader<R>) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row = rec.deserialize(None).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        out.push((line, row));
    }
    Ok(out)
}

fn one_based(v: usize, what: &str, line: usize) -> Result<usize> {
    v.checked_sub(1).ok_or_else(|| Error::Parse { line, msg: format!("{what} ids are 1-based, found 0") })
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationRecord {
    worker_id: usize,
    item_id: usize,
    label: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRecord {
    item_id: usize,
    label: usize,
}

pub fn write_annotations<W: Write>(out: W, ann: &AnnotationMatrix) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    wtr.write_record(ANNOTATION_HEADER).map_err(csv_err)?;
    for (i, j, l) in ann.iter() {
        wtr.serialize(AnnotationRecord { worker_id: i + 1, item_id: j + 1, label: l + 1 }).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| io_err("<csv>", e))
}

/// Reads `worker_id,item_id,label` rows. Dimensions not given in `shape`
/// (`(m, n, k)`) are taken as the largest id seen.
pub fn read_annotations<R: Read>(
    src: R,
    shape: (Option<usize>, Option<usize>, Option<usize>),
) -> Result<AnnotationMatrix> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(src);
    check_header(&mut rdr, &ANNOTATION_HEADER)?;
    let mut triples = Vec::new();
    for (line, rec) in records::<AnnotationRecord, _>(&mut rdr)? {
        triples.push((
            line,
            one_based(rec.worker_id, "worker", line)?,
            one_based(rec.item_id, "item", line)?,
            one_based(rec.label, "label", line)?,
        ));
    }
    let max = |f: fn(&(usize, usize, usize, usize)) -> usize| triples.iter().map(f).max().map_or(0, |v| v + 1);
    let m = shape.0.unwrap_or_else(|| max(|t| t.1));
    let n = shape.1.unwrap_or_else(|| max(|t| t.2));
    let k = shape.2.unwrap_or_else(|| max(|t| t.3).max(2));
    let mut ann = AnnotationMatrix::new(m, n, k);
    for (line, i, j, l) in triples {
        ann.insert(i, j, l).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
    }
    Ok(ann)
}

pub fn write_labels<W: Write>(out: W, labels: &[usize]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    wtr.write_record(LABEL_HEADER).map_err(csv_err)?;
    for (j, &l) in labels.iter().enumerate() {
        wtr.serialize(LabelRecord { item_id: j + 1, label: l + 1 }).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| io_err("<csv>", e))
}

/// Reads `item_id,label` rows; every item from 1 to the largest id must
/// appear exactly once.
pub fn read_labels<R: Read>(src: R) -> Result<Vec<usize>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(src);
    check_header(&mut rdr, &LABEL_HEADER)?;
    let mut slots: Vec<Option<usize>> = Vec::new();
    for (line, rec) in records::<LabelRecord, _>(&mut rdr)? {
        let j = one_based(rec.item_id, "item", line)?;
        let l = one_based(rec.label, "label", line)?;
        if j >= slots.len() {
            slots.resize(j + 1, None);
        }
        if slots[j].replace(l).is_some() {
            return Err(Error::Parse { line, msg: format!("item {} listed twice", j + 1) });
        }
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(j, l)| l.ok_or_else(|| Error::Input(format!("no label for item {}", j + 1))))
        .collect()
}

/// Confusion-matrix model file. Row `l` of a worker block lists
/// `P(report l | truth y)` for `y = 1..k`.
pub fn write_confusions<W: Write>(
    mut out: W,
    prior: Option<&[f64]>,
    confusions: &[ConfusionMatrix<f64>],
) -> Result<()> {
    let k = confusions.first().map_or(0, ConfusionMatrix::k);
    let mut text = format!("{CONFUSION_MAGIC}\nk {k}\nm {}\n", confusions.len());
    if let Some(p) = prior {
        text.push_str("prior");
        for v in p {
            text.push_str(&format!(" {v}"));
        }
        text.push('\n');
    }
    for (i, mu) in confusions.iter().enumerate() {
        text.push_str(&format!("worker {}\n", i + 1));
        for l in 0..k {
            let row: Vec<String> = (0..k).map(|y| mu.prob(l, y).to_string()).collect();
            text.push_str(&row.join(" "));
            text.push('\n');
        }
    }
    out.write_all(text.as_bytes()).map_err(|e| io_err("<model>", e))
}

pub fn write_ds_params<W: Write>(out: W, params: &DsParams<f64>) -> Result<()> {
    write_confusions(out, Some(params.prior()), params.confusions())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionFile {
    pub prior: Option<Vec<f64>>,
    pub confusions: Vec<ConfusionMatrix<f64>>,
}

impl ConfusionFile {
    /// Parameters with the stored prior, or a uniform one when absent.
    pub fn into_params(self) -> Result<DsParams<f64>> {
        match self.prior {
            Some(p) => DsParams::new(p, self.confusions),
            None => DsParams::with_uniform_prior(self.confusions),
        }
    }
}

pub fn read_confusions<R: BufRead>(src: R) -> Result<ConfusionFile> {
    let mut lines = src
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((n, Ok(s))) => Ok((n, s.trim().to_string())),
            Some((n, Err(e))) => Err(Error::Parse { line: n, msg: e.to_string() }),
            None => Err(Error::Parse { line: 0, msg: format!("unexpected end of file, expected {what}") }),
        }
    };
    let perr = |line: usize, msg: String| Error::Parse { line, msg };
    let floats = |line: usize, s: &str| -> Result<Vec<f64>> {
        s.split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| perr(line, format!("malformed number '{t}'"))))
            .collect()
    };
    let keyed = |line: usize, s: &str, key: &str| -> Result<usize> {
        s.strip_prefix(key)
            .and_then(|r| r.trim().parse().ok())
            .ok_or_else(|| perr(line, format!("expected '{key} <count>', found '{s}'")))
    };

    let (n, magic) = next("header")?;
    if magic != CONFUSION_MAGIC {
        return Err(perr(n, format!("expected '{CONFUSION_MAGIC}', found '{magic}'")));
    }
    let (n, s) = next("class count")?;
    let k = keyed(n, &s, "k")?;
    let (n, s) = next("worker count")?;
    let m = keyed(n, &s, "m")?;
    if k < 2 || m == 0 {
        return Err(perr(n, format!("need k >= 2 and m >= 1, found k={k}, m={m}")));
    }
    let (mut n, mut s) = next("worker block")?;
    let mut prior = None;
    if let Some(rest) = s.strip_prefix("prior") {
        let p = floats(n, rest)?;
        if p.len() != k {
            return Err(perr(n, format!("prior has {} entries, expected {k}", p.len())));
        }
        prior = Some(p);
        (n, s) = next("worker block")?;
    }
    let mut confusions = Vec::with_capacity(m);
    for i in 0..m {
        if i > 0 {
            (n, s) = next("worker block")?;
        }
        if keyed(n, &s, "worker")? != i + 1 {
            return Err(perr(n, format!("expected 'worker {}', found '{s}'", i + 1)));
        }
        let mut table = Vec::with_capacity(k * k);
        for _ in 0..k {
            let (rn, row) = next("confusion row")?;
            let vals = floats(rn, &row)?;
            if vals.len() != k {
                return Err(perr(rn, format!("confusion row has {} entries, expected {k}", vals.len())));
            }
            table.extend(vals);
        }
        confusions.push(ConfusionMatrix::new(k, table).map_err(|e| perr(n, e.to_string()))?);
    }
    if let Some((n, _)) = lines.next() {
        return Err(perr(n, "trailing content after last worker".into()));
    }
    Ok(ConfusionFile { prior, confusions })
}

pub fn write_sweep_csv<W: Write>(out: W, result: &SweepResult) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    wtr.write_record(SWEEP_HEADER).map_err(csv_err)?;
    for row in &result.rows {
        wtr.serialize(row).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| io_err("<csv>", e))
}

pub fn read_sweep_csv<R: Read>(src: R) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_reader(src);
    check_header(&mut rdr, &SWEEP_HEADER)?;
    Ok(records(&mut rdr)?.into_iter().map(|(_, row)| row).collect())
}

/// JSON mirror of the sweep CSV: an object with `rows` (same field names as
/// the CSV columns) and per-replicate `diagnostics`.
pub fn write_sweep_json<W: Write>(out: W, result: &SweepResult) -> Result<()> {
    serde_json::to_writer_pretty(out, result).map_err(|e| Error::Input(format!("json encoding failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annotations_round_trip() {
        let ann = AnnotationMatrix::from_triples(3, 4, 2, [(0, 0, 1), (2, 3, 0), (1, 0, 0)]).unwrap();
        let mut buf = Vec::new();
        write_annotations(&mut buf, &ann).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("worker_id,item_id,label\n"));
        assert!(text.contains("\n1,1,2\n"));
        assert_eq!(read_annotations(buf.as_slice(), (Some(3), Some(4), Some(2))).unwrap(), ann);
        let inferred = read_annotations(buf.as_slice(), (None, None, None)).unwrap();
        assert_eq!((inferred.m(), inferred.n(), inferred.k()), (3, 4, 2));
    }

    #[test]
    fn annotation_errors() {
        let missing_header = "1,1,1\n";
        assert!(read_annotations(missing_header.as_bytes(), (None, None, None)).is_err());
        let zero = "worker_id,item_id,label\n0,1,1\n";
        assert!(matches!(read_annotations(zero.as_bytes(), (None, None, None)), Err(Error::Parse { line: 2, .. })));
        let dup = "worker_id,item_id,label\n1,1,1\n1,1,2\n";
        assert!(matches!(read_annotations(dup.as_bytes(), (None, None, None)), Err(Error::Parse { line: 3, .. })));
        let text = "worker_id,item_id,label\n1,x,1\n";
        assert!(read_annotations(text.as_bytes(), (None, None, None)).is_err());
    }

    #[test]
    fn labels_round_trip() {
        let mut buf = Vec::new();
        write_labels(&mut buf, &[2, 0, 1]).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "item_id,label\n1,3\n2,1\n3,2\n");
        assert_eq!(read_labels(buf.as_slice()).unwrap(), vec![2, 0, 1]);
        assert!(read_labels("item_id,label\n2,1\n".as_bytes()).is_err());
    }

    #[test]
    fn confusions_round_trip() {
        let mus = vec![
            ConfusionMatrix::new(2, vec![0.8, 0.3, 0.2, 0.7]).unwrap(),
            ConfusionMatrix::symmetric(2, 0.65).unwrap(),
        ];
        let mut buf = Vec::new();
        write_confusions(&mut buf, Some(&[0.25, 0.75]), &mus).unwrap();
        let file = read_confusions(buf.as_slice()).unwrap();
        assert_eq!(file.prior, Some(vec![0.25, 0.75]));
        assert_eq!(file.confusions, mus);

        let mut buf = Vec::new();
        write_confusions(&mut buf, None, &mus).unwrap();
        let file = read_confusions(buf.as_slice()).unwrap();
        assert_eq!(file.prior, None);
        assert_eq!(file.into_params().unwrap().prior(), &[0.5, 0.5]);
    }

    #[test]
    fn confusion_errors_name_lines() {
        let bad = format!("{CONFUSION_MAGIC}\nk 2\nm 1\nworker 1\n0.5 0.5\n0.5\n");
        assert!(matches!(read_confusions(bad.as_bytes()), Err(Error::Parse { line: 6, .. })));
        assert!(read_confusions("nonsense\n".as_bytes()).is_err());
        let cols = format!("{CONFUSION_MAGIC}\nk 2\nm 1\nworker 1\n0.5 0.5\n0.6 0.5\n");
        assert!(read_confusions(cols.as_bytes()).is_err());
    }

    #[test]
    fn sweep_csv_header_and_round_trip() {
        let result = SweepResult {
            rows: vec![SweepRow {
                method: "IS".into(),
                param_name: "pi".into(),
                param_value: 0.5,
                replicate: 0,
                cost_per_item: 25.0,
                accuracy: 0.9,
            }],
            diagnostics: Vec::new(),
        };
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &result).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), "method,param_name,param_value,replicate,cost_per_item,accuracy");
        assert_eq!(read_sweep_csv(buf.as_slice()).unwrap(), result.rows);
        let mut json = Vec::new();
        write_sweep_json(&mut json, &result).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&json).unwrap();
        assert_eq!(v["rows"][0]["cost_per_item"], 25.0);
    }
}
