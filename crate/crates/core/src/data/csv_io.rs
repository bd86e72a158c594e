//! Long-format CSV: one row per `(series_id, t)` with the target repeated on
//! every row of a series.
//!
//! ```text
//! series_id,t,feature_1,feature_2,target
//! a,0,0.1,1.5,7.2
//! a,1,,,7.2          <- all features empty: missing step
//! a,3,0.4,1.1,7.2    <- t = 2 absent: missing step
//! ```
//!
//! Time indices are shifted so each series starts at step 0. Series shorter
//! than the longest one are right-padded.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SeriesBatch;
use crate::error::{Error, Result};

/// Longest series (in steps, gaps included) accepted from a file.
pub const MAX_SERIES_STEPS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub id_column: String,
    pub time_column: String,
    pub target_column: String,
    /// Feature columns in order; `None` takes every other column as it
    /// appears in the header.
    pub feature_columns: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            id_column: "series_id".into(),
            time_column: "t".into(),
            target_column: "target".into(),
            feature_columns: None,
        }
    }
}

struct Row {
    t: i64,
    values: Option<Vec<f64>>,
}

struct Series {
    id: String,
    target: f64,
    rows: Vec<Row>,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SeriesBatch> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let id_col = col(&schema.id_column)?;
    let t_col = col(&schema.time_column)?;
    let y_col = col(&schema.target_column)?;
    let feature_cols: Vec<usize> = match &schema.feature_columns {
        Some(names) => names.iter().map(|n| col(n)).collect::<Result<_>>()?,
        None => (0..header.len())
            .filter(|&i| i != id_col && i != t_col && i != y_col)
            .collect(),
    };
    if feature_cols.is_empty() {
        return Err(Error::Data(format!("{}: no feature columns", path.display())));
    }

    let err = |line: u64, message: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut series: Vec<Series> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut seen: HashSet<(usize, i64)> = HashSet::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record.get(id_col).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(err(line, format!("empty `{}`", schema.id_column)));
        }
        let t_raw = record.get(t_col).unwrap_or("");
        let t: i64 = t_raw
            .parse()
            .map_err(|_| err(line, format!("`{}` is not an integer: {t_raw:?}", schema.time_column)))?;
        let y_raw = record.get(y_col).unwrap_or("");
        let target = parse_finite(y_raw)
            .ok_or_else(|| err(line, format!("`{}` is not numeric: {y_raw:?}", schema.target_column)))?;

        let cells: Vec<&str> = feature_cols.iter().map(|&c| record.get(c).unwrap_or("")).collect();
        let values = if cells.iter().all(|c| c.is_empty()) {
            None
        } else {
            let mut v = Vec::with_capacity(cells.len());
            for (cell, &c) in cells.iter().zip(&feature_cols) {
                v.push(parse_finite(cell).ok_or_else(|| {
                    err(line, format!("column `{}` is not numeric: {cell:?}", &header[c]))
                })?);
            }
            Some(v)
        };

        let si = *index.entry(id.clone()).or_insert_with(|| {
            series.push(Series {
                id: id.clone(),
                target,
                rows: Vec::new(),
            });
            series.len() - 1
        });
        if !seen.insert((si, t)) {
            return Err(Error::DuplicateKey {
                path: path.to_path_buf(),
                line,
                series_id: id,
                t,
            });
        }
        series[si].rows.push(Row { t, values });
    }
    if series.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }

    let f = feature_cols.len();
    let mut lengths = Vec::with_capacity(series.len());
    for s in &mut series {
        s.rows.sort_by_key(|r| r.t);
        let span = (s.rows.last().unwrap().t - s.rows[0].t) as u64 + 1;
        if span as usize > MAX_SERIES_STEPS {
            return Err(Error::Data(format!(
                "series `{}` spans {span} steps (limit {MAX_SERIES_STEPS})",
                s.id
            )));
        }
        lengths.push(span as usize);
    }
    let steps = *lengths.iter().max().unwrap();
    let n = series.len();
    let mut inputs = vec![0.0; n * steps * f];
    let mut validity = vec![false; n * steps];
    for (b, s) in series.iter().enumerate() {
        let t0 = s.rows[0].t;
        for row in &s.rows {
            let t = (row.t - t0) as usize;
            if let Some(v) = &row.values {
                let k = b * steps + t;
                validity[k] = true;
                inputs[k * f..(k + 1) * f].copy_from_slice(v);
            }
        }
    }
    SeriesBatch::new(
        series.iter().map(|s| s.id.clone()).collect(),
        steps,
        f,
        inputs,
        validity,
        lengths,
        series.iter().map(|s| s.target).collect(),
    )
}

/// Write a batch in the default long-format schema. Missing steps are written
/// as rows with empty feature cells; padding is not written.
pub fn write_csv(batch: &SeriesBatch, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["series_id".to_string(), "t".to_string()];
    header.extend((1..=batch.features()).map(|j| format!("feature_{j}")));
    header.push("target".into());
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for b in 0..batch.len() {
        let target = batch.targets()[b].to_string();
        for t in 0..batch.lengths()[b] {
            row.clear();
            row.push(batch.ids()[b].clone());
            row.push(t.to_string());
            if batch.is_valid(b, t) {
                row.extend(batch.step(b, t).iter().map(|v| v.to_string()));
            } else {
                row.extend(std::iter::repeat_n(String::new(), batch.features()));
            }
            row.push(target.clone());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_finite(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate, SyntheticSpec};
    use crate::data::{inject_missing, MissingPattern};
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn small_well_formed_file() {
        let f = write("series_id,t,a,b,target\nx,0,1,2,5\nx,1,3,4,5\n");
        let b = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!((b.len(), b.steps(), b.features()), (1, 2, 2));
        assert_eq!(b.inputs(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(b.targets(), &[5.0]);
    }

    #[test]
    fn duplicate_key_names_the_row() {
        let f = write("series_id,t,a,target\nx,0,1,5\nx,1,3,5\nx,0,9,5\n");
        match load_csv(f.path(), &CsvSchema::default()) {
            Err(Error::DuplicateKey { line, series_id, t, .. }) => {
                assert_eq!((line, series_id.as_str(), t), (4, "x", 0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn structured_errors() {
        let f = write("series_id,a,target\nx,1,5\n");
        assert!(matches!(
            load_csv(f.path(), &CsvSchema::default()),
            Err(Error::MissingColumn { column, .. }) if column == "t"
        ));
        let f = write("series_id,t,a,target\nx,0,1,5\nx,1,oops,5\n");
        match load_csv(f.path(), &CsvSchema::default()) {
            Err(Error::Csv { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("`a`"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gaps_and_variable_lengths() {
        let f = write(
            "series_id,t,a,target\n\
             p,10,1,0.5\np,13,4,0.5\np,11,,0.5\n\
             q,0,7,1.5\n",
        );
        let b = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(b.steps(), 4);
        assert_eq!(b.lengths(), &[4, 1]);
        assert_eq!(b.validity(), &[true, false, false, true, true, false, false, false]);
        assert_eq!(b.inputs(), &[1.0, 0.0, 0.0, 4.0, 7.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn round_trip_preserves_batch() {
        let ds = generate(&SyntheticSpec {
            n: 30,
            steps: 7,
            features: 3,
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        let batch = inject_missing(&ds.batch, MissingPattern::Random { ratio: 0.2 }, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_csv(&batch, &path).unwrap();
        let back = load_csv(&path, &CsvSchema::default()).unwrap();
        assert_eq!(back.ids(), batch.ids());
        assert_eq!(back.validity(), batch.validity());
        for (a, b) in back.inputs().iter().zip(batch.inputs()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        assert_eq!(back.targets(), batch.targets());
    }
}
