//! CSV input/output for datasets and benchmark tables.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! dataset written by [`write_dataset_csv`] reads back bit-identical.

use std::path::Path;

use covxplain_core::data::Dataset;
use covxplain_core::eval::AufcReport;
use covxplain_core::linalg::Matrix;
use covxplain_core::Error as CoreError;

use crate::{CliError, Result};

fn csv_err(path: &Path, source: csv::Error) -> CliError {
    CliError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads a headered numeric CSV. Columns named in `targets` become the
/// regression targets; with an empty list the last column is the target.
pub fn load_csv(path: &Path, targets: &[String]) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() {
        return Err(CliError::Core(CoreError::EmptyDataset));
    }

    let target_idx: Vec<usize> = if targets.is_empty() {
        vec![headers.len() - 1]
    } else {
        let mut idx = Vec::with_capacity(targets.len());
        for name in targets {
            let found = headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| CliError::Core(CoreError::MissingColumn { name: name.clone() }))?;
            if idx.contains(&found) {
                return Err(CliError::config(format!(
                    "target column '{name}' listed more than once"
                )));
            }
            idx.push(found);
        }
        idx
    };
    let feature_idx: Vec<usize> = (0..headers.len())
        .filter(|i| !target_idx.contains(i))
        .collect();
    if feature_idx.is_empty() {
        return Err(CliError::config(
            "every column is a target; no feature columns left",
        ));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let mut row = Vec::with_capacity(record.len());
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                CliError::Core(CoreError::UnparseableCell {
                    row: r + 1,
                    column: c,
                })
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Core(CoreError::EmptyDataset));
    }

    let mut x = Matrix::zeros(rows.len(), feature_idx.len());
    let mut y = Matrix::zeros(rows.len(), target_idx.len());
    for (r, row) in rows.iter().enumerate() {
        for (out, &c) in feature_idx.iter().enumerate() {
            x.set(r, out, row[c]);
        }
        for (out, &c) in target_idx.iter().enumerate() {
            y.set(r, out, row[c]);
        }
    }
    let feature_names = feature_idx.iter().map(|&i| headers[i].clone()).collect();
    let target_names = target_idx.iter().map(|&i| headers[i].clone()).collect();
    Dataset::new(x, y, feature_names, target_names).map_err(CliError::Core)
}

/// Writes a dataset as a headered CSV, feature columns first, then targets.
pub fn write_dataset_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<&str> = ds
        .feature_names
        .iter()
        .chain(&ds.target_names)
        .map(String::as_str)
        .collect();
    writer.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in 0..ds.len() {
        let record: Vec<String> =
            ds.x.row(r)
                .iter()
                .chain(ds.y.row(r))
                .map(|v| format!("{v}"))
                .collect();
        writer.write_record(&record).map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Per-instance benchmark rows: one line per (method, instance) cell.
pub fn write_results_csv(path: &Path, reports: &[AufcReport]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    writer
        .write_record(["dataset", "method", "instance_id", "s2_initial", "aufc"])
        .map_err(|e| csv_err(path, e))?;
    for report in reports {
        for inst in &report.instances {
            writer
                .write_record([
                    report.dataset.clone(),
                    report.method.clone(),
                    inst.instance_id.to_string(),
                    format!("{}", inst.s2_initial),
                    format!("{}", inst.aufc),
                ])
                .map_err(|e| csv_err(path, e))?;
        }
    }
    writer.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Per-method aggregate rows.
pub fn write_summary_csv(path: &Path, reports: &[AufcReport]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    writer
        .write_record(["dataset", "method", "instances", "mean_aufc", "std_aufc"])
        .map_err(|e| csv_err(path, e))?;
    for report in reports {
        writer
            .write_record([
                report.dataset.clone(),
                report.method.clone(),
                report.instances.len().to_string(),
                format!("{}", report.mean),
                format!("{}", report.std),
            ])
            .map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Mean flipping curves, one row per (method, flip step).
pub fn write_curves_csv(path: &Path, reports: &[AufcReport]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    writer
        .write_record(["method", "fraction_flipped", "mean_relative_s2"])
        .map_err(|e| csv_err(path, e))?;
    for report in reports {
        let Some(first) = report.instances.first() else {
            continue;
        };
        for (fraction, value) in first.curve.fractions.iter().zip(&report.mean_curve) {
            writer
                .write_record([
                    report.method.clone(),
                    format!("{fraction}"),
                    format!("{value}"),
                ])
                .map_err(|e| csv_err(path, e))?;
        }
    }
    writer.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn awkward_dataset() -> Dataset {
        let x = Matrix::from_rows(&[
            vec![0.1 + 0.2, -1.5e-17, 3.0],
            vec![1.0 / 3.0, 2.0f64.sqrt(), -0.0],
            vec![1e100, -7.25, 42.0],
        ])
        .unwrap();
        let y = Matrix::from_rows(&[vec![0.3], vec![-2.5], vec![9.75]]).unwrap();
        Dataset::new(
            x,
            y,
            vec!["a".into(), "b".into(), "c".into()],
            vec!["t".into()],
        )
        .unwrap()
    }

    #[test]
    fn dataset_csv_roundtrips_bit_exactly() {
        let ds = awkward_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_dataset_csv(&path, &ds).unwrap();
        let back = load_csv(&path, &[]).unwrap();
        assert_eq!(back.feature_names, ds.feature_names);
        assert_eq!(back.target_names, ds.target_names);
        let bits = |m: &Matrix| -> Vec<u64> { m.as_slice().iter().map(|v| v.to_bits()).collect() };
        assert_eq!(bits(&back.x), bits(&ds.x));
        assert_eq!(bits(&back.y), bits(&ds.y));
    }

    #[test]
    fn named_targets_reorder_columns() {
        let ds = awkward_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_dataset_csv(&path, &ds).unwrap();
        let back = load_csv(&path, &["b".to_string()]).unwrap();
        assert_eq!(back.feature_names, vec!["a", "c", "t"]);
        assert_eq!(back.target_names, vec!["b"]);
        assert_eq!(back.y.get(1, 0), 2.0f64.sqrt());
    }

    #[test]
    fn missing_target_column_is_reported_by_name() {
        let ds = awkward_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_dataset_csv(&path, &ds).unwrap();
        let err = load_csv(&path, &["nope".to_string()]).unwrap_err();
        match err {
            CliError::Core(CoreError::MissingColumn { name }) => assert_eq!(name, "nope"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unparseable_cell_reports_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(&path, "a,b,t\n1.0,2.0,3.0\n4.0,oops,6.0\n").unwrap();
        let err = load_csv(&path, &[]).unwrap_err();
        match err {
            CliError::Core(CoreError::UnparseableCell { row, column }) => {
                assert_eq!((row, column), (2, 1));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn header_only_file_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(&path, "a,b,t\n").unwrap();
        assert!(matches!(
            load_csv(&path, &[]).unwrap_err(),
            CliError::Core(CoreError::EmptyDataset)
        ));
    }
}
