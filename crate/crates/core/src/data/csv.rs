use std::path::Path;

use ndarray::Array2;

use super::Dataset;
use crate::error::{Error, Result};
use crate::math::Scalar;

/// 17 significant digits; enough to round-trip any `f64`.
pub(crate) fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `label,f0,f1,...` rows.
pub fn write_csv<T: Scalar>(dataset: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: ::csv::Error| Error::Csv {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut w = ::csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["label".to_string()];
    header.extend((0..dataset.input_dim()).map(|d| format!("f{d}")));
    w.write_record(&header).map_err(csv_err)?;
    for (row, label) in dataset.features.outer_iter().zip(&dataset.labels) {
        let mut record = vec![label.to_string()];
        record.extend(row.iter().map(|v| format_float(v.as_f64())));
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`write_csv`]. The class count defaults to the
/// largest label plus one.
pub fn read_csv<T: Scalar>(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let bad = |reason: String| Error::Csv {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = ::csv::Reader::from_path(path).map_err(|e| match e.kind() {
        ::csv::ErrorKind::Io(_) => match e.into_kind() {
            ::csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => bad(e.to_string()),
    })?;
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.get(0) != Some("label") || header.len() < 2 {
        return Err(bad("header must be label,f0,f1,...".into()));
    }
    for (d, name) in header.iter().skip(1).enumerate() {
        if name != format!("f{d}") {
            return Err(bad(format!("unexpected column {name:?}")));
        }
    }
    let dim = header.len() - 1;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let label: usize = record[0]
            .parse()
            .map_err(|_| bad(format!("row {}: bad label {:?}", line + 1, &record[0])))?;
        labels.push(label);
        for field in record.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| bad(format!("row {}: bad value {field:?}", line + 1)))?;
            values.push(T::lit(v));
        }
    }
    let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let features = Array2::from_shape_vec((labels.len(), dim), values).map_err(|e| bad(e.to_string()))?;
    Dataset::new(features, labels, k, path.display().to_string())
}
