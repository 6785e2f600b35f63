//! CSV datasets: a header row, one column named `label`, every other column a
//! numeric feature.

use std::path::Path;

use super::{DataError, LabeledDataset};
use crate::tensor::Tensor;

pub fn load_csv(path: &Path) -> Result<LabeledDataset, DataError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| DataError::Csv(e.to_string()))?;
    let headers = reader.headers().map_err(|e| DataError::Csv(e.to_string()))?.clone();
    let label_col = headers
        .iter()
        .position(|h| h.trim() == "label")
        .ok_or_else(|| DataError::Csv("no column named \"label\"".into()))?;
    let width = headers.len() - 1;
    if width == 0 {
        return Err(DataError::Csv("no feature columns".into()));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| DataError::Csv(e.to_string()))?;
        for (c, field) in rec.iter().enumerate() {
            let field = field.trim();
            if c == label_col {
                let y: usize = field
                    .parse()
                    .map_err(|_| DataError::Csv(format!("row {}: label {field:?} is not a class id", r + 1)))?;
                labels.push(y);
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| DataError::Csv(format!("row {}, column {c}: {field:?} is not a number", r + 1)))?;
                data.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(DataError::Csv("no data rows".into()));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let name = path.display().to_string();
    LabeledDataset::new(Tensor::new(vec![labels.len(), width], data)?, labels, classes, name)
}

/// Writes `f0..f{d-1}` feature columns followed by `label`.
pub fn write_csv(ds: &LabeledDataset, path: &Path) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| DataError::Csv(e.to_string()))?;
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(|e| DataError::Csv(e.to_string()))?;
    for i in 0..ds.len() {
        let mut row: Vec<String> = ds.samples().row(i).iter().map(|v| v.to_string()).collect();
        row.push(ds.labels()[i].to_string());
        w.write_record(&row).map_err(|e| DataError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| DataError::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_label_column_anywhere() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "a,label,b\n0.5,1,0.25\n1,0,0\n").unwrap();
        let ds = load_csv(&p).unwrap();
        assert_eq!(ds.labels(), &[1, 0]);
        assert_eq!(ds.samples().row(0), &[0.5, 0.25]);
        assert_eq!(ds.n_classes(), 2);

        let q = dir.path().join("e.csv");
        write_csv(&ds, &q).unwrap();
        let back = load_csv(&q).unwrap();
        assert_eq!(back.samples(), ds.samples());
        assert_eq!(back.labels(), ds.labels());
    }

    #[test]
    fn missing_label_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(matches!(load_csv(&p), Err(DataError::Csv(_))));
        std::fs::write(&p, "a,label\nx,2\n").unwrap();
        assert!(load_csv(&p).is_err());
    }
}
