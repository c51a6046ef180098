use std::path::Path;

use crate::data::window::SeriesChannel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which CSV columns become channels.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum ColumnSpec {
    #[default]
    All,
    Names(Vec<String>),
}

/// Reads a comma-delimited UTF-8 file with a header row, one channel per
/// selected column. Row numbers in errors count data rows from 1.
pub fn load_csv<S: Scalar>(path: &Path, columns: &ColumnSpec) -> Result<Vec<SeriesChannel<S>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let headers: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(|h| h.trim().to_string()).collect();

    let selected: Vec<usize> = match columns {
        ColumnSpec::All => (0..headers.len()).collect(),
        ColumnSpec::Names(names) => names
            .iter()
            .map(|n| {
                headers.iter().position(|h| h == n).ok_or_else(|| Error::ColumnNotFound {
                    path: path.to_path_buf(),
                    column: n.clone(),
                })
            })
            .collect::<Result<_>>()?,
    };

    let mut values: Vec<Vec<S>> = vec![Vec::new(); selected.len()];
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = row_idx + 1;
        for (slot, &col) in selected.iter().enumerate() {
            let cell = record.get(col).unwrap_or("").trim();
            let parsed = cell.parse::<f64>().ok().filter(|v| v.is_finite());
            match parsed {
                Some(v) => values[slot].push(S::of(v)),
                None => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        row,
                        column: headers[col].clone(),
                        value: cell.to_string(),
                    })
                }
            }
        }
    }

    Ok(selected
        .iter()
        .zip(values)
        .map(|(&col, v)| SeriesChannel::new(headers[col].clone(), v))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn selects_columns() {
        let f = write("a,b,c\n1,2,3\n4,5,6\n7,8,9\n");
        let ch = load_csv::<f64>(f.path(), &ColumnSpec::Names(vec!["c".into(), "a".into()])).unwrap();
        assert_eq!(ch.len(), 2);
        assert_eq!(ch[0].name, "c");
        assert_eq!(ch[0].values, vec![3.0, 6.0, 9.0]);
        assert_eq!(ch[1].values, vec![1.0, 4.0, 7.0]);
    }

    #[test]
    fn header_only_gives_empty_channels() {
        let f = write("a,b\n");
        let ch = load_csv::<f64>(f.path(), &ColumnSpec::All).unwrap();
        assert_eq!(ch.len(), 2);
        assert!(ch.iter().all(|c| c.values.is_empty()));
    }

    #[test]
    fn bad_cell_names_row_and_column() {
        let mut s = String::from("x,y\n");
        for i in 1..=9 {
            if i == 7 {
                s.push_str("1,abc\n");
            } else {
                s.push_str(&format!("{i},{i}\n"));
            }
        }
        let f = write(&s);
        let err = load_csv::<f64>(f.path(), &ColumnSpec::All).unwrap_err();
        match &err {
            Error::Parse { row, column, value, .. } => {
                assert_eq!((*row, column.as_str(), value.as_str()), (7, "y", "abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("row 7"));
    }

    #[test]
    fn missing_file_and_column() {
        let err = load_csv::<f64>(Path::new("/nonexistent/series.csv"), &ColumnSpec::All).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/series.csv"));
        let f = write("a\n1\n");
        let err = load_csv::<f64>(f.path(), &ColumnSpec::Names(vec!["zz".into()])).unwrap_err();
        assert!(matches!(err, Error::ColumnNotFound { .. }));
    }
}
