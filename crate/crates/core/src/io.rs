//! Two-file CSV format.
//!
//! The covariate file has header `group,x1,...,xd`, the response file
//! `group,y`. Groups are ordered by first appearance in the covariate file
//! and must appear in both files.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::path::Path;

use crate::data::{GroupBlock, GroupedSample};
use crate::error::{Error, Result};

struct Table {
    header: Vec<String>,
    /// `(line, label, values)` per data row.
    rows: Vec<(u64, String, Vec<f64>)>,
}

fn read_table(path: &Path, min_columns: usize, exact: bool) -> Result<Table> {
    let file_name = path.display().to_string();
    let parse_err = |row: u64, column: &str, message: String| Error::Parse {
        file: file_name.clone(),
        row: row as usize,
        column: column.to_string(),
        message,
    };
    let file = File::open(path).map_err(|e| Error::Io(format!("{file_name}: {e}")))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(1, "", e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.len() < min_columns || (exact && header.len() != min_columns) {
        return Err(parse_err(
            1,
            "",
            format!("expected {}{min_columns} columns in header, found {}", if exact { "" } else { "at least " }, header.len()),
        ));
    }
    if header[0] != "group" {
        return Err(parse_err(1, &header[0], "first column must be named \"group\"".into()));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, "", e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let label = record[0].trim().to_string();
        if label.is_empty() {
            return Err(parse_err(line, "group", "empty group label".into()));
        }
        let mut values = Vec::with_capacity(header.len() - 1);
        for (field, column) in record.iter().zip(&header).skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, column, format!("cannot parse {field:?} as a number")))?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    location: format!("{file_name}, row {line}, column {column}"),
                });
            }
            values.push(v);
        }
        rows.push((line, label, values));
    }
    Ok(Table { header, rows })
}

/// Reads a covariate file and a response file into a grouped sample.
pub fn read_unlinked_csv(path_x: impl AsRef<Path>, path_y: impl AsRef<Path>) -> Result<GroupedSample> {
    let xt = read_table(path_x.as_ref(), 2, false)?;
    let yt = read_table(path_y.as_ref(), 2, true)?;
    let d = xt.header.len() - 1;

    let mut order: Vec<String> = Vec::new();
    let mut xs: HashMap<String, Vec<f64>> = HashMap::new();
    for (_, label, values) in xt.rows {
        let entry = xs.entry(label.clone()).or_insert_with(|| {
            order.push(label);
            Vec::new()
        });
        entry.extend(values);
    }
    let mut ys: HashMap<String, Vec<f64>> = HashMap::new();
    for (_, label, values) in yt.rows {
        ys.entry(label).or_default().push(values[0]);
    }

    let mismatched: BTreeSet<String> = xs
        .keys()
        .filter(|l| !ys.contains_key(*l))
        .chain(ys.keys().filter(|l| !xs.contains_key(*l)))
        .cloned()
        .collect();
    if !mismatched.is_empty() {
        return Err(Error::GroupMismatch {
            labels: mismatched.into_iter().collect(),
        });
    }
    let groups = order
        .into_iter()
        .map(|label| {
            let x = xs.remove(&label).unwrap_or_default();
            let y = ys.remove(&label).unwrap_or_default();
            GroupBlock::from_flat(label, d, x, y)
        })
        .collect::<Result<Vec<_>>>()?;
    GroupedSample::new(groups)
}

/// Writes `sample` in the format read by [`read_unlinked_csv`]. Values are
/// written in shortest round-trip form.
pub fn write_unlinked_csv(sample: &GroupedSample, path_x: impl AsRef<Path>, path_y: impl AsRef<Path>) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Io(e.to_string());
    let mut wx = csv::Writer::from_path(path_x).map_err(csv_err)?;
    let mut header = vec!["group".to_string()];
    header.extend((1..=sample.d()).map(|j| format!("x{j}")));
    wx.write_record(&header).map_err(csv_err)?;
    for g in sample.groups() {
        for row in g.x_rows() {
            let mut rec = vec![g.label().to_string()];
            rec.extend(row.iter().map(f64::to_string));
            wx.write_record(&rec).map_err(csv_err)?;
        }
    }
    wx.flush()?;
    let mut wy = csv::Writer::from_path(path_y).map_err(csv_err)?;
    wy.write_record(["group", "y"]).map_err(csv_err)?;
    for g in sample.groups() {
        for v in g.y() {
            wy.write_record([g.label(), &v.to_string()]).map_err(csv_err)?;
        }
    }
    wy.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn files(x: &str, y: &str) -> (tempfile::TempDir, std::path::PathBuf, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let px = dir.path().join("x.csv");
        let py = dir.path().join("y.csv");
        fs::write(&px, x).unwrap();
        fs::write(&py, y).unwrap();
        (dir, px, py)
    }

    #[test]
    fn one_group() {
        let (_d, px, py) = files("group,x1\na,0\na,2\n", "group,y\na,1\na,3\na,5\n");
        let s = read_unlinked_csv(&px, &py).unwrap();
        assert_eq!(s.k(), 1);
        assert_eq!(s.groups()[0].n_x(), 2);
        assert_eq!(s.groups()[0].n_y(), 3);
    }

    #[test]
    fn group_only_in_response_file() {
        let (_d, px, py) = files("group,x1\na,0\n", "group,y\na,1\nb,2\n");
        match read_unlinked_csv(&px, &py) {
            Err(Error::GroupMismatch { labels }) => assert_eq!(labels, vec!["b".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nan_is_reported_with_location() {
        let (_d, px, py) = files("group,x1\na,0\na,NaN\n", "group,y\na,1\n");
        match read_unlinked_csv(&px, &py) {
            Err(Error::NonFinite { location }) => {
                assert!(location.contains("row 3") && location.contains("x1"), "{location}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_number_cites_row_and_column() {
        let (_d, px, py) = files("group,x1,x2\na,0,1\nb,1,oops\n", "group,y\na,1\nb,1\n");
        match read_unlinked_csv(&px, &py) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "x2");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn header_is_checked() {
        let (_d, px, py) = files("label,x1\na,0\n", "group,y\na,1\n");
        assert!(matches!(read_unlinked_csv(&px, &py), Err(Error::Parse { row: 1, .. })));
        let (_d, px, py) = files("group,x1\na,0\n", "group,y,z\na,1,2\n");
        assert!(matches!(read_unlinked_csv(&px, &py), Err(Error::Parse { row: 1, .. })));
    }

    #[test]
    fn group_order_follows_covariate_file() {
        let (_d, px, py) = files("group,x1\nz,0\na,1\nz,2\n", "group,y\na,1\nz,2\n");
        let s = read_unlinked_csv(&px, &py).unwrap();
        let labels: Vec<&str> = s.groups().iter().map(|g| g.label()).collect();
        assert_eq!(labels, ["z", "a"]);
    }
}
