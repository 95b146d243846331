//! Append-only CSV training logs with a fixed header per file.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::CliError;

pub struct CsvLog {
    writer: csv::Writer<File>,
    width: usize,
}

impl CsvLog {
    /// Opens `path` for appending. A new file gets `header`; an existing one
    /// must already carry exactly that header.
    pub fn open(path: &Path, header: &[String]) -> Result<Self, CliError> {
        let line = header.join(",");
        let existing = match File::open(path) {
            Ok(f) => BufReader::new(f).lines().next().transpose()?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        if let Some(first) = &existing {
            if *first != line {
                return Err(CliError::data(format!("{} has header {first:?}, expected {line:?}", path.display())));
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if existing.is_none() {
            writer.write_record(header)?;
        }
        Ok(CsvLog { writer, width: header.len() })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<(), CliError> {
        if fields.len() != self.width {
            return Err(CliError::data(format!("log row has {} fields, header has {}", fields.len(), self.width)));
        }
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.writer.flush()?;
        Ok(())
    }
}

/// Reads named numeric columns from a log, in file order.
pub fn read_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<f64>>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let idx = names
        .iter()
        .map(|n| header.iter().position(|h| h == *n).ok_or_else(|| CliError::data(format!("{} has no column {n}", path.display()))))
        .collect::<Result<Vec<_>, _>>()?;
    let mut cols = vec![Vec::new(); names.len()];
    for rec in r.records() {
        let rec = rec?;
        for (c, &i) in cols.iter_mut().zip(&idx) {
            let v = rec.get(i).unwrap_or("");
            c.push(v.parse().map_err(|_| CliError::data(format!("{}: bad number {v:?}", path.display())))?);
        }
    }
    Ok(cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn appends_under_one_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        for step in 0..2 {
            let mut log = CsvLog::open(&p, &h(&["step", "loss"])).unwrap();
            log.row(&[step.to_string(), "0.5".into()]).unwrap();
            log.finish().unwrap();
        }
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "step,loss\n0,0.5\n1,0.5\n");
        assert_eq!(read_columns(&p, &["loss", "step"]).unwrap(), vec![vec![0.5, 0.5], vec![0.0, 1.0]]);
    }

    #[test]
    fn header_mismatch_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        CsvLog::open(&p, &h(&["step"])).unwrap().finish().unwrap();
        assert_eq!(CsvLog::open(&p, &h(&["step", "x"])).err().unwrap().exit_code(), 3);
    }
}
