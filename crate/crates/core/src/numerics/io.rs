//! Matrix CSV: one row per line, comma separated, 17 significant digits so
//! every value parses back to the identical `f64`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_matrix_csv<W: Write>(m: &Matrix, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for r in 0..m.rows() {
        w.write_record(m.row(r).iter().map(|v| format_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(reader: R) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    for record in rdr.records() {
        let record = record?;
        if record.is_empty() || (record.len() == 1 && record[0].is_empty()) {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::Parse(format!(
                    "row {} has {} columns, expected {c}",
                    rows + 1,
                    record.len()
                )))
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse(format!("not a number: {field:?}")))?;
            data.push(v);
        }
        rows += 1;
    }
    Matrix::new(rows, cols.unwrap_or(0), data)
}

pub fn save_matrix_csv(m: &Matrix, path: &Path) -> Result<()> {
    write_matrix_csv(m, std::fs::File::create(path)?)
}

pub fn load_matrix_csv(path: &Path) -> Result<Matrix> {
    read_matrix_csv(std::fs::File::open(path)?)
}
