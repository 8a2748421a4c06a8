use std::io::Read;
use std::path::Path;

use super::vocab::ClassVocabulary;
use crate::error::{Error, Result};

pub const IMAGE_COLUMN: &str = "Image Index";
pub const LABEL_COLUMN: &str = "Finding Labels";

/// Reads an NIH-style label table: image id and multi-hot labels per row,
/// in file order.
pub fn parse_label_csv(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_labels(file).map_err(|e| match e {
        Error::Format(m) => Error::Decode {
            path: path.to_path_buf(),
            message: m,
        },
        other => other,
    })
}

/// As [`parse_label_csv`] over any reader. Rows are numbered from 1 at the
/// header line, matching a text editor's line numbers.
pub fn read_labels(reader: impl Read) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Format(format!("missing column `{name}`")))
    };
    let (id_col, label_col) = (column(IMAGE_COLUMN)?, column(LABEL_COLUMN)?);
    let vocab = ClassVocabulary;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Format(e.to_string()))?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| {
            record
                .get(i)
                .map(str::trim)
                .ok_or_else(|| Error::Format(format!("row {row}: too few fields")))
        };
        let id = field(id_col)?;
        let labels = vocab.encode(field(label_col)?.split('|').map(str::trim), row)?;
        out.push((id.to_string(), labels));
    }
    Ok(out)
}

/// Writes rows in the same layout [`read_labels`] accepts.
pub fn write_labels(path: &Path, rows: &[(String, Vec<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let vocab = ClassVocabulary;
    let fail = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record([IMAGE_COLUMN, LABEL_COLUMN]).map_err(fail)?;
    for (id, labels) in rows {
        w.write_record([id.as_str(), &vocab.decode(labels).join("|")]).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
