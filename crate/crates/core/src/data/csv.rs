//! Three-column news CSV: `"label","title","description"`, every field
//! double-quoted, embedded quotes doubled.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// One record as shipped; `label` is 1-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawExample {
    pub label: usize,
    pub title: String,
    pub description: String,
}

pub fn parse_csv(path: &Path, num_classes: usize) -> Result<Vec<RawExample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv_reader(file, num_classes)
}

pub fn parse_csv_reader<R: Read>(reader: R, num_classes: usize) -> Result<Vec<RawExample>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                let line = e.position().map_or(line, |p| p.line());
                return Err(Error::Csv { line, message: e.to_string() });
            }
        }
        let line = record.position().map_or(line, |p| p.line());
        if record.len() != 3 {
            return Err(Error::Csv { line, message: format!("expected 3 columns, found {}", record.len()) });
        }
        let label: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::Csv { line, message: format!("label {:?} is not an integer", &record[0]) })?;
        if label < 1 || label > num_classes {
            return Err(Error::Csv { line, message: format!("label {label} outside [1, {num_classes}]") });
        }
        out.push(RawExample { label, title: record[1].to_string(), description: record[2].to_string() });
    }
    Ok(out)
}

/// Writes records back in the distribution format (all fields quoted, LF).
pub fn write_csv<W: Write>(writer: W, examples: &[RawExample]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Always)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    for ex in examples {
        w.write_record([ex.label.to_string().as_str(), &ex.title, &ex.description])
            .map_err(|e| Error::InvalidData(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_distribution_format() {
        let text = "\"3\",\"Wall St. Bears Claw Back Into the Black (Reuters)\",\"Reuters - Short-sellers, Wall Street's dwindling\\band of ultra-cynics, are seeing green again.\"\n";
        let rows = parse_csv_reader(text.as_bytes(), 4).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].label, 3);
        assert_eq!(rows[0].title, "Wall St. Bears Claw Back Into the Black (Reuters)");
        assert!(rows[0].description.starts_with("Reuters - Short-sellers"));
    }

    #[test]
    fn doubled_quotes_round_trip() {
        let text = "\"1\",\"He said \"\"hi\"\"\",\"a, b\"\n\"2\",\"x\",\"\"\n";
        let rows = parse_csv_reader(text.as_bytes(), 4).unwrap();
        assert_eq!(rows[0].title, "He said \"hi\"");
        assert_eq!(rows[0].description, "a, b");
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }

    #[test]
    fn crlf_accepted() {
        let text = "\"1\",\"a\",\"b\"\r\n\"2\",\"c\",\"d\"\r\n";
        assert_eq!(parse_csv_reader(text.as_bytes(), 2).unwrap().len(), 2);
    }

    #[test]
    fn label_out_of_range_reports_line() {
        let text = "\"1\",\"a\",\"b\"\n\"5\",\"c\",\"d\"\n";
        match parse_csv_reader(text.as_bytes(), 4) {
            Err(Error::Csv { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("outside"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_csv_reader("\"0\",\"a\",\"b\"\n".as_bytes(), 4), Err(Error::Csv { line: 1, .. })));
    }

    #[test]
    fn wrong_column_count_reports_line() {
        let text = "\"1\",\"a\",\"b\"\n\"1\",\"a\",\"b\"\n\"2\",\"only two\"\n";
        assert!(matches!(parse_csv_reader(text.as_bytes(), 4), Err(Error::Csv { line: 3, .. })));
    }

    #[test]
    fn unreadable_file_is_io_error() {
        assert!(matches!(parse_csv(Path::new("/definitely/not/here.csv"), 4), Err(Error::Io { .. })));
    }
}
