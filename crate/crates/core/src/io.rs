//! Serialization helpers. Every float goes out with 17 significant digits.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::ser::Formatter;

use crate::error::{Error, Result};

/// Compact JSON formatter writing floats in `{:.16e}` form, which
/// round-trips every finite `f64` exactly.
#[derive(Debug, Clone, Copy, Default)]
pub struct PreciseFormatter;

impl Formatter for PreciseFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{}", format_f64(value))
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{}", format_f64(value as f64))
    }
}

/// Scientific notation with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, PreciseFormatter);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(to_json(value)?.as_bytes())?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// One JSON document per line.
pub struct JsonLinesWriter<W: Write> {
    out: W,
}

impl<W: Write> JsonLinesWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write<T: Serialize + ?Sized>(&mut self, record: &T) -> Result<()> {
        self.out.write_all(to_json(record)?.as_bytes())?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn create_jsonl(path: &Path) -> Result<JsonLinesWriter<BufWriter<File>>> {
    Ok(JsonLinesWriter::new(BufWriter::new(File::create(path)?)))
}

/// Parses every non-blank line; the error names the first bad line.
pub fn read_json_lines<T: DeserializeOwned, R: BufRead>(input: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn read_json_lines_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_json_lines(BufReader::new(File::open(path)?))
}

/// CSV writer over string cells; use [`format_f64`] for numbers.
pub fn write_csv<P: AsRef<Path>>(path: P, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.write_record(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Header and records of a CSV file.
pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let header = r.headers().map_err(csv_error)?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(csv_error)?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Rec {
        a: f64,
        b: Vec<f64>,
        name: String,
    }

    #[test]
    fn floats_have_seventeen_digits_and_round_trip() {
        let r = Rec { a: 0.1, b: vec![1.0 / 3.0, -2.5e-300, 7.0], name: "x".into() };
        let s = to_json(&r).unwrap();
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        assert!(s.contains("7.0000000000000000e0"));
        let back: Rec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn json_lines_round_trip_and_bad_line() {
        let mut w = JsonLinesWriter::new(Vec::new());
        for i in 0..3 {
            w.write(&Rec { a: i as f64 * 0.7, b: vec![], name: format!("r{i}") }).unwrap();
        }
        let bytes = w.into_inner();
        let back: Vec<Rec> = read_json_lines(&bytes[..]).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[2].a, 2.0 * 0.7);
        let bad = b"{\"a\":1,\"b\":[],\"name\":\"q\"}\n{oops\n";
        match read_json_lines::<Rec, _>(&bad[..]) {
            Err(Error::Parse(m)) => assert!(m.starts_with("line 2")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_csv(&p, &["k", "v"], &[vec!["a".into(), format_f64(0.25)], vec!["b,c".into(), format_f64(-1.0)]]).unwrap();
        let (h, rows) = read_csv(&p).unwrap();
        assert_eq!(h, ["k", "v"]);
        assert_eq!(rows[1][0], "b,c");
        assert_eq!(rows[0][1].parse::<f64>().unwrap(), 0.25);
    }
}
