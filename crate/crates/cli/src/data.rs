//! Numeric CSV input and output.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use gini_cov::Sample;

/// Reads an `n × d` numeric table. A first row that does not parse as
/// numbers is taken to be a header and skipped.
pub fn read_sample(path: &Path) -> Result<Sample, String> {
    let reader: Box<dyn Read> = if path == Path::new("-") {
        Box::new(io::stdin())
    } else {
        Box::new(File::open(path).map_err(|e| format!("cannot open {}: {e}", path.display()))?)
    };
    parse_sample(reader)
}

pub fn parse_sample<R: Read>(reader: R) -> Result<Sample, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut data = Vec::new();
    let mut d = None;
    let mut n = 0;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| format!("malformed CSV: {e}"))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if line == 0 => continue,
            Err(_) => return Err(format!("non-numeric value on line {}", line + 1)),
        };
        if let Some(v) = row.iter().find(|v| !v.is_finite()) {
            return Err(format!("non-finite value {v} on line {}", line + 1));
        }
        match d {
            None => d = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(format!(
                    "line {} has {} fields, expected {d}",
                    line + 1,
                    row.len()
                ));
            }
            _ => {}
        }
        data.extend(row);
        n += 1;
    }
    let d = d.ok_or("no data rows")?;
    Sample::new(n, d, data).map_err(|e| e.to_string())
}

pub fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) if p != Path::new("-") => Box::new(BufWriter::new(File::create(p)?)),
        _ => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// One row per line, `{:.16e}` so values survive a round trip.
pub fn write_rows<'a, W: Write>(
    out: &mut W,
    rows: impl Iterator<Item = &'a [f64]>,
) -> io::Result<()> {
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_detected() {
        let s = parse_sample("x,y\n1,2\n3,4\n".as_bytes()).unwrap();
        assert_eq!((s.n(), s.d()), (2, 2));
        let s = parse_sample("1,2\n3,4\n".as_bytes()).unwrap();
        assert_eq!(s.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn bad_tables_are_rejected() {
        assert!(parse_sample("1,2\n3\n".as_bytes()).is_err());
        assert!(parse_sample("1,2\n3,abc\n".as_bytes()).is_err());
        assert!(parse_sample("1,nan\n".as_bytes()).is_err());
        assert!(parse_sample("a,b\n".as_bytes()).is_err());
    }

    #[test]
    fn round_trip_is_exact() {
        let vals = [0.1, -1.0 / 3.0, 1e-300, 123456789.12345679];
        let mut buf = Vec::new();
        write_rows(&mut buf, vals.chunks(2)).unwrap();
        let s = parse_sample(buf.as_slice()).unwrap();
        assert_eq!(s.as_slice(), &vals);
    }
}
