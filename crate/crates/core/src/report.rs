//! CSV output helpers. Floats are written with 17 significant digits so they
//! round-trip exactly.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// Formats a float with 17 significant digits.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// Writes a header and rows to a CSV file.
pub fn write_csv<P, R>(path: P, header: &[&str], rows: R) -> Result<()>
where
    P: AsRef<Path>,
    R: IntoIterator<Item = Vec<String>>,
{
    let file = File::create(path)?;
    write_csv_to(file, header, rows)
}

pub fn write_csv_to<W, R>(out: W, header: &[&str], rows: R) -> Result<()>
where
    W: Write,
    R: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 12345.678901234567, 5e-300] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let mut buf = Vec::new();
        write_csv_to(&mut buf, &["a", "b"], vec![vec!["1".into(), num(0.5)]]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "a,b\n1,5.0000000000000000e-1\n");
    }
}
