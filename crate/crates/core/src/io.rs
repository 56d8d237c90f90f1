//! Number formatting and CSV helpers shared by trajectory and scan output.

use crate::error::{Error, Result};
use std::io::Write;

/// 12 significant digits in scientific notation; non-finite values print as `nan`/`inf`/`-inf`.
pub fn fmt12(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{:.11e}", x)
    }
}

pub fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

pub fn write_rows<W: Write>(w: W, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut wr = csv_writer(w);
    wr.write_record(header).map_err(|e| Error::Io(e.to_string()))?;
    for r in rows {
        wr.write_record(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    wr.flush().map_err(|e| Error::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_digits_round_trip() {
        for &x in &[0.0, 1.0, -3.25e-7, std::f64::consts::PI, 1.0 / 3.0, 6.02214076e23] {
            let s = fmt12(x);
            let y: f64 = s.parse().unwrap();
            assert_eq!(fmt12(y), s);
            assert!((x - y).abs() <= 1e-11 * x.abs());
        }
        assert_eq!(fmt12(f64::NAN), "nan");
    }

    #[test]
    fn lf_line_endings() {
        let mut buf = vec![];
        write_rows(&mut buf, &["a".into(), "b".into()], &[vec!["1".into(), "2".into()]]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a,b\n1,2\n");
    }
}
