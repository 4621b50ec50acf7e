//! CSV traces: `iter,flops,seconds,f,err,proxy,step`, floats with 17 significant digits.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rssm_core::solvers::TraceRecord;

use crate::error::{BenchError, Result};

pub const CSV_HEADER: [&str; 7] = ["iter", "flops", "seconds", "f", "err", "proxy", "step"];

/// Scientific notation with 17 significant digits, enough to round-trip any `f64`.
fn float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the header and one row per record.
pub fn write_records<W: Write>(records: &[TraceRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.iter.to_string(),
            r.flops.to_string(),
            float(r.seconds),
            float(r.f),
            float(r.err),
            float(r.proxy),
            float(r.step),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(records: &[TraceRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|source| BenchError::Io { path: path.to_path_buf(), source })?;
    write_records(records, file).map_err(|source| BenchError::Csv { path: path.to_path_buf(), source })
}

pub fn read_csv(path: &Path) -> Result<Vec<TraceRecord>> {
    let csv_err = |source| BenchError::Csv { path: path.to_path_buf(), source };
    let bad = |what: String| BenchError::Config(format!("{}: {what}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        let float = |i: usize| row[i].parse::<f64>().map_err(|e| bad(format!("column {}: {e}", CSV_HEADER[i])));
        records.push(TraceRecord {
            iter: row[0].parse().map_err(|e| bad(format!("iter: {e}")))?,
            flops: row[1].parse().map_err(|e| bad(format!("flops: {e}")))?,
            seconds: float(2)?,
            f: float(3)?,
            err: float(4)?,
            proxy: float(5)?,
            step: float(6)?,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_trace_is_header_only() {
        let mut buf = Vec::new();
        write_records(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iter,flops,seconds,f,err,proxy,step\n");
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(float(0.1), "1.0000000000000001e-1");
        assert_eq!(float(1.0 / 3.0).parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(float(f64::NAN), "NaN");
    }
}
