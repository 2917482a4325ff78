//! CSV conventions shared by every export: `#`-prefixed comment lines, one
//! header row, comma separation, floats at 12 significant digits.

use std::io::Write;

use crate::error::Result;

/// Version tag written into every CSV header comment.
pub const SCHEMA_VERSION: u32 = 1;

pub fn fmt_float(x: f64) -> String {
    format!("{x:.11e}")
}

pub fn write_csv<W: Write>(
    mut out: W,
    comments: &[String],
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    writeln!(out, "# schema_version = {SCHEMA_VERSION}")?;
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
