//! CSV output: one row per repetition plus a mean summary row, with a fixed
//! column order so downstream tooling can rely on positions.

use std::fs::OpenOptions;
use std::io::{self, Write};
use std::path::Path;

pub const CSV_HEADER: &str =
    "scenario,variant,threads,ops,param_s,param_wp,seed,rep,wall_ms,mops,capacity_final,mem_bytes,oracle_pass";

/// One emitted row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub scenario: String,
    pub variant: String,
    pub threads: usize,
    pub ops: u64,
    pub param_s: f64,
    pub param_wp: f64,
    pub seed: u64,
    /// Repetition index (0-based) or "mean" for the summary row.
    pub rep: String,
    pub wall_ms: f64,
    pub mops: f64,
    pub capacity_final: u64,
    pub mem_bytes: u64,
    pub oracle_pass: bool,
}

impl CsvRow {
    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.3},{:.4},{},{},{}",
            self.scenario,
            self.variant,
            self.threads,
            self.ops,
            self.param_s,
            self.param_wp,
            self.seed,
            self.rep,
            self.wall_ms,
            self.mops,
            self.capacity_final,
            self.mem_bytes,
            self.oracle_pass
        )
    }

    pub fn parse(line: &str) -> Option<CsvRow> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 13 {
            return None;
        }
        Some(CsvRow {
            scenario: f[0].to_string(),
            variant: f[1].to_string(),
            threads: f[2].parse().ok()?,
            ops: f[3].parse().ok()?,
            param_s: f[4].parse().ok()?,
            param_wp: f[5].parse().ok()?,
            seed: f[6].parse().ok()?,
            rep: f[7].to_string(),
            wall_ms: f[8].parse().ok()?,
            mops: f[9].parse().ok()?,
            capacity_final: f[10].parse().ok()?,
            mem_bytes: f[11].parse().ok()?,
            oracle_pass: f[12].parse().ok()?,
        })
    }
}

/// Appends rows to `path`, writing the header first when the file is new or
/// empty. Newline-terminated UTF-8.
pub fn emit_csv(path: &Path, rows: &[CsvRow]) -> io::Result<()> {
    assert!(!rows.is_empty(), "no rows to emit");
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    let need_header = file.metadata()?.len() == 0;
    let mut out = String::new();
    if need_header {
        out.push_str(CSV_HEADER);
        out.push('\n');
    }
    for row in rows {
        out.push_str(&row.to_line());
        out.push('\n');
    }
    file.write_all(out.as_bytes())
}

/// Writes rows to any sink (header included); used for stdout emission.
pub fn write_csv<W: Write>(out: &mut W, rows: &[CsvRow]) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.to_line())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(rep: &str) -> CsvRow {
        CsvRow {
            scenario: "insert_grow".into(),
            variant: "uaGrow".into(),
            threads: 4,
            ops: 1_000_000,
            param_s: 1.1,
            param_wp: 0.0,
            seed: 42,
            rep: rep.into(),
            wall_ms: 123.456,
            mops: 8.1,
            capacity_final: 2_097_152,
            mem_bytes: 33_554_432,
            oracle_pass: true,
        }
    }

    #[test]
    fn row_roundtrip() {
        let row = sample("0");
        let parsed = CsvRow::parse(&row.to_line()).unwrap();
        assert_eq!(parsed.scenario, row.scenario);
        assert_eq!(parsed.threads, row.threads);
        assert_eq!(parsed.capacity_final, row.capacity_final);
        assert_eq!(parsed.oracle_pass, row.oracle_pass);
        assert!((parsed.mops - row.mops).abs() < 1e-3);
    }

    #[test]
    fn header_field_count_matches_rows() {
        assert_eq!(CSV_HEADER.split(',').count(), 13);
        assert_eq!(sample("mean").to_line().split(',').count(), 13);
    }
}
