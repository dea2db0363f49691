use std::path::Path;

use super::{CandidateResult, DriverError};

pub const HEADER: [&str; 6] = ["name", "neurons", "rel_error", "property", "verdict", "seconds"];

/// CSV with one row per (candidate, property), plus a `stage:<name>` row for
/// a candidate that stopped early. Rows follow the order of `results`.
pub fn report_text(results: &[CandidateResult], time_decimals: usize) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for r in results {
        let err = r.rel_error.map(|e| format!("{e:.6e}")).unwrap_or_default();
        let neurons = r.neurons.to_string();
        let mut row = |prop: &str, verdict: &str, secs: String| {
            w.write_record([r.name.as_str(), &neurons, &err, prop, verdict, &secs]).expect("in-memory write");
        };
        for p in &r.properties {
            row(&p.id, p.outcome.label(), format!("{:.*}", time_decimals, p.seconds));
        }
        if let Some(f) = &r.failure {
            row(&format!("stage:{}", f.stage), "error", String::new());
        } else if r.properties.is_empty() {
            row("", "", String::new());
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn emit_report(results: &[CandidateResult], path: &Path, time_decimals: usize) -> Result<(), DriverError> {
    std::fs::write(path, report_text(results, time_decimals)).map_err(|source| DriverError::Io { path: path.to_path_buf(), source })
}
