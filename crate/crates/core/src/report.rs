//! Text renderings of metric reports and ablation tables.

use std::fmt::Write as _;

use crate::ablation::AblationRow;
use crate::metrics::MetricsReport;

fn sci(v: f64) -> String {
    format!("{v:.6e}")
}

/// Tab-separated `metric value` rows. The overall line is recomputed from
/// the position and orientation errors.
pub fn metrics_tsv(r: &MetricsReport) -> String {
    let mut out = String::from("metric\tvalue\n");
    let overall = (3.0 * r.mse_position + 4.0 * r.mse_orientation) / 7.0;
    for (name, v) in [
        ("mse_overall", overall),
        ("mse_position", r.mse_position),
        ("mse_orientation", r.mse_orientation),
    ] {
        writeln!(out, "{name}\t{}", sci(v)).unwrap();
    }
    for h in &r.horizons {
        writeln!(out, "pred@{:.1}s\t{}", h.seconds, sci(h.mse)).unwrap();
    }
    writeln!(out, "samples\t{}", r.samples).unwrap();
    out
}

/// Tab-separated horizon table: one row per horizon.
pub fn horizons_tsv(r: &MetricsReport) -> String {
    let mut out = String::from("horizon_s\tsteps\tmse\n");
    for h in &r.horizons {
        writeln!(out, "{:.1}\t{}\t{}", h.seconds, h.steps, sci(h.mse)).unwrap();
    }
    out
}

pub fn metrics_json(r: &MetricsReport) -> String {
    serde_json::to_string_pretty(r).expect("report serializes")
}

/// `modality position orientation overall`, one row per ablation entry.
pub fn ablation_tsv(rows: &[AblationRow]) -> String {
    let mut out = String::from("modality\tposition\torientation\toverall\n");
    for row in rows {
        match &row.report {
            Some(r) => writeln!(
                out,
                "{}\t{}\t{}\t{}",
                row.label,
                sci(r.mse_position),
                sci(r.mse_orientation),
                sci(r.mse_overall)
            )
            .unwrap(),
            None => writeln!(out, "{}\tfailed\tfailed\tfailed", row.label).unwrap(),
        }
    }
    out
}
