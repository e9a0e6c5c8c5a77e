//! Per-step CSV summary.

use std::io::Write;

use pskf_core::sim::BoundReport;
use pskf_core::MonteCarloSummary;

pub fn header(m: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "k",
        "trace_mean_P",
        "trace_empirical_cov",
        "lower_bound_trace",
        "upper_bound_trace",
        "energy_mean",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((1..=m).map(|i| format!("high_rate_{i}")));
    h
}

/// One row per step `k = 1..=horizon`. Bound columns come from `bounds`,
/// which must have been computed from the same summary.
pub fn write_summary_csv<W: Write>(w: W, summary: &MonteCarloSummary, bounds: &BoundReport) -> csv::Result<()> {
    let m = summary.high_power_rate.len();
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(header(m))?;
    for k in 1..=summary.horizon {
        let b = &bounds.steps[k - 1];
        let mut row = vec![
            k.to_string(),
            summary.mean_p[k - 1].trace().to_string(),
            summary.empirical_cov[k - 1].trace().to_string(),
            b.lower_trace.to_string(),
            b.upper_trace.to_string(),
            summary.energy_per_step[k - 1].to_string(),
        ];
        row.extend(summary.high_rate_per_step[k - 1].iter().map(f64::to_string));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
