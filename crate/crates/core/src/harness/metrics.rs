use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{ExperimentConfig, RunOutcome, RunSummary};
use crate::error::Result;
use crate::optimizer::RunMetrics;

pub const CSV_HEADER: &str = "step,loss,grad_norm_sq,agg_error,accuracy,zeta_hat_sq,b_hat_ratio";

/// One row per step. Missing accuracy is an empty field; an unbounded
/// heterogeneity ratio is written as `inf`.
pub fn metrics_csv(metrics: &RunMetrics) -> String {
    let mut out = String::with_capacity(64 * (metrics.records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &metrics.records {
        let acc = r.accuracy.map(|a| format!("{a:?}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?},{},{:?},{:?}",
            r.step, r.loss, r.grad_norm_sq, r.agg_error, acc, r.zeta_hat_sq, r.b_hat_ratio
        );
    }
    out
}

#[derive(Serialize)]
struct Sidecar<'a> {
    run_id: &'a str,
    config: &'a ExperimentConfig,
    summary: &'a RunSummary,
}

fn stem(o: &RunOutcome) -> String {
    format!("{}-seed{}", o.config.name, o.summary.seed)
}

/// Writes `<name>-seed<seed>.csv` and the matching `.json` sidecar; returns the CSV path.
pub fn write_run(dir: &Path, o: &RunOutcome) -> Result<PathBuf> {
    let csv = dir.join(format!("{}.csv", stem(o)));
    fs::write(&csv, metrics_csv(&o.metrics))?;
    let sidecar = Sidecar {
        run_id: &o.summary.run_id,
        config: &o.config,
        summary: &o.summary,
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| crate::error::Error::Config(e.to_string()))?;
    fs::write(dir.join(format!("{}.json", stem(o))), json + "\n")?;
    Ok(csv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::StepRecord;

    #[test]
    fn csv_layout() {
        let m = RunMetrics {
            records: vec![
                StepRecord {
                    step: 1,
                    loss: 0.5,
                    grad_norm_sq: 0.25,
                    agg_error: 0.0,
                    accuracy: Some(0.75),
                    zeta_hat_sq: 1.0,
                    b_hat_ratio: 4.0,
                },
                StepRecord {
                    step: 2,
                    loss: 0.125,
                    grad_norm_sq: 0.0,
                    agg_error: 1e-20,
                    accuracy: None,
                    zeta_hat_sq: 1.0,
                    b_hat_ratio: f64::INFINITY,
                },
            ],
            ratio_warmup: 0.1,
        };
        let text = metrics_csv(&m);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "1,0.5,0.25,0.0,0.75,1.0,4.0");
        assert_eq!(lines[2], "2,0.125,0.0,1e-20,,1.0,inf");
    }
}
