//! Builds a quality report for degraded images against their clean versions.

use photoenhance::metrics::{evaluate, EvaluateOptions, ReportMeta};
use photoenhance::toy::write_paired;

fn main() -> photoenhance::Result<()> {
    let tmp = tempfile::tempdir().map_err(|e| photoenhance::Error::Dataset(e.to_string()))?;
    let (degraded, reference) = write_paired(tmp.path(), 4, 96, 4)?;
    let report = evaluate(
        &degraded,
        &EvaluateOptions {
            reference: Some(&reference),
            meta: ReportMeta {
                dataset: "toy".into(),
                ..Default::default()
            },
            ..Default::default()
        },
    )?;
    print!("{}", report.to_table());
    report.write(&tmp.path().join("report.csv"))?;
    print!(
        "{}",
        std::fs::read_to_string(tmp.path().join("report.csv")).unwrap_or_default()
    );
    Ok(())
}
