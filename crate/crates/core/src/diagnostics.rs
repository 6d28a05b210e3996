//! Attribution of DDLM→ARM failures to the planner or the executor.
//!
//! Setup X: DDLM→ARM fails while ARM→ARM succeeds, so a better plan would
//! have sufficed (planning failure). Setup Y: DDLM→ARM fails while DDLM→DDLM
//! succeeds, so the plan was usable but the executor missed it (execution
//! failure). A sample can be in both.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipelines::{PipelineId, RunRecord};

/// Correctness of the three runs that attribution compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub ddlm_arm: bool,
    pub arm_arm: bool,
    pub ddlm_ddlm: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Attribution {
    pub x: bool,
    pub y: bool,
}

pub fn classify(o: Outcome) -> Attribution {
    Attribution {
        x: !o.ddlm_arm && o.arm_arm,
        y: !o.ddlm_arm && o.ddlm_ddlm,
    }
}

/// Classifies every sample that has a `variant` record. ARM→ARM and
/// DDLM→DDLM always come from their text-space runs.
pub fn classify_records(records: &[RunRecord], variant: PipelineId) -> Result<BTreeMap<String, Attribution>> {
    if !matches!(variant, PipelineId::DdlmToArmText | PipelineId::DdlmToArmLatent) {
        return Err(Error::Config(format!("{variant} is not a DDLM→ARM pipeline")));
    }
    let by = |p: PipelineId| -> BTreeMap<&str, bool> {
        records
            .iter()
            .filter(|r| r.pipeline == p)
            .map(|r| (r.sample_id.as_str(), r.correct))
            .collect()
    };
    let (main, arm, ddlm) = (by(variant), by(PipelineId::ArmToArm), by(PipelineId::DdlmToDdlm));
    for (p, m) in [(variant, &main), (PipelineId::ArmToArm, &arm), (PipelineId::DdlmToDdlm, &ddlm)] {
        if m.is_empty() {
            return Err(Error::IncompleteData(format!("no records for pipeline {p}")));
        }
    }
    main.iter()
        .map(|(&id, &ok)| {
            let get = |m: &BTreeMap<&str, bool>, p: PipelineId| {
                m.get(id)
                    .copied()
                    .ok_or_else(|| Error::IncompleteData(format!("sample {id} has no {p} record")))
            };
            let o = Outcome {
                ddlm_arm: ok,
                arm_arm: get(&arm, PipelineId::ArmToArm)?,
                ddlm_ddlm: get(&ddlm, PipelineId::DdlmToDdlm)?,
            };
            Ok((id.to_string(), classify(o)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub benchmark: String,
    pub pipeline: PipelineId,
    pub samples: usize,
    pub failures: usize,
    pub setup_x: usize,
    pub setup_y: usize,
    pub overlap: usize,
    pub percentage_x: f64,
    pub percentage_y: f64,
}

impl DiagnosticReport {
    /// `|planning − execution|` in percentage points.
    pub fn error_gap(&self) -> f64 {
        (self.percentage_x - self.percentage_y).abs()
    }
}

/// Shares of failures in each setup; both are 0 when nothing failed.
pub fn percentages(
    benchmark: &str,
    pipeline: PipelineId,
    samples: usize,
    failures: usize,
    attributions: impl IntoIterator<Item = Attribution>,
) -> DiagnosticReport {
    let (mut x, mut y, mut both) = (0, 0, 0);
    for a in attributions {
        x += usize::from(a.x);
        y += usize::from(a.y);
        both += usize::from(a.x && a.y);
    }
    let pct = |n: usize| if failures == 0 { 0.0 } else { 100.0 * n as f64 / failures as f64 };
    DiagnosticReport {
        benchmark: benchmark.to_string(),
        pipeline,
        samples,
        failures,
        setup_x: x,
        setup_y: y,
        overlap: both,
        percentage_x: pct(x),
        percentage_y: pct(y),
    }
}

pub fn diagnose(benchmark: &str, records: &[RunRecord], variant: PipelineId) -> Result<DiagnosticReport> {
    let attr = classify_records(records, variant)?;
    let failures = records.iter().filter(|r| r.pipeline == variant && !r.correct).count();
    Ok(percentages(benchmark, variant, attr.len(), failures, attr.into_values()))
}

/// Aligned table: planning failures are Setup X, execution failures Setup Y.
pub fn render_table(reports: &[DiagnosticReport]) -> String {
    let mut s = format!(
        "{:<14} {:<18} {:>9} {:>22} {:>23} {:>12}\n",
        "benchmark", "pipeline", "failures", "Planning Failures %", "Execution Failures %", "Error Gap %"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<14} {:<18} {:>9} {:>22.2} {:>23.2} {:>12.2}",
            r.benchmark,
            r.pipeline.as_str(),
            r.failures,
            r.percentage_x,
            r.percentage_y,
            r.error_gap()
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn o(a: bool, b: bool, c: bool) -> Outcome {
        Outcome {
            ddlm_arm: a,
            arm_arm: b,
            ddlm_ddlm: c,
        }
    }

    #[test]
    fn definitions() {
        assert_eq!(classify(o(false, true, false)), Attribution { x: true, y: false });
        assert_eq!(classify(o(true, true, true)), Attribution::default());
        assert_eq!(classify(o(false, true, true)), Attribution { x: true, y: true });
        assert_eq!(classify(o(false, false, true)), Attribution { x: false, y: true });
    }

    #[test]
    fn zero_failures_give_zero() {
        let r = percentages("kv", PipelineId::DdlmToArmText, 5, 0, []);
        assert_eq!((r.percentage_x, r.percentage_y), (0.0, 0.0));
    }

    #[test]
    fn counts_to_percent() {
        let attrs = (0..10).map(|i| Attribution { x: i < 4, y: (4..7).contains(&i) });
        let r = percentages("kv", PipelineId::DdlmToArmText, 20, 10, attrs);
        assert_eq!((r.percentage_x, r.percentage_y, r.overlap), (40.0, 30.0, 0));
        assert_eq!(r.error_gap(), 10.0);
    }
}
