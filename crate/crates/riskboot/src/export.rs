//! Plot-ready table output for step functions.

use std::io::{self, Write};

use crate::estimators::StepFunction;
use crate::scalar::Real;

/// Writes a step function as a two-column CSV table `time,<label>`.
pub fn write_step_csv<R: Real, W: Write>(
    out: &mut W,
    step: &StepFunction<R>,
    label: &str,
) -> io::Result<()> {
    writeln!(out, "time,{label}")?;
    for (&t, &v) in step.times().iter().zip(step.values()) {
        writeln!(out, "{},{}", t.as_f64(), v.as_f64())?;
    }
    Ok(())
}

/// Step function as a JSON object of parallel arrays
/// `{"time": [...], "value": [...], "initial": v}`.
pub fn step_json<R: Real>(step: &StepFunction<R>) -> serde_json::Value {
    let times: Vec<f64> = step.times().iter().map(|&t| t.as_f64()).collect();
    let values: Vec<f64> = step.values().iter().map(|&v| v.as_f64()).collect();
    serde_json::json!({
        "time": times,
        "value": values,
        "initial": step.initial().as_f64(),
    })
}
