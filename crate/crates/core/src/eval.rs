//! Gauge-fixed endpoint error between estimated and ground-truth stacks.

use crate::deform::DeformationStack;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointError {
    /// Mean over nodes per frame, in cells.
    pub per_frame: Vec<f64>,
    pub mean: f64,
}

/// Mean node-wise `|u_est - u_gt|` in cells, after removing the node-wise
/// frame mean from both stacks.
pub fn endpoint_error(est: &DeformationStack, gt: &DeformationStack) -> Result<EndpointError> {
    if est.len() != gt.len() || est.grid() != gt.grid() {
        return Err(Error::GridMismatch(format!(
            "estimated stack ({} frames, {}x{}) does not match ground truth ({} frames, {}x{})",
            est.len(),
            est.grid().m[0],
            est.grid().m[1],
            gt.len(),
            gt.grid().m[0],
            gt.grid().m[1]
        )));
    }
    let h = est.grid().h;
    let (pe, pg) = (est.project_drift(), gt.project_drift());
    let per_frame: Vec<f64> = pe
        .fields()
        .iter()
        .zip(pg.fields())
        .map(|(a, b)| {
            let n = a.grid().len();
            (0..n)
                .map(|k| {
                    let d0 = (a.component(0)[k] - b.component(0)[k]) / h[0];
                    let d1 = (a.component(1)[k] - b.component(1)[k]) / h[1];
                    d0.hypot(d1)
                })
                .sum::<f64>()
                / n as f64
        })
        .collect();
    let mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    Ok(EndpointError { per_frame, mean })
}

/// Before/after comparison for one registration method.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub before: EndpointError,
    pub after: EndpointError,
    pub sqn_before: f64,
    pub sqn_after: f64,
    pub seconds: f64,
}

impl EvalReport {
    /// Relative reduction of the mean endpoint error, `1 - after / before`.
    pub fn improvement(&self) -> f64 {
        if self.before.mean > 0.0 {
            1.0 - self.after.mean / self.before.mean
        } else {
            0.0
        }
    }
}
