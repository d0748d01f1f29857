//! Central finite-difference check of the analytic backward pass.

use crate::config::{Layout, ModelConfig};
use crate::error::Result;
use crate::train::{loss_and_grads, Batch, LossSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter index of the worst element.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Compares every analytic gradient element with
/// `(L(θ + h·e_i) − L(θ − h·e_i)) / 2h` in double precision. The relative
/// error of each element is `|a − n| / max(|a|, |n|, floor)`.
pub fn check_gradients(
    cfg: &ModelConfig,
    params: &[f64],
    batch: &Batch,
    spec: &LossSpec,
    h: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    let layout = Layout::new(cfg);
    let (_, analytic) = loss_and_grads(cfg, &layout, params, batch, spec)?;
    let mut theta = params.to_vec();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let up = loss_and_grads(cfg, &layout, &theta, batch, spec)?.0.total;
        theta[i] = orig - h;
        let down = loss_and_grads(cfg, &layout, &theta, batch, spec)?.0.total;
        theta[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        report.checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}
