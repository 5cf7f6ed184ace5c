//! Central-difference verification of [`super::backward`].

use serde::Serialize;

use super::{backward, batch_loss, CcveError, CcveModel, Params, TrainSample, PARAM_GROUPS};

/// Gradients with magnitude at or below this are not compared.
pub const GRAD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamAddress {
    pub group: &'static str,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter with the worst error, if any was compared.
    pub worst: Option<ParamAddress>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// `|a - n| / max(|a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares [`backward`] with central differences on every parameter.
pub fn grad_check(
    model: &CcveModel,
    batch: &[TrainSample],
    epsilon: f64,
) -> Result<GradCheckReport, CcveError> {
    grad_check_with(model, batch, epsilon, |m, b| backward(m, b).map(|(_, g)| g))
}

/// Like [`grad_check`] but with a caller-supplied gradient function.
pub fn grad_check_with<F>(
    model: &CcveModel,
    batch: &[TrainSample],
    epsilon: f64,
    gradient: F,
) -> Result<GradCheckReport, CcveError>
where
    F: Fn(&CcveModel, &[TrainSample]) -> Result<Params, CcveError>,
{
    let analytic = gradient(model, batch)?;
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        skipped: 0,
    };

    let group_lens: Vec<usize> = model.params.groups().iter().map(|g| g.len()).collect();
    for (group, &len) in group_lens.iter().enumerate() {
        for index in 0..len {
            let original = model.params.groups()[group][index];
            let plus = original + epsilon;
            let minus = original - epsilon;
            probe.params.groups_mut()[group][index] = plus;
            let loss_plus = batch_loss(&probe, batch)?;
            probe.params.groups_mut()[group][index] = minus;
            let loss_minus = batch_loss(&probe, batch)?;
            probe.params.groups_mut()[group][index] = original;

            let numeric = (loss_plus - loss_minus) / (plus - minus);
            let exact = analytic.groups()[group][index];
            if exact.abs().max(numeric.abs()) <= GRAD_FLOOR {
                report.skipped += 1;
                continue;
            }
            report.checked += 1;
            let err = relative_error(exact, numeric);
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some(ParamAddress {
                    group: PARAM_GROUPS[group],
                    index,
                });
                report.analytic = exact;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
