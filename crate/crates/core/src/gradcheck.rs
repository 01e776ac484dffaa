//! Analytic vs central finite-difference gradient comparison.

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::params::{Bound, ParamSet};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub step: f64,
    /// Relative errors below this are a pass.
    pub tolerance: f64,
    /// Denominator floor for the relative error, so entries whose true
    /// gradient is ~0 are compared in absolute terms.
    pub floor: f64,
    /// Checks at most this many evenly spaced entries per parameter.
    pub max_entries_per_param: Option<usize>,
    /// Entries that miss the tolerance at `step` are measured again at this
    /// smaller step. A central difference that straddles a ReLU kink is off
    /// by O(1) however accurate the gradient is; shrinking the step makes
    /// the crossing unlikely.
    pub refine_step: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            max_entries_per_param: None,
            refine_step: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckFailure {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    /// Worst relative error among entries within tolerance at the main step.
    pub max_passing_error: f64,
    /// Worst relative error per parameter, in parameter order.
    pub per_param: Vec<(String, f64)>,
    pub failures: Vec<GradCheckFailure>,
    /// Entries that failed at the main step and passed at `refine_step`,
    /// with their main-step numbers.
    pub refined: Vec<GradCheckFailure>,
    /// Worst relative error at `refine_step` among the refined entries.
    pub max_refined_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares the tape gradient of `build` against central differences for
/// every parameter in `params`. `build` must be deterministic and return a
/// scalar loss.
pub fn grad_check<F>(
    params: &ParamSet,
    build: F,
    options: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = build(&mut tape, &bound)?;
    let mut grads = tape.backward(loss)?;
    let analytic = bound.gradients(&mut grads);

    let eval = |p: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let loss = build(&mut tape, &bound)?;
        Ok(tape.value(loss).item())
    };

    let mut report = GradCheckReport::default();
    let mut probe = params.clone();
    for (id, grad) in params.ids().zip(&analytic) {
        let len = params.get(id).len();
        let stride = match options.max_entries_per_param {
            Some(max) if max > 0 && len > max => len.div_ceil(max),
            _ => 1,
        };
        let mut worst: f64 = 0.0;
        for index in (0..len).step_by(stride) {
            let analytic = grad.as_ref().map_or(0.0, |g| g[index]);
            let mut central = |h: f64| -> Result<(f64, f64)> {
                let original = params.get(id).data()[index];
                probe.get_mut(id).data_mut()[index] = original + h;
                let plus = eval(&probe)?;
                probe.get_mut(id).data_mut()[index] = original - h;
                let minus = eval(&probe)?;
                probe.get_mut(id).data_mut()[index] = original;
                let numeric = (plus - minus) / (2.0 * h);
                let denom = analytic.abs().max(numeric.abs()).max(options.floor);
                Ok((numeric, (analytic - numeric).abs() / denom))
            };
            let (numeric, relative_error) = central(options.step)?;
            worst = worst.max(relative_error);
            report.checked += 1;
            if relative_error < options.tolerance {
                report.max_passing_error = report.max_passing_error.max(relative_error);
                continue;
            }
            let failure = GradCheckFailure {
                param: params.name(id).to_string(),
                index,
                analytic,
                numeric,
                relative_error,
            };
            match options.refine_step {
                Some(h) => {
                    let (_, refined_error) = central(h)?;
                    if refined_error < options.tolerance {
                        report.max_refined_error = report.max_refined_error.max(refined_error);
                        report.refined.push(failure);
                    } else {
                        report.failures.push(failure);
                    }
                }
                None => report.failures.push(failure),
            }
        }
        report.max_relative_error = report.max_relative_error.max(worst);
        report.per_param.push((params.name(id).to_string(), worst));
    }
    Ok(report)
}
