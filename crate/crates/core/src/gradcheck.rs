//! Central finite-difference verification of tape gradients (64-bit only).

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// Outcome for one parameter block.
#[derive(Clone, Debug)]
pub struct BlockReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates where the one-sided differences disagree (a kink such as
    /// relu at exactly 0). They are excluded from `max_rel_error`.
    pub kinks: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }
}

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is zero are compared absolutely.
const REL_FLOOR: f64 = 1e-6;
/// Relative disagreement of the one-sided differences that marks a kink.
const KINK_THRESHOLD: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares autodiff gradients of `loss_fn` against central differences
/// with step `step` for every coordinate of every block in `params`.
pub fn gradient_check<F>(loss_fn: F, params: &[Tensor<f64>], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let analytic: Vec<Vec<f64>> = {
        let tape = Tape::new();
        let vars: Vec<_> = params.iter().map(|p| tape.variable(p)).collect();
        let loss = loss_fn(&tape, &vars)?;
        let grads = tape.backward(loss)?;
        vars.iter()
            .map(|v| grads.wrt(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; v.len()]))
            .collect()
    };

    let eval = |probe: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = probe.iter().map(|p| tape.constant(p)).collect();
        Ok(loss_fn(&tape, &vars)?.item())
    };

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let f0 = eval(&work)?;
    let mut blocks = Vec::with_capacity(params.len());
    for (b, grad) in analytic.iter().enumerate() {
        let mut report = BlockReport { max_rel_error: 0.0, checked: 0, kinks: 0 };
        for i in 0..params[b].len() {
            let orig = params[b].data()[i];
            work[b].data_mut()[i] = orig + step;
            let fp = eval(&work)?;
            work[b].data_mut()[i] = orig - step;
            let fm = eval(&work)?;
            work[b].data_mut()[i] = orig;

            let forward = (fp - f0) / step;
            let backward = (f0 - fm) / step;
            if (forward - backward).abs() > KINK_THRESHOLD * forward.abs().max(backward.abs()).max(1.0) {
                report.kinks += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * step);
            report.max_rel_error = report.max_rel_error.max(relative_error(grad[i], numeric));
            report.checked += 1;
        }
        blocks.push(report);
    }
    Ok(GradCheckReport { blocks, tolerance })
}
