//! Central finite-difference verification of tape gradients.
//!
//! Coordinates whose `±h` evaluations take a different branch (ReLU sign,
//! clamp region, pooling argmax) than the base point are skipped: the
//! function is not differentiable inside that stencil and the difference
//! quotient says nothing about the recorded gradient.

use crate::autodiff::{Node, Tape};
use crate::error::Result;
use crate::grid::Grid;

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    pub step: f64,
    /// Gradients smaller than this are compared in absolute terms.
    pub denominator_floor: f64,
    /// Cap on checked coordinates per input (evenly strided); `0` = all.
    pub max_coords_per_input: usize,
    /// Multiplies the analytic gradient; `1.0` except in sensitivity tests.
    pub analytic_scale: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            denominator_floor: 1e-3,
            max_coords_per_input: 0,
            analytic_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl CheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }

    pub fn merge(&mut self, other: &CheckReport) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.checked += other.checked;
        self.skipped += other.skipped;
    }

    pub fn empty() -> Self {
        Self {
            max_rel_error: 0.0,
            checked: 0,
            skipped: 0,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks d(root)/d(inputs) where `build` records a scalar function of the
/// differentiable `inputs` on a fresh tape.
pub fn check<F>(inputs: &[Grid], build: F, opts: CheckOptions) -> Result<CheckReport>
where
    F: Fn(&Tape, &[Node]) -> Result<Node>,
{
    let eval = |values: &[Grid]| -> Result<(f64, u64)> {
        let tape = Tape::new();
        let nodes: Vec<Node> = values.iter().map(|g| tape.param(g.clone())).collect();
        let root = build(&tape, &nodes)?;
        Ok((tape.scalar(root), tape.branch_signature()))
    };

    let tape = Tape::new();
    let nodes: Vec<Node> = inputs.iter().map(|g| tape.param(g.clone())).collect();
    let root = build(&tape, &nodes)?;
    tape.backward(root)?;
    let base_sig = tape.branch_signature();
    let analytic: Vec<Grid> = nodes.iter().map(|&n| tape.grad(n)).collect();

    let mut report = CheckReport::empty();
    let mut work: Vec<Grid> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        let stride = match opts.max_coords_per_input {
            0 => 1,
            cap => n.div_ceil(cap).max(1),
        };
        for j in (0..n).step_by(stride) {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + opts.step;
            let (fp, sp) = eval(&work)?;
            work[i].data_mut()[j] = orig - opts.step;
            let (fm, sm) = eval(&work)?;
            work[i].data_mut()[j] = orig;
            if sp != base_sig || sm != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * opts.step);
            let a = analytic[i].data()[j] * opts.analytic_scale;
            let err = relative_error(a, numeric, opts.denominator_floor);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}
