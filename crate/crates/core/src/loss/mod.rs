//! The tracing loss: class-balanced cross entropy plus a boundary tracing
//! term that pulls response mass onto edge pixels within each edge-centred
//! patch, and a texture suppression term that pushes down the mean response
//! of patches centred on non-edge pixels away from edges.
//!
//! All terms are sums over their centre sets, not means. Every log argument
//! and the tracing ratio are clamped to `[epsilon, 1]`.

mod label;
pub mod oracle;

pub use label::{dilate_box, EdgeLabel};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Node, Tape};
use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TracingConfig {
    /// Positive-class weight in the cross entropy.
    pub lambda: f64,
    /// Weight of the boundary tracing term.
    pub lambda1: f64,
    /// Weight of the texture suppression term.
    pub lambda2: f64,
    pub k_bdry: usize,
    pub k_tex: usize,
    pub epsilon: f64,
}

impl Default for TracingConfig {
    fn default() -> Self {
        Self {
            lambda: 1.1,
            lambda1: 2.0,
            lambda2: 0.05,
            k_bdry: 7,
            k_tex: 3,
            epsilon: 1e-10,
        }
    }
}

impl TracingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.k_bdry % 2 == 0 || self.k_tex % 2 == 0 {
            return Err(Error::Config("k_bdry and k_tex must be odd".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// The scalar nodes of one tracing-loss evaluation. `bdry` and `tex` are the
/// unweighted terms; `total = ce + lambda1 * bdry + lambda2 * tex`.
#[derive(Debug, Clone, Copy)]
pub struct TracingTerms {
    pub total: Node,
    pub ce: Node,
    pub bdry: Node,
    pub tex: Node,
}

fn check_pred(tape: &Tape, pred: Node, label: &EdgeLabel) -> Result<()> {
    let (h, w, c) = tape.shape(pred);
    if (h, w, c) != (label.height(), label.width(), 1) {
        return Err(Error::Shape(format!(
            "prediction {h}x{w}x{c} vs label {}x{}",
            label.height(),
            label.width()
        )));
    }
    Ok(())
}

fn zero(tape: &Tape) -> Node {
    tape.constant(Grid::zeros(1, 1, 1))
}

fn ones_kernel(tape: &Tape, k: usize) -> Node {
    tape.constant(Grid::filled(k, k, 1, 1.0))
}

/// `-Σ mask ⊙ x`
fn neg_masked_sum(tape: &Tape, x: Node, mask: Node) -> Result<Node> {
    let m = tape.mul(x, mask)?;
    let s = tape.sum_all(m);
    Ok(tape.neg(s))
}

/// Class-balanced cross entropy over `Y⁺ ∪ Y⁻`; excluded pixels contribute
/// nothing. `pred` holds probabilities.
pub fn loss_ce(tape: &Tape, pred: Node, label: &EdgeLabel, lambda: f64, epsilon: f64) -> Result<Node> {
    check_pred(tape, pred, label)?;
    let alpha = label.alpha()?;
    let wp = lambda * alpha;
    let wn = 1.0 - alpha;
    let w_pos = tape.constant(label.positive_mask().map(|m| m * wp));
    let w_neg = tape.constant(label.negative_mask().map(|m| m * wn));

    let cp = tape.clamp(pred, epsilon, 1.0);
    let lp = tape.log(cp)?;
    let om = tape.one_minus(pred);
    let cn = tape.clamp(om, epsilon, 1.0);
    let ln = tape.log(cn)?;

    let a = tape.mul(lp, w_pos)?;
    let b = tape.mul(ln, w_neg)?;
    let sa = tape.sum_all(a);
    let sb = tape.sum_all(b);
    let s = tape.add(sa, sb)?;
    Ok(tape.neg(s))
}

/// Boundary tracing term. For every edge pixel `p`, the ratio of predicted
/// mass on edge pixels to all predicted mass inside the `k × k` box around
/// `p`; contributes `-ln(clamp(ratio, ε, 1))`. Both box sums are zero-padded
/// convolutions with a ones kernel; the denominator is floored at `ε`.
pub fn loss_bdry(tape: &Tape, pred: Node, label: &EdgeLabel, k: usize, epsilon: f64) -> Result<Node> {
    check_pred(tape, pred, label)?;
    if k % 2 == 0 {
        return Err(Error::InvalidArgument(format!("k_bdry must be odd, got {k}")));
    }
    if label.edges().is_empty() {
        return Ok(zero(tape));
    }
    let edge_mask = tape.constant(label.positive_mask().clone());
    let ones = ones_kernel(tape, k);

    let on_edges = tape.mul(pred, edge_mask)?;
    let edge_mass = tape.conv2d(on_edges, ones, None, 1, true)?;
    let all_mass = tape.conv2d(pred, ones, None, 1, true)?;
    let denom = tape.clamp(all_mass, epsilon, f64::INFINITY);
    let ratio = tape.div(edge_mass, denom)?;
    let r = tape.clamp(ratio, epsilon, 1.0);
    let lg = tape.log(r)?;
    neg_masked_sum(tape, lg, edge_mask)
}

/// Number of in-image pixels in the `k × k` box around each pixel.
pub fn clipped_box_counts(h: usize, w: usize, k: usize) -> Grid {
    let r = k / 2;
    Grid::from_fn(h, w, 1, |_, y, x| {
        let ny = (y + r).min(h - 1) - y.saturating_sub(r) + 1;
        let nx = (x + r).min(w - 1) - x.saturating_sub(r) + 1;
        (ny * nx) as f64
    })
}

/// Texture suppression term over negatives outside the buffer zone: each
/// contributes `-ln(clamp(1 - mean(pred over clipped k × k box), ε, 1))`.
pub fn loss_tex(tape: &Tape, pred: Node, label: &EdgeLabel, k: usize, epsilon: f64) -> Result<Node> {
    check_pred(tape, pred, label)?;
    if k % 2 == 0 {
        return Err(Error::InvalidArgument(format!("k_tex must be odd, got {k}")));
    }
    let centers = label.texture_centers();
    if centers.data().iter().all(|&c| c == 0.0) {
        return Ok(zero(tape));
    }
    let centers = tape.constant(centers);
    let counts = tape.constant(clipped_box_counts(label.height(), label.width(), k));
    let ones = ones_kernel(tape, k);

    let mass = tape.conv2d(pred, ones, None, 1, true)?;
    let mean = tape.div(mass, counts)?;
    let om = tape.one_minus(mean);
    let c = tape.clamp(om, epsilon, 1.0);
    let lg = tape.log(c)?;
    neg_masked_sum(tape, lg, centers)
}

/// `ce + lambda1 * bdry + lambda2 * tex` as one differentiable scalar.
pub fn tracing_loss(tape: &Tape, pred: Node, label: &EdgeLabel, cfg: &TracingConfig) -> Result<TracingTerms> {
    cfg.validate()?;
    if cfg.k_bdry != label.k_bdry() {
        return Err(Error::InvalidArgument(format!(
            "k_bdry {} differs from the label's buffer size {}",
            cfg.k_bdry,
            label.k_bdry()
        )));
    }
    let ce = loss_ce(tape, pred, label, cfg.lambda, cfg.epsilon)?;
    let bdry = loss_bdry(tape, pred, label, cfg.k_bdry, cfg.epsilon)?;
    let tex = loss_tex(tape, pred, label, cfg.k_tex, cfg.epsilon)?;
    let wb = tape.scale(bdry, cfg.lambda1);
    let wt = tape.scale(tex, cfg.lambda2);
    let s = tape.add(ce, wb)?;
    let total = tape.add(s, wt)?;
    Ok(TracingTerms { total, ce, bdry, tex })
}
