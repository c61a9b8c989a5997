//! Reference evaluation of the tracing loss with explicit per-pixel patch
//! loops: no convolutions, no tape. Used to cross-check the fast path.

use super::{EdgeLabel, TracingConfig};
use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleTerms {
    pub total: f64,
    pub ce: f64,
    pub bdry: f64,
    pub tex: f64,
}

fn patch(h: usize, w: usize, y: usize, x: usize, k: usize) -> impl Iterator<Item = (usize, usize)> {
    let r = k / 2;
    let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
    let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
    (y0..=y1).flat_map(move |yy| (x0..=x1).map(move |xx| (yy, xx)))
}

pub fn ce(pred: &Grid, label: &EdgeLabel, lambda: f64, eps: f64) -> Result<f64> {
    let y = label.consensus();
    let mut pos = 0usize;
    let mut neg = 0usize;
    for &v in y.data() {
        if v > label.delta() {
            pos += 1;
        } else if v == 0.0 {
            neg += 1;
        }
    }
    if pos + neg == 0 {
        return Err(Error::EmptySupervision);
    }
    let alpha = neg as f64 / (pos + neg) as f64;
    let mut sp = 0.0;
    let mut sn = 0.0;
    for (&t, &p) in y.data().iter().zip(pred.data()) {
        if t > label.delta() {
            sp += p.clamp(eps, 1.0).ln();
        } else if t == 0.0 {
            sn += (1.0 - p).clamp(eps, 1.0).ln();
        }
    }
    Ok(-lambda * alpha * sp - (1.0 - alpha) * sn)
}

pub fn bdry(pred: &Grid, label: &EdgeLabel, k: usize, eps: f64) -> f64 {
    let (h, w) = (pred.height(), pred.width());
    let y = label.consensus();
    let mut total = 0.0;
    for py in 0..h {
        for px in 0..w {
            if y.at(py, px) <= label.delta() {
                continue;
            }
            let mut on_edges = 0.0;
            let mut all = 0.0;
            for (yy, xx) in patch(h, w, py, px, k) {
                let v = pred.at(yy, xx);
                all += v;
                if y.at(yy, xx) > label.delta() {
                    on_edges += v;
                }
            }
            let ratio = on_edges / all.max(eps);
            total -= ratio.clamp(eps, 1.0).ln();
        }
    }
    total
}

pub fn tex(pred: &Grid, label: &EdgeLabel, k: usize, eps: f64) -> f64 {
    let (h, w) = (pred.height(), pred.width());
    let y = label.consensus();
    let kb = label.k_bdry();
    let near_edge = |py: usize, px: usize| patch(h, w, py, px, kb).any(|(yy, xx)| y.at(yy, xx) > label.delta());
    let mut total = 0.0;
    for py in 0..h {
        for px in 0..w {
            if y.at(py, px) != 0.0 || near_edge(py, px) {
                continue;
            }
            let mut sum = 0.0;
            let mut n = 0usize;
            for (yy, xx) in patch(h, w, py, px, k) {
                sum += pred.at(yy, xx);
                n += 1;
            }
            total -= (1.0 - sum / n as f64).clamp(eps, 1.0).ln();
        }
    }
    total
}

/// The full tracing loss computed independently of the tape.
pub fn loss_oracle(pred: &Grid, label: &EdgeLabel, cfg: &TracingConfig) -> Result<OracleTerms> {
    cfg.validate()?;
    if pred.shape() != (label.height(), label.width(), 1) {
        return Err(Error::Shape("prediction and label differ in shape".into()));
    }
    let ce = ce(pred, label, cfg.lambda, cfg.epsilon)?;
    let bdry = bdry(pred, label, cfg.k_bdry, cfg.epsilon);
    let tex = tex(pred, label, cfg.k_tex, cfg.epsilon);
    Ok(OracleTerms {
        total: ce + cfg.lambda1 * bdry + cfg.lambda2 * tex,
        ce,
        bdry,
        tex,
    })
}
