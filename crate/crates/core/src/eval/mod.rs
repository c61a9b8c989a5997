//! Boundary benchmark: optional NMS + thinning, tolerance matching over a
//! threshold sweep, and ODS/OIS F-measures.

pub mod matching;
pub mod postprocess;

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::loss::EdgeLabel;
use crate::par::{self, Execution};

pub use matching::{correspond, f_measure, match_radius, Correspondence, Counts};
pub use postprocess::postprocess;

/// Distance tolerance used for BSDS- and Multicue-style runs.
pub const TOLERANCE_DEFAULT: f64 = 0.0075;
/// Distance tolerance used for NYUD-style runs.
pub const TOLERANCE_WIDE: f64 = 0.011;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Thin predictions with NMS and Zhang–Suen before matching.
    #[default]
    Standard,
    /// Match raw binarized predictions.
    Crisp,
}

impl FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Protocol::Standard),
            "crisp" => Ok(Protocol::Crisp),
            _ => Err(Error::Config(format!("unknown protocol {s:?} (standard|crisp)"))),
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::Standard => "standard",
            Protocol::Crisp => "crisp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Matching distance as a fraction of the image diagonal.
    pub tolerance: f64,
    /// Number of thresholds, spaced uniformly inside (0, 1).
    pub thresholds: usize,
    pub protocol: Protocol,
    /// Gaussian σ used to estimate NMS orientation.
    pub nms_sigma: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tolerance: TOLERANCE_DEFAULT,
            thresholds: 99,
            protocol: Protocol::Standard,
            nms_sigma: 1.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.thresholds == 0 {
            return Err(Error::Config("need at least one threshold".into()));
        }
        if !(self.nms_sigma >= 0.0 && self.nms_sigma.is_finite()) {
            return Err(Error::Config(format!("nms_sigma must be non-negative, got {}", self.nms_sigma)));
        }
        Ok(())
    }

    /// `k / (n + 1)` for `k = 1..=n`.
    pub fn threshold_values(&self) -> Vec<f64> {
        let n = self.thresholds;
        (1..=n).map(|k| k as f64 / (n + 1) as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl PrPoint {
    fn new(threshold: f64, c: Counts) -> Self {
        Self {
            threshold,
            precision: c.precision(),
            recall: c.recall(),
            f: c.f_measure(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub thresholds: Vec<f64>,
    /// `per_image[i][k]`: counts of image `i` at threshold `k`.
    pub per_image: Vec<Vec<Counts>>,
    /// Counts summed over images, per threshold.
    pub totals: Vec<Counts>,
    pub curve: Vec<PrPoint>,
    pub ods: PrPoint,
    /// OIS precision, recall and F; `threshold` is NaN.
    pub ois: PrPoint,
    /// Index of each image's best threshold.
    pub ois_choice: Vec<usize>,
}

/// First index of the maximum; earlier (lower) thresholds win ties.
fn argmax_first(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Builds the summary from per-image, per-threshold counts.
pub fn summarize(thresholds: Vec<f64>, per_image: Vec<Vec<Counts>>) -> Result<EvalResult> {
    if per_image.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty dataset".into()));
    }
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("need at least one threshold".into()));
    }
    if let Some(row) = per_image.iter().find(|r| r.len() != thresholds.len()) {
        return Err(Error::Shape(format!(
            "{} counts for {} thresholds",
            row.len(),
            thresholds.len()
        )));
    }
    let totals: Vec<Counts> = (0..thresholds.len())
        .map(|k| per_image.iter().map(|r| r[k]).sum())
        .collect();
    let curve: Vec<PrPoint> = thresholds.iter().zip(&totals).map(|(&t, &c)| PrPoint::new(t, c)).collect();
    let ods = curve[argmax_first(curve.iter().map(|p| p.f))];
    let ois_choice: Vec<usize> = per_image
        .iter()
        .map(|r| argmax_first(r.iter().map(Counts::f_measure)))
        .collect();
    let ois_counts: Counts = per_image.iter().zip(&ois_choice).map(|(r, &k)| r[k]).sum();
    let ois = PrPoint::new(f64::NAN, ois_counts);
    Ok(EvalResult {
        thresholds,
        per_image,
        totals,
        curve,
        ods,
        ois,
        ois_choice,
    })
}

fn pixels_where(g: &Grid, pred: impl Fn(f64) -> bool) -> Vec<(usize, usize)> {
    let w = g.width();
    g.data()
        .iter()
        .enumerate()
        .filter(|&(_, &v)| pred(v))
        .map(|(i, _)| (i / w, i % w))
        .collect()
}

/// Counts of one prediction at every threshold.
pub fn image_counts(pred: &Grid, label: &EdgeLabel, cfg: &EvalConfig) -> Result<Vec<Counts>> {
    cfg.validate()?;
    if pred.channels() != 1 || pred.height() != label.height() || pred.width() != label.width() {
        return Err(Error::Shape(format!(
            "prediction {:?} does not match label {}x{}",
            pred.shape(),
            label.height(),
            label.width()
        )));
    }
    let map = match cfg.protocol {
        Protocol::Standard => postprocess(pred, cfg.nms_sigma),
        Protocol::Crisp => pred.clone(),
    };
    let radius = match_radius(cfg.tolerance, pred.height(), pred.width());
    let gt = label.edges();
    Ok(cfg
        .threshold_values()
        .into_iter()
        .map(|t| correspond(&pixels_where(&map, |v| v >= t), gt, radius).counts)
        .collect())
}

/// Evaluates predictions against labels; ground truth is each label's
/// positive set.
pub fn evaluate(preds: &[Grid], labels: &[EdgeLabel], cfg: &EvalConfig, exec: Execution) -> Result<EvalResult> {
    cfg.validate()?;
    if preds.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty dataset".into()));
    }
    let rows = par::map_indexed(preds.len(), exec, |i| image_counts(&preds[i], &labels[i], cfg));
    let per_image = rows.into_iter().collect::<Result<Vec<_>>>()?;
    summarize(cfg.threshold_values(), per_image)
}

pub const PR_CSV_HEADER: &str = "threshold,tp,fp,fn,precision,recall,f";

/// PR curve rows followed by `ODS,...` and `OIS,...` summary lines.
pub fn pr_csv(r: &EvalResult) -> String {
    let mut s = String::new();
    writeln!(s, "{PR_CSV_HEADER}").unwrap();
    for (p, c) in r.curve.iter().zip(&r.totals) {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            p.threshold, c.true_pos, c.false_pos, c.false_neg, p.precision, p.recall, p.f
        )
        .unwrap();
    }
    let o = &r.ods;
    writeln!(s, "ODS,{},,,{},{},{}", o.threshold, o.precision, o.recall, o.f).unwrap();
    writeln!(s, "OIS,,,,{},{},{}", r.ois.precision, r.ois.recall, r.ois.f).unwrap();
    s
}

pub fn write_pr_csv(path: &Path, r: &EvalResult) -> Result<()> {
    std::fs::write(path, pr_csv(r)).map_err(|e| Error::io(path, e))
}
