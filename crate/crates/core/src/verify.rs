//! Built-in finite-difference suites over every differentiable component.
//!
//! Each suite draws `seeds` random instances on a `size × size` grid and
//! reports the worst relative error between tape and central-difference
//! gradients.

use crate::autodiff::{BoundKernel, Node, Tape};
use crate::cofusion::{self, BoundCoFusion, CoFusionParams, SidePack};
use crate::error::{Error, Result};
use crate::gradcheck::{self, CheckOptions, CheckReport};
use crate::grid::Grid;
use crate::loss::{self, EdgeLabel, TracingConfig};
use crate::net::{self, FusionMode, LossConfig, ModelState, NetArch};
use crate::rng::{self, Rng};

/// Pass threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-5;

pub const COMPONENTS: [&str; 6] = ["ce", "bdry", "tex", "tracing", "cofusion", "edgenet"];

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub component: &'static str,
    pub report: CheckReport,
}

impl SuiteResult {
    pub fn passes(&self) -> bool {
        self.report.passes(TOLERANCE)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub seed: u64,
    pub size: usize,
    pub seeds: usize,
    pub check: CheckOptions,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            size: 8,
            seeds: 20,
            check: CheckOptions::default(),
        }
    }
}

/// Sparse random consensus with one guaranteed full-strength edge pixel.
fn random_label(rng: &mut Rng, n: usize, delta: f64, k_bdry: usize) -> Result<EdgeLabel> {
    let mut c = Grid::from_fn(n, n, 1, |_, _, _| {
        if rng.uniform() < 0.8 {
            0.0
        } else {
            rng.int_range(1, 5) as f64 / 5.0
        }
    });
    c.set(0, rng.index(n), rng.index(n), 1.0);
    EdgeLabel::derive(&c, delta, k_bdry)
}

fn cofusion_case(rng: &mut Rng, n: usize, opts: CheckOptions) -> Result<CheckReport> {
    let (l, hidden) = (3, 4);
    let sides = Grid::from_fn(n, n, l, |_, _, _| rng.uniform_range(-2.0, 2.0));
    let params = CoFusionParams::gaussian(l, hidden, 0.2, rng)?;
    let mut inputs = vec![sides];
    for k in [&params.conv1, &params.conv2, &params.conv3] {
        inputs.push(k.weights.clone());
        inputs.push(Grid::from_fn(1, 1, k.cout, |_, _, _| rng.uniform_range(-0.2, 0.2)));
    }
    let label = random_label(rng, n, 0.0, 3)?;
    let cfg = TracingConfig {
        k_bdry: 3,
        ..TracingConfig::default()
    };
    let couts = [hidden, hidden, l];
    gradcheck::check(
        &inputs,
        |t, x| {
            let planes: Vec<Node> = (0..l)
                .map(|c| {
                    let pick = Grid::from_fn(1, 1, l, |cc, _, _| f64::from(u8::from(cc == c)));
                    t.conv2d(x[0], t.constant(pick), None, 1, true)
                })
                .collect::<Result<_>>()?;
            let pack = SidePack::new(t, planes)?;
            let k = |i: usize| BoundKernel {
                weight: x[1 + 2 * i],
                bias: Some(x[2 + 2 * i]),
                cout: couts[i],
            };
            let bound = BoundCoFusion {
                conv1: k(0),
                conv2: k(1),
                conv3: k(2),
            };
            let out = cofusion::cofusion_forward(t, &pack, &bound)?;
            Ok(loss::tracing_loss(t, t.sigmoid(out.logit), &label, &cfg)?.total)
        },
        opts,
    )
}

fn edgenet_case(rng: &mut Rng, n: usize, fusion: FusionMode, opts: CheckOptions) -> Result<CheckReport> {
    let arch = NetArch {
        stages: 2,
        convs_per_stage: 1,
        base_channels: 2,
        in_channels: 1,
        fusion,
        cofusion_hidden: 2,
    };
    let state = ModelState::init_with_std(arch, rng.next_u64(), 0.2)?;
    let image = Grid::from_fn(n, n, 1, |_, _, _| rng.uniform());
    let label = random_label(rng, n, 0.0, 3)?;
    let cfg = LossConfig {
        k_bdry: 3,
        delta: 0.0,
        ..LossConfig::default()
    };
    let sides = cfg.side_configs(2)?;
    let fin = cfg.final_config()?;
    gradcheck::check(
        &state.tensors(),
        |t, x| {
            let m = state.bind_nodes(x)?;
            let out = net::forward(t, &image, &m)?;
            Ok(net::total_loss(t, &out, &label, &sides, &fin)?.total)
        },
        opts,
    )
}

fn run_one(component: &'static str, rng: &mut Rng, i: usize, n: usize, opts: CheckOptions) -> Result<CheckReport> {
    let cfg = TracingConfig {
        k_bdry: 3,
        ..TracingConfig::default()
    };
    let mut loss_case = |f: &dyn Fn(&Tape, Node, &EdgeLabel) -> Result<Node>| -> Result<CheckReport> {
        let delta = if i % 2 == 0 { 0.0 } else { 0.3 };
        let label = random_label(rng, n, delta, 3)?;
        let pred = Grid::from_fn(n, n, 1, |_, _, _| rng.uniform_range(0.05, 0.95));
        gradcheck::check(&[pred], |t, x| f(t, x[0], &label), opts)
    };
    match component {
        "ce" => loss_case(&|t, p, l| loss::loss_ce(t, p, l, cfg.lambda, cfg.epsilon)),
        "bdry" => loss_case(&|t, p, l| loss::loss_bdry(t, p, l, cfg.k_bdry, cfg.epsilon)),
        "tex" => loss_case(&|t, p, l| loss::loss_tex(t, p, l, cfg.k_tex, cfg.epsilon)),
        "tracing" => loss_case(&|t, p, l| Ok(loss::tracing_loss(t, p, l, &cfg)?.total)),
        "cofusion" => cofusion_case(rng, n, opts),
        "edgenet" => {
            let mode = if i % 2 == 0 { FusionMode::CoFusion } else { FusionMode::Fixed };
            edgenet_case(rng, n, mode, opts)
        }
        other => Err(Error::InvalidArgument(format!("unknown component {other:?}"))),
    }
}

/// Runs one component's suite.
pub fn run_suite(component: &'static str, opts: &SuiteOptions) -> Result<SuiteResult> {
    if opts.size < 4 {
        return Err(Error::InvalidArgument(format!("gradcheck size must be at least 4, got {}", opts.size)));
    }
    let tag = COMPONENTS
        .iter()
        .position(|&c| c == component)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown component {component:?}")))?;
    let mut report = CheckReport::empty();
    for i in 0..opts.seeds {
        let mut rng = Rng::new(rng::sub_seed(rng::sub_seed(opts.seed, tag as u64), i as u64));
        report.merge(&run_one(component, &mut rng, i, opts.size, opts.check)?);
    }
    Ok(SuiteResult { component, report })
}

/// Runs every suite in [`COMPONENTS`] order.
pub fn run_all(opts: &SuiteOptions) -> Result<Vec<SuiteResult>> {
    COMPONENTS.iter().map(|c| run_suite(c, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_gradients_fail() {
        let opts = SuiteOptions {
            seeds: 2,
            check: CheckOptions {
                analytic_scale: 1.01,
                ..CheckOptions::default()
            },
            ..SuiteOptions::default()
        };
        assert!(!run_suite("ce", &opts).unwrap().passes());
    }

    #[test]
    fn unknown_component_is_rejected() {
        assert!(run_suite("nope", &SuiteOptions::default()).is_err());
    }
}
