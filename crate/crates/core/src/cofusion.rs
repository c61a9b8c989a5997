//! Context-aware fusion of side outputs.
//!
//! Three zero-padded 3×3 convolutions (`L → C_mid → C_mid → L`, ReLU in
//! between) turn the stacked side logits into per-pixel scores; a softmax
//! across the side axis makes them weights, and the fused logit at each
//! pixel is the weighted sum of the side logits there. The sigmoid of the
//! fused logit is the final edge probability.

use crate::autodiff::{BoundKernel, Kernel, Node, Tape};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rng::Rng;

/// Ordered side logit maps recorded on one tape, all `H × W × 1`.
#[derive(Debug, Clone)]
pub struct SidePack {
    sides: Vec<Node>,
    height: usize,
    width: usize,
}

impl SidePack {
    pub fn new(tape: &Tape, sides: Vec<Node>) -> Result<Self> {
        let first = *sides
            .first()
            .ok_or_else(|| Error::Shape("side pack needs at least one side".into()))?;
        let (height, width, _) = tape.shape(first);
        for &s in &sides {
            let shape = tape.shape(s);
            if shape != (height, width, 1) {
                return Err(Error::Shape(format!(
                    "side map {shape:?} does not match {height}x{width}x1"
                )));
            }
        }
        Ok(Self { sides, height, width })
    }

    pub fn sides(&self) -> &[Node] {
        &self.sides
    }

    pub fn len(&self) -> usize {
        self.sides.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sides.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `H × W × L` stack of the sides.
    pub fn stacked(&self, tape: &Tape) -> Result<Node> {
        if self.sides.len() == 1 {
            return Ok(self.sides[0]);
        }
        tape.concat(&self.sides)
    }
}

pub const DEFAULT_HIDDEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct CoFusionParams {
    pub conv1: Kernel,
    pub conv2: Kernel,
    pub conv3: Kernel,
}

impl CoFusionParams {
    pub fn zeros(sides: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            conv1: Kernel::zeros(3, 3, sides, hidden, true)?,
            conv2: Kernel::zeros(3, 3, hidden, hidden, true)?,
            conv3: Kernel::zeros(3, 3, hidden, sides, true)?,
        })
    }

    /// Weights from `N(0, std²)`, biases zero.
    pub fn gaussian(sides: usize, hidden: usize, std: f64, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            conv1: Kernel::gaussian(3, 3, sides, hidden, true, std, rng)?,
            conv2: Kernel::gaussian(3, 3, hidden, hidden, true, std, rng)?,
            conv3: Kernel::gaussian(3, 3, hidden, sides, true, std, rng)?,
        })
    }

    pub fn sides(&self) -> usize {
        self.conv1.cin
    }

    pub fn hidden(&self) -> usize {
        self.conv1.cout
    }

    pub fn validate(&self) -> Result<()> {
        let (l, c) = (self.conv1.cin, self.conv1.cout);
        let ok = self.conv2.cin == c && self.conv3.cin == self.conv2.cout && self.conv3.cout == l;
        if !ok {
            return Err(Error::Shape(format!(
                "cofusion layers {}→{}, {}→{}, {}→{} do not chain L→C→C→L",
                self.conv1.cin, self.conv1.cout, self.conv2.cin, self.conv2.cout, self.conv3.cin, self.conv3.cout
            )));
        }
        Ok(())
    }

    pub fn bind(&self, tape: &Tape) -> BoundCoFusion {
        BoundCoFusion {
            conv1: self.conv1.bind(tape),
            conv2: self.conv2.bind(tape),
            conv3: self.conv3.bind(tape),
        }
    }

    pub fn bind_constant(&self, tape: &Tape) -> BoundCoFusion {
        BoundCoFusion {
            conv1: self.conv1.bind_constant(tape),
            conv2: self.conv2.bind_constant(tape),
            conv3: self.conv3.bind_constant(tape),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundCoFusion {
    pub conv1: BoundKernel,
    pub conv2: BoundKernel,
    pub conv3: BoundKernel,
}

#[derive(Debug, Clone, Copy)]
pub struct FusionOutput {
    /// Fused pre-sigmoid map, `H × W × 1`.
    pub logit: Node,
    /// Per-pixel side weights, `H × W × L`; `None` for fixed fusion.
    pub weights: Option<Node>,
    /// Attention scores before the softmax.
    pub scores: Option<Node>,
}

pub fn cofusion_forward(tape: &Tape, pack: &SidePack, params: &BoundCoFusion) -> Result<FusionOutput> {
    let z = pack.stacked(tape)?;
    let l = pack.len();
    let (_, _, wc) = tape.shape(params.conv1.weight);
    if wc % l != 0 || params.conv3.cout != l {
        return Err(Error::Shape(format!(
            "cofusion parameters expect a different side count than {l}"
        )));
    }
    let h1 = params.conv1.apply(tape, z, true)?;
    let a1 = tape.relu(h1);
    let h2 = params.conv2.apply(tape, a1, true)?;
    let a2 = tape.relu(h2);
    let scores = params.conv3.apply(tape, a2, true)?;
    let weights = tape.channel_softmax(scores);
    let weighted = tape.mul(weights, z)?;
    let logit = tape.channel_sum(weighted);
    Ok(FusionOutput {
        logit,
        weights: Some(weights),
        scores: Some(scores),
    })
}

/// `Σ_l w_l · Z_l` with one weight per side; `weights` is a `1×1×L` node
/// (learnable or constant).
pub fn fixed_fusion_node(tape: &Tape, pack: &SidePack, weights: Node) -> Result<Node> {
    let z = pack.stacked(tape)?;
    tape.conv2d(z, weights, None, 1, true)
}

/// Image-level weighted average of the sides with constant weights.
pub fn fixed_weight_fusion(tape: &Tape, pack: &SidePack, w: &[f64]) -> Result<Node> {
    if w.len() != pack.len() {
        return Err(Error::Shape(format!(
            "{} fusion weights for {} sides",
            w.len(),
            pack.len()
        )));
    }
    let weights = tape.constant(Grid::from_vec(1, 1, w.len(), w.to_vec())?);
    fixed_fusion_node(tape, pack, weights)
}
