//! Minimal reverse-mode differentiation over [`Grid`] values.

pub mod kernels;
mod tape;

pub use kernels::ConvGeom;
pub use tape::{Node, Tape};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rng::Rng;

/// Convolution parameters: `cout * cin` weight planes of `kh × kw` and an
/// optional per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub kh: usize,
    pub kw: usize,
    pub cin: usize,
    pub cout: usize,
    pub weights: Grid,
    pub bias: Option<Grid>,
}

impl Kernel {
    pub fn zeros(kh: usize, kw: usize, cin: usize, cout: usize, with_bias: bool) -> Result<Self> {
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Shape(format!("kernel extents must be odd, got {kh}x{kw}")));
        }
        if cin == 0 || cout == 0 {
            return Err(Error::Shape("kernel needs at least one input and output channel".into()));
        }
        Ok(Self {
            kh,
            kw,
            cin,
            cout,
            weights: Grid::zeros(kh, kw, cin * cout),
            bias: with_bias.then(|| Grid::zeros(1, 1, cout)),
        })
    }

    /// Weights drawn from `N(0, std²)`, bias zero.
    pub fn gaussian(kh: usize, kw: usize, cin: usize, cout: usize, with_bias: bool, std: f64, rng: &mut Rng) -> Result<Self> {
        let mut k = Self::zeros(kh, kw, cin, cout, with_bias)?;
        for v in k.weights.data_mut() {
            *v = rng.normal(0.0, std);
        }
        Ok(k)
    }

    pub fn weight(&self, co: usize, ci: usize, ky: usize, kx: usize) -> f64 {
        self.weights.data()[self.geom(true).weight_index(co, ci, ky, kx)]
    }

    pub fn set_weight(&mut self, co: usize, ci: usize, ky: usize, kx: usize, v: f64) {
        let i = self.geom(true).weight_index(co, ci, ky, kx);
        self.weights.data_mut()[i] = v;
    }

    pub fn geom(&self, pad: bool) -> ConvGeom {
        ConvGeom {
            kh: self.kh,
            kw: self.kw,
            cin: self.cin,
            cout: self.cout,
            pad,
        }
    }

    pub fn num_values(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Grid::len)
    }

    /// Records the kernel on `tape` as trainable leaves.
    pub fn bind(&self, tape: &Tape) -> BoundKernel {
        BoundKernel {
            weight: tape.param(self.weights.clone()),
            bias: self.bias.as_ref().map(|b| tape.param(b.clone())),
            cout: self.cout,
        }
    }

    /// Records the kernel on `tape` as constants.
    pub fn bind_constant(&self, tape: &Tape) -> BoundKernel {
        BoundKernel {
            weight: tape.constant(self.weights.clone()),
            bias: self.bias.as_ref().map(|b| tape.constant(b.clone())),
            cout: self.cout,
        }
    }
}

/// A [`Kernel`] recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundKernel {
    pub weight: Node,
    pub bias: Option<Node>,
    pub cout: usize,
}

impl BoundKernel {
    pub fn apply(&self, tape: &Tape, input: Node, pad: bool) -> Result<Node> {
        tape.conv2d(input, self.weight, self.bias, self.cout, pad)
    }

    /// Reads the gradients accumulated by the last backward pass.
    pub fn grads(&self, tape: &Tape) -> KernelGrad {
        KernelGrad {
            weights: tape.grad(self.weight),
            bias: self.bias.map(|b| tape.grad(b)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrad {
    pub weights: Grid,
    pub bias: Option<Grid>,
}

impl KernelGrad {
    pub fn zeros_like(k: &Kernel) -> Self {
        Self {
            weights: Grid::zeros(k.kh, k.kw, k.cin * k.cout),
            bias: k.bias.as_ref().map(|b| Grid::zeros(1, 1, b.len())),
        }
    }

    pub fn add_assign(&mut self, other: &KernelGrad) {
        self.weights.add_assign(&other.weights);
        if let (Some(a), Some(b)) = (&mut self.bias, &other.bias) {
            a.add_assign(b);
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .data()
            .iter()
            .chain(self.bias.iter().flat_map(|b| b.data().iter()))
            .copied()
    }
}
