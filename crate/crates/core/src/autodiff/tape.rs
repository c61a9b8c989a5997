use std::cell::{Ref, RefCell};
use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use super::kernels::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Node(usize);

impl Node {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Node,
        weight: Node,
        bias: Option<Node>,
        geom: ConvGeom,
    },
    Add(Node, Node),
    Sub(Node, Node),
    Mul(Node, Node),
    Div(Node, Node),
    Log(Node),
    Neg(Node),
    Scale(Node, f64),
    AddScalar(Node),
    Clamp { input: Node, lo: f64, hi: f64 },
    Relu(Node),
    Sigmoid(Node),
    ChannelSoftmax(Node),
    MaxPool2 { input: Node, argmax: Vec<usize> },
    Upsample { input: Node, factor: usize },
    Crop(Node),
    SumAll(Node),
    Concat(Vec<Node>),
    ChannelSum(Node),
}

struct Record {
    value: Grid,
    op: Op,
    requires_grad: bool,
}

/// Records a computation graph over [`Grid`] values for reverse-mode
/// differentiation.
///
/// Nodes are appended in evaluation order, so the record is topologically
/// sorted and acyclic by construction. [`Tape::backward`] may run once per
/// tape; call [`Tape::zero_grad`] before running it again.
#[derive(Default)]
pub struct Tape {
    records: RefCell<Vec<Record>>,
    grads: RefCell<Vec<Option<Grid>>>,
    backward_done: std::cell::Cell<bool>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Grid) -> Node {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that is treated as a constant.
    pub fn constant(&self, value: Grid) -> Node {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Grid, op: Op, requires_grad: bool) -> Node {
        debug_assert!(value.all_finite(), "non-finite value from {op:?}");
        let mut recs = self.records.borrow_mut();
        recs.push(Record {
            value,
            op,
            requires_grad,
        });
        Node(recs.len() - 1)
    }

    fn derived(&self, value: Grid, op: Op, parents: &[Node]) -> Node {
        let rg = {
            let recs = self.records.borrow();
            parents.iter().any(|p| recs[p.0].requires_grad)
        };
        self.push(value, op, rg)
    }

    pub fn value(&self, node: Node) -> Ref<'_, Grid> {
        Ref::map(self.records.borrow(), |r| &r[node.0].value)
    }

    pub fn shape(&self, node: Node) -> (usize, usize, usize) {
        self.value(node).shape()
    }

    /// Value of a 1×1×1 node.
    pub fn scalar(&self, node: Node) -> f64 {
        let v = self.value(node);
        debug_assert_eq!(v.len(), 1);
        v.data()[0]
    }

    fn same_shape(&self, a: Node, b: Node, what: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn unary(&self, a: Node, op: Op, f: impl Fn(f64) -> f64) -> Node {
        let v = self.value(a).map(f);
        self.derived(v, op, &[a])
    }

    fn binary(&self, a: Node, b: Node, op: Op, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Node> {
        self.same_shape(a, b, what)?;
        let v = {
            let (va, vb) = (self.value(a), self.value(b));
            let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
            let (h, w, c) = va.shape();
            Grid::from_vec(h, w, c, data)?
        };
        Ok(self.derived(v, op, &[a, b]))
    }

    /// Cross-correlation. `weight` holds `cout * cin` planes of `kh × kw`
    /// (plane index `co * cin + ci`); `bias`, when present, is `1×1×cout`.
    /// With `pad` the output keeps the input's spatial size.
    pub fn conv2d(&self, input: Node, weight: Node, bias: Option<Node>, cout: usize, pad: bool) -> Result<Node> {
        let (h, w, cin) = self.shape(input);
        let (kh, kw, wc) = self.shape(weight);
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Shape(format!("kernel extents must be odd, got {kh}x{kw}")));
        }
        if cout == 0 || wc != cin * cout {
            return Err(Error::Shape(format!(
                "conv2d: input has {cin} channels but kernel holds {wc} planes for {cout} outputs"
            )));
        }
        if let Some(b) = bias {
            if self.value(b).len() != cout {
                return Err(Error::Shape(format!(
                    "conv2d: bias has {} entries, expected {cout}",
                    self.value(b).len()
                )));
            }
        }
        if !pad && (h < kh || w < kw) {
            return Err(Error::Shape(format!("conv2d: {h}x{w} input smaller than {kh}x{kw} kernel")));
        }
        let geom = ConvGeom {
            kh,
            kw,
            cin,
            cout,
            pad,
        };
        let out = {
            let x = self.value(input);
            let wv = self.value(weight);
            let bv = bias.map(|b| self.value(b));
            kernels::conv2d_forward(&x, wv.data(), bv.as_ref().map(|b| b.data()), geom)
        };
        let mut parents = vec![input, weight];
        parents.extend(bias);
        Ok(self.derived(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            &parents,
        ))
    }

    pub fn add(&self, a: Node, b: Node) -> Result<Node> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&self, a: Node, b: Node) -> Result<Node> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    /// Hadamard product.
    pub fn mul(&self, a: Node, b: Node) -> Result<Node> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Element-wise quotient; every denominator must be non-zero.
    pub fn div(&self, a: Node, b: Node) -> Result<Node> {
        if let Some(i) = self.value(b).data().iter().position(|&v| v == 0.0) {
            return Err(Error::InvalidArgument(format!("division by zero at index {i}")));
        }
        self.binary(a, b, Op::Div(a, b), "div", |x, y| x / y)
    }

    /// Natural log; rejects non-positive inputs (clamp first).
    pub fn log(&self, a: Node) -> Result<Node> {
        if let Some((index, &value)) = self.value(a).data().iter().enumerate().find(|(_, v)| **v <= 0.0) {
            return Err(Error::LogDomain { index, value });
        }
        Ok(self.unary(a, Op::Log(a), f64::ln))
    }

    pub fn neg(&self, a: Node) -> Node {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn scale(&self, a: Node, s: f64) -> Node {
        self.unary(a, Op::Scale(a, s), move |x| x * s)
    }

    pub fn add_scalar(&self, a: Node, s: f64) -> Node {
        self.unary(a, Op::AddScalar(a), move |x| x + s)
    }

    /// `1 - a`
    pub fn one_minus(&self, a: Node) -> Node {
        let n = self.neg(a);
        self.add_scalar(n, 1.0)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero wherever the input lies
    /// outside the interval.
    pub fn clamp(&self, a: Node, lo: f64, hi: f64) -> Node {
        self.unary(a, Op::Clamp { input: a, lo, hi }, move |x| x.clamp(lo, hi))
    }

    pub fn relu(&self, a: Node) -> Node {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sigmoid(&self, a: Node) -> Node {
        self.unary(a, Op::Sigmoid(a), kernels::sigmoid)
    }

    /// Per-pixel softmax across channels.
    pub fn channel_softmax(&self, a: Node) -> Node {
        let v = kernels::channel_softmax(&self.value(a));
        self.derived(v, Op::ChannelSoftmax(a), &[a])
    }

    pub fn maxpool2(&self, a: Node) -> Node {
        let (v, argmax) = kernels::maxpool2_forward(&self.value(a));
        self.derived(v, Op::MaxPool2 { input: a, argmax }, &[a])
    }

    pub fn upsample(&self, a: Node, factor: usize) -> Result<Node> {
        if factor == 0 {
            return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
        }
        if factor == 1 {
            return Ok(a);
        }
        let v = kernels::upsample_forward(&self.value(a), factor);
        Ok(self.derived(v, Op::Upsample { input: a, factor }, &[a]))
    }

    /// Keeps the top-left `height × width` window.
    pub fn crop(&self, a: Node, height: usize, width: usize) -> Result<Node> {
        let (h, w, c) = self.shape(a);
        if height > h || width > w || height == 0 || width == 0 {
            return Err(Error::Shape(format!("cannot crop {h}x{w} to {height}x{width}")));
        }
        if (height, width) == (h, w) {
            return Ok(a);
        }
        let v = {
            let x = self.value(a);
            Grid::from_fn(height, width, c, |ch, y, xx| x.get(ch, y, xx))
        };
        Ok(self.derived(v, Op::Crop(a), &[a]))
    }

    pub fn sum_all(&self, a: Node) -> Node {
        let s = self.value(a).sum();
        self.derived(Grid::filled(1, 1, 1, s), Op::SumAll(a), &[a])
    }

    /// Concatenates along the channel axis.
    pub fn concat(&self, parts: &[Node]) -> Result<Node> {
        let v = {
            let vals: Vec<Ref<'_, Grid>> = parts.iter().map(|&p| self.value(p)).collect();
            let refs: Vec<&Grid> = vals.iter().map(|r| &**r).collect();
            Grid::stack(&refs)?
        };
        Ok(self.derived(v, Op::Concat(parts.to_vec()), parts))
    }

    /// Sums channels into a single-channel grid.
    pub fn channel_sum(&self, a: Node) -> Node {
        let v = {
            let x = self.value(a);
            let (h, w, c) = x.shape();
            let mut out = Grid::zeros(h, w, 1);
            for ch in 0..c {
                for (o, i) in out.data_mut().iter_mut().zip(x.plane(ch)) {
                    *o += i;
                }
            }
            out
        };
        self.derived(v, Op::ChannelSum(a), &[a])
    }

    pub fn backward(&self, root: Node) -> Result<()> {
        if self.backward_done.get() {
            return Err(Error::Backward("gradients already computed; call zero_grad first".into()));
        }
        let recs = self.records.borrow();
        if recs[root.0].value.len() != 1 {
            return Err(Error::Backward(format!(
                "root must be scalar, got shape {:?}",
                recs[root.0].value.shape()
            )));
        }
        let mut grads = self.grads.borrow_mut();
        grads.clear();
        grads.resize_with(recs.len(), || None);
        grads[root.0] = Some(Grid::filled(1, 1, 1, 1.0));

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let rec = &recs[id];
            if rec.requires_grad {
                propagate(&recs, rec, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        self.backward_done.set(true);
        Ok(())
    }

    /// Gradient of the last backward root with respect to `node`; zeros when
    /// the node did not influence the root.
    pub fn grad(&self, node: Node) -> Grid {
        let grads = self.grads.borrow();
        match grads.get(node.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => {
                let (h, w, c) = self.shape(node);
                Grid::zeros(h, w, c)
            }
        }
    }

    pub fn zero_grad(&self) {
        self.grads.borrow_mut().clear();
        self.backward_done.set(false);
    }

    /// Hash of every branch decision taken by the forward pass (ReLU signs,
    /// clamp regions, pooling argmax). Two evaluations with equal signatures
    /// lie on the same smooth piece of the computed function.
    pub fn branch_signature(&self) -> u64 {
        let recs = self.records.borrow();
        let mut h = DefaultHasher::new();
        for rec in recs.iter() {
            match &rec.op {
                Op::Relu(a) => {
                    for &v in recs[a.0].value.data() {
                        h.write_u8((v > 0.0) as u8);
                    }
                }
                Op::Clamp { input, lo, hi } => {
                    for &v in recs[input.0].value.data() {
                        h.write_u8(if v < *lo {
                            0
                        } else if v > *hi {
                            2
                        } else {
                            1
                        });
                    }
                }
                Op::MaxPool2 { argmax, .. } => {
                    for &i in argmax {
                        h.write_usize(i);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }
}

fn accumulate(grads: &mut [Option<Grid>], recs: &[Record], node: Node, contribution: Grid) {
    if !recs[node.0].requires_grad {
        return;
    }
    match &mut grads[node.0] {
        Some(g) => g.add_assign(&contribution),
        slot @ None => *slot = Some(contribution),
    }
}

fn zip_map(a: &Grid, b: &Grid, f: impl Fn(f64, f64) -> f64) -> Grid {
    let (h, w, c) = a.shape();
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Grid::from_vec(h, w, c, data).expect("shape checked at record time")
}

fn zip3_map(a: &Grid, b: &Grid, c: &Grid, f: impl Fn(f64, f64, f64) -> f64) -> Grid {
    let (h, w, ch) = a.shape();
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .zip(c.data())
        .map(|((&x, &y), &z)| f(x, y, z))
        .collect();
    Grid::from_vec(h, w, ch, data).expect("shape checked at record time")
}

fn propagate(recs: &[Record], rec: &Record, g: &Grid, grads: &mut [Option<Grid>]) {
    let val = |n: Node| &recs[n.0].value;
    let rg = |n: Node| recs[n.0].requires_grad;
    match &rec.op {
        Op::Leaf => {}
        Op::Conv2d {
            input,
            weight,
            bias,
            geom,
        } => {
            let x = val(*input);
            if rg(*input) {
                let gi = kernels::conv2d_backward_input(g, val(*weight).data(), *geom, x.height(), x.width());
                accumulate(grads, recs, *input, gi);
            }
            let need_b = bias.is_some_and(rg);
            if rg(*weight) || need_b {
                let (gw, gb) = kernels::conv2d_backward_params(g, x, *geom);
                let (kh, kw, kc) = val(*weight).shape();
                accumulate(grads, recs, *weight, Grid::from_vec(kh, kw, kc, gw).expect("kernel shape"));
                if let Some(b) = bias {
                    let (bh, bw, bc) = val(*b).shape();
                    accumulate(grads, recs, *b, Grid::from_vec(bh, bw, bc, gb).expect("bias shape"));
                }
            }
        }
        Op::Add(a, b) => {
            accumulate(grads, recs, *a, g.clone());
            accumulate(grads, recs, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, recs, *a, g.clone());
            accumulate(grads, recs, *b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            if rg(*a) {
                accumulate(grads, recs, *a, zip_map(g, val(*b), |gv, bv| gv * bv));
            }
            if rg(*b) {
                accumulate(grads, recs, *b, zip_map(g, val(*a), |gv, av| gv * av));
            }
        }
        Op::Div(a, b) => {
            if rg(*a) {
                accumulate(grads, recs, *a, zip_map(g, val(*b), |gv, bv| gv / bv));
            }
            if rg(*b) {
                accumulate(
                    grads,
                    recs,
                    *b,
                    zip3_map(g, val(*a), val(*b), |gv, av, bv| -gv * av / (bv * bv)),
                );
            }
        }
        Op::Log(a) => accumulate(grads, recs, *a, zip_map(g, val(*a), |gv, av| gv / av)),
        Op::Neg(a) => accumulate(grads, recs, *a, g.map(|v| -v)),
        Op::Scale(a, s) => {
            let s = *s;
            accumulate(grads, recs, *a, g.map(|v| v * s))
        }
        Op::AddScalar(a) => accumulate(grads, recs, *a, g.clone()),
        Op::Clamp { input, lo, hi } => {
            let (lo, hi) = (*lo, *hi);
            accumulate(
                grads,
                recs,
                *input,
                zip_map(g, val(*input), |gv, x| if x >= lo && x <= hi { gv } else { 0.0 }),
            )
        }
        Op::Relu(a) => accumulate(
            grads,
            recs,
            *a,
            zip_map(g, val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }),
        ),
        Op::Sigmoid(a) => accumulate(grads, recs, *a, zip_map(g, &rec.value, |gv, s| gv * s * (1.0 - s))),
        Op::ChannelSoftmax(a) => {
            let s = &rec.value;
            let (h, w, c) = s.shape();
            let n = h * w;
            let mut gi = Grid::zeros(h, w, c);
            let (sd, gd) = (s.data(), g.data());
            let out = gi.data_mut();
            for p in 0..n {
                let mut dotp = 0.0;
                for ch in 0..c {
                    dotp += gd[ch * n + p] * sd[ch * n + p];
                }
                for ch in 0..c {
                    out[ch * n + p] = sd[ch * n + p] * (gd[ch * n + p] - dotp);
                }
            }
            accumulate(grads, recs, *a, gi);
        }
        Op::MaxPool2 { input, argmax } => {
            let (h, w, c) = val(*input).shape();
            let mut gi = Grid::zeros(h, w, c);
            for (gv, &i) in g.data().iter().zip(argmax) {
                gi.data_mut()[i] += gv;
            }
            accumulate(grads, recs, *input, gi);
        }
        Op::Upsample { input, factor } => {
            let (h, w, _) = val(*input).shape();
            accumulate(grads, recs, *input, kernels::upsample_backward(g, h, w, *factor));
        }
        Op::Crop(a) => {
            let (h, w, c) = val(*a).shape();
            let mut gi = Grid::zeros(h, w, c);
            let (gh, gw, _) = g.shape();
            for ch in 0..c {
                for y in 0..gh {
                    for x in 0..gw {
                        gi.set(ch, y, x, g.get(ch, y, x));
                    }
                }
            }
            accumulate(grads, recs, *a, gi);
        }
        Op::SumAll(a) => {
            let (h, w, c) = val(*a).shape();
            accumulate(grads, recs, *a, Grid::filled(h, w, c, g.data()[0]));
        }
        Op::Concat(parts) => {
            let mut offset = 0;
            for &p in parts {
                let (h, w, c) = val(p).shape();
                let n = h * w * c;
                if rg(p) {
                    let slice = g.data()[offset..offset + n].to_vec();
                    accumulate(grads, recs, p, Grid::from_vec(h, w, c, slice).expect("concat part"));
                }
                offset += n;
            }
        }
        Op::ChannelSum(a) => {
            let (h, w, c) = val(*a).shape();
            let mut data = Vec::with_capacity(h * w * c);
            for _ in 0..c {
                data.extend_from_slice(g.data());
            }
            accumulate(grads, recs, *a, Grid::from_vec(h, w, c, data).expect("channel sum"));
        }
    }
}
