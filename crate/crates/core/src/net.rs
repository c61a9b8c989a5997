//! A small multi-stage side-output edge network.
//!
//! Stage `s` (1-based) runs `convs_per_stage` zero-padded 3×3 conv + ReLU
//! layers with `base_channels · 2^(s-1)` channels, preceded by a 2×2 max
//! pool for `s > 1`. A 1×1 head per stage produces a side logit map that is
//! bilinearly upsampled back to the input size. Side maps are fused either
//! with one learned scalar per side or by the context-aware fusion block.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundKernel, Kernel, KernelGrad, Node, Tape};
use crate::cofusion::{self, BoundCoFusion, CoFusionParams, SidePack};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::loss::{tracing_loss, EdgeLabel, TracingConfig, TracingTerms};
use crate::rng::Rng;

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.01;

/// How convolution weights are drawn; biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum InitScheme {
    /// `N(0, std²)` for every layer.
    Gaussian { std: f64 },
    /// `N(0, 2 / fan_in)` per layer, fan_in = kh·kw·cin.
    He,
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::Gaussian { std: INIT_STD }
    }
}

impl InitScheme {
    fn std(&self, kh: usize, kw: usize, cin: usize) -> f64 {
        match *self {
            InitScheme::Gaussian { std } => std,
            InitScheme::He => (2.0 / (kh * kw * cin) as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Fixed,
    #[default]
    CoFusion,
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "cofusion" => Ok(Self::CoFusion),
            other => Err(Error::Config(format!("unknown fusion mode `{other}` (fixed|cofusion)"))),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fixed => "fixed",
            Self::CoFusion => "cofusion",
        })
    }
}

/// Network shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetArch {
    pub stages: usize,
    pub convs_per_stage: usize,
    /// Channels of stage 1; doubled at every later stage.
    pub base_channels: usize,
    pub in_channels: usize,
    pub fusion: FusionMode,
    /// Hidden width of the fusion block's attention convolutions.
    pub cofusion_hidden: usize,
}

impl Default for NetArch {
    fn default() -> Self {
        Self {
            stages: 3,
            convs_per_stage: 2,
            base_channels: 16,
            in_channels: 1,
            fusion: FusionMode::CoFusion,
            cofusion_hidden: cofusion::DEFAULT_HIDDEN,
        }
    }
}

impl NetArch {
    /// Narrow variant sized for single-core training on 64×64 images.
    pub fn desk() -> Self {
        Self {
            base_channels: 8,
            cofusion_hidden: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("stages", self.stages),
            ("convs_per_stage", self.convs_per_stage),
            ("base_channels", self.base_channels),
            ("in_channels", self.in_channels),
            ("cofusion_hidden", self.cofusion_hidden),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("net.{name} must be at least 1")));
        }
        if self.stages > 12 {
            return Err(Error::Config(format!("net.stages = {} is too deep", self.stages)));
        }
        Ok(())
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.base_channels << (stage - 1)
    }

    /// Smallest accepted image extent.
    pub fn min_extent(&self) -> usize {
        1 << (self.stages - 1)
    }
}

/// Boundary and texture weights of one supervision level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelGroup {
    /// 1-based stage indices sharing these weights.
    pub stages: Vec<usize>,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Loss settings for every supervised map: shared cross-entropy and patch
/// parameters, per-group side weights and the fused-map weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Consensus threshold separating edges from the excluded band.
    pub delta: f64,
    pub lambda: f64,
    pub k_bdry: usize,
    pub k_tex: usize,
    pub epsilon: f64,
    /// Side groups; empty means shallow stages in the first group and the
    /// deepest ~40% in the second.
    pub groups: Vec<LevelGroup>,
    pub shallow: LevelWeights,
    pub deep: LevelWeights,
    #[serde(rename = "final")]
    pub fused: LevelWeights,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            delta: 0.3,
            lambda: 1.1,
            k_bdry: 7,
            k_tex: 3,
            epsilon: 1e-10,
            groups: Vec::new(),
            shallow: LevelWeights {
                lambda1: 2.0,
                lambda2: 0.05,
            },
            deep: LevelWeights {
                lambda1: 1.0,
                lambda2: 0.1,
            },
            fused: LevelWeights {
                lambda1: 4.0,
                lambda2: 0.05,
            },
        }
    }
}

impl LossConfig {
    /// Plain weighted cross entropy on every level.
    pub fn ce_only(mut self) -> Self {
        self.set_bdry(false);
        self.set_tex(false);
        self
    }

    pub fn set_bdry(&mut self, on: bool) {
        if !on {
            self.shallow.lambda1 = 0.0;
            self.deep.lambda1 = 0.0;
            self.fused.lambda1 = 0.0;
            self.groups.iter_mut().for_each(|g| g.lambda1 = 0.0);
        }
    }

    pub fn set_tex(&mut self, on: bool) {
        if !on {
            self.shallow.lambda2 = 0.0;
            self.deep.lambda2 = 0.0;
            self.fused.lambda2 = 0.0;
            self.groups.iter_mut().for_each(|g| g.lambda2 = 0.0);
        }
    }

    fn config(&self, w: LevelWeights) -> TracingConfig {
        TracingConfig {
            lambda: self.lambda,
            lambda1: w.lambda1,
            lambda2: w.lambda2,
            k_bdry: self.k_bdry,
            k_tex: self.k_tex,
            epsilon: self.epsilon,
        }
    }

    /// Number of stages supervised with the shallow weights by default.
    pub fn default_shallow_count(stages: usize) -> usize {
        ((stages as f64 * 0.6).round() as usize).clamp(1, stages)
    }

    /// One loss configuration per stage, in stage order.
    pub fn side_configs(&self, stages: usize) -> Result<Vec<TracingConfig>> {
        if self.groups.is_empty() {
            let shallow = Self::default_shallow_count(stages);
            return (1..=stages)
                .map(|s| {
                    let w = if s <= shallow { self.shallow } else { self.deep };
                    let c = self.config(w);
                    c.validate().map(|_| c)
                })
                .collect();
        }
        let mut out: Vec<Option<TracingConfig>> = vec![None; stages];
        for g in &self.groups {
            for &s in &g.stages {
                if s == 0 || s > stages {
                    return Err(Error::Config(format!("loss group names stage {s} of {stages}")));
                }
                if out[s - 1].is_some() {
                    return Err(Error::Config(format!("stage {s} appears in two loss groups")));
                }
                let c = self.config(LevelWeights {
                    lambda1: g.lambda1,
                    lambda2: g.lambda2,
                });
                c.validate()?;
                out[s - 1] = Some(c);
            }
        }
        out.into_iter()
            .enumerate()
            .map(|(i, c)| c.ok_or_else(|| Error::Config(format!("stage {} has no loss group", i + 1))))
            .collect()
    }

    pub fn final_config(&self) -> Result<TracingConfig> {
        let c = self.config(self.fused);
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self, stages: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::Config(format!("loss.delta must lie in [0, 1), got {}", self.delta)));
        }
        self.side_configs(stages)?;
        self.final_config()?;
        Ok(())
    }

    pub fn label(&self, consensus: &Grid) -> Result<EdgeLabel> {
        EdgeLabel::derive(consensus, self.delta, self.k_bdry)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EdgeNetConfig {
    pub arch: NetArch,
    pub loss: LossConfig,
}

impl EdgeNetConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.loss.validate(self.arch.stages)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FusionParams {
    /// `1×1` convolution over the stacked sides, one weight per side.
    Fixed(Kernel),
    CoFusion(CoFusionParams),
}

/// All trainable parameters plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub arch: NetArch,
    pub stages: Vec<Vec<Kernel>>,
    pub heads: Vec<Kernel>,
    pub fusion: FusionParams,
    /// Momentum buffers, one per kernel in [`ModelState::kernels`] order.
    pub momentum: Vec<KernelGrad>,
    pub epoch: u32,
}

impl ModelState {
    /// Weights from `N(0, 0.01²)`, biases zero. Fixed fusion starts as the
    /// plain average of the sides. The backbone and heads are drawn before
    /// any fusion parameter, so they do not depend on the fusion mode.
    pub fn init(arch: NetArch, seed: u64) -> Result<Self> {
        Self::init_with_std(arch, seed, INIT_STD)
    }

    pub fn init_with_std(arch: NetArch, seed: u64, std: f64) -> Result<Self> {
        Self::init_with(arch, seed, InitScheme::Gaussian { std })
    }

    pub fn init_with(arch: NetArch, seed: u64, scheme: InitScheme) -> Result<Self> {
        arch.validate()?;
        let g = |kh: usize, kw: usize, cin: usize, cout: usize, rng: &mut Rng| {
            Kernel::gaussian(kh, kw, cin, cout, true, scheme.std(kh, kw, cin), rng)
        };
        let mut rng = Rng::new(seed);
        let mut stages = Vec::with_capacity(arch.stages);
        let mut cin = arch.in_channels;
        for s in 1..=arch.stages {
            let c = arch.stage_channels(s);
            let mut convs = Vec::with_capacity(arch.convs_per_stage);
            for _ in 0..arch.convs_per_stage {
                convs.push(g(3, 3, cin, c, &mut rng)?);
                cin = c;
            }
            stages.push(convs);
        }
        let heads = (1..=arch.stages)
            .map(|s| g(1, 1, arch.stage_channels(s), 1, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let fusion = match arch.fusion {
            FusionMode::Fixed => {
                let mut k = Kernel::zeros(1, 1, arch.stages, 1, false)?;
                let w = 1.0 / arch.stages as f64;
                k.weights.data_mut().iter_mut().for_each(|v| *v = w);
                FusionParams::Fixed(k)
            }
            FusionMode::CoFusion => {
                let (l, c) = (arch.stages, arch.cofusion_hidden);
                FusionParams::CoFusion(CoFusionParams {
                    conv1: g(3, 3, l, c, &mut rng)?,
                    conv2: g(3, 3, c, c, &mut rng)?,
                    conv3: g(3, 3, c, l, &mut rng)?,
                })
            }
        };
        let mut state = Self {
            arch,
            stages,
            heads,
            fusion,
            momentum: Vec::new(),
            epoch: 0,
        };
        state.reset_momentum();
        Ok(state)
    }

    /// Every parameter set with all values zero.
    pub fn zeros(arch: NetArch) -> Result<Self> {
        let mut s = Self::init(arch, 0)?;
        for k in s.kernels_mut() {
            k.weights.data_mut().fill(0.0);
            if let Some(b) = &mut k.bias {
                b.data_mut().fill(0.0);
            }
        }
        Ok(s)
    }

    pub fn reset_momentum(&mut self) {
        self.momentum = self.kernels().into_iter().map(KernelGrad::zeros_like).collect();
    }

    /// Kernels in declaration order: backbone, heads, fusion.
    pub fn kernels(&self) -> Vec<&Kernel> {
        let mut out: Vec<&Kernel> = self.stages.iter().flatten().collect();
        out.extend(self.heads.iter());
        match &self.fusion {
            FusionParams::Fixed(k) => out.push(k),
            FusionParams::CoFusion(p) => out.extend([&p.conv1, &p.conv2, &p.conv3]),
        }
        out
    }

    pub fn kernels_mut(&mut self) -> Vec<&mut Kernel> {
        let mut out: Vec<&mut Kernel> = self.stages.iter_mut().flatten().collect();
        out.extend(self.heads.iter_mut());
        match &mut self.fusion {
            FusionParams::Fixed(k) => out.push(k),
            FusionParams::CoFusion(p) => out.extend([&mut p.conv1, &mut p.conv2, &mut p.conv3]),
        }
        out
    }

    /// Names matching [`ModelState::kernels`].
    pub fn kernel_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (s, convs) in self.stages.iter().enumerate() {
            for i in 0..convs.len() {
                out.push(format!("stage{}.conv{}", s + 1, i + 1));
            }
        }
        for s in 0..self.heads.len() {
            out.push(format!("side{}", s + 1));
        }
        match &self.fusion {
            FusionParams::Fixed(_) => out.push("fuse".into()),
            FusionParams::CoFusion(_) => {
                out.extend((1..=3).map(|i| format!("cofusion.conv{i}")));
            }
        }
        out
    }

    pub fn num_values(&self) -> usize {
        self.kernels().iter().map(|k| k.num_values()).sum()
    }

    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundModel {
        let b = |k: &Kernel| if trainable { k.bind(tape) } else { k.bind_constant(tape) };
        BoundModel {
            arch: self.arch,
            stages: self.stages.iter().map(|c| c.iter().map(b).collect()).collect(),
            heads: self.heads.iter().map(b).collect(),
            fusion: match &self.fusion {
                FusionParams::Fixed(k) => BoundFusion::Fixed(b(k)),
                FusionParams::CoFusion(p) => BoundFusion::CoFusion(if trainable {
                    p.bind(tape)
                } else {
                    p.bind_constant(tape)
                }),
            },
        }
    }

    /// Weight and bias grids of every kernel, flattened in declaration order.
    pub fn tensors(&self) -> Vec<Grid> {
        let mut out = Vec::new();
        for k in self.kernels() {
            out.push(k.weights.clone());
            out.extend(k.bias.clone());
        }
        out
    }

    /// Binds the model to caller-provided leaves laid out as [`ModelState::tensors`].
    pub fn bind_nodes(&self, nodes: &[Node]) -> Result<BoundModel> {
        let mut it = nodes.iter().copied();
        let mut next = |k: &Kernel| -> Result<BoundKernel> {
            let missing = || Error::Shape("too few nodes for the model's tensors".into());
            let weight = it.next().ok_or_else(missing)?;
            let bias = match k.bias {
                Some(_) => Some(it.next().ok_or_else(missing)?),
                None => None,
            };
            Ok(BoundKernel {
                weight,
                bias,
                cout: k.cout,
            })
        };
        let mut stages = Vec::new();
        for convs in &self.stages {
            stages.push(convs.iter().map(&mut next).collect::<Result<Vec<_>>>()?);
        }
        let heads = self.heads.iter().map(&mut next).collect::<Result<Vec<_>>>()?;
        let fusion = match &self.fusion {
            FusionParams::Fixed(k) => BoundFusion::Fixed(next(k)?),
            FusionParams::CoFusion(p) => BoundFusion::CoFusion(BoundCoFusion {
                conv1: next(&p.conv1)?,
                conv2: next(&p.conv2)?,
                conv3: next(&p.conv3)?,
            }),
        };
        Ok(BoundModel {
            arch: self.arch,
            stages,
            heads,
            fusion,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum BoundFusion {
    Fixed(BoundKernel),
    CoFusion(BoundCoFusion),
}

/// A [`ModelState`] recorded on a tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub arch: NetArch,
    pub stages: Vec<Vec<BoundKernel>>,
    pub heads: Vec<BoundKernel>,
    pub fusion: BoundFusion,
}

impl BoundModel {
    /// Gradients in [`ModelState::kernels`] order.
    pub fn grads(&self, tape: &Tape) -> Vec<KernelGrad> {
        let mut out: Vec<KernelGrad> = self.stages.iter().flatten().map(|k| k.grads(tape)).collect();
        out.extend(self.heads.iter().map(|k| k.grads(tape)));
        match &self.fusion {
            BoundFusion::Fixed(k) => out.push(k.grads(tape)),
            BoundFusion::CoFusion(p) => out.extend([&p.conv1, &p.conv2, &p.conv3].map(|k| k.grads(tape))),
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct NetOutput {
    pub pack: SidePack,
    pub final_logit: Node,
    /// Per-pixel side weights (context-aware fusion only).
    pub weights: Option<Node>,
}

impl NetOutput {
    pub fn sides(&self) -> &[Node] {
        self.pack.sides()
    }
}

pub fn forward(tape: &Tape, image: &Grid, model: &BoundModel) -> Result<NetOutput> {
    let arch = model.arch;
    let (h, w, c) = image.shape();
    if c != arch.in_channels {
        return Err(Error::Shape(format!(
            "image has {c} channels, network expects {}",
            arch.in_channels
        )));
    }
    let min = arch.min_extent();
    if h < min || w < min {
        return Err(Error::Shape(format!(
            "image {h}x{w} is smaller than {min}x{min} required by {} stages",
            arch.stages
        )));
    }
    let mut x = tape.constant(image.clone());
    let mut sides = Vec::with_capacity(arch.stages);
    for (s, convs) in model.stages.iter().enumerate() {
        if s > 0 {
            x = tape.maxpool2(x);
        }
        for k in convs {
            let z = k.apply(tape, x, true)?;
            x = tape.relu(z);
        }
        let side = model.heads[s].apply(tape, x, true)?;
        let up = tape.upsample(side, 1 << s)?;
        sides.push(tape.crop(up, h, w)?);
    }
    let pack = SidePack::new(tape, sides)?;
    let (final_logit, weights) = match &model.fusion {
        BoundFusion::Fixed(k) => (cofusion::fixed_fusion_node(tape, &pack, k.weight)?, None),
        BoundFusion::CoFusion(p) => {
            let out = cofusion::cofusion_forward(tape, &pack, p)?;
            (out.logit, out.weights)
        }
    };
    Ok(NetOutput {
        pack,
        final_logit,
        weights,
    })
}

/// Per-level loss nodes: one entry per side, then the fused map.
#[derive(Debug, Clone)]
pub struct NetLoss {
    pub total: Node,
    pub levels: Vec<TracingTerms>,
}

/// Sum of the tracing loss on every sigmoid side map (each with its own
/// level configuration) and on the sigmoid of the fused map.
pub fn total_loss(
    tape: &Tape,
    out: &NetOutput,
    label: &EdgeLabel,
    side_cfgs: &[TracingConfig],
    final_cfg: &TracingConfig,
) -> Result<NetLoss> {
    if side_cfgs.len() != out.pack.len() {
        return Err(Error::Config(format!(
            "{} side loss configurations for {} sides",
            side_cfgs.len(),
            out.pack.len()
        )));
    }
    let mut levels = Vec::with_capacity(side_cfgs.len() + 1);
    for (&side, cfg) in out.sides().iter().zip(side_cfgs) {
        let p = tape.sigmoid(side);
        levels.push(tracing_loss(tape, p, label, cfg)?);
    }
    let p = tape.sigmoid(out.final_logit);
    levels.push(tracing_loss(tape, p, label, final_cfg)?);
    let mut total = levels[0].total;
    for t in &levels[1..] {
        total = tape.add(total, t.total)?;
    }
    Ok(NetLoss { total, levels })
}

/// Probability maps of one image: fused, per side, and fusion weights.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub fused: Grid,
    pub sides: Vec<Grid>,
    pub weights: Option<Grid>,
}

pub fn predict(state: &ModelState, image: &Grid) -> Result<Prediction> {
    let tape = Tape::new();
    let model = state.bind(&tape, false);
    let out = forward(&tape, image, &model)?;
    let prob = |n: Node| tape.value(tape.sigmoid(n)).clone();
    Ok(Prediction {
        fused: prob(out.final_logit),
        sides: out.sides().iter().map(|&s| prob(s)).collect(),
        weights: out.weights.map(|w| tape.value(w).clone()),
    })
}

const MAGIC: &[u8; 8] = b"CATSMDL1";

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&u32::try_from(v).expect("count fits in u32").to_le_bytes());
}

fn put_grid(buf: &mut Vec<u8>, g: &Grid) {
    for v in g.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Model(format!("truncated model file at byte {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn fill(&mut self, g: &mut Grid) -> Result<()> {
        for v in g.data_mut() {
            *v = f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        }
        Ok(())
    }
}

impl ModelState {
    /// Binary layout: magic `CATSMDL1`; little-endian `u32` stages,
    /// convs_per_stage, base_channels, in_channels, fusion (0 fixed,
    /// 1 cofusion), cofusion_hidden, epoch and kernel count; per kernel
    /// `u32` kh, kw, cin, cout, has_bias followed by the `f64` weights and
    /// bias; then the momentum buffers in the same order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        let a = &self.arch;
        for v in [
            a.stages,
            a.convs_per_stage,
            a.base_channels,
            a.in_channels,
            usize::from(a.fusion == FusionMode::CoFusion),
            a.cofusion_hidden,
            self.epoch as usize,
        ] {
            put_u32(&mut buf, v);
        }
        let kernels = self.kernels();
        put_u32(&mut buf, kernels.len());
        for k in &kernels {
            for v in [k.kh, k.kw, k.cin, k.cout, usize::from(k.bias.is_some())] {
                put_u32(&mut buf, v);
            }
            put_grid(&mut buf, &k.weights);
            if let Some(b) = &k.bias {
                put_grid(&mut buf, b);
            }
        }
        for m in &self.momentum {
            put_grid(&mut buf, &m.weights);
            if let Some(b) = &m.bias {
                put_grid(&mut buf, b);
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Model("not a model file (bad magic)".into()));
        }
        let mut head = [0usize; 7];
        for v in &mut head {
            *v = r.u32()?;
        }
        let fusion = match head[4] {
            0 => FusionMode::Fixed,
            1 => FusionMode::CoFusion,
            other => return Err(Error::Model(format!("unknown fusion code {other}"))),
        };
        let arch = NetArch {
            stages: head[0],
            convs_per_stage: head[1],
            base_channels: head[2],
            in_channels: head[3],
            fusion,
            cofusion_hidden: head[5],
        };
        arch.validate().map_err(|e| Error::Model(e.to_string()))?;
        let mut state = Self::zeros(arch)?;
        state.epoch = head[6] as u32;
        let count = r.u32()?;
        let expected = state.kernels().len();
        if count != expected {
            return Err(Error::Model(format!("{count} kernels stored, architecture needs {expected}")));
        }
        for (i, k) in state.kernels_mut().into_iter().enumerate() {
            let mut dims = [0usize; 5];
            for d in &mut dims {
                *d = r.u32()?;
            }
            let want = [k.kh, k.kw, k.cin, k.cout, usize::from(k.bias.is_some())];
            if dims != want {
                return Err(Error::Model(format!("kernel {i} has shape {dims:?}, expected {want:?}")));
            }
            r.fill(&mut k.weights)?;
            if let Some(b) = &mut k.bias {
                r.fill(b)?;
            }
        }
        for m in &mut state.momentum {
            r.fill(&mut m.weights)?;
            if let Some(b) = &mut m.bias {
                r.fill(b)?;
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Model(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(state)
    }
}
