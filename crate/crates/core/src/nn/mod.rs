//! Layers and sub-blocks of the network.
//!
//! Layers are lightweight descriptors that know their parameter names; the
//! tensors themselves live in a [`ParamStore`]. A forward pass runs inside a
//! [`Ctx`], which registers each parameter on the tape the first time it is
//! read and collects batch statistics for the running-average update.

mod attention;
mod blocks;
mod head;
mod lgconv;

use std::collections::BTreeMap;

use rand::{Rng, RngCore};

use crate::error::{Context, Result};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::{BatchStats, Gradients, Real, Shape, Tape, Tensor, Var};

pub use attention::{ChannelAttention, CrcGate, CA_REDUCTION};
pub use blocks::{AvgMode, GeometryBlock, SemanticBlock, TextureBlock};
pub use head::PredictionHead;
pub use lgconv::{LgConv, LGCONV_EPS, SOBEL_H, SOBEL_V};

/// Normalization epsilon.
pub const BN_EPS: Real = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running averages updated afterwards.
    Train,
    /// Running statistics.
    Eval,
}

/// State of one forward pass.
pub struct Ctx<'t, 'p> {
    pub tape: &'t mut Tape,
    params: &'p ParamStore,
    vars: BTreeMap<String, Var>,
    mode: Mode,
    track_params: bool,
    stats: Vec<(String, BatchStats)>,
}

/// What a forward pass leaves behind besides the tape: which tape node holds
/// each parameter, and the batch statistics of every train-mode norm.
#[derive(Debug, Default)]
pub struct ForwardRecord {
    pub vars: BTreeMap<String, Var>,
    pub stats: Vec<(String, BatchStats)>,
}

impl ForwardRecord {
    /// Adjoints of every trainable parameter that took part in the pass.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter_map(|(k, &v)| grads.get(v).map(|g| (k.clone(), g.clone())))
            .collect()
    }
}

impl<'t, 'p> Ctx<'t, 'p> {
    /// Trainable parameters become gradient-tracked leaves.
    pub fn new(tape: &'t mut Tape, params: &'p ParamStore, mode: Mode) -> Self {
        Ctx {
            tape,
            params,
            vars: BTreeMap::new(),
            mode,
            track_params: true,
            stats: Vec::new(),
        }
    }

    /// All parameters enter the tape as constants.
    pub fn frozen(tape: &'t mut Tape, params: &'p ParamStore, mode: Mode) -> Self {
        Ctx {
            track_params: false,
            ..Ctx::new(tape, params, mode)
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    /// Use an existing tape node in place of a stored parameter.
    pub fn bind(&mut self, name: impl Into<String>, var: Var) {
        self.vars.insert(name.into(), var);
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let p = self.params.get(name)?;
        let track = self.track_params && p.kind == ParamKind::Trainable;
        let v = self.tape.leaf(p.value.clone(), track);
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn input(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.tape.leaf(t, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.tape.shape(v)
    }

    pub fn finish(self) -> ForwardRecord {
        ForwardRecord {
            vars: self.vars,
            stats: self.stats,
        }
    }
}

/// Uniform fan-in-scaled draw `U(-1/√fan_in, 1/√fan_in)`.
fn fan_in_uniform(shape: Shape, fan_in: usize, rng: &mut dyn RngCore) -> Tensor {
    let bound = 1.0 / (fan_in as Real).sqrt();
    let data = (0..shape.numel()).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("parameter shape")
}

/// 2-D convolution with "same" padding `(k - 1) / 2`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub bias: bool,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, k: usize) -> Self {
        Conv2d {
            name: name.into(),
            cin,
            cout,
            k,
            stride: 1,
            bias: false,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_bias(mut self) -> Self {
        self.bias = true;
        self
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore) {
        let fan_in = self.cin * self.k * self.k;
        let w = fan_in_uniform(Shape::new(self.cout, self.cin, self.k, self.k), fan_in, rng);
        store.insert(self.weight_name(), w, ParamKind::Trainable);
        if self.bias {
            let b = fan_in_uniform(Shape::new(1, self.cout, 1, 1), fan_in, rng);
            store.insert(self.bias_name(), b, ParamKind::Trainable);
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(&self.weight_name())?;
        let b = if self.bias {
            Some(ctx.param(&self.bias_name())?)
        } else {
            None
        };
        ctx.tape
            .conv2d(x, w, b, self.stride, (self.k - 1) / 2)
            .within(&self.name)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub name: String,
    pub c: usize,
}

impl BatchNorm2d {
    pub fn new(name: impl Into<String>, c: usize) -> Self {
        BatchNorm2d {
            name: name.into(),
            c,
        }
    }

    pub fn init(&self, store: &mut ParamStore) {
        let s = Shape::new(1, self.c, 1, 1);
        let n = &self.name;
        store.insert(format!("{n}.gamma"), Tensor::ones(s), ParamKind::Trainable);
        store.insert(format!("{n}.beta"), Tensor::zeros(s), ParamKind::Trainable);
        store.insert(format!("{n}.running_mean"), Tensor::zeros(s), ParamKind::RunningStat);
        store.insert(format!("{n}.running_var"), Tensor::ones(s), ParamKind::RunningStat);
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let n = &self.name;
        let gamma = ctx.param(&format!("{n}.gamma"))?;
        let beta = ctx.param(&format!("{n}.beta"))?;
        let params = ctx.params;
        let rm = params.tensor(&format!("{n}.running_mean"))?;
        let rv = params.tensor(&format!("{n}.running_var"))?;
        let train = ctx.mode == Mode::Train;
        let (y, stats) = ctx
            .tape
            .batch_norm(x, gamma, beta, rm, rv, train, BN_EPS)
            .within(n)?;
        if let Some(s) = stats {
            ctx.stats.push((n.clone(), s));
        }
        Ok(y)
    }
}

/// Convolution (no bias) → batch norm → ReLU.
#[derive(Clone, Debug)]
pub struct Cbr {
    pub name: String,
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl Cbr {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, k: usize) -> Self {
        let name = name.into();
        Cbr {
            conv: Conv2d::new(format!("{name}.conv"), cin, cout, k),
            bn: BatchNorm2d::new(format!("{name}.bn"), cout),
            name,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.conv.stride = stride;
        self
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore) {
        self.conv.init(store, rng);
        self.bn.init(store);
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        Ok(ctx.tape.relu(y))
    }
}
