//! Channel attention and the cross-modal gate head.

use rand::RngCore;

use super::{Conv2d, Ctx};
use crate::error::{Context, Result};
use crate::params::ParamStore;
use crate::tensor::Var;

/// Bottleneck ratio of [`ChannelAttention`].
pub const CA_REDUCTION: usize = 4;

/// Squeeze-excitation gate `σ(expand(relu(reduce(GAP(x)))))`, shape
/// `(N, C, 1, 1)`.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub name: String,
    pub reduce: Conv2d,
    pub expand: Conv2d,
}

impl ChannelAttention {
    pub fn new(name: impl Into<String>, c: usize) -> Self {
        let name = name.into();
        let mid = (c / CA_REDUCTION).max(1);
        ChannelAttention {
            reduce: Conv2d::new(format!("{name}.reduce"), c, mid, 1).with_bias(),
            expand: Conv2d::new(format!("{name}.expand"), mid, c, 1).with_bias(),
            name,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore) {
        self.reduce.init(store, rng);
        self.expand.init(store, rng);
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let g = ctx.tape.global_avg_pool(x);
        let r = self.reduce.forward(ctx, g)?;
        let r = ctx.tape.relu(r);
        let e = self.expand.forward(ctx, r)?;
        Ok(ctx.tape.sigmoid(e))
    }
}

/// Conv3×3 → ReLU → Conv3×3 to two logits, softmax across them, split into
/// the RGB and depth weight maps `(N, 1, H, W)`.
#[derive(Clone, Debug)]
pub struct CrcGate {
    pub name: String,
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl CrcGate {
    pub fn new(name: impl Into<String>, c: usize) -> Self {
        let name = name.into();
        CrcGate {
            conv1: Conv2d::new(format!("{name}.conv1"), 2 * c, c, 3).with_bias(),
            conv2: Conv2d::new(format!("{name}.conv2"), c, 2, 3).with_bias(),
            name,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore) {
        self.conv1.init(store, rng);
        self.conv2.init(store, rng);
    }

    /// Takes the channel concatenation `[R̂, D̂]`, returns `(W_r, W_d)`.
    pub fn forward(&self, ctx: &mut Ctx, rd: Var) -> Result<(Var, Var)> {
        let h = self.conv1.forward(ctx, rd)?;
        let h = ctx.tape.relu(h);
        let logits = self.conv2.forward(ctx, h)?;
        let t = &mut *ctx.tape;
        let mut split = || -> Result<(Var, Var)> {
            let p = t.softmax_channels(logits, 1)?;
            Ok((t.narrow_channels(p, 0, 1)?, t.narrow_channels(p, 1, 1)?))
        };
        split().within(&self.name)
    }
}
