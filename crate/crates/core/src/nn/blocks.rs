//! Texture, semantic and geometry blocks of the enhancement modules.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{Cbr, Ctx, LgConv};
use crate::error::{Context, Result};
use crate::params::ParamStore;
use crate::tensor::{ResizeMode, Var};

/// Average used as the low-frequency reference in the texture gate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvgMode {
    /// 3×3 window, stride 1, same size.
    #[default]
    Local3,
    /// Per-channel global mean.
    Global,
}

/// Multi-kernel texture extraction followed by a contrast gate
/// `σ(R_m − AVG(x)) ⊗ R_m`.
#[derive(Clone, Debug)]
pub struct TextureBlock {
    pub name: String,
    pub branches: [Cbr; 3],
    pub fuse: Cbr,
    pub avg: AvgMode,
}

impl TextureBlock {
    pub fn new(name: impl Into<String>, c: usize, avg: AvgMode) -> Self {
        let name = name.into();
        TextureBlock {
            branches: [1, 3, 5].map(|k| Cbr::new(format!("{name}.branch{k}"), c, c, k)),
            fuse: Cbr::new(format!("{name}.fuse"), c, c, 3),
            avg,
            name,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore) {
        for b in &self.branches {
            b.init(store, rng);
        }
        self.fuse.init(store, rng);
    }

    /// Returns `(R_m, gated output)`.
    pub fn forward_parts(&self, ctx: &mut Ctx, x: Var) -> Result<(Var, Var)> {
        let mut acc = self.branches[0].forward(ctx, x)?;
        for b in &self.branches[1..] {
            let y = b.forward(ctx, x)?;
            acc = ctx.tape.add(acc, y)?;
        }
        let rm = self.fuse.forward(ctx, acc)?;
        let t = &mut *ctx.tape;
        let mut gate = || -> Result<Var> {
            let avg = match self.avg {
                AvgMode::Local3 => t.avg_pool(x, 3, 1, 1)?,
                AvgMode::Global => t.global_avg_pool(x),
            };
            let diff = t.sub(rm, avg)?;
            let g = t.sigmoid(diff);
            t.mul(g, rm)
        };
        let out = gate().within(&self.name)?;
        Ok((rm, out))
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        Ok(self.forward_parts(ctx, x)?.1)
    }
}

/// Two-step downsampled context, reweighted by the global mean and
/// upsampled ×2. The output has twice the input's spatial size.
///
/// Odd sizes are handled by rounding the intermediate sizes up and resizing
/// back to the input size before the final upsample.
#[derive(Clone, Debug)]
pub struct SemanticBlock {
    pub name: String,
    pub down1: Cbr,
    pub down2: Cbr,
}

impl SemanticBlock {
    pub fn new(name: impl Into<String>, c: usize) -> Self {
        let name = name.into();
        SemanticBlock {
            down1: Cbr::new(format!("{name}.down1"), c, c, 3),
            down2: Cbr::new(format!("{name}.down2"), c, c, 3),
            name,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore) {
        self.down1.init(store, rng);
        self.down2.init(store, rng);
    }

    pub fn forward(&self, ctx: &mut Ctx, s: Var) -> Result<Var> {
        let sh = ctx.shape(s);
        let half = |v: usize| v.div_ceil(2);
        let d1 = ctx
            .tape
            .resize_to(s, half(sh.h), half(sh.w))
            .within(&self.name)?;
        let s1 = self.down1.forward(ctx, d1)?;
        let s1s = ctx.shape(s1);
        let d2 = ctx
            .tape
            .resize_to(s1, half(s1s.h), half(s1s.w))
            .within(&self.name)?;
        let s2 = self.down2.forward(ctx, d2)?;
        let t = &mut *ctx.tape;
        let mut rest = || -> Result<Var> {
            let u1 = t.resize_to(s1, sh.h, sh.w)?;
            let u2 = t.resize_to(s2, sh.h, sh.w)?;
            let rc = t.add(u1, u2)?;
            let gap = t.global_avg_pool(s);
            let w = t.mul(rc, gap)?;
            let y = t.add(w, s)?;
            t.bilinear_resize(y, 2, ResizeMode::Up)
        };
        rest().within(&self.name)
    }
}

/// Two residual gradient-magnitude refinements:
/// `d = CBR(lg(x) + x)`, `out = CBR(lg(d) + d)`.
#[derive(Clone, Debug)]
pub struct GeometryBlock {
    pub name: String,
    pub lg1: LgConv,
    pub cbr1: Cbr,
    pub lg2: LgConv,
    pub cbr2: Cbr,
}

impl GeometryBlock {
    pub fn new(name: impl Into<String>, c: usize) -> Self {
        let name = name.into();
        GeometryBlock {
            lg1: LgConv::new(format!("{name}.lg1"), c),
            cbr1: Cbr::new(format!("{name}.cbr1"), c, c, 3),
            lg2: LgConv::new(format!("{name}.lg2"), c),
            cbr2: Cbr::new(format!("{name}.cbr2"), c, c, 3),
            name,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore) {
        self.lg1.init(store);
        self.cbr1.init(store, rng);
        self.lg2.init(store);
        self.cbr2.init(store, rng);
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let g = self.lg1.forward(ctx, x)?;
        let r = ctx.tape.add(g, x).within(&self.name)?;
        let d = self.cbr1.forward(ctx, r)?;
        let g = self.lg2.forward(ctx, d)?;
        let r = ctx.tape.add(g, d).within(&self.name)?;
        self.cbr2.forward(ctx, r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::*;
    use crate::nn::Mode;
    use crate::tensor::{Real, Shape, Tensor};

    #[test]
    fn texture_gate_bound() {
        let mut store = ParamStore::new();
        let b = TextureBlock::new("t", 4, AvgMode::Local3);
        b.init(&mut store, &mut rng(0));
        let x = Tensor::randn(Shape::new(2, 4, 8, 8), &mut rng(1));
        let mut tape = crate::tensor::Tape::new();
        let mut ctx = Ctx::new(&mut tape, &store, Mode::Train);
        let xv = ctx.input(x, false);
        let (rm, out) = b.forward_parts(&mut ctx, xv).unwrap();
        for (o, r) in ctx.value(out).data().iter().zip(ctx.value(rm).data()) {
            assert!(o.abs() <= r.abs());
        }
    }

    #[test]
    fn texture_constant_input_halves() {
        let mut store = ParamStore::new();
        let b = TextureBlock::new("t", 2, AvgMode::Local3);
        b.init(&mut store, &mut rng(0));
        // Branch 1 and the fuse CBR pass the input through; the others are off.
        unit_cbr(&mut store, &b.branches[0]);
        unit_cbr(&mut store, &b.fuse);
        for off in &b.branches[1..] {
            let g = format!("{}.gamma", off.bn.name);
            store.set(&g, Tensor::zeros(Shape::new(1, 2, 1, 1))).unwrap();
        }
        let x = Tensor::full(Shape::new(1, 2, 6, 6), 0.8);
        let y = run(&store, Mode::Eval, &x, |ctx, v| b.forward(ctx, v));
        for &v in y.data() {
            assert!((v - 0.4).abs() < 1e-15, "{v}");
        }
    }

    #[test]
    fn texture_global_mode() {
        let mut store = ParamStore::new();
        let b = TextureBlock::new("t", 2, AvgMode::Global);
        b.init(&mut store, &mut rng(0));
        let x = Tensor::randn(Shape::new(2, 2, 6, 6), &mut rng(4));
        check_block(&store, "t.", Mode::Train, &[x], 1e-4, |ctx, v| b.forward(ctx, v[0]));
    }

    #[test]
    fn texture_gradcheck() {
        let mut store = ParamStore::new();
        let b = TextureBlock::new("t", 3, AvgMode::Local3);
        b.init(&mut store, &mut rng(5));
        let x = Tensor::randn(Shape::new(2, 3, 6, 6), &mut rng(6));
        check_block(&store, "t.", Mode::Train, &[x], 1e-4, |ctx, v| b.forward(ctx, v[0]));
    }

    #[test]
    fn semantic_doubles_resolution() {
        let mut store = ParamStore::new();
        let b = SemanticBlock::new("s", 4);
        b.init(&mut store, &mut rng(0));
        for (h, w) in [(8, 8), (8, 12), (13, 13), (2, 2), (1, 1)] {
            let x = Tensor::randn(Shape::new(1, 4, h, w), &mut rng(1));
            let y = run(&store, Mode::Eval, &x, |ctx, v| b.forward(ctx, v));
            assert_eq!(y.shape(), Shape::new(1, 4, 2 * h, 2 * w));
        }
    }

    #[test]
    fn semantic_zero_in_zero_out() {
        let mut store = ParamStore::new();
        let b = SemanticBlock::new("s", 4);
        b.init(&mut store, &mut rng(0));
        let x = Tensor::zeros(Shape::new(2, 4, 8, 8));
        for mode in [Mode::Train, Mode::Eval] {
            let y = run(&store, mode, &x, |ctx, v| b.forward(ctx, v));
            assert!(y.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn semantic_gradcheck() {
        let mut store = ParamStore::new();
        let b = SemanticBlock::new("s", 3);
        b.init(&mut store, &mut rng(7));
        let x = Tensor::randn(Shape::new(2, 3, 8, 8), &mut rng(8));
        check_block(&store, "s.", Mode::Train, &[x], 1e-4, |ctx, v| b.forward(ctx, v[0]));
        let odd = Tensor::randn(Shape::new(1, 3, 5, 7), &mut rng(9));
        check_block(&store, "s.", Mode::Eval, &[odd], 1e-4, |ctx, v| b.forward(ctx, v[0]));
    }

    #[test]
    fn geometry_preserves_shape() {
        let mut store = ParamStore::new();
        let b = GeometryBlock::new("g", 4);
        b.init(&mut store, &mut rng(0));
        let x = Tensor::randn(Shape::new(2, 4, 7, 9), &mut rng(1));
        let y = run(&store, Mode::Train, &x, |ctx, v| b.forward(ctx, v));
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn geometry_constant_input_stays_constant_away_from_border() {
        let mut store = ParamStore::new();
        let b = GeometryBlock::new("g", 3);
        b.init(&mut store, &mut rng(2));
        let x = Tensor::full(Shape::new(1, 3, 14, 14), 0.6);
        let y = run(&store, Mode::Eval, &x, |ctx, v| b.forward(ctx, v));
        // The composite receptive field is 9×9, so zero padding reaches at
        // most 4 pixels in from the edge.
        for c in 0..3 {
            let r = y.at(0, c, 4, 4);
            for i in 4..10 {
                for j in 4..10 {
                    assert!((y.at(0, c, i, j) - r).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn geometry_first_residual_adds_sqrt_eps() {
        let mut store = ParamStore::new();
        let b = GeometryBlock::new("g", 2);
        b.init(&mut store, &mut rng(3));
        let x = Tensor::full(Shape::new(1, 2, 6, 6), 0.25);
        let y = run(&store, Mode::Eval, &x, |ctx, v| {
            let g = b.lg1.forward(ctx, v)?;
            ctx.tape.add(g, v)
        });
        let want: Real = 0.25 + 1e-3;
        for i in 1..5 {
            for j in 1..5 {
                assert!((y.at(0, 1, i, j) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn geometry_gradcheck() {
        let mut store = ParamStore::new();
        let b = GeometryBlock::new("g", 2);
        b.init(&mut store, &mut rng(10));
        let x = Tensor::randn(Shape::new(2, 2, 6, 6), &mut rng(11));
        check_block(&store, "g.", Mode::Train, &[x], 1e-4, |ctx, v| b.forward(ctx, v[0]));
    }
}
