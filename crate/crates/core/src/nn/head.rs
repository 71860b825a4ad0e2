use rand::RngCore;

use super::{Cbr, Conv2d, Ctx};
use crate::error::{Context, Result};
use crate::params::ParamStore;
use crate::tensor::Var;

/// CBR₃ → 1×1 conv to one channel → bilinear resize → sigmoid.
#[derive(Clone, Debug)]
pub struct PredictionHead {
    pub name: String,
    pub cbr: Cbr,
    pub proj: Conv2d,
}

impl PredictionHead {
    pub fn new(name: impl Into<String>, c: usize) -> Self {
        let name = name.into();
        PredictionHead {
            cbr: Cbr::new(format!("{name}.cbr"), c, c, 3),
            proj: Conv2d::new(format!("{name}.proj"), c, 1, 1).with_bias(),
            name,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore) {
        self.cbr.init(store, rng);
        self.proj.init(store, rng);
    }

    /// Pre-sigmoid logits at `out` resolution.
    pub fn logits(&self, ctx: &mut Ctx, x: Var, out: (usize, usize)) -> Result<Var> {
        let y = self.cbr.forward(ctx, x)?;
        let y = self.proj.forward(ctx, y)?;
        ctx.tape.resize_to(y, out.0, out.1).within(&self.name)
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var, out: (usize, usize)) -> Result<Var> {
        let l = self.logits(ctx, x, out)?;
        Ok(ctx.tape.sigmoid(l))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::*;
    use crate::nn::Mode;
    use crate::tensor::{Shape, Tensor};

    #[test]
    fn output_shape_and_range() {
        let mut store = ParamStore::new();
        let h = PredictionHead::new("head", 4);
        h.init(&mut store, &mut rng(0));
        let x = Tensor::randn(Shape::new(2, 4, 104, 104), &mut rng(1));
        let y = run(&store, Mode::Eval, &x, |ctx, v| h.forward(ctx, v, (416, 416)));
        assert_eq!(y.shape(), Shape::new(2, 1, 416, 416));
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn gradcheck() {
        let mut store = ParamStore::new();
        let h = PredictionHead::new("head", 3);
        h.init(&mut store, &mut rng(2));
        let x = Tensor::randn(Shape::new(2, 3, 4, 4), &mut rng(3));
        check_block(&store, "head.", Mode::Train, &[x], 1e-4, |ctx, v| {
            h.forward(ctx, v[0], (16, 16))
        });
    }
}
