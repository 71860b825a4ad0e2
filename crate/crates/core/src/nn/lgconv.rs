//! Learnable gradient convolution: Sobel bases modulated per channel by a
//! learnable 3×3 kernel, combined into a gradient magnitude.

use super::Ctx;
use crate::error::{Context, Result};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::{Real, Shape, Tensor, Var};

/// Horizontal Sobel basis in cross-correlation orientation.
pub const SOBEL_H: [[Real; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
/// Vertical Sobel basis, the transpose of [`SOBEL_H`].
pub const SOBEL_V: [[Real; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

pub const LGCONV_EPS: Real = 1e-6;

pub(crate) fn basis_tensor(b: &[[Real; 3]; 3]) -> Tensor {
    Tensor::from_fn(Shape::new(1, 1, 3, 3), |_, _, y, x| b[y][x])
}

#[derive(Clone, Debug)]
pub struct LgConv {
    pub name: String,
    pub c: usize,
}

impl LgConv {
    pub fn new(name: impl Into<String>, c: usize) -> Self {
        LgConv {
            name: name.into(),
            c,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn basis_names(&self) -> [String; 2] {
        [format!("{}.sobel_h", self.name), format!("{}.sobel_v", self.name)]
    }

    /// Modulation starts at all ones so the effective kernels are exact Sobel.
    pub fn init(&self, store: &mut ParamStore) {
        store.insert(
            self.weight_name(),
            Tensor::ones(Shape::new(self.c, 1, 3, 3)),
            ParamKind::Trainable,
        );
        let [h, v] = self.basis_names();
        store.insert(h, basis_tensor(&SOBEL_H), ParamKind::Frozen);
        store.insert(v, basis_tensor(&SOBEL_V), ParamKind::Frozen);
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.param(&self.weight_name())?;
        let [hn, vn] = self.basis_names();
        let ph = ctx.param(&hn)?;
        let pv = ctx.param(&vn)?;
        let t = &mut *ctx.tape;
        let mut run = || -> Result<Var> {
            let kh = t.mul(w, ph)?;
            let kv = t.mul(w, pv)?;
            let gh = t.conv2d_grouped(x, kh, None, 1, 1, self.c)?;
            let gv = t.conv2d_grouped(x, kv, None, 1, 1, self.c)?;
            let gh2 = t.mul(gh, gh)?;
            let gv2 = t.mul(gv, gv)?;
            let sq = t.add(gh2, gv2)?;
            Ok(t.sqrt_eps(sq, LGCONV_EPS))
        };
        run().within(&self.name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::*;
    use crate::nn::Mode;

    fn layer(c: usize) -> (ParamStore, LgConv) {
        let mut store = ParamStore::new();
        let l = LgConv::new("lg", c);
        l.init(&mut store);
        (store, l)
    }

    /// Classical Sobel magnitude written from the textbook stencil.
    fn sobel_oracle(img: &Tensor, n: usize, c: usize, y: usize, x: usize) -> Real {
        let p = |dy: isize, dx: isize| {
            img.at(n, c, (y as isize + dy) as usize, (x as isize + dx) as usize)
        };
        let gx = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
        let gy = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
        (gx * gx + gy * gy + LGCONV_EPS).sqrt()
    }

    #[test]
    fn bases_are_transposes() {
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(SOBEL_H[i][j], SOBEL_V[j][i]);
            }
        }
    }

    #[test]
    fn constant_image_gives_sqrt_eps() {
        let (store, l) = layer(2);
        let x = Tensor::full(Shape::new(1, 2, 6, 6), 3.7);
        let y = run(&store, Mode::Eval, &x, |ctx, v| l.forward(ctx, v));
        // Only the interior sees a zero gradient; zero padding makes edges.
        for c in 0..2 {
            for i in 1..5 {
                for j in 1..5 {
                    assert!((y.at(0, c, i, j) - 1e-3).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn horizontal_ramp() {
        let (store, l) = layer(1);
        let x = Tensor::from_fn(Shape::new(1, 1, 6, 7), |_, _, _, w| w as Real);
        let y = run(&store, Mode::Eval, &x, |ctx, v| l.forward(ctx, v));
        let want = (64.0 + LGCONV_EPS).sqrt();
        for i in 1..5 {
            for j in 1..6 {
                assert!((y.at(0, 0, i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_sobel_oracle_on_interior() {
        let (store, l) = layer(3);
        for seed in 0..10 {
            let x = Tensor::uniform(Shape::new(2, 3, 9, 11), 0.0, 1.0, &mut rng(seed));
            let y = run(&store, Mode::Eval, &x, |ctx, v| l.forward(ctx, v));
            for n in 0..2 {
                for c in 0..3 {
                    for i in 1..8 {
                        for j in 1..10 {
                            let d = (y.at(n, c, i, j) - sobel_oracle(&x, n, c, i, j)).abs();
                            assert!(d < 1e-12, "{d}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn per_channel_modulation() {
        let (mut store, l) = layer(2);
        let mut w = Tensor::ones(Shape::new(2, 1, 3, 3));
        for v in &mut w.data_mut()[9..] {
            *v = 2.0;
        }
        store.set(&l.weight_name(), w).unwrap();
        let x = Tensor::from_fn(Shape::new(1, 2, 5, 5), |_, _, _, w| w as Real);
        let y = run(&store, Mode::Eval, &x, |ctx, v| l.forward(ctx, v));
        assert!((y.at(0, 0, 2, 2) - (64.0 + LGCONV_EPS).sqrt()).abs() < 1e-12);
        assert!((y.at(0, 1, 2, 2) - (256.0 + LGCONV_EPS).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bases_receive_no_gradient() {
        let (store, l) = layer(2);
        let mut tape = crate::tensor::Tape::new();
        let mut ctx = Ctx::new(&mut tape, &store, Mode::Train);
        let x = ctx.input(Tensor::randn(Shape::new(1, 2, 5, 5), &mut rng(1)), true);
        let y = l.forward(&mut ctx, x).unwrap();
        let loss = ctx.tape.sum(y);
        let rec = ctx.finish();
        let grads = tape.backward(loss).unwrap();
        let pg = rec.param_grads(&grads);
        assert!(pg.contains_key("lg.weight"));
        assert!(!pg.contains_key("lg.sobel_h"));
        assert!(!pg.contains_key("lg.sobel_v"));
    }

    #[test]
    fn gradcheck() {
        let (mut store, l) = layer(3);
        let w = Tensor::uniform(Shape::new(3, 1, 3, 3), 0.5, 1.5, &mut rng(2));
        store.set(&l.weight_name(), w).unwrap();
        let x = Tensor::randn(Shape::new(1, 3, 6, 6), &mut rng(3));
        check_block(&store, "lg.", Mode::Eval, &[x], 1e-4, |ctx, v| l.forward(ctx, v[0]));
    }
}
