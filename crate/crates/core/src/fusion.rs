//! Adaptive cross-modal fusion: global guidance, per-pixel modality gating
//! and cross-scale refinement.

use rand::RngCore;

use crate::error::{Context, Error, Result};
use crate::nn::{Cbr, ChannelAttention, Conv2d, CrcGate, Ctx};
use crate::params::ParamStore;
use crate::tensor::{ResizeMode, Var};

/// Intermediate values of one gated fusion.
#[derive(Clone, Copy, Debug)]
pub struct FuseParts {
    pub r_hat: Var,
    pub d_hat: Var,
    pub w_r: Var,
    pub w_d: Var,
    pub fused: Var,
}

#[derive(Clone, Debug)]
pub struct Adfm {
    pub name: String,
    /// 1×1 conv over the depth descriptor, guiding the RGB feature.
    pub guide_r: Conv2d,
    /// 1×1 conv over the RGB descriptor, guiding the depth feature.
    pub guide_d: Conv2d,
    pub crc: CrcGate,
    pub refine1: Cbr,
    pub refine2: Cbr,
    pub ca: ChannelAttention,
}

impl Adfm {
    pub fn new(name: impl Into<String>, c: usize) -> Self {
        let name = name.into();
        Adfm {
            guide_r: Conv2d::new(format!("{name}.guide_r"), c, c, 1).with_bias(),
            guide_d: Conv2d::new(format!("{name}.guide_d"), c, c, 1).with_bias(),
            crc: CrcGate::new(format!("{name}.crc"), c),
            refine1: Cbr::new(format!("{name}.refine1"), c, c, 3),
            refine2: Cbr::new(format!("{name}.refine2"), c, c, 3),
            ca: ChannelAttention::new(format!("{name}.ca"), c),
            name,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore) {
        self.guide_r.init(store, rng);
        self.guide_d.init(store, rng);
        self.crc.init(store, rng);
        self.refine1.init(store, rng);
        self.refine2.init(store, rng);
        self.ca.init(store, rng);
    }

    pub fn fuse(&self, ctx: &mut Ctx, r: Var, d: Var) -> Result<FuseParts> {
        let (rs, ds) = (ctx.shape(r), ctx.shape(d));
        if rs != ds {
            return Err(Error::ShapeMismatch {
                op: "adfm_fuse",
                lhs: rs,
                rhs: ds,
            }
            .in_module(&self.name));
        }
        let gd = ctx.tape.global_max_pool(d);
        let gr = ctx.tape.global_max_pool(r);
        let gr_from_d = self.guide_r.forward(ctx, gd)?;
        let gd_from_r = self.guide_d.forward(ctx, gr)?;
        let t = &mut *ctx.tape;
        let mut guided = || -> Result<(Var, Var, Var)> {
            let rm = t.mul(r, gr_from_d)?;
            let r_hat = t.add(rm, r)?;
            let dm = t.mul(d, gd_from_r)?;
            let d_hat = t.add(dm, d)?;
            Ok((r_hat, d_hat, t.concat_channels(&[r_hat, d_hat])?))
        };
        let (r_hat, d_hat, rd) = guided().within(&self.name)?;
        let (w_r, w_d) = self.crc.forward(ctx, rd)?;
        let t = &mut *ctx.tape;
        let mut mix = || -> Result<Var> {
            let a = t.mul(w_r, r_hat)?;
            let b = t.mul(w_d, d_hat)?;
            t.add(a, b)
        };
        let fused = mix().within(&self.name)?;
        Ok(FuseParts {
            r_hat,
            d_hat,
            w_r,
            w_d,
            fused,
        })
    }

    /// `F = F_ref ⊗ CA(F_ref) + U(F_next) + F_m`, the middle term only when
    /// a coarser level exists.
    pub fn refine(&self, ctx: &mut Ctx, fm: Var, next: Option<Var>) -> Result<Var> {
        let f = self.refine1.forward(ctx, fm)?;
        let f_ref = self.refine2.forward(ctx, f)?;
        let wc = self.ca.forward(ctx, f_ref)?;
        let fs = ctx.shape(fm);
        if let Some(n) = next {
            let ns = ctx.shape(n);
            if fs.h != 2 * ns.h || fs.w != 2 * ns.w || fs.c != ns.c || fs.n != ns.n {
                return Err(Error::ShapeMismatch {
                    op: "adfm_refine",
                    lhs: fs,
                    rhs: ns,
                }
                .in_module(&self.name));
            }
        }
        let t = &mut *ctx.tape;
        let mut sum = || -> Result<Var> {
            let fv = t.mul(f_ref, wc)?;
            let mut acc = t.add(fv, fm)?;
            if let Some(n) = next {
                let up = t.bilinear_resize(n, 2, ResizeMode::Up)?;
                acc = t.add(acc, up)?;
            }
            Ok(acc)
        };
        sum().within(&self.name)
    }
}

#[derive(Clone, Debug)]
pub enum Fusion {
    /// Levels 1, 2, 3.
    Adaptive([Adfm; 3]),
    /// Ablation: CBR₃ over the channel concatenation `[R, D]`.
    Concat([Cbr; 3]),
}

impl Fusion {
    pub fn new(c: usize, adaptive: bool) -> Self {
        if adaptive {
            Fusion::Adaptive([1, 2, 3].map(|i| Adfm::new(format!("adfm.l{i}"), c)))
        } else {
            Fusion::Concat([1, 2, 3].map(|i| Cbr::new(format!("fusion.l{i}.concat"), 2 * c, c, 3)))
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore) {
        match self {
            Fusion::Adaptive(ls) => ls.iter().for_each(|l| l.init(store, rng)),
            Fusion::Concat(cs) => cs.iter().for_each(|c| c.init(store, rng)),
        }
    }

    /// Coarsest level first, each finer level receiving the refined output
    /// of the one above. Returns levels 1..=3.
    pub fn forward(&self, ctx: &mut Ctx, r: &[Var; 3], d: &[Var; 3]) -> Result<[Var; 3]> {
        match self {
            Fusion::Adaptive(levels) => {
                let mut out = [r[0]; 3];
                let mut next = None;
                for i in (0..3).rev() {
                    let parts = levels[i].fuse(ctx, r[i], d[i])?;
                    let f = levels[i].refine(ctx, parts.fused, next)?;
                    out[i] = f;
                    next = Some(f);
                }
                Ok(out)
            }
            Fusion::Concat(cbrs) => {
                let mut out = [r[0]; 3];
                for i in 0..3 {
                    let cat = ctx
                        .tape
                        .concat_channels(&[r[i], d[i]])
                        .within(&cbrs[i].name)?;
                    out[i] = cbrs[i].forward(ctx, cat)?;
                }
                Ok(out)
            }
        }
    }
}
