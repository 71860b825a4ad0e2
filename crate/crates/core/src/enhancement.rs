//! Top-down hierarchical enhancement of a backbone pyramid: the texture
//! variant for the RGB stream and the geometry variant for depth.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Context, Error, Result};
use crate::nn::{AvgMode, Cbr, Ctx, GeometryBlock, SemanticBlock, TextureBlock};
use crate::params::ParamStore;
use crate::tensor::{ResizeMode, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Texture,
    Geometry,
}

impl Modality {
    pub fn prefix(self) -> &'static str {
        match self {
            Modality::Texture => "them",
            Modality::Geometry => "ghem",
        }
    }
}

/// Which parts of an enhancement module are present. A disabled part is
/// replaced by a single CBR₃ of the same width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnhancementSpec {
    pub modality: Modality,
    pub c: usize,
    pub avg: AvgMode,
    pub enabled: bool,
    pub modality_block: bool,
    pub semantic: bool,
}

impl EnhancementSpec {
    pub fn new(modality: Modality, c: usize) -> Self {
        EnhancementSpec {
            modality,
            c,
            avg: AvgMode::default(),
            enabled: true,
            modality_block: true,
            semantic: true,
        }
    }
}

/// Resolution alignment of a pyramid level with the next coarser one:
/// `fine = CBR(B + U(higher))`, `coarse = CBR(higher + D(B))`.
#[derive(Clone, Debug)]
pub struct AlignPair {
    pub name: String,
    pub fine: Cbr,
    pub coarse: Cbr,
}

impl AlignPair {
    pub fn new(name: impl Into<String>, c: usize) -> Self {
        let name = name.into();
        AlignPair {
            fine: Cbr::new(format!("{name}.fine"), c, c, 3),
            coarse: Cbr::new(format!("{name}.coarse"), c, c, 3),
            name,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore) {
        self.fine.init(store, rng);
        self.coarse.init(store, rng);
    }

    pub fn forward(&self, ctx: &mut Ctx, b: Var, higher: Var) -> Result<(Var, Var)> {
        let (bs, hs) = (ctx.shape(b), ctx.shape(higher));
        if bs.h != 2 * hs.h || bs.w != 2 * hs.w || bs.c != hs.c || bs.n != hs.n {
            return Err(Error::ShapeMismatch {
                op: "align_pair",
                lhs: bs,
                rhs: hs,
            }
            .in_module(&self.name));
        }
        let t = &mut *ctx.tape;
        let mut sums = || -> Result<(Var, Var)> {
            let up = t.bilinear_resize(higher, 2, ResizeMode::Up)?;
            let down = t.bilinear_resize(b, 2, ResizeMode::Down)?;
            Ok((t.add(b, up)?, t.add(higher, down)?))
        };
        let (f, c) = sums().within(&self.name)?;
        Ok((self.fine.forward(ctx, f)?, self.coarse.forward(ctx, c)?))
    }
}

#[derive(Clone, Debug)]
pub enum ModalityBlock {
    Texture(TextureBlock),
    Geometry(GeometryBlock),
    Plain(Cbr),
}

impl ModalityBlock {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore) {
        match self {
            ModalityBlock::Texture(b) => b.init(store, rng),
            ModalityBlock::Geometry(b) => b.init(store, rng),
            ModalityBlock::Plain(b) => b.init(store, rng),
        }
    }

    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        match self {
            ModalityBlock::Texture(b) => b.forward(ctx, x),
            ModalityBlock::Geometry(b) => b.forward(ctx, x),
            ModalityBlock::Plain(b) => b.forward(ctx, x),
        }
    }
}

#[derive(Clone, Debug)]
pub enum SemanticPath {
    Block(SemanticBlock),
    /// CBR₃ followed by the ×2 upsample the block would have applied.
    Plain(Cbr),
}

impl SemanticPath {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore) {
        match self {
            SemanticPath::Block(b) => b.init(store, rng),
            SemanticPath::Plain(b) => b.init(store, rng),
        }
    }

    fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        match self {
            SemanticPath::Block(b) => b.forward(ctx, x),
            SemanticPath::Plain(b) => {
                let y = b.forward(ctx, x)?;
                ctx.tape
                    .bilinear_resize(y, 2, ResizeMode::Up)
                    .within(&b.name)
            }
        }
    }
}

/// One top-down step: `out = CBR(block(fine) + semantic(coarse))`.
#[derive(Clone, Debug)]
pub struct EnhancementLevel {
    pub name: String,
    pub align: AlignPair,
    pub block: ModalityBlock,
    pub semantic: SemanticPath,
    pub fuse: Cbr,
}

impl EnhancementLevel {
    pub fn new(name: impl Into<String>, spec: &EnhancementSpec) -> Self {
        let name = name.into();
        let c = spec.c;
        let block = match (spec.modality_block, spec.modality) {
            (true, Modality::Texture) => {
                ModalityBlock::Texture(TextureBlock::new(format!("{name}.texture"), c, spec.avg))
            }
            (true, Modality::Geometry) => {
                ModalityBlock::Geometry(GeometryBlock::new(format!("{name}.geometry"), c))
            }
            (false, _) => ModalityBlock::Plain(Cbr::new(format!("{name}.block_plain"), c, c, 3)),
        };
        let semantic = if spec.semantic {
            SemanticPath::Block(SemanticBlock::new(format!("{name}.semantic"), c))
        } else {
            SemanticPath::Plain(Cbr::new(format!("{name}.semantic_plain"), c, c, 3))
        };
        EnhancementLevel {
            align: AlignPair::new(format!("{name}.align"), c),
            fuse: Cbr::new(format!("{name}.fuse"), c, c, 3),
            block,
            semantic,
            name,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore) {
        self.align.init(store, rng);
        self.block.init(store, rng);
        self.semantic.init(store, rng);
        self.fuse.init(store, rng);
    }

    pub fn forward(&self, ctx: &mut Ctx, b: Var, next: Var) -> Result<Var> {
        let (fine, coarse) = self.align.forward(ctx, b, next)?;
        let local = self.block.forward(ctx, fine)?;
        let context = self.semantic.forward(ctx, coarse)?;
        let sum = ctx.tape.add(local, context).within(&self.name)?;
        self.fuse.forward(ctx, sum)
    }
}

#[derive(Clone, Debug)]
pub enum Enhancement {
    /// Levels 1, 2, 3 (finest first).
    Hierarchical([EnhancementLevel; 3]),
    /// Module disabled: each level is a CBR₃ of the raw backbone feature.
    Plain([Cbr; 3]),
}

impl Enhancement {
    pub fn new(spec: &EnhancementSpec) -> Self {
        let p = spec.modality.prefix();
        if spec.enabled {
            Enhancement::Hierarchical([1, 2, 3].map(|i| EnhancementLevel::new(format!("{p}.l{i}"), spec)))
        } else {
            Enhancement::Plain([1, 2, 3].map(|i| {
                let c = spec.c;
                Cbr::new(format!("{p}.l{i}.plain"), c, c, 3)
            }))
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore) {
        match self {
            Enhancement::Hierarchical(ls) => ls.iter().for_each(|l| l.init(store, rng)),
            Enhancement::Plain(cs) => cs.iter().for_each(|c| c.init(store, rng)),
        }
    }

    /// Run over a 4-level pyramid (stride 4 first), seeding the coarsest
    /// step with the stride-32 level. Returns levels 1..=3.
    pub fn forward(&self, ctx: &mut Ctx, pyramid: &[Var; 4]) -> Result<[Var; 3]> {
        match self {
            Enhancement::Hierarchical(levels) => {
                let mut next = pyramid[3];
                let mut out = [next; 3];
                for i in (0..3).rev() {
                    next = levels[i].forward(ctx, pyramid[i], next)?;
                    out[i] = next;
                }
                Ok(out)
            }
            Enhancement::Plain(cbrs) => Ok([
                cbrs[0].forward(ctx, pyramid[0])?,
                cbrs[1].forward(ctx, pyramid[1])?,
                cbrs[2].forward(ctx, pyramid[2])?,
            ]),
        }
    }
}
