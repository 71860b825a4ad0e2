//! Finite-difference checks of every block, each loss and the whole network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::enhancement::{AlignPair, EnhancementLevel, EnhancementSpec, Modality};
use crate::error::Result;
use crate::fusion::Adfm;
use crate::loss::{bce_loss, iou_loss, total_loss};
use crate::network::{input_shapes, Network, NetworkConfig};
use crate::nn::{
    AvgMode, Cbr, ChannelAttention, CrcGate, Ctx, GeometryBlock, LgConv, Mode, PredictionHead,
    SemanticBlock, TextureBlock,
};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::{grad_check, GradCheckReport, GradCheckSpec, Real, Shape, Tensor, Var};

/// Tolerance on the maximum relative error of a single block.
pub const BLOCK_TOL: Real = 1e-4;
/// Tolerance for the assembled network.
pub const NETWORK_TOL: Real = 1e-3;

#[derive(Clone, Debug, Serialize)]
pub struct BlockCheck {
    pub name: String,
    pub max_rel_error: Real,
    pub tol: Real,
    pub checked: usize,
    pub refined: usize,
}

impl BlockCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }

    fn from_report(name: &str, r: &GradCheckReport) -> Self {
        BlockCheck {
            name: name.to_string(),
            max_rel_error: r.max_rel_error,
            tol: r.tol,
            checked: r.checked,
            refined: r.refined,
        }
    }
}

/// Check `f` against its inputs and every trainable parameter whose name
/// starts with `prefix`.
pub fn check_params(
    store: &ParamStore,
    prefix: &str,
    mode: Mode,
    inputs: &[Tensor],
    spec: GradCheckSpec,
    f: impl Fn(&mut Ctx, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let names: Vec<String> = store
        .iter()
        .filter(|(n, p)| n.starts_with(prefix) && p.kind == ParamKind::Trainable)
        .map(|(n, _)| n.to_string())
        .collect();
    let mut all = inputs.to_vec();
    for n in &names {
        all.push(store.tensor(n)?.clone());
    }
    let k = inputs.len();
    grad_check(
        |tape, vars| {
            let mut ctx = Ctx::new(tape, store, mode);
            for (n, &v) in names.iter().zip(&vars[k..]) {
                ctx.bind(n.clone(), v);
            }
            f(&mut ctx, &vars[..k])
        },
        &all,
        spec,
    )
}

struct Case {
    name: &'static str,
    run: fn(u64) -> Result<GradCheckReport>,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn block_spec(seed: u64) -> GradCheckSpec {
    GradCheckSpec {
        tol: BLOCK_TOL,
        max_coords: Some(120),
        seed,
        ..GradCheckSpec::default()
    }
}

fn randn(s: Shape, seed: u64) -> Tensor {
    Tensor::randn(s, &mut rng(seed))
}

const C: usize = 4;

fn cbr(seed: u64) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let b = Cbr::new("cbr", C, C, 3);
    b.init(&mut store, &mut rng(seed));
    let x = randn(Shape::new(2, C, 6, 6), seed + 1);
    check_params(&store, "cbr.", Mode::Train, &[x], block_spec(seed), |ctx, v| b.forward(ctx, v[0]))
}

fn lgconv(seed: u64) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let l = LgConv::new("lg", C);
    l.init(&mut store);
    let w = Tensor::uniform(Shape::new(C, 1, 3, 3), 0.5, 1.5, &mut rng(seed));
    store.set("lg.weight", w)?;
    let x = randn(Shape::new(2, C, 6, 6), seed + 1);
    check_params(&store, "lg.", Mode::Train, &[x], block_spec(seed), |ctx, v| l.forward(ctx, v[0]))
}

fn texture(seed: u64) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let b = TextureBlock::new("tex", C, AvgMode::Local3);
    b.init(&mut store, &mut rng(seed));
    let x = randn(Shape::new(2, C, 6, 6), seed + 1);
    check_params(&store, "tex.", Mode::Train, &[x], block_spec(seed), |ctx, v| b.forward(ctx, v[0]))
}

fn semantic(seed: u64) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let b = SemanticBlock::new("sem", C);
    b.init(&mut store, &mut rng(seed));
    let x = randn(Shape::new(2, C, 8, 8), seed + 1);
    check_params(&store, "sem.", Mode::Train, &[x], block_spec(seed), |ctx, v| b.forward(ctx, v[0]))
}

fn geometry(seed: u64) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let b = GeometryBlock::new("geo", C);
    b.init(&mut store, &mut rng(seed));
    let x = randn(Shape::new(2, C, 6, 6), seed + 1);
    check_params(&store, "geo.", Mode::Train, &[x], block_spec(seed), |ctx, v| b.forward(ctx, v[0]))
}

fn channel_attention(seed: u64) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let b = ChannelAttention::new("ca", C);
    b.init(&mut store, &mut rng(seed));
    let x = randn(Shape::new(2, C, 5, 5), seed + 1);
    check_params(&store, "ca.", Mode::Train, &[x], block_spec(seed), |ctx, v| b.forward(ctx, v[0]))
}

fn crc(seed: u64) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let g = CrcGate::new("crc", C);
    g.init(&mut store, &mut rng(seed));
    let x = randn(Shape::new(2, 2 * C, 5, 5), seed + 1);
    check_params(&store, "crc.", Mode::Train, &[x], block_spec(seed), |ctx, v| {
        let (wr, wd) = g.forward(ctx, v[0])?;
        let wd = ctx.tape.scale(wd, 3.0);
        ctx.tape.add(wr, wd)
    })
}

fn adfm(seed: u64) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let m = Adfm::new("adfm", C);
    m.init(&mut store, &mut rng(seed));
    let r = randn(Shape::new(2, C, 4, 4), seed + 1);
    let d = randn(Shape::new(2, C, 4, 4), seed + 2);
    let next = randn(Shape::new(2, C, 2, 2), seed + 3);
    check_params(&store, "adfm.", Mode::Train, &[r, d, next], block_spec(seed), |ctx, v| {
        let p = m.fuse(ctx, v[0], v[1])?;
        m.refine(ctx, p.fused, Some(v[2]))
    })
}

fn align(seed: u64) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let a = AlignPair::new("align", C);
    a.init(&mut store, &mut rng(seed));
    let b = randn(Shape::new(2, C, 4, 4), seed + 1);
    let h = randn(Shape::new(2, C, 2, 2), seed + 2);
    check_params(&store, "align.", Mode::Train, &[b, h], block_spec(seed), |ctx, v| {
        let (f, c) = a.forward(ctx, v[0], v[1])?;
        let cs = ctx.tape.sum(c);
        let fs = ctx.tape.mean(f);
        ctx.tape.add(cs, fs)
    })
}

fn level(modality: Modality, seed: u64) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let l = EnhancementLevel::new("lvl", &EnhancementSpec::new(modality, C));
    l.init(&mut store, &mut rng(seed));
    let b = randn(Shape::new(2, C, 8, 8), seed + 1);
    let h = randn(Shape::new(2, C, 4, 4), seed + 2);
    check_params(&store, "lvl.", Mode::Train, &[b, h], block_spec(seed), |ctx, v| l.forward(ctx, v[0], v[1]))
}

fn them_level(seed: u64) -> Result<GradCheckReport> {
    level(Modality::Texture, seed)
}

fn ghem_level(seed: u64) -> Result<GradCheckReport> {
    level(Modality::Geometry, seed)
}

fn head(seed: u64) -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let h = PredictionHead::new("head", C);
    h.init(&mut store, &mut rng(seed));
    let x = randn(Shape::new(2, C, 4, 4), seed + 1);
    check_params(&store, "head.", Mode::Train, &[x], block_spec(seed), |ctx, v| h.forward(ctx, v[0], (16, 16)))
}

fn binary_gt(s: Shape, seed: u64) -> Tensor {
    Tensor::uniform(s, 0.0, 1.0, &mut rng(seed)).map(|v| (v > 0.5) as u8 as Real)
}

fn loss_check(seed: u64, f: impl Fn(&mut crate::Tape, &[Var], &Tensor) -> Result<Var>) -> Result<GradCheckReport> {
    let s = Shape::new(2, 1, 5, 5);
    let gt = binary_gt(s, seed);
    let logits: Vec<Tensor> = (0..3).map(|k| randn(s, seed + 1 + k)).collect();
    grad_check(
        |tape, v| {
            let m: Vec<Var> = v.iter().map(|&x| tape.sigmoid(x)).collect();
            f(tape, &m, &gt)
        },
        &logits,
        GradCheckSpec {
            max_coords: None,
            ..block_spec(seed)
        },
    )
}

fn bce(seed: u64) -> Result<GradCheckReport> {
    loss_check(seed, |t, m, g| bce_loss(t, m[0], g))
}

fn iou(seed: u64) -> Result<GradCheckReport> {
    loss_check(seed, |t, m, g| iou_loss(t, m[0], g))
}

fn hybrid(seed: u64) -> Result<GradCheckReport> {
    loss_check(seed, |t, m, g| Ok(total_loss(t, &[m[0], m[1], m[2]], g)?.0))
}

/// The full network on a single 64×64 RGB-D pair (eval-mode normalization,
/// since a batch of one has no batch statistics), through inputs and a
/// sample of parameters.
fn network(seed: u64) -> Result<GradCheckReport> {
    let net = Network::new(NetworkConfig::desk(64, C))?;
    let store = net.init_params(seed);
    let (rs, ds) = input_shapes(&net.config, 1);
    let r = Tensor::uniform(rs, 0.0, 1.0, &mut rng(seed + 1));
    let d = Tensor::uniform(ds, 0.0, 1.0, &mut rng(seed + 2));
    let spec = GradCheckSpec {
        tol: NETWORK_TOL,
        max_coords: Some(80),
        seed,
        ..GradCheckSpec::default()
    };
    check_params(&store, "", Mode::Eval, &[r, d], spec, |ctx, v| {
        let out = net.forward(ctx, v[0], v[1])?;
        let a = ctx.tape.mean(out.masks[0]);
        let b = ctx.tape.mean(out.masks[1]);
        let c = ctx.tape.mean(out.masks[2]);
        let ab = ctx.tape.add(a, b)?;
        ctx.tape.add(ab, c)
    })
}

const CASES: &[Case] = &[
    Case { name: "cbr", run: cbr },
    Case { name: "lgconv", run: lgconv },
    Case { name: "texture_block", run: texture },
    Case { name: "semantic_block", run: semantic },
    Case { name: "geometry_block", run: geometry },
    Case { name: "channel_attention", run: channel_attention },
    Case { name: "crc_gate", run: crc },
    Case { name: "align_pair", run: align },
    Case { name: "them_level", run: them_level },
    Case { name: "ghem_level", run: ghem_level },
    Case { name: "adfm", run: adfm },
    Case { name: "prediction_head", run: head },
    Case { name: "bce_loss", run: bce },
    Case { name: "iou_loss", run: iou },
    Case { name: "hybrid_loss", run: hybrid },
    Case { name: "network", run: network },
];

pub fn block_names() -> Vec<&'static str> {
    CASES.iter().map(|c| c.name).collect()
}

/// Run every check in a fixed order.
pub fn run_suite(seed: u64) -> Result<Vec<BlockCheck>> {
    CASES
        .iter()
        .map(|c| Ok(BlockCheck::from_report(c.name, &(c.run)(seed)?)))
        .collect()
}
