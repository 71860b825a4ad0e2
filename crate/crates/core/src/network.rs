//! Full network: dual-stream backbone, texture and geometry enhancement,
//! adaptive fusion and three prediction heads.

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::enhancement::{Enhancement, EnhancementSpec, Modality};
use crate::error::{Error, Result};
use crate::fusion::Fusion;
use crate::nn::{AvgMode, Cbr, Ctx, Mode, PredictionHead, CA_REDUCTION};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::{Shape, Tape, Tensor, Var};

/// Which blocks are present. `false` replaces the block by a CBR₃ of equal
/// width; `rgb_only` additionally feeds zeros in place of the depth map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub them: bool,
    pub ghem: bool,
    pub adfm: bool,
    pub texture: bool,
    pub geometry: bool,
    pub semantic: bool,
    pub rgb_only: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            them: true,
            ghem: true,
            adfm: true,
            texture: true,
            geometry: true,
            semantic: true,
            rgb_only: false,
        }
    }
}

impl Ablation {
    /// Names accepted by [`Ablation::disable`].
    pub const SWITCHES: [&'static str; 7] =
        ["them", "ghem", "adfm", "texture", "geometry", "semantic", "depth"];

    /// Turn one block off by name; `depth` selects the RGB-only variant.
    pub fn disable(&mut self, name: &str) -> Result<()> {
        let slot = match name.trim().to_ascii_lowercase().as_str() {
            "them" => &mut self.them,
            "ghem" => &mut self.ghem,
            "adfm" => &mut self.adfm,
            "texture" => &mut self.texture,
            "geometry" => &mut self.geometry,
            "semantic" => &mut self.semantic,
            "depth" | "rgb_only" => {
                self.rgb_only = true;
                self.ghem = false;
                self.adfm = false;
                return Ok(());
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation switch `{other}` (expected one of {})",
                    Self::SWITCHES.join(", ")
                )))
            }
        };
        *slot = false;
        Ok(())
    }

    /// Comma-separated list of blocks to disable; empty or `none` disables
    /// nothing. `row1` … `row5` select a row of the ablation table.
    pub fn parse_list(list: &str) -> Result<Self> {
        let mut a = Ablation::default();
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            if item.eq_ignore_ascii_case("none") {
                continue;
            }
            if let Some(n) = item.strip_prefix("row") {
                let row = n.parse().ok().and_then(Ablation::table_row).ok_or_else(|| {
                    Error::Config(format!("unknown ablation row `{item}` (expected row1 to row5)"))
                })?;
                a.them &= row.them;
                a.ghem &= row.ghem;
                a.adfm &= row.adfm;
                continue;
            }
            a.disable(item)?;
        }
        Ok(a)
    }

    /// The five module configurations of the ablation table: baseline, +THEM,
    /// +ADFM, +THEM+GHEM, full.
    pub fn table_row(row: usize) -> Option<Self> {
        let (them, ghem, adfm) = match row {
            1 => (false, false, false),
            2 => (true, false, false),
            3 => (false, false, true),
            4 => (true, true, false),
            5 => (true, true, true),
            _ => return None,
        };
        Some(Ablation {
            them,
            ghem,
            adfm,
            ..Ablation::default()
        })
    }

    /// RGB-only comparison model: no depth, no geometry branch, no adaptive fusion.
    pub fn rgb_only() -> Self {
        let mut a = Ablation::default();
        a.disable("depth").expect("known switch");
        a
    }

    /// Disabled switch names, comma separated.
    pub fn describe(&self) -> String {
        let off: Vec<&str> = [
            ("them", self.them),
            ("ghem", self.ghem),
            ("adfm", self.adfm),
            ("texture", self.texture),
            ("geometry", self.geometry),
            ("semantic", self.semantic),
        ]
        .into_iter()
        .filter(|(_, on)| !on)
        .map(|(n, _)| n)
        .chain(self.rgb_only.then_some("depth"))
        .collect();
        if off.is_empty() {
            "none".into()
        } else {
            off.join(",")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// `(H, W)` the data pipeline resizes to.
    pub input_size: [usize; 2],
    /// Unified feature width of the enhancement and fusion stages.
    pub channels: usize,
    pub stem_width: usize,
    pub stage_widths: [usize; 4],
    pub avg: AvgMode,
    pub ablation: Ablation,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_size: [416, 416],
            channels: 32,
            stem_width: 16,
            stage_widths: [16, 32, 48, 64],
            avg: AvgMode::Local3,
            ablation: Ablation::default(),
        }
    }
}

impl NetworkConfig {
    /// Small configuration for fast experiments.
    pub fn desk(size: usize, channels: usize) -> Self {
        NetworkConfig {
            input_size: [size, size],
            channels,
            stem_width: 8,
            stage_widths: [8, 16, 24, 32],
            ..NetworkConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [h, w] = self.input_size;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Config(format!(
                "input size {h}x{w} must be a positive multiple of 32"
            )));
        }
        if self.channels == 0 || self.channels % CA_REDUCTION != 0 {
            return Err(Error::Config(format!(
                "channels {} must be a positive multiple of {CA_REDUCTION}",
                self.channels
            )));
        }
        if self.stem_width == 0 || self.stage_widths.contains(&0) {
            return Err(Error::Config("backbone widths must be positive".into()));
        }
        Ok(())
    }

    /// Fields that determine the parameter layout; everything else may
    /// differ between a checkpoint and the run loading it.
    pub fn check_compatible(&self, other: &NetworkConfig) -> Result<()> {
        let mut diffs = Vec::new();
        if self.channels != other.channels {
            diffs.push(format!("channels: checkpoint {}, config {}", self.channels, other.channels));
        }
        if self.stem_width != other.stem_width {
            diffs.push(format!(
                "stem_width: checkpoint {}, config {}",
                self.stem_width, other.stem_width
            ));
        }
        if self.stage_widths != other.stage_widths {
            diffs.push(format!(
                "stage_widths: checkpoint {:?}, config {:?}",
                self.stage_widths, other.stage_widths
            ));
        }
        if self.ablation != other.ablation {
            diffs.push(format!(
                "ablation: checkpoint {}, config {}",
                self.ablation.describe(),
                other.ablation.describe()
            ));
        }
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!("configuration mismatch: {}", diffs.join("; "))))
        }
    }
}

/// Four-stage convolutional stem producing strides 4, 8, 16, 32, each level
/// projected to the unified width.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub name: String,
    pub stem: Cbr,
    pub stages: [[Cbr; 2]; 4],
    pub proj: [Cbr; 4],
}

impl Backbone {
    pub fn new(name: impl Into<String>, in_ch: usize, cfg: &NetworkConfig) -> Self {
        let name = name.into();
        let w = cfg.stage_widths;
        let prev = |i: usize| if i == 0 { cfg.stem_width } else { w[i - 1] };
        Backbone {
            stem: Cbr::new(format!("{name}.stem"), in_ch, cfg.stem_width, 3).with_stride(2),
            stages: std::array::from_fn(|i| {
                [
                    Cbr::new(format!("{name}.s{}.a", i + 1), prev(i), w[i], 3).with_stride(2),
                    Cbr::new(format!("{name}.s{}.b", i + 1), w[i], w[i], 3),
                ]
            }),
            proj: std::array::from_fn(|i| {
                Cbr::new(format!("{name}.proj{}", i + 1), w[i], cfg.channels, 1)
            }),
            name,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut dyn RngCore) {
        self.stem.init(store, rng);
        for [a, b] in &self.stages {
            a.init(store, rng);
            b.init(store, rng);
        }
        for p in &self.proj {
            p.init(store, rng);
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<[Var; 4]> {
        let mut h = self.stem.forward(ctx, x)?;
        let mut out = [h; 4];
        for (i, [a, b]) in self.stages.iter().enumerate() {
            h = a.forward(ctx, h)?;
            h = b.forward(ctx, h)?;
            out[i] = self.proj[i].forward(ctx, h)?;
        }
        Ok(out)
    }
}

/// Tape handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub rgb: Var,
    pub depth: Var,
    pub b_rgb: [Var; 4],
    pub b_depth: [Var; 4],
    pub r: [Var; 3],
    pub d: [Var; 3],
    pub f: [Var; 3],
    /// `M1` (RGB), `M2` (fused, the final prediction), `M3` (depth).
    pub masks: [Var; 3],
}

#[derive(Clone, Debug)]
pub struct Network {
    pub config: NetworkConfig,
    pub backbone_rgb: Backbone,
    pub backbone_depth: Backbone,
    pub them: Enhancement,
    pub ghem: Enhancement,
    pub fusion: Fusion,
    pub heads: [PredictionHead; 3],
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let ab = config.ablation;
        let them = EnhancementSpec {
            avg: config.avg,
            enabled: ab.them,
            modality_block: ab.texture,
            semantic: ab.semantic,
            ..EnhancementSpec::new(Modality::Texture, c)
        };
        let ghem = EnhancementSpec {
            enabled: ab.ghem,
            modality_block: ab.geometry,
            ..them
        };
        let ghem = EnhancementSpec {
            modality: Modality::Geometry,
            ..ghem
        };
        Ok(Network {
            backbone_rgb: Backbone::new("backbone_rgb", 3, &config),
            backbone_depth: Backbone::new("backbone_depth", 1, &config),
            them: Enhancement::new(&them),
            ghem: Enhancement::new(&ghem),
            fusion: Fusion::new(c, ab.adfm),
            heads: ["head_rgb", "head_fused", "head_depth"].map(|n| PredictionHead::new(n, c)),
            config,
        })
    }

    /// Fresh parameters from a seeded stream.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.backbone_rgb.init(&mut store, &mut rng);
        self.backbone_depth.init(&mut store, &mut rng);
        self.them.init(&mut store, &mut rng);
        self.ghem.init(&mut store, &mut rng);
        self.fusion.init(&mut store, &mut rng);
        for h in &self.heads {
            h.init(&mut store, &mut rng);
        }
        store
    }

    pub fn forward(&self, ctx: &mut Ctx, rgb: Var, depth: Var) -> Result<ForwardVars> {
        let (rs, ds) = (ctx.shape(rgb), ctx.shape(depth));
        if rs.c != 3 || ds.c != 1 || rs.n != ds.n || rs.h != ds.h || rs.w != ds.w {
            return Err(Error::ShapeMismatch {
                op: "network input (rgb, depth)",
                lhs: rs,
                rhs: ds,
            });
        }
        let depth_in = if self.config.ablation.rgb_only {
            ctx.tape.constant(Tensor::zeros(ds))
        } else {
            depth
        };
        let b_rgb = self.backbone_rgb.forward(ctx, rgb)?;
        let b_depth = self.backbone_depth.forward(ctx, depth_in)?;
        let r = self.them.forward(ctx, &b_rgb)?;
        let d = self.ghem.forward(ctx, &b_depth)?;
        let f = self.fusion.forward(ctx, &r, &d)?;
        let out = (rs.h, rs.w);
        let masks = [
            self.heads[0].forward(ctx, r[0], out)?,
            self.heads[1].forward(ctx, f[0], out)?,
            self.heads[2].forward(ctx, d[0], out)?,
        ];
        Ok(ForwardVars {
            rgb,
            depth,
            b_rgb,
            b_depth,
            r,
            d,
            f,
            masks,
        })
    }

    /// Eval-mode masks `[M1, M2, M3]` for a batch.
    pub fn predict(&self, params: &ParamStore, rgb: &Tensor, depth: &Tensor) -> Result<[Tensor; 3]> {
        let mut tape = Tape::new();
        let mut ctx = Ctx::frozen(&mut tape, params, Mode::Eval);
        let r = ctx.input(rgb.clone(), false);
        let d = ctx.input(depth.clone(), false);
        let out = self.forward(&mut ctx, r, d)?;
        Ok(out.masks.map(|m| ctx.value(m).clone()))
    }

    /// Pyramid spatial sizes `(h, w)` of the backbone levels for the configured input.
    pub fn pyramid_sizes(&self) -> [(usize, usize); 4] {
        let [h, w] = self.config.input_size;
        [4, 8, 16, 32].map(|s| (h / s, w / s))
    }
}

/// Trainable-parameter counts grouped by top-level module and by block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParameterCensus {
    pub modules: BTreeMap<String, usize>,
    pub blocks: BTreeMap<String, usize>,
    pub total: usize,
}

/// Block key: the dotted path up to (and excluding) the layer inside a block,
/// e.g. `them.l1.texture` or `backbone_rgb.s2`.
fn block_key(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    let depth = match parts[0] {
        "them" | "ghem" | "adfm" | "fusion" => 3,
        _ => 2,
    };
    parts[..depth.min(parts.len() - 1)].join(".")
}

pub fn parameter_census(params: &ParamStore) -> ParameterCensus {
    let mut modules = BTreeMap::new();
    let mut blocks = BTreeMap::new();
    let mut total = 0;
    for (name, p) in params.iter() {
        if p.kind != ParamKind::Trainable {
            continue;
        }
        let n = p.value.numel();
        let top = name.split('.').next().unwrap_or(name).to_string();
        *modules.entry(top).or_insert(0) += n;
        *blocks.entry(block_key(name)).or_insert(0) += n;
        total += n;
    }
    ParameterCensus {
        modules,
        blocks,
        total,
    }
}

impl fmt::Display for ParameterCensus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.modules {
            writeln!(f, "{k:<16} {v:>10}")?;
        }
        write!(f, "{:<16} {:>10}", "total", self.total)
    }
}

/// Shape of the network input tensors for a batch.
pub fn input_shapes(cfg: &NetworkConfig, n: usize) -> (Shape, Shape) {
    let [h, w] = cfg.input_size;
    (Shape::new(n, 3, h, w), Shape::new(n, 1, h, w))
}
