//! Scene, camera and parameter-block representations.
//!
//! A scene is a list of planar Gaussians. Every trainable scalar belongs to
//! exactly one [`BlockKind`]; packing a scene lays the parameters out block by
//! block in splat order, which is the layout every gradient uses as well.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::ops::{Index, IndexMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Parameter block kinds. Gradient reconciliation acts on one block at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockKind {
    Position,
    Scale,
    Rotation,
    Opacity,
    Color,
}

impl BlockKind {
    pub const ALL: [BlockKind; 5] = [
        BlockKind::Position,
        BlockKind::Scale,
        BlockKind::Rotation,
        BlockKind::Opacity,
        BlockKind::Color,
    ];

    /// Scalars per splat in this block.
    pub fn width(self) -> usize {
        match self {
            BlockKind::Position | BlockKind::Scale => 2,
            BlockKind::Rotation | BlockKind::Opacity => 1,
            BlockKind::Color => 3,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Short name used in CSV headers and config keys.
    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Position => "pos",
            BlockKind::Scale => "scale",
            BlockKind::Rotation => "rot",
            BlockKind::Opacity => "op",
            BlockKind::Color => "col",
        }
    }

    pub fn from_name(name: &str) -> Option<BlockKind> {
        match name {
            "pos" | "position" => Some(BlockKind::Position),
            "scale" => Some(BlockKind::Scale),
            "rot" | "rotation" => Some(BlockKind::Rotation),
            "op" | "opacity" => Some(BlockKind::Opacity),
            "col" | "color" => Some(BlockKind::Color),
            _ => None,
        }
    }

    /// Blocks that change the projected footprint.
    pub fn is_geometry(self) -> bool {
        matches!(self, BlockKind::Position | BlockKind::Scale | BlockKind::Rotation)
    }
}

/// One flat vector per [`BlockKind`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BlockVectors {
    blocks: [Vec<f64>; 5],
}

impl BlockVectors {
    pub fn zeros(n_splats: usize) -> Self {
        BlockVectors {
            blocks: BlockKind::ALL.map(|k| vec![0.0; k.width() * n_splats]),
        }
    }

    /// Builds from raw blocks, checking the (2N, 2N, N, N, 3N) layout.
    pub fn from_blocks(blocks: [Vec<f64>; 5]) -> Result<Self> {
        let pos = blocks[0].len();
        if pos % 2 != 0 {
            return Err(Error::invalid(format!(
                "position block length {pos} is not a multiple of 2"
            )));
        }
        let n = pos / 2;
        for kind in BlockKind::ALL {
            let len = blocks[kind.index()].len();
            if len != kind.width() * n {
                return Err(Error::invalid(format!(
                    "{} block length {len}, expected {}",
                    kind.name(),
                    kind.width() * n
                )));
            }
        }
        Ok(BlockVectors { blocks })
    }

    pub fn splat_count(&self) -> usize {
        self.blocks[0].len() / 2
    }

    pub fn same_shape(&self, other: &BlockVectors) -> bool {
        BlockKind::ALL.iter().all(|&k| self[k].len() == other[k].len())
    }

    pub(crate) fn check_shape(&self, other: &BlockVectors) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::invalid("gradient block shapes differ"))
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (BlockKind, &[f64])> {
        BlockKind::ALL
            .into_iter()
            .map(move |k| (k, self.blocks[k.index()].as_slice()))
    }

    pub fn into_blocks(self) -> [Vec<f64>; 5] {
        self.blocks
    }

    /// Concatenation of all blocks in [`BlockKind::ALL`] order.
    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.concat()
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dot(&self, other: &BlockVectors, kind: BlockKind) -> f64 {
        dot(&self[kind], &other[kind])
    }

    pub fn block_norm(&self, kind: BlockKind) -> f64 {
        dot(&self[kind], &self[kind]).sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.blocks.iter().map(|b| dot(b, b)).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> BlockVectors {
        BlockVectors {
            blocks: self.blocks.clone().map(|b| b.into_iter().map(|x| x * factor).collect()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|x| x.is_finite())
    }
}

impl Index<BlockKind> for BlockVectors {
    type Output = Vec<f64>;

    fn index(&self, kind: BlockKind) -> &Vec<f64> {
        &self.blocks[kind.index()]
    }
}

impl IndexMut<BlockKind> for BlockVectors {
    fn index_mut(&mut self, kind: BlockKind) -> &mut Vec<f64> {
        &mut self.blocks[kind.index()]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-block gradient of one rendered view.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub blocks: BlockVectors,
    pub view_id: u32,
    pub iteration: u64,
}

impl GradientSet {
    pub fn new(blocks: BlockVectors, view_id: u32, iteration: u64) -> Self {
        GradientSet {
            blocks,
            view_id,
            iteration,
        }
    }

    pub fn zeros(n_splats: usize) -> Self {
        GradientSet::new(BlockVectors::zeros(n_splats), 0, 0)
    }

    /// Same metadata, new values.
    pub fn with_blocks(&self, blocks: BlockVectors) -> Self {
        GradientSet::new(blocks, self.view_id, self.iteration)
    }
}

impl Index<BlockKind> for GradientSet {
    type Output = Vec<f64>;

    fn index(&self, kind: BlockKind) -> &Vec<f64> {
        &self.blocks[kind]
    }
}

/// A planar Gaussian.
///
/// Scale is stored in log space and opacity as a logit; `depth` only orders
/// compositing and is not trained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat {
    pub mu: [f64; 2],
    pub depth: f64,
    pub log_scale: [f64; 2],
    pub rot: f64,
    pub opacity_logit: f64,
    pub color: [f64; 3],
}

impl Splat {
    pub fn scale(&self) -> [f64; 2] {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pinhole camera looking straight at the scene plane from distance `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraSpec {
    pub id: u32,
    pub offset: [f64; 2],
    pub r: f64,
    pub f: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraSpec {
    pub fn new(id: u32, offset: [f64; 2], r: f64, f: f64, width: usize, height: usize) -> Result<Self> {
        // Written this way round so NaN is rejected too.
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::invalid(format!("camera distance must be > 0, got {r}")));
        }
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::invalid(format!("focal length must be > 0, got {f}")));
        }
        if width < 4 || height < 4 {
            return Err(Error::invalid(format!(
                "image must be at least 4x4, got {width}x{height}"
            )));
        }
        if !offset.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("camera offset must be finite"));
        }
        Ok(CameraSpec {
            id,
            offset,
            r,
            f,
            width,
            height,
        })
    }

    /// Pixels per scene unit.
    pub fn magnification(&self) -> f64 {
        self.f / self.r
    }

    pub fn center_px(&self) -> [f64; 2] {
        [self.width as f64 / 2.0, self.height as f64 / 2.0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplatScene {
    pub splats: Vec<Splat>,
    pub background: [f64; 3],
}

impl SplatScene {
    pub fn new(splats: Vec<Splat>, background: [f64; 3]) -> Result<Self> {
        if splats.is_empty() {
            return Err(Error::invalid("scene must contain at least one splat"));
        }
        Ok(SplatScene { splats, background })
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    /// Splat indices in compositing order: increasing depth, index breaks ties.
    pub fn draw_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.splats.len()).collect();
        // Stable sort keeps the index order among equal depths.
        order.sort_by(|&a, &b| self.splats[a].depth.total_cmp(&self.splats[b].depth));
        order
    }

    /// Replaces the trainable parameters, keeping depths and background.
    pub fn with_params(&self, params: &BlockVectors) -> Result<SplatScene> {
        unpack(&PackedScene {
            blocks: params.clone(),
            depths: self.splats.iter().map(|s| s.depth).collect(),
            background: self.background,
        })
    }

    pub fn params(&self) -> BlockVectors {
        pack(self).blocks
    }
}

/// Packed form of a scene: trainable blocks plus the untrained remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedScene {
    pub blocks: BlockVectors,
    pub depths: Vec<f64>,
    pub background: [f64; 3],
}

pub fn pack(scene: &SplatScene) -> PackedScene {
    let n = scene.splats.len();
    let mut blocks = BlockVectors::zeros(n);
    for (i, s) in scene.splats.iter().enumerate() {
        blocks[BlockKind::Position][2 * i..2 * i + 2].copy_from_slice(&s.mu);
        blocks[BlockKind::Scale][2 * i..2 * i + 2].copy_from_slice(&s.log_scale);
        blocks[BlockKind::Rotation][i] = s.rot;
        blocks[BlockKind::Opacity][i] = s.opacity_logit;
        blocks[BlockKind::Color][3 * i..3 * i + 3].copy_from_slice(&s.color);
    }
    PackedScene {
        blocks,
        depths: scene.splats.iter().map(|s| s.depth).collect(),
        background: scene.background,
    }
}

pub fn unpack(packed: &PackedScene) -> Result<SplatScene> {
    let b = &packed.blocks;
    // Re-validate: the blocks may have been assembled by hand.
    let b = BlockVectors::from_blocks(b.blocks.clone())?;
    let n = b.splat_count();
    if packed.depths.len() != n {
        return Err(Error::invalid(format!("{} depths for {n} splats", packed.depths.len())));
    }
    let splats = (0..n)
        .map(|i| Splat {
            mu: [b[BlockKind::Position][2 * i], b[BlockKind::Position][2 * i + 1]],
            depth: packed.depths[i],
            log_scale: [b[BlockKind::Scale][2 * i], b[BlockKind::Scale][2 * i + 1]],
            rot: b[BlockKind::Rotation][i],
            opacity_logit: b[BlockKind::Opacity][i],
            color: [
                b[BlockKind::Color][3 * i],
                b[BlockKind::Color][3 * i + 1],
                b[BlockKind::Color][3 * i + 2],
            ],
        })
        .collect();
    SplatScene::new(splats, packed.background)
}

/// Random scene with overlapping, non-saturated splats.
///
/// Positions are uniform in `[-extent, extent]^2`, log-scales uniform in
/// `[ln(0.05 extent), ln(0.3 extent)]`, rotation in `[0, pi)`, opacity logit
/// in `[-1, 2]`, color and background channels in `[0.1, 0.9]`, depth in
/// `[0, 1]`.
pub fn make_synthetic_scene(seed: u64, n_splats: usize, extent: f64) -> Result<SplatScene> {
    if n_splats == 0 {
        return Err(Error::invalid("n_splats must be >= 1"));
    }
    if !(extent > 0.0 && extent.is_finite()) {
        return Err(Error::invalid(format!("extent must be > 0, got {extent}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ls_lo, ls_hi) = ((0.05 * extent).ln(), (0.3 * extent).ln());
    let splats = (0..n_splats)
        .map(|_| Splat {
            mu: [rng.random_range(-extent..=extent), rng.random_range(-extent..=extent)],
            depth: rng.random_range(0.0..=1.0),
            log_scale: [rng.random_range(ls_lo..=ls_hi), rng.random_range(ls_lo..=ls_hi)],
            rot: rng.random_range(0.0..PI),
            opacity_logit: rng.random_range(-1.0..=2.0),
            color: [
                rng.random_range(0.1..=0.9),
                rng.random_range(0.1..=0.9),
                rng.random_range(0.1..=0.9),
            ],
        })
        .collect();
    let background = [
        rng.random_range(0.1..=0.9),
        rng.random_range(0.1..=0.9),
        rng.random_range(0.1..=0.9),
    ];
    SplatScene::new(splats, background)
}

/// Adds iid `N(0, sigma^2)` noise to every packed parameter.
pub fn perturb_scene(scene: &SplatScene, seed: u64, sigma: f64) -> Result<SplatScene> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(scene.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut packed = pack(scene);
    for kind in BlockKind::ALL {
        for x in packed.blocks[kind].iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x += sigma * z;
        }
    }
    unpack(&packed)
}

const SCENE_MAGIC: &str = "SPLATSCENE v1";

/// Serializes to the line-oriented `SPLATSCENE v1` text format.
///
/// Fields are written with 17 significant digits so parsing recovers every
/// `f64` exactly.
pub fn scene_to_text(scene: &SplatScene) -> String {
    let mut out = format!("{SCENE_MAGIC} N={}\n", scene.splats.len());
    for s in &scene.splats {
        let fields = [
            s.mu[0],
            s.mu[1],
            s.depth,
            s.log_scale[0],
            s.log_scale[1],
            s.rot,
            s.opacity_logit,
            s.color[0],
            s.color[1],
            s.color[2],
        ];
        let line: Vec<String> = fields.iter().map(|v| format_f64(*v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    let bg = scene.background;
    let _ = writeln!(
        out,
        "BG {} {} {}",
        format_f64(bg[0]),
        format_f64(bg[1]),
        format_f64(bg[2])
    );
    out
}

pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn scene_from_text(text: &str) -> Result<SplatScene> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (ln, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty scene file".into(),
    })?;
    let n: usize = header
        .strip_prefix(SCENE_MAGIC)
        .and_then(|rest| rest.trim().strip_prefix("N="))
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| Error::Parse {
            line: ln,
            msg: format!("expected '{SCENE_MAGIC} N=<n>', got '{header}'"),
        })?;
    let mut splats = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, line) = lines.next().ok_or(Error::Parse {
            line: ln,
            msg: format!("expected {n} splat lines"),
        })?;
        let v = parse_fields(line, ln, 10)?;
        splats.push(Splat {
            mu: [v[0], v[1]],
            depth: v[2],
            log_scale: [v[3], v[4]],
            rot: v[5],
            opacity_logit: v[6],
            color: [v[7], v[8], v[9]],
        });
    }
    let (ln, bg) = lines.next().ok_or(Error::Parse {
        line: ln,
        msg: "missing BG line".into(),
    })?;
    let bg = bg.strip_prefix("BG").ok_or_else(|| Error::Parse {
        line: ln,
        msg: "expected BG line".into(),
    })?;
    let bg = parse_fields(bg, ln, 3)?;
    if let Some((ln, _)) = lines.next() {
        return Err(Error::Parse {
            line: ln,
            msg: "trailing content after BG line".into(),
        });
    }
    SplatScene::new(splats, [bg[0], bg[1], bg[2]])
}

fn parse_fields(line: &str, ln: usize, expected: usize) -> Result<Vec<f64>> {
    let v = line
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|e| Error::Parse {
                line: ln,
                msg: format!("bad number '{t}': {e}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if v.len() != expected {
        return Err(Error::Parse {
            line: ln,
            msg: format!("expected {expected} fields, got {}", v.len()),
        });
    }
    Ok(v)
}
