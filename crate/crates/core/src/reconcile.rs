//! Operators that merge a near-view and a far-view gradient into one update.
//!
//! Every operator works block by block. Outputs are on the scale of the plain
//! sum `gn + gf` so that all operators can share one learning rate.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scene::{dot, BlockKind, BlockVectors, GradientSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Operator {
    Sum,
    SymmetricProject,
    Precondition,
    NormEqualize,
    MinNorm,
    CAGrad(f64),
    /// Projection gated on the smoothed cosine falling below `tau`.
    ConfGate(f64),
}

impl Operator {
    pub fn name(&self) -> &'static str {
        match self {
            Operator::Sum => "sum",
            Operator::SymmetricProject => "project",
            Operator::Precondition => "precond",
            Operator::NormEqualize => "normeq",
            Operator::MinNorm => "minnorm",
            Operator::CAGrad(_) => "cagrad",
            Operator::ConfGate(_) => "confgate",
        }
    }

    /// Parses an operator name; `cagrad` and `confgate` take their parameter
    /// from the arguments.
    pub fn from_name(name: &str, cagrad_c: f64, tau: f64) -> Option<Operator> {
        Some(match name {
            "sum" => Operator::Sum,
            "project" => Operator::SymmetricProject,
            "precond" => Operator::Precondition,
            "normeq" => Operator::NormEqualize,
            "minnorm" => Operator::MinNorm,
            "cagrad" => Operator::CAGrad(cagrad_c),
            "confgate" => Operator::ConfGate(tau),
            _ => return None,
        })
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Operator::CAGrad(c) if !(0.0..1.0).contains(&c) => {
                Err(Error::config(format!("cagrad c must be in [0, 1), got {c}")))
            }
            Operator::ConfGate(tau) if !(-1.0..=1.0).contains(&tau) => {
                Err(Error::config(format!("confgate tau must be in [-1, 1], got {tau}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconcileConfig {
    pub operator: Operator,
    pub epsilon: f64,
    /// Distance exponent per block for the preconditioner.
    pub d_map: [f64; 5],
    pub r_ref: f64,
    /// Per-block operator override; must name all five blocks when present.
    pub dispatch: Option<BTreeMap<BlockKind, Operator>>,
    /// EMA factor for the confidence gate's cosine statistic.
    pub conf_beta: f64,
}

impl Default for ReconcileConfig {
    fn default() -> Self {
        ReconcileConfig {
            operator: Operator::SymmetricProject,
            epsilon: 1e-12,
            d_map: BlockKind::ALL.map(|k| if k.is_geometry() { 2.0 } else { 1.0 }),
            r_ref: 1.0,
            dispatch: None,
            conf_beta: 0.99,
        }
    }
}

impl ReconcileConfig {
    pub fn with_operator(operator: Operator) -> Self {
        ReconcileConfig {
            operator,
            ..ReconcileConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        if !(self.r_ref > 0.0) {
            return Err(Error::config("r_ref must be positive"));
        }
        if !(self.conf_beta >= 0.0 && self.conf_beta < 1.0) {
            return Err(Error::config("conf_beta must be in [0, 1)"));
        }
        self.operator.validate()?;
        if let Some(map) = &self.dispatch {
            for kind in BlockKind::ALL {
                map.get(&kind)
                    .ok_or_else(|| Error::config(format!("dispatch has no operator for block '{}'", kind.name())))?
                    .validate()?;
            }
        }
        Ok(())
    }

    pub fn operator_for(&self, kind: BlockKind) -> Operator {
        self.dispatch
            .as_ref()
            .and_then(|m| m.get(&kind).copied())
            .unwrap_or(self.operator)
    }
}

/// Per-block agreement between the two gradients of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConflictStats {
    pub dots: [f64; 5],
    /// `None` when either norm is zero.
    pub cosines: [Option<f64>; 5],
    /// `dot < 0`.
    pub conflict: [bool; 5],
    pub ema_cosine: [f64; 5],
    /// Whether a projection was applied to the block this step.
    pub projected: [bool; 5],
}

impl ConflictStats {
    pub fn measure(gn: &BlockVectors, gf: &BlockVectors) -> Self {
        let mut s = ConflictStats::default();
        for kind in BlockKind::ALL {
            let i = kind.index();
            let d = gn.dot(gf, kind);
            let nn = gn.block_norm(kind);
            let nf = gf.block_norm(kind);
            s.dots[i] = d;
            s.conflict[i] = d < 0.0;
            s.cosines[i] = (nn > 0.0 && nf > 0.0).then(|| (d / (nn * nf)).clamp(-1.0, 1.0));
        }
        s
    }

    pub fn any_conflict(&self) -> bool {
        self.conflict.iter().any(|&c| c)
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// Symmetric projection of one block. Returns `(gn', gf', fired)`; both
/// projections use the original pair.
pub fn project_block(gn: &[f64], gf: &[f64], epsilon: f64) -> (Vec<f64>, Vec<f64>, bool) {
    let d = dot(gn, gf);
    if !(d < 0.0) {
        return (gn.to_vec(), gf.to_vec(), false);
    }
    let cn = d / (dot(gf, gf) + epsilon);
    let cf = d / (dot(gn, gn) + epsilon);
    let gn2 = gn.iter().zip(gf).map(|(n, f)| n - cn * f).collect();
    let gf2 = gf.iter().zip(gn).map(|(f, n)| f - cf * n).collect();
    (gn2, gf2, true)
}

/// Rescales both blocks to the geometric mean of their norms.
pub fn norm_equalize_block(gn: &[f64], gf: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nn = dot(gn, gn).sqrt();
    let nf = dot(gf, gf).sqrt();
    if nn == 0.0 || nf == 0.0 {
        return (gn.to_vec(), gf.to_vec());
    }
    let target = (nn * nf).sqrt();
    (scale(gn, target / nn), scale(gf, target / nf))
}

/// Twice the minimum-norm point of the segment between the two blocks.
pub fn min_norm_block(gn: &[f64], gf: &[f64]) -> Vec<f64> {
    let diff: Vec<f64> = gn.iter().zip(gf).map(|(n, f)| n - f).collect();
    let dd = dot(&diff, &diff);
    if dd == 0.0 {
        return scale(gn, 2.0);
    }
    // (gf - gn) . gf = -diff . gf
    let gamma = (-dot(&diff, gf) / dd).clamp(0.0, 1.0);
    gn.iter()
        .zip(gf)
        .map(|(n, f)| 2.0 * (gamma * n + (1.0 - gamma) * f))
        .collect()
}

/// Objective of the two-task CAGrad dual at mixing weight `w`.
pub fn cagrad_dual(gn: &[f64], gf: &[f64], c: f64, w: f64) -> f64 {
    let g0: Vec<f64> = gn.iter().zip(gf).map(|(n, f)| 0.5 * (n + f)).collect();
    let gw: Vec<f64> = gn.iter().zip(gf).map(|(n, f)| w * n + (1.0 - w) * f).collect();
    let radius = c * dot(&g0, &g0).sqrt();
    dot(&gw, &g0) + radius * dot(&gw, &gw).sqrt()
}

/// CAGrad update for a given dual weight, rescaled by `2 / (1 + c)`.
pub fn cagrad_update(gn: &[f64], gf: &[f64], c: f64, w: f64) -> Vec<f64> {
    let g0: Vec<f64> = gn.iter().zip(gf).map(|(n, f)| 0.5 * (n + f)).collect();
    let gw: Vec<f64> = gn.iter().zip(gf).map(|(n, f)| w * n + (1.0 - w) * f).collect();
    let radius = c * dot(&g0, &g0).sqrt();
    let gw_norm = dot(&gw, &gw).sqrt();
    let lambda = if gw_norm > 0.0 { radius / gw_norm } else { 0.0 };
    let factor = 2.0 / (1.0 + c);
    g0.iter().zip(&gw).map(|(a, b)| factor * (a + lambda * b)).collect()
}

const GOLDEN_TOL: f64 = 1e-10;

/// Minimizes a convex function on `[0, 1]` by golden-section search.
fn golden_section(f: impl Fn(f64) -> f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > GOLDEN_TOL {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    0.5 * (a + b)
}

pub fn cagrad_block(gn: &[f64], gf: &[f64], c: f64) -> Vec<f64> {
    if c == 0.0 {
        return add(gn, gf);
    }
    let w = golden_section(|w| cagrad_dual(gn, gf, c, w));
    cagrad_update(gn, gf, c, w)
}

/// Blockwise `gn + gf`.
pub fn reconcile_sum(gn: &GradientSet, gf: &GradientSet) -> Result<GradientSet> {
    gn.blocks.check_shape(&gf.blocks)?;
    Ok(gn.with_blocks(map_blocks(gn, gf, add)))
}

fn map_blocks(gn: &GradientSet, gf: &GradientSet, f: impl Fn(&[f64], &[f64]) -> Vec<f64>) -> BlockVectors {
    let mut out = BlockVectors::zeros(gn.blocks.splat_count());
    for kind in BlockKind::ALL {
        out[kind] = f(&gn[kind], &gf[kind]);
    }
    out
}

/// Symmetric projection of conflicting blocks; the update is `gn' + gf'`.
pub fn reconcile_project(
    gn: &GradientSet,
    gf: &GradientSet,
    epsilon: f64,
) -> Result<(GradientSet, GradientSet, ConflictStats)> {
    gn.blocks.check_shape(&gf.blocks)?;
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let mut stats = ConflictStats::measure(&gn.blocks, &gf.blocks);
    let mut n_out = gn.blocks.clone();
    let mut f_out = gf.blocks.clone();
    for kind in BlockKind::ALL {
        let (a, b, fired) = project_block(&gn[kind], &gf[kind], epsilon);
        n_out[kind] = a;
        f_out[kind] = b;
        stats.projected[kind.index()] = fired;
    }
    Ok((gn.with_blocks(n_out), gf.with_blocks(f_out), stats))
}

/// Scales each block by `(r / r_ref)^d` with `d` from the config.
pub fn precondition(g: &GradientSet, r: f64, cfg: &ReconcileConfig) -> Result<GradientSet> {
    if !(r > 0.0) || !(cfg.r_ref > 0.0) {
        return Err(Error::invalid("distances must be positive"));
    }
    let mut out = g.blocks.clone();
    for kind in BlockKind::ALL {
        let factor = precondition_factor(r, cfg, kind);
        out[kind] = scale(&g[kind], factor);
    }
    Ok(g.with_blocks(out))
}

/// `(r / r_ref)^d`. Integral exponents go through `powi` so the factor is
/// bit-identical whether or not the call gets constant-folded.
pub fn precondition_factor(r: f64, cfg: &ReconcileConfig, kind: BlockKind) -> f64 {
    let d = cfg.d_map[kind.index()];
    let ratio = r / cfg.r_ref;
    if d.fract() == 0.0 && d.abs() <= i32::MAX as f64 {
        ratio.powi(d as i32)
    } else {
        ratio.powf(d)
    }
}

pub fn norm_equalize(gn: &GradientSet, gf: &GradientSet) -> Result<(GradientSet, GradientSet)> {
    gn.blocks.check_shape(&gf.blocks)?;
    let mut n_out = gn.blocks.clone();
    let mut f_out = gf.blocks.clone();
    for kind in BlockKind::ALL {
        let (a, b) = norm_equalize_block(&gn[kind], &gf[kind]);
        n_out[kind] = a;
        f_out[kind] = b;
    }
    Ok((gn.with_blocks(n_out), gf.with_blocks(f_out)))
}

pub fn min_norm_combine(gn: &GradientSet, gf: &GradientSet) -> Result<GradientSet> {
    gn.blocks.check_shape(&gf.blocks)?;
    Ok(gn.with_blocks(map_blocks(gn, gf, min_norm_block)))
}

pub fn cagrad_combine(gn: &GradientSet, gf: &GradientSet, c: f64) -> Result<GradientSet> {
    gn.blocks.check_shape(&gf.blocks)?;
    Operator::CAGrad(c).validate()?;
    Ok(gn.with_blocks(map_blocks(gn, gf, |a, b| cagrad_block(a, b, c))))
}

/// Smoothed per-block cosine used by the confidence gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfGateState {
    pub ema_cosine: [f64; 5],
    pub beta: f64,
}

impl ConfGateState {
    pub fn new(beta: f64) -> Self {
        ConfGateState {
            ema_cosine: [0.0; 5],
            beta,
        }
    }

    fn observe(&mut self, kind: BlockKind, cosine: Option<f64>) -> f64 {
        let e = &mut self.ema_cosine[kind.index()];
        if let Some(c) = cosine {
            *e = self.beta * *e + (1.0 - self.beta) * c;
        }
        *e
    }
}

/// Projects a block only while its smoothed cosine is below `tau`.
pub fn conf_gate(
    gn: &GradientSet,
    gf: &GradientSet,
    state: &mut ConfGateState,
    tau: f64,
    epsilon: f64,
) -> Result<(GradientSet, GradientSet, ConflictStats)> {
    gn.blocks.check_shape(&gf.blocks)?;
    Operator::ConfGate(tau).validate()?;
    let mut stats = ConflictStats::measure(&gn.blocks, &gf.blocks);
    let mut n_out = gn.blocks.clone();
    let mut f_out = gf.blocks.clone();
    for kind in BlockKind::ALL {
        let i = kind.index();
        let ema = state.observe(kind, stats.cosines[i]);
        if ema < tau {
            let (a, b, fired) = project_block(&gn[kind], &gf[kind], epsilon);
            n_out[kind] = a;
            f_out[kind] = b;
            stats.projected[i] = fired;
        }
    }
    stats.ema_cosine = state.ema_cosine;
    Ok((gn.with_blocks(n_out), gf.with_blocks(f_out), stats))
}

/// Stateful front end used by the training loop.
#[derive(Debug, Clone)]
pub struct Reconciler {
    pub cfg: ReconcileConfig,
    gate: ConfGateState,
}

impl Reconciler {
    pub fn new(cfg: ReconcileConfig) -> Result<Self> {
        cfg.validate()?;
        let gate = ConfGateState::new(cfg.conf_beta);
        Ok(Reconciler { cfg, gate })
    }

    pub fn gate_state(&self) -> &ConfGateState {
        &self.gate
    }

    /// Combines two per-view gradients taken at distances `r_n` and `r_f`.
    pub fn combine(
        &mut self,
        gn: &GradientSet,
        r_n: f64,
        gf: &GradientSet,
        r_f: f64,
    ) -> Result<(GradientSet, ConflictStats)> {
        gn.blocks.check_shape(&gf.blocks)?;
        let mut stats = ConflictStats::measure(&gn.blocks, &gf.blocks);
        let mut out = BlockVectors::zeros(gn.blocks.splat_count());
        for kind in BlockKind::ALL {
            let i = kind.index();
            let (a, b) = (gn[kind].as_slice(), gf[kind].as_slice());
            out[kind] = match self.cfg.operator_for(kind) {
                Operator::Sum => add(a, b),
                Operator::SymmetricProject => {
                    let (x, y, fired) = project_block(a, b, self.cfg.epsilon);
                    stats.projected[i] = fired;
                    add(&x, &y)
                }
                Operator::Precondition => add(
                    &scale(a, precondition_factor(r_n, &self.cfg, kind)),
                    &scale(b, precondition_factor(r_f, &self.cfg, kind)),
                ),
                Operator::NormEqualize => {
                    let (x, y) = norm_equalize_block(a, b);
                    add(&x, &y)
                }
                Operator::MinNorm => min_norm_block(a, b),
                Operator::CAGrad(c) => cagrad_block(a, b, c),
                Operator::ConfGate(tau) => {
                    let ema = self.gate.observe(kind, stats.cosines[i]);
                    if ema < tau {
                        let (x, y, fired) = project_block(a, b, self.cfg.epsilon);
                        stats.projected[i] = fired;
                        add(&x, &y)
                    } else {
                        add(a, b)
                    }
                }
            };
        }
        stats.ema_cosine = self.gate.ema_cosine;
        Ok((gn.with_blocks(out), stats))
    }
}

/// Applies the per-block operator map and sums the results.
pub fn dispatch(gn: &GradientSet, gf: &GradientSet, cfg: &ReconcileConfig) -> Result<GradientSet> {
    if cfg.dispatch.is_none() {
        return Err(Error::config("dispatch map is not set"));
    }
    let mut rec = Reconciler::new(cfg.clone())?;
    // Preconditioning in dispatch is relative to r_ref for both views.
    Ok(rec.combine(gn, cfg.r_ref, gf, cfg.r_ref)?.0)
}
