//! Central-difference gradient oracle and the analytic-vs-numeric comparison.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{backward, render_loss, Image, LossConfig};
use crate::error::{Error, Result};
use crate::scene::{make_synthetic_scene, BlockKind, BlockVectors, CameraSpec, GradientSet, SplatScene};

/// Relative tolerance for coordinates with a non-negligible analytic value.
pub const REL_TOL: f64 = 1e-4;
/// Analytic magnitudes below this are compared absolutely.
pub const SMALL_GRAD: f64 = 1e-8;
pub const ABS_TOL: f64 = 1e-6;

/// Step sizes per block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSteps {
    pub geometry: f64,
    pub appearance: f64,
}

impl Default for FdSteps {
    fn default() -> Self {
        FdSteps {
            geometry: 1e-4,
            appearance: 1e-3,
        }
    }
}

impl FdSteps {
    pub fn uniform(step: f64) -> Self {
        FdSteps {
            geometry: step,
            appearance: step,
        }
    }

    pub fn for_block(&self, kind: BlockKind) -> f64 {
        if kind.is_geometry() {
            self.geometry
        } else {
            self.appearance
        }
    }

    fn validate(&self) -> Result<()> {
        if self.geometry > 0.0 && self.appearance > 0.0 {
            Ok(())
        } else {
            Err(Error::invalid("finite-difference steps must be positive"))
        }
    }
}

/// `(L(theta + h e_i) - L(theta - h e_i)) / 2h` for every packed coordinate.
pub fn finite_diff_grad(
    scene: &SplatScene,
    cam: &CameraSpec,
    target: &Image,
    cfg: &LossConfig,
    steps: FdSteps,
) -> Result<GradientSet> {
    steps.validate()?;
    let params = scene.params();
    let mut grad = BlockVectors::zeros(scene.len());
    for kind in BlockKind::ALL {
        let h = steps.for_block(kind);
        for i in 0..params[kind].len() {
            let mut plus = params.clone();
            plus[kind][i] += h;
            let mut minus = params.clone();
            minus[kind][i] -= h;
            let lp = render_loss(&scene.with_params(&plus)?, cam, target, cfg)?;
            let lm = render_loss(&scene.with_params(&minus)?, cam, target, cfg)?;
            grad[kind][i] = (lp - lm) / (2.0 * h);
        }
    }
    Ok(GradientSet::new(grad, cam.id, 0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockCheck {
    pub kind: BlockKind,
    /// Largest `|a - fd| / max(|a|, |fd|)` over coordinates with `|a| >= SMALL_GRAD`.
    pub max_rel_err: f64,
    /// Largest `|a - fd|` over coordinates with `|a| < SMALL_GRAD`.
    pub max_abs_err: f64,
    pub coords: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.blocks.iter().all(|b| b.pass)
    }

    /// Element-wise worst case of two reports over the same blocks.
    pub fn merge(&mut self, other: &GradCheckReport) {
        if self.blocks.is_empty() {
            self.blocks = other.blocks.clone();
            return;
        }
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.max_rel_err = a.max_rel_err.max(b.max_rel_err);
            a.max_abs_err = a.max_abs_err.max(b.max_abs_err);
            a.coords += b.coords;
            a.pass &= b.pass;
        }
    }
}

/// Compares two gradients coordinate by coordinate.
pub fn compare_gradients(analytic: &GradientSet, numeric: &GradientSet) -> GradCheckReport {
    let blocks = BlockKind::ALL
        .iter()
        .map(|&kind| {
            let mut max_rel: f64 = 0.0;
            let mut max_abs: f64 = 0.0;
            let mut pass = true;
            for (&a, &n) in analytic[kind].iter().zip(&numeric[kind]) {
                let diff = (a - n).abs();
                if a.abs() < SMALL_GRAD {
                    max_abs = max_abs.max(diff);
                    pass &= diff < ABS_TOL;
                } else {
                    let rel = diff / a.abs().max(n.abs());
                    max_rel = max_rel.max(rel);
                    pass &= rel < REL_TOL;
                }
            }
            BlockCheck {
                kind,
                max_rel_err: max_rel,
                max_abs_err: max_abs,
                coords: analytic[kind].len(),
                pass,
            }
        })
        .collect();
    GradCheckReport { blocks }
}

/// Runs [`backward`] and [`finite_diff_grad`] and compares them.
pub fn grad_check(
    scene: &SplatScene,
    cam: &CameraSpec,
    target: &Image,
    cfg: &LossConfig,
    steps: FdSteps,
) -> Result<GradCheckReport> {
    let (_, analytic) = backward(scene, cam, target, cfg)?;
    let numeric = finite_diff_grad(scene, cam, target, cfg, steps)?;
    Ok(compare_gradients(&analytic, &numeric))
}

/// Random target with every channel in `[0, 0.05]` or `[0.95, 1]`.
///
/// Synthetic scenes only render values in `[0.1, 0.9]`, so against this
/// target every L1 residual keeps its sign under small perturbations and the
/// loss is smooth where central differences probe it.
pub fn saturated_target(seed: u64, width: usize, height: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = (0..width * height)
        .map(|_| {
            [0; 3].map(|_| {
                let u = 0.05 * rng.random::<f64>();
                if rng.random::<bool>() {
                    u
                } else {
                    1.0 - u
                }
            })
        })
        .collect();
    Image::from_pixels(width, height, pixels).expect("dimensions match")
}

/// Settings for [`random_grad_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckDraw {
    pub n_splats: usize,
    pub width: usize,
    pub height: usize,
    pub f: f64,
    pub r_range: (f64, f64),
    pub max_offset: f64,
}

impl Default for GradCheckDraw {
    fn default() -> Self {
        GradCheckDraw {
            n_splats: 8,
            width: 32,
            height: 32,
            f: 48.0,
            r_range: (1.0, 6.0),
            max_offset: 0.3,
        }
    }
}

/// The scene, camera and saturated target of draw `seed`.
pub fn grad_check_case(seed: u64, draw: &GradCheckDraw) -> Result<(SplatScene, CameraSpec, Image)> {
    let scene = make_synthetic_scene(seed, draw.n_splats, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6763_6b00);
    let r = rng.random_range(draw.r_range.0..=draw.r_range.1);
    let offset = [0; 2].map(|_| rng.random_range(-draw.max_offset..=draw.max_offset));
    let cam = CameraSpec::new(0, offset, r, draw.f, draw.width, draw.height)?;
    let target = saturated_target(rng.random(), draw.width, draw.height);
    Ok((scene, cam, target))
}

/// One random draw checked at the default steps.
pub fn random_grad_check(seed: u64, draw: &GradCheckDraw, cfg: &LossConfig) -> Result<GradCheckReport> {
    let (scene, cam, target) = grad_check_case(seed, draw)?;
    grad_check(&scene, &cam, &target, cfg, FdSteps::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturated_target_avoids_render_range() {
        let t = saturated_target(1, 8, 8);
        assert!(t.pixels.iter().flatten().all(|&v| v <= 0.05 || v >= 0.95));
        assert_eq!(t, saturated_target(1, 8, 8));
    }

    #[test]
    fn random_draws_pass() {
        for seed in 0..3 {
            let rep = random_grad_check(seed, &GradCheckDraw::default(), &LossConfig::default()).unwrap();
            assert!(rep.pass(), "{rep:?}");
        }
    }

    #[test]
    fn central_difference_error_is_second_order() {
        // Draw 21 has a position coordinate with a tiny gradient (~5e-6) and
        // large curvature; its error at the default step is pure truncation.
        let cfg = LossConfig::default();
        let (scene, cam, target) = grad_check_case(21, &GradCheckDraw::default()).unwrap();
        let (_, analytic) = backward(&scene, &cam, &target, &cfg).unwrap();
        let err = |h: f64| {
            let fd = finite_diff_grad(&scene, &cam, &target, &cfg, FdSteps::uniform(h)).unwrap();
            analytic[BlockKind::Position]
                .iter()
                .zip(&fd[BlockKind::Position])
                .map(|(a, n)| (a - n).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2, e3) = (err(4e-4), err(2e-4), err(1e-4));
        assert!(e1 / e2 > 3.5 && e1 / e2 < 4.5, "{e1} {e2}");
        assert!(e2 / e3 > 3.5 && e2 / e3 < 4.5, "{e2} {e3}");
        let rep = grad_check(&scene, &cam, &target, &cfg, FdSteps::uniform(1e-5)).unwrap();
        assert!(rep.blocks[BlockKind::Position.index()].max_rel_err < 1e-5);
    }

    #[test]
    fn compare_flags_disagreement() {
        let mut a = GradientSet::zeros(1);
        a.blocks[BlockKind::Opacity] = vec![1.0];
        let mut b = a.clone();
        b.blocks[BlockKind::Opacity] = vec![1.001];
        let rep = compare_gradients(&a, &b);
        assert!(!rep.pass());
        assert!(rep.blocks[BlockKind::Opacity.index()].max_rel_err > 9e-4);
        assert!(compare_gradients(&a, &a).pass());
    }
}
